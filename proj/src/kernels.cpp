// SPDX-License-Identifier: Apache-2.0
#include <attnrobust/kernels.hpp>

#include <cstdlib>
#include <cstring>

namespace attnrobust {

bool deterministic_mode() {
  const char *v = std::getenv("ATTNROBUST_DETERMINISTIC");
  return v != nullptr && std::strcmp(v, "1") == 0;
}

ExecPolicy default_policy() {
  return deterministic_mode() ? ExecPolicy::serial : ExecPolicy::parallel;
}

void reduce_gradients(const ModelParams &params,
                      std::span<const ExampleGrad> grads, std::span<double> full) {
  for (const auto &g : grads)
    accumulate_gradient(params, g, full);
}

std::vector<std::vector<double>> predict_probs(const ModelParams &params,
                                               const TokenBatch &batch,
                                               ExecPolicy policy) {
  std::vector<std::vector<double>> out(batch.batch_size);
  for_each_example(batch.batch_size, policy, [&](std::size_t i) {
    Trace tr;
    forward_example(params, batch.row(i), static_cast<std::size_t>(batch.lengths[i]), tr);
    out[i] = std::move(tr.probs);
  });
  return out;
}

double supervised_gradient(const ModelParams &params, const TokenBatch &batch,
                           ExecPolicy policy, std::vector<double> &grad) {
  const auto &labels = batch.require_labels();
  const double inv_b = 1.0 / static_cast<double>(batch.batch_size);
  std::vector<ExampleGrad> grads(batch.batch_size);
  std::vector<double> losses(batch.batch_size);
  for_each_example(batch.batch_size, policy, [&](std::size_t i) {
    Trace tr;
    forward_example(params, batch.row(i), static_cast<std::size_t>(batch.lengths[i]), tr);
    losses[i] = cross_entropy(tr.logits, labels[i]);
    std::vector<double> dl(tr.probs);
    dl[static_cast<std::size_t>(labels[i])] -= 1.0;
    for (double &x : dl)
      x *= inv_b;
    grads[i].reset(params, tr, true);
    backward_example(params, tr, dl, grads[i]);
  });
  grad.assign(params.layout().total, 0.0);
  reduce_gradients(params, grads, grad);
  double loss = 0.0;
  for (double l : losses)
    loss += l;
  return loss * inv_b;
}

} // namespace attnrobust

// SPDX-License-Identifier: Apache-2.0
/**
 * @file   training.cpp
 * @brief  Per-step loss/gradient assembly and the epoch loop.
 */
#include <attnrobust/checkpoint.hpp>
#include <attnrobust/errors.hpp>
#include <attnrobust/training.hpp>
#include <attnrobust/util.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace attnrobust {

void TrainOptions::validate() const {
  if (variant != Variant::vanilla)
    adv_config().validate();
  if (!(learning_rate > 0.0))
    throw std::invalid_argument("learning_rate must be > 0");
  if (batch_size == 0)
    throw std::invalid_argument("batch_size must be >= 1");
  if (max_epochs < 1)
    throw std::invalid_argument("max_epochs must be >= 1");
  if (patience < 1)
    throw std::invalid_argument("patience must be >= 1");
  if (unlabeled_per_labeled == 0)
    throw std::invalid_argument("unlabeled_per_labeled must be >= 1");
  if (lambda_adv < 0.0 || lambda_vat < 0.0)
    throw std::invalid_argument("loss weights must be >= 0");
}

namespace {

struct Terms {
  std::vector<double> per_example;
  std::vector<ExampleGrad> grads;
  std::vector<Perturbation> perturbations;
};

// Clean cross-entropy and, for AT variants, the cross-entropy under the
// variant's perturbation. Gradients are pre-scaled by 1/B.
void labeled_terms(const ModelParams &params, const TokenBatch &batch,
                   const TrainOptions &opts, bool want_grad, Terms &ce,
                   Terms &adv) {
  const auto &labels = batch.require_labels();
  const std::size_t B = batch.batch_size;
  const double inv_b = 1.0 / static_cast<double>(B);
  const bool at = is_adversarial(opts.variant);
  const bool on_embedding = opts.variant == Variant::word_at;
  ce.per_example.assign(B, 0.0);
  ce.grads.assign(B, {});
  adv.per_example.assign(at ? B : 0, 0.0);
  adv.perturbations.assign(at ? B : 0, {});

  for_each_example(B, opts.policy, [&](std::size_t i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    Trace tr;
    forward_example(params, batch.row(i), static_cast<std::size_t>(batch.lengths[i]), tr);
    ce.per_example[i] = cross_entropy(tr.logits, labels[i]);
    if (!want_grad && !at)
      return;

    auto &g = ce.grads[i];
    g.reset(params, tr, want_grad);
    std::vector<double> dl(tr.probs);
    dl[y] -= 1.0;
    for (double &x : dl)
      x *= inv_b;
    backward_example(params, tr, dl, g,
                     {.params = want_grad, .embedded = want_grad || on_embedding});
    if (!at)
      return;

    auto pert = adversarial_from_gradient(opts.variant, tr, g,
                                          params.dims().embed_dim, batch.max_len,
                                          opts.epsilon);
    Trace adv_tr;
    if (on_embedding)
      forward_example(params, batch.row(i), tr.length, adv_tr, pert.realized, {});
    else
      forward_example(params, batch.row(i), tr.length, adv_tr, {}, pert.realized);
    adv.per_example[i] = cross_entropy(adv_tr.logits, labels[i]);
    if (want_grad && opts.lambda_adv != 0.0) {
      std::vector<double> dla(adv_tr.probs);
      dla[y] -= 1.0;
      for (double &x : dla)
        x *= opts.lambda_adv * inv_b;
      backward_example(params, adv_tr, dla, g);
    }
    adv.perturbations[i] = std::move(pert);
  });
}

// KL(p0 || p(. | scores + r_vat)) per example; batch labels are not touched.
void virtual_terms(const ModelParams &params, const TokenBatch &batch,
                   const TrainOptions &opts, std::uint64_t seed, bool want_grad,
                   Terms &vat) {
  const std::size_t B = batch.batch_size;
  const double inv_b = 1.0 / static_cast<double>(B);
  const bool weighted = opts.variant == Variant::attention_ivat;
  vat.per_example.assign(B, 0.0);
  vat.grads.assign(B, {});
  vat.perturbations.assign(B, {});

  for_each_example(B, opts.policy, [&](std::size_t i) {
    Trace clean;
    forward_example(params, batch.row(i), static_cast<std::size_t>(batch.lengths[i]), clean);
    auto pert = virtual_adversarial_example(
        params, clean, Attachment::attention_scores, weighted, opts.epsilon,
        opts.vat_xi, opts.vat_power_iters, mix_seed(seed, i), batch.max_len);
    Trace tr;
    forward_example(params, batch.row(i), clean.length, tr, {}, pert.realized);
    vat.per_example[i] = kl_divergence(clean.probs, tr.logits);
    if (want_grad && opts.lambda_vat != 0.0) {
      auto &g = vat.grads[i];
      g.reset(params, tr, true);
      std::vector<double> dl(tr.probs.size());
      for (std::size_t c = 0; c < dl.size(); ++c)
        dl[c] = opts.lambda_vat * inv_b * (tr.probs[c] - clean.probs[c]);
      backward_example(params, tr, dl, g);
    }
    vat.perturbations[i] = std::move(pert);
  });
}

double ordered_mean(const std::vector<double> &xs) {
  if (xs.empty())
    return 0.0;
  double s = 0.0;
  for (double x : xs)
    s += x;
  return s / static_cast<double>(xs.size());
}

void finish(LossBreakdown &l) {
  l.total = l.ce + l.lambda_adv * l.adv + l.lambda_vat * l.vat;
}

} // namespace

LossBreakdown step_loss(const ModelParams &params, const TokenBatch &labeled,
                        const TokenBatch *vat_batch, const TrainOptions &opts,
                        std::uint64_t step_seed, std::vector<double> *grad,
                        std::vector<Perturbation> *perturbations) {
  const bool want_grad = grad != nullptr;
  const bool virt = is_virtual_adversarial(opts.variant);
  if (virt && vat_batch == nullptr)
    throw std::invalid_argument("VAT variants need a batch for the VAT term");

  Terms ce, adv, vat;
  labeled_terms(params, labeled, opts, want_grad, ce, adv);
  if (virt)
    virtual_terms(params, *vat_batch, opts, step_seed, want_grad, vat);

  LossBreakdown l;
  l.lambda_adv = opts.lambda_adv;
  l.lambda_vat = opts.lambda_vat;
  l.ce = ordered_mean(ce.per_example);
  l.adv = ordered_mean(adv.per_example);
  l.vat = ordered_mean(vat.per_example);
  finish(l);

  if (want_grad) {
    grad->assign(params.layout().total, 0.0);
    reduce_gradients(params, ce.grads, *grad);
    reduce_gradients(params, vat.grads, *grad);
  }
  if (perturbations) {
    perturbations->clear();
    for (auto *t : {&adv, &vat})
      for (auto &p : t->perturbations)
        perturbations->push_back(std::move(p));
  }
  return l;
}

LossBreakdown supervised_loss(const ModelParams &params, const TokenBatch &batch) {
  TrainOptions opts;
  opts.variant = Variant::vanilla;
  opts.policy = default_policy();
  return step_loss(params, batch, nullptr, opts, 0, nullptr);
}

LossBreakdown adversarial_loss(const ModelParams &params, const TokenBatch &batch,
                               const AdvConfig &cfg, double lambda_adv) {
  if (!is_adversarial(cfg.variant))
    throw std::invalid_argument("adversarial_loss needs word_at, attention_at or attention_iat");
  batch.require_labels();
  cfg.validate();
  TrainOptions opts;
  opts.variant = cfg.variant;
  opts.epsilon = cfg.epsilon;
  opts.lambda_adv = lambda_adv;
  opts.policy = default_policy();
  return step_loss(params, batch, nullptr, opts, 0, nullptr);
}

LossBreakdown virtual_adversarial_loss(const ModelParams &params,
                                       const TokenBatch &batch,
                                       const AdvConfig &cfg, std::uint64_t seed,
                                       double lambda_vat) {
  if (!is_virtual_adversarial(cfg.variant))
    throw std::invalid_argument("virtual_adversarial_loss needs attention_vat or attention_ivat");
  cfg.validate();
  TrainOptions opts;
  opts.variant = cfg.variant;
  opts.epsilon = cfg.epsilon;
  opts.vat_xi = cfg.vat_xi;
  opts.vat_power_iters = cfg.vat_power_iters;
  opts.lambda_vat = lambda_vat;
  opts.policy = default_policy();
  Terms vat;
  virtual_terms(params, batch, opts, seed, false, vat);
  LossBreakdown l;
  l.lambda_adv = 0.0;
  l.lambda_vat = lambda_vat;
  l.vat = ordered_mean(vat.per_example);
  finish(l);
  return l;
}

Adam::Adam(std::size_t n, double lr, double beta1, double beta2, double eps)
  : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size())
    throw std::invalid_argument("Adam: size mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

std::string to_json_line(const EpochMetrics &m) {
  std::ostringstream os;
  os << "{\"step\":" << m.step << ",\"epoch\":" << m.epoch
     << ",\"ce\":" << format_g17(m.ce) << ",\"adv\":" << format_g17(m.adv)
     << ",\"vat\":" << format_g17(m.vat) << ",\"total\":" << format_g17(m.total)
     << ",\"val_acc\":" << (m.val_acc ? format_g17(*m.val_acc) : "null") << "}";
  return os.str();
}

double accuracy(const ModelParams &params,
                std::span<const EncodedExample> examples, std::size_t max_len,
                ExecPolicy policy) {
  if (examples.empty())
    return 0.0;
  std::vector<std::uint8_t> hit(examples.size(), 0);
  for_each_example(examples.size(), policy, [&](std::size_t i) {
    const auto &ex = examples[i];
    if (!ex.label)
      throw PreconditionError("accuracy needs labeled examples");
    Trace tr;
    forward_example(params, ex.ids, std::min(ex.ids.size(), max_len), tr);
    const auto pred = std::max_element(tr.probs.begin(), tr.probs.end()) - tr.probs.begin();
    hit[i] = pred == *ex.label;
  });
  const auto n = std::count(hit.begin(), hit.end(), std::uint8_t{1});
  return static_cast<double>(n) / static_cast<double>(examples.size());
}

namespace {

class UnlabeledStream {
public:
  UnlabeledStream(const std::vector<EncodedExample> &pool, std::uint64_t seed)
    : pool_(pool), seed_(seed), order_(pool.size()) {
    reshuffle();
  }

  std::vector<const EncodedExample *> take(std::size_t n) {
    std::vector<const EncodedExample *> out;
    out.reserve(n);
    while (out.size() < n) {
      if (cursor_ == order_.size())
        reshuffle();
      out.push_back(&pool_[order_[cursor_++]]);
    }
    return out;
  }

private:
  void reshuffle() {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::mt19937_64 rng(mix_seed(seed_, pass_++));
    std::shuffle(order_.begin(), order_.end(), rng);
    cursor_ = 0;
  }

  const std::vector<EncodedExample> &pool_;
  std::uint64_t seed_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::uint64_t pass_ = 0;
};

} // namespace

TrainResult train(ModelParams initial, const TrainingData &data,
                  const TrainOptions &opts) {
  opts.validate();
  if (data.train.empty())
    throw std::invalid_argument("training split is empty");
  for (const auto &ex : data.unlabeled)
    if (ex.label)
      throw PreconditionError("unlabeled pool entries must not carry labels");

  std::ofstream metrics;
  if (opts.output_dir) {
    std::filesystem::create_directories(*opts.output_dir);
    metrics.open(*opts.output_dir / "metrics.jsonl", std::ios::trunc);
  }

  const bool virt = is_virtual_adversarial(opts.variant);
  TrainResult res{initial, initial, 0, 0, std::nullopt, {}, 0};
  ModelParams &params = res.final_params;
  Adam adam(params.layout().total, opts.learning_rate);
  std::vector<double> grad;
  std::vector<std::size_t> order(data.train.size());
  UnlabeledStream stream(data.unlabeled, mix_seed(opts.seed, 0x756e6c));
  int stall = 0;

  for (int epoch = 1; epoch <= opts.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(mix_seed(opts.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    LossBreakdown sum;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
      const std::size_t end = std::min(order.size(), start + opts.batch_size);
      std::vector<const EncodedExample *> rows;
      for (std::size_t k = start; k < end; ++k)
        rows.push_back(&data.train[order[k]]);
      const TokenBatch labeled = collate(rows, data.max_len);

      std::optional<TokenBatch> vat_batch;
      if (virt) {
        if (!data.unlabeled.empty()) {
          vat_batch = collate(stream.take(opts.batch_size * opts.unlabeled_per_labeled),
                              data.max_len);
          if (vat_batch->is_labeled())
            throw PreconditionError("label hygiene: an unlabeled-pool batch carries labels");
          ++res.unlabeled_batches;
        } else {
          vat_batch = labeled.without_labels();
        }
      }

      const auto step_seed = mix_seed(opts.seed ^ 0xa7a7a7a7ULL,
                                      static_cast<std::uint64_t>(res.steps));
      const auto loss = step_loss(params, labeled, vat_batch ? &*vat_batch : nullptr,
                                  opts, step_seed, &grad);
      if (!std::isfinite(loss.total) || loss.total > opts.divergence_threshold) {
        std::ostringstream msg;
        msg << "training diverged at step " << res.steps << " (epoch " << epoch
            << "): total=" << loss.total << " ce=" << loss.ce
            << " adv=" << loss.adv << " vat=" << loss.vat;
        throw DivergenceError(msg.str());
      }
      adam.step(params.values(), grad);
      ++res.steps;
      ++batches;
      sum.ce += loss.ce;
      sum.adv += loss.adv;
      sum.vat += loss.vat;
    }
    if (!params.all_finite())
      throw DivergenceError("parameters became non-finite in epoch " +
                            std::to_string(epoch));

    EpochMetrics m;
    m.step = res.steps;
    m.epoch = epoch;
    m.ce = sum.ce / static_cast<double>(batches);
    m.adv = sum.adv / static_cast<double>(batches);
    m.vat = sum.vat / static_cast<double>(batches);
    m.total = m.ce + opts.lambda_adv * m.adv + opts.lambda_vat * m.vat;
    if (!data.validation.empty())
      m.val_acc = accuracy(params, data.validation, data.max_len, opts.policy);
    res.history.push_back(m);
    if (metrics)
      metrics << to_json_line(m) << '\n' << std::flush;

    if (!m.val_acc) {
      res.best_params = params;
      res.best_epoch = epoch;
    } else if (!res.best_val_acc || *m.val_acc > *res.best_val_acc) {
      res.best_val_acc = m.val_acc;
      res.best_params = params;
      res.best_epoch = epoch;
      stall = 0;
    } else if (++stall >= opts.patience) {
      break;
    }
  }

  if (opts.output_dir) {
    save_checkpoint(*opts.output_dir / "checkpoint_best.bin", res.best_params,
                    opts.config_hash);
    save_checkpoint(*opts.output_dir / "checkpoint_final.bin", res.final_params,
                    opts.config_hash);
  }
  return res;
}

} // namespace attnrobust

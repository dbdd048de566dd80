// SPDX-License-Identifier: Apache-2.0
/**
 * @file   kernels.hpp
 * @brief  Per-example data parallelism over a batch.
 *
 * Every batch routine runs its examples either in a plain loop (the serial
 * reference) or under an OpenMP parallel-for. Examples write only to their own
 * slots; anything that is summed across examples is reduced afterwards in
 * example order, so both policies produce bitwise-identical results.
 */
#pragma once

#include <attnrobust/model.hpp>

#include <cstddef>
#include <exception>
#include <mutex>
#include <span>
#include <vector>

namespace attnrobust {

enum class ExecPolicy { serial, parallel };

/// True when ATTNROBUST_DETERMINISTIC=1 is set in the environment.
bool deterministic_mode();

/// Serial under the deterministic flag, parallel otherwise.
ExecPolicy default_policy();

template <class Fn>
void for_each_example(std::size_t n, ExecPolicy policy, Fn &&fn) {
  if (policy == ExecPolicy::serial || n < 2) {
    for (std::size_t i = 0; i < n; ++i)
      fn(i);
    return;
  }
  std::exception_ptr first;
  std::mutex mu;
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
      std::lock_guard lock(mu);
      if (!first)
        first = std::current_exception();
    }
  }
  if (first)
    std::rethrow_exception(first);
}

/// Sums example gradients into `full` in example order.
void reduce_gradients(const ModelParams &params,
                      std::span<const ExampleGrad> grads, std::span<double> full);

/// Class distribution for every example of the batch.
std::vector<std::vector<double>> predict_probs(const ModelParams &params,
                                               const TokenBatch &batch,
                                               ExecPolicy policy);

/// Mean cross-entropy and its full parameter gradient (scaled by 1/B).
/// Used by the benchmark to compare the two policies on the hot path.
double supervised_gradient(const ModelParams &params, const TokenBatch &batch,
                           ExecPolicy policy, std::vector<double> &grad);

} // namespace attnrobust

// SPDX-License-Identifier: Apache-2.0
/**
 * @file   adversarial.hpp
 * @brief  Adversarial (AT) and virtual-adversarial (VAT) perturbations on word
 *         embeddings or attention scores.
 *
 * All functions are pure: they read a model snapshot and a batch and return one
 * Perturbation per example, never touching the parameters. Directions are L2
 * normalized over the masked-in entries of the attachment tensor.
 */
#pragma once

#include <attnrobust/data_text.hpp>
#include <attnrobust/model.hpp>
#include <attnrobust/perturbation.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace attnrobust {

enum class Variant {
  vanilla,
  word_at,
  attention_at,
  attention_iat,
  attention_vat,
  attention_ivat
};

std::string_view to_string(Variant v);
std::optional<Variant> parse_variant(std::string_view s);

/// word_at, attention_at, attention_iat: perturbation built from label loss.
constexpr bool is_adversarial(Variant v) {
  return v == Variant::word_at || v == Variant::attention_at ||
         v == Variant::attention_iat;
}
/// attention_vat, attention_ivat: label-free perturbation.
constexpr bool is_virtual_adversarial(Variant v) {
  return v == Variant::attention_vat || v == Variant::attention_ivat;
}

struct AdvConfig {
  double epsilon = 1.0;
  Variant variant = Variant::attention_at;
  double vat_xi = 1.0;
  int vat_power_iters = 1;

  /// Throws std::invalid_argument on epsilon <= 0, xi <= 0 or iters < 1.
  void validate() const;
};

/// Guards the deviation weighting against an all-uniform score vector.
inline constexpr double kDeviationDelta = 1e-8;

/**
 * Normalizes a gradient laid out over the first `length` rows (of `width`
 * entries) of an attachment and scales it by epsilon. A zero gradient yields
 * the zero perturbation. Output uses the padded layout of `padded_len` rows.
 */
Perturbation perturbation_from_gradient(Attachment attachment,
                                        std::span<const double> gradient,
                                        std::size_t length, std::size_t width,
                                        std::size_t padded_len, double epsilon);

/// |d_t| / (mean|d| + delta) with d_t = s_t - mean(s), over `scores`.
std::vector<double> deviation_weights(std::span<const double> scores,
                                      double delta = kDeviationDelta);

/**
 * Score-level direction reweighted by the attention-score deviation:
 * normalize(direction (.) deviation_weights(clean_scores)) * epsilon. When the
 * weighting cancels the direction (uniform scores) the plain direction is
 * used instead.
 */
Perturbation reweight_by_deviation(std::span<const double> direction,
                                   std::span<const double> clean_scores,
                                   std::size_t padded_len, double epsilon,
                                   double delta = kDeviationDelta);

/**
 * Power iteration on an objective's gradient: starting from `start`
 * (normalized), repeat u <- normalize(grad_at(xi * u)). Returns the zero
 * vector if a gradient vanishes.
 */
std::vector<double> power_iteration(
    const std::function<std::vector<double>(std::span<const double>)> &grad_at,
    std::vector<double> start, double xi, int iters);

/// Random unit vector with `n` entries drawn from a seeded normal.
std::vector<double> random_unit_vector(std::size_t n, std::uint64_t seed);

/// Gradient of the summed per-example cross-entropy w.r.t. the attachment.
std::vector<Perturbation> perturb_at(const ModelParams &params,
                                     const TokenBatch &batch,
                                     Attachment attachment, double epsilon);

std::vector<Perturbation> perturb_iat(const ModelParams &params,
                                      const TokenBatch &batch, double epsilon);

/// Never reads batch labels. Example i draws its start vector from
/// mix_seed(seed, i).
std::vector<Perturbation> perturb_vat(const ModelParams &params,
                                      const TokenBatch &batch,
                                      Attachment attachment, double epsilon,
                                      double xi, int iters, std::uint64_t seed);

std::vector<Perturbation> perturb_ivat(const ModelParams &params,
                                       const TokenBatch &batch, double epsilon,
                                       double xi, int iters, std::uint64_t seed);

/// Dispatches on cfg.variant; `seed` is only used by the VAT variants.
std::vector<Perturbation> perturb(const ModelParams &params,
                                  const TokenBatch &batch, const AdvConfig &cfg,
                                  std::uint64_t seed);

// Per-example pieces reused by the training loop, which already holds the
// clean forward trace.

/// Builds the AT / iAT perturbation from a clean trace and its label-loss
/// gradient (grad.scores / grad.embedded must be populated).
Perturbation adversarial_from_gradient(Variant variant, const Trace &clean,
                                       const ExampleGrad &grad,
                                       std::size_t embed_dim,
                                       std::size_t padded_len, double epsilon);

/// VAT perturbation for one example given its clean trace; with
/// `deviation_weighted` (scores only) it is the iVAT perturbation.
Perturbation virtual_adversarial_example(const ModelParams &params,
                                         const Trace &clean,
                                         Attachment attachment,
                                         bool deviation_weighted, double epsilon,
                                         double xi, int iters,
                                         std::uint64_t seed,
                                         std::size_t padded_len);

/// {"variant","epsilon","attachment","norm":[per example]} as one JSON line.
std::string perturbation_audit(const AdvConfig &cfg,
                               std::span<const Perturbation> perturbations);

double l2_norm(std::span<const double> v);

} // namespace attnrobust

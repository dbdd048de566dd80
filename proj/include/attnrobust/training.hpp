// SPDX-License-Identifier: Apache-2.0
/**
 * @file   training.hpp
 * @brief  Loss assembly (supervised, adversarial, virtual adversarial) and the
 *         optimization loop.
 */
#pragma once

#include <attnrobust/adversarial.hpp>
#include <attnrobust/data_text.hpp>
#include <attnrobust/kernels.hpp>
#include <attnrobust/model.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace attnrobust {

/// total = ce + lambda_adv * adv + lambda_vat * vat.
struct LossBreakdown {
  double total = 0.0;
  double ce = 0.0;
  double adv = 0.0;
  double vat = 0.0;
  double lambda_adv = 1.0;
  double lambda_vat = 1.0;
};

struct TrainOptions {
  Variant variant = Variant::vanilla;
  double epsilon = 1.0;
  double vat_xi = 1.0;
  int vat_power_iters = 1;
  double lambda_adv = 1.0;
  double lambda_vat = 1.0;
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  int max_epochs = 30;
  int patience = 5;
  /// Unlabeled batches per labeled batch for the VAT variants.
  std::size_t unlabeled_per_labeled = 1;
  double divergence_threshold = 1e3;
  std::uint64_t seed = 13;
  ExecPolicy policy = ExecPolicy::parallel;

  /// When set, metrics.jsonl, checkpoint_best.bin and checkpoint_final.bin
  /// are written there.
  std::optional<std::filesystem::path> output_dir;
  std::string config_hash;

  AdvConfig adv_config() const {
    return {epsilon, variant, vat_xi, vat_power_iters};
  }
  void validate() const;
};

/**
 * Loss of one optimization step. `vat_batch` (may be null) is the batch the
 * virtual-adversarial term is computed on; its labels are never read. When
 * `grad` is non-null it receives d total / d params. When `perturbations` is
 * non-null it receives the perturbations that were applied (labeled batch
 * first, then the VAT batch).
 */
LossBreakdown step_loss(const ModelParams &params, const TokenBatch &labeled,
                        const TokenBatch *vat_batch, const TrainOptions &opts,
                        std::uint64_t step_seed, std::vector<double> *grad,
                        std::vector<Perturbation> *perturbations = nullptr);

/// Mean cross-entropy; requires labels.
LossBreakdown supervised_loss(const ModelParams &params, const TokenBatch &batch);

/// ce on the clean pass plus adv = cross-entropy under the variant's
/// perturbation. cfg.variant must be word_at, attention_at or attention_iat.
LossBreakdown adversarial_loss(const ModelParams &params, const TokenBatch &batch,
                               const AdvConfig &cfg, double lambda_adv = 1.0);

/// vat = mean KL(p0 || p(. | perturbed)); labels are ignored. cfg.variant
/// must be attention_vat or attention_ivat.
LossBreakdown virtual_adversarial_loss(const ModelParams &params,
                                       const TokenBatch &batch,
                                       const AdvConfig &cfg, std::uint64_t seed,
                                       double lambda_vat = 1.0);

class Adam {
public:
  Adam(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);
  void step(std::span<double> params, std::span<const double> grad);
  std::int64_t steps() const noexcept { return t_; }

private:
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<double> m_, v_;
};

struct EpochMetrics {
  std::int64_t step = 0;
  int epoch = 0;
  double ce = 0.0;
  double adv = 0.0;
  double vat = 0.0;
  double total = 0.0;
  std::optional<double> val_acc;
};

std::string to_json_line(const EpochMetrics &m);

struct TrainingData {
  std::vector<EncodedExample> train;
  std::vector<EncodedExample> validation;
  std::vector<EncodedExample> unlabeled; ///< labels always empty
  std::size_t max_len = 64;
};

struct TrainResult {
  ModelParams final_params;
  ModelParams best_params;
  std::int64_t steps = 0;
  int best_epoch = 0;
  std::optional<double> best_val_acc;
  std::vector<EpochMetrics> history;
  std::size_t unlabeled_batches = 0; ///< VAT batches drawn from the pool
};

/**
 * Trains from `initial`. Epochs shuffle the labeled examples with a seed
 * derived from opts.seed; VAT variants draw one unlabeled batch per labeled
 * batch (round robin over a shuffled pool) or, with an empty pool, reuse the
 * labeled batch with its labels stripped. Early stopping tracks validation
 * accuracy. Throws DivergenceError on a non-finite or exploding loss.
 */
TrainResult train(ModelParams initial, const TrainingData &data,
                  const TrainOptions &opts);

double accuracy(const ModelParams &params,
                std::span<const EncodedExample> examples, std::size_t max_len,
                ExecPolicy policy);

} // namespace attnrobust

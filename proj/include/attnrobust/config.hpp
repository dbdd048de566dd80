// SPDX-License-Identifier: Apache-2.0
/**
 * @file   config.hpp
 * @brief  Declarative experiment configuration (TOML plus --key=value
 *         overrides).
 *
 * Example:
 *
 *   corpus_dir = "data/sst"
 *   output_dir = "runs/iat"
 *   variant = "attention_iat"
 *   epsilon = 1.0
 *   seeds = [13, 21, 42]
 *
 *   [model]
 *   embed_dim = 100
 *
 *   [training]
 *   learning_rate = 0.001
 *
 * Override keys are dotted paths ("training.batch_size=16"); a bare field
 * name ("batch_size=16") is accepted when it is unambiguous.
 */
#pragma once

#include <attnrobust/adversarial.hpp>
#include <attnrobust/attribution.hpp>
#include <attnrobust/data_text.hpp>
#include <attnrobust/model.hpp>
#include <attnrobust/training.hpp>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace attnrobust {

struct ExperimentConfig {
  std::filesystem::path corpus_dir;
  CorpusFormat corpus_format = CorpusFormat::jsonl;
  std::filesystem::path output_dir;
  Variant variant = Variant::vanilla;
  ScoreKind score_kind = ScoreKind::additive;
  double epsilon = 1.0;
  std::vector<std::uint64_t> seeds{13, 21, 42, 87, 100};
  bool debug_perturbations = false;

  // [model]
  std::size_t embed_dim = 100;
  std::size_t hidden_dim = 128;
  std::size_t attn_dim = 64;

  // [training]
  double learning_rate = 1e-3;
  std::size_t batch_size = 32;
  int max_epochs = 30;
  int patience = 5;
  double lambda_adv = 1.0;
  double lambda_vat = 1.0;
  std::size_t unlabeled_per_labeled = 1;
  double vat_xi = 1.0;
  int vat_power_iters = 1;
  double divergence_threshold = 1e3;

  // [data]
  int min_freq = 2;
  std::size_t max_len = 64;

  // [eval]
  Reduction reduction = Reduction::grad_x_input;

  // [sweep]
  std::vector<double> epsilon_grid{0.5, 1, 2, 4, 8, 16, 30};

  /// Throws ConfigError naming the offending field. Also checks that
  /// corpus_dir exists.
  void validate() const;

  nlohmann::json to_json() const;
  /// FNV-1a of the canonical JSON form.
  std::string hash() const;

  TrainOptions train_options(std::uint64_t seed) const;
};

/// Parses TOML text; relative paths resolve against `base_dir`. Overrides are
/// "key=value" strings (a leading "--" is ignored) applied before decoding.
ExperimentConfig parse_config(std::string_view toml_text,
                              std::span<const std::string> overrides = {},
                              const std::filesystem::path &base_dir = {});

/// Reads and parses a config file; paths resolve against its directory.
ExperimentConfig load_config(const std::filesystem::path &file,
                             std::span<const std::string> overrides = {});

/// Parses "0.5,1,2" into a grid; throws ConfigError on bad numbers.
std::vector<double> parse_grid(std::string_view text);

} // namespace attnrobust

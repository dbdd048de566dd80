// SPDX-License-Identifier: Apache-2.0
/**
 * @file   harness.hpp
 * @brief  Experiment runs, epsilon sweeps, run comparison and report
 *         re-rendering.
 *
 * Run directory layout:
 *
 *   <output_dir>/config.json  vocab.json  summary.json
 *   <output_dir>/seed_<s>/metrics.jsonl  checkpoint_best.bin
 *                         checkpoint_final.bin  reports.jsonl  heatmaps.html
 *
 * A sweep writes one run directory per epsilon (eps_<value>/) plus sweep.json.
 */
#pragma once

#include <attnrobust/config.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace attnrobust {

struct SeedResult {
  std::uint64_t seed = 0;
  double test_acc = 0.0;
  std::optional<double> mean_tau; ///< empty when no report had a defined tau
  std::optional<double> median_tau;
  std::size_t evaluated = 0;
  std::size_t skipped = 0;
  int best_epoch = 0;
  std::optional<double> best_val_acc;
  std::int64_t steps = 0;
};

/// Mean and sample standard deviation over seeds.
struct Aggregate {
  double mean = 0.0;
  double std = 0.0;
};

struct RunSummary {
  Variant variant = Variant::vanilla;
  double epsilon = 0.0;
  ScoreKind score_kind = ScoreKind::additive;
  std::string corpus_fingerprint;
  std::string config_hash;
  std::vector<SeedResult> per_seed;
  Aggregate acc;
  std::optional<Aggregate> tau; ///< over seeds with a defined mean tau

  nlohmann::json to_json() const;
  static RunSummary from_json(const nlohmann::json &j);
};

/// Recomputes acc and tau from per_seed.
void aggregate(RunSummary &s);

/**
 * Trains every seed of the config and evaluates it on the test split. The
 * config is validated and the corpus loaded before anything is written.
 * Progress goes to `log` when non-null.
 */
RunSummary run_experiment(const ExperimentConfig &cfg, std::ostream *log = nullptr);

struct SweepCell {
  double epsilon = 0.0;
  std::uint64_t seed = 0;
  double test_acc = 0.0;
  std::optional<double> mean_tau;
};

struct SweepPoint {
  double epsilon = 0.0;
  Aggregate acc;
  std::optional<Aggregate> tau;
};

struct SweepResult {
  Variant variant = Variant::vanilla;
  std::vector<double> grid;
  std::vector<SweepCell> cells;
  std::vector<SweepPoint> per_epsilon;
  /// Sample standard deviation of the per-epsilon mean accuracies (0 for a
  /// single-point grid).
  double robustness = 0.0;

  nlohmann::json to_json() const;
};

/// Recomputes per_epsilon and robustness from cells.
void aggregate(SweepResult &s);

/// Runs the grid x seeds cross; a single-point grid reproduces run_experiment.
/// Grid values must be positive and distinct (ConfigError otherwise).
SweepResult run_sweep(const ExperimentConfig &cfg, std::span<const double> grid,
                      std::ostream *log = nullptr);

/**
 * Side-by-side table of at least two completed runs plus per-seed differences
 * against the first one (seeds present in both). Writes compare.json and
 * compare.html into `out_dir`. Runs over different corpora raise ConfigError.
 */
nlohmann::json compare_runs(std::span<const std::filesystem::path> run_dirs,
                            const std::filesystem::path &out_dir);

/// Rebuilds heatmaps.html of every seed directory from its reports.jsonl.
/// Returns the number of pages written.
std::size_t rerender_reports(const std::filesystem::path &run_dir);

} // namespace attnrobust

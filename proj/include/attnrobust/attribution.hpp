// SPDX-License-Identifier: Apache-2.0
/**
 * @file   attribution.hpp
 * @brief  Gradient word importance, attention importance, and their Kendall
 *         rank agreement.
 */
#pragma once

#include <attnrobust/data_text.hpp>
#include <attnrobust/kernels.hpp>
#include <attnrobust/model.hpp>

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace attnrobust {

enum class Reduction {
  grad_x_input, ///< |g_t . w_t|
  grad_l2       ///< ||g_t||_2
};

std::string_view to_string(Reduction r);
std::optional<Reduction> parse_reduction(std::string_view s);

/// Per-token importance for one example and one class, masked-in tokens only.
struct SaliencyMap {
  std::vector<double> values;
  int target_class = 0;
  Reduction reduction = Reduction::grad_x_input;
};

/// Gradient of y_hat[c] with respect to each token's embedding, reduced to a
/// nonnegative scalar. `classes` holds one target class per example.
std::vector<SaliencyMap> gradient_importance(const ModelParams &params,
                                             const TokenBatch &batch,
                                             std::span<const int> classes,
                                             Reduction reduction);

std::vector<SaliencyMap> gradient_importance(const ModelParams &params,
                                             const TokenBatch &batch,
                                             int target_class, Reduction reduction);

/// Attention weights of a clean forward pass, truncated to each length.
std::vector<std::vector<double>> attention_importance(const ModelParams &params,
                                                      const TokenBatch &batch);

/**
 * Kendall tau-b in O(n log n). Throws std::invalid_argument when the lengths
 * differ or are below 2. Returns nullopt when either ranking is constant
 * (tau-b undefined).
 */
std::optional<double> kendall_tau(std::span<const double> r1,
                                  std::span<const double> r2);

struct AttributionReport {
  std::vector<std::string> tokens;
  std::vector<double> grad_importance;
  std::vector<double> attention;
  std::optional<double> tau; ///< empty when undefined (e.g. one token)
  int predicted_class = 0;
};

struct ClassAgreement {
  std::size_t count = 0;
  double mean_tau = 0.0;
};

struct AgreementSummary {
  std::vector<AttributionReport> reports;
  std::size_t evaluated = 0; ///< reports with a defined tau
  std::size_t skipped = 0;
  double mean_tau = 0.0;
  double median_tau = 0.0;
  std::map<int, ClassAgreement> per_class; ///< keyed by predicted class
};

/// Aggregates reports; undefined taus are counted in `skipped`.
AgreementSummary summarize(std::vector<AttributionReport> reports);

/// One report per text against the predicted class (argmax y_hat).
AgreementSummary agreement_report(const ModelParams &params,
                                  std::span<const std::string> texts,
                                  const Vocabulary &vocab, std::size_t max_len,
                                  Reduction reduction = Reduction::grad_x_input,
                                  ExecPolicy policy = ExecPolicy::parallel);

/// reports.jsonl line; floats at 17 significant digits.
std::string to_json_line(const AttributionReport &r);
AttributionReport report_from_json(std::string_view line);

/// Two rows of spans: attention (red) and gradient importance (blue), each
/// shaded linearly from white at 0 to full saturation at the row maximum.
std::string render_heatmap(const AttributionReport &r);

/// Self-contained HTML document holding one heatmap per report.
std::string render_heatmap_page(std::span<const AttributionReport> reports,
                                std::string_view title);

} // namespace attnrobust

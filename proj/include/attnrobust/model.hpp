// SPDX-License-Identifier: Apache-2.0
/**
 * @file   model.hpp
 * @brief  Embedding -> bidirectional GRU -> attention -> linear classifier,
 *         with hand-written reverse-mode gradients.
 *
 * Every tensor is double precision. The attention scores are an explicit
 * attachment point: forward_example() accepts an additive perturbation on
 * the scores (and one on the word embeddings), and backward_example() reports
 * the gradient with respect to both.
 */
#pragma once

#include <attnrobust/data_text.hpp>
#include <attnrobust/perturbation.hpp>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace attnrobust {

enum class ScoreKind { additive, scaled_dot };

std::string_view to_string(ScoreKind k);
std::optional<ScoreKind> parse_score_kind(std::string_view s);

struct ModelDims {
  std::size_t vocab_size = 2;
  std::size_t embed_dim = 100;
  std::size_t hidden_dim = 128; ///< per direction
  std::size_t attn_dim = 64;    ///< internal width of additive scoring
  std::size_t num_classes = 2;

  std::size_t state_dim() const noexcept { return 2 * hidden_dim; }
  bool operator==(const ModelDims &) const = default;
};

/// A named region of the flat parameter vector, row-major rows x cols.
struct Slice {
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 1;
  std::size_t size() const noexcept { return rows * cols; }
};

struct GruSlices {
  Slice w_z, w_r, w_n; ///< hidden x input
  Slice u_z, u_r, u_n; ///< hidden x hidden
  Slice b_z, b_r, b_n;
};

/**
 * Declared order of parameter tensors. The embedding table comes first so the
 * remaining ("body") parameters form one contiguous block; per-example
 * gradients store the body densely and the embedding rows sparsely.
 */
struct ParamLayout {
  Slice embedding;
  GruSlices forward;
  GruSlices backward;
  Slice w1;    ///< attn_dim x state_dim, applied to keys
  Slice w2;    ///< attn_dim x state_dim, applied to the query
  Slice v;     ///< attn_dim
  Slice query; ///< state_dim, learned global query
  Slice cls_w; ///< num_classes x state_dim
  Slice cls_b; ///< num_classes
  std::size_t total = 0;

  std::size_t body_offset() const noexcept { return embedding.size(); }
  std::size_t body_size() const noexcept { return total - body_offset(); }

  static ParamLayout make(const ModelDims &dims);
  /// (name, slice) in declared order.
  std::vector<std::pair<std::string, Slice>> named() const;
};

class ModelParams {
public:
  /// All-zero parameters.
  ModelParams(ModelDims dims, ScoreKind kind);

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
  static ModelParams initialize(ModelDims dims, ScoreKind kind,
                                std::uint64_t seed);

  const ModelDims &dims() const noexcept { return dims_; }
  ScoreKind score_kind() const noexcept { return kind_; }
  const ParamLayout &layout() const noexcept { return layout_; }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> view(const Slice &s) noexcept {
    return {values_.data() + s.offset, s.size()};
  }
  std::span<const double> view(const Slice &s) const noexcept {
    return {values_.data() + s.offset, s.size()};
  }

  bool all_finite() const noexcept;
  bool operator==(const ModelParams &o) const {
    return dims_ == o.dims_ && kind_ == o.kind_ && values_ == o.values_;
  }

private:
  ModelDims dims_;
  ScoreKind kind_;
  ParamLayout layout_;
  std::vector<double> values_;
};

/// Read-only row-major matrix view.
struct ConstMatrix {
  std::span<const double> data;
  std::size_t rows = 0;
  std::size_t cols = 0;

  double operator()(std::size_t r, std::size_t c) const {
    return data[r * cols + c];
  }
  std::span<const double> row(std::size_t r) const {
    return data.subspan(r * cols, cols);
  }
};

inline ConstMatrix matrix(const ModelParams &p, const Slice &s) {
  return {p.view(s), s.rows, s.cols};
}

// Stage functions. Positions where mask is 0 get a -infinity score sentinel.

/// Embedding lookup for every padded position: batch x max_len x embed_dim.
std::vector<double> embed(const TokenBatch &batch, const ModelParams &params);

/// Bidirectional GRU over the first `length` rows of `embedded`
/// (rows of embed_dim). Returns length x state_dim; the forward direction
/// fills columns [0, m) and the backward direction [m, 2m).
std::vector<double> encode(std::span<const double> embedded, std::size_t length,
                           const ModelParams &params);

/// s_t = v . tanh(W1 k_t + W2 q) for each key row.
std::vector<double> score_additive(ConstMatrix keys, std::span<const double> query,
                                   ConstMatrix w1, ConstMatrix w2,
                                   std::span<const double> v,
                                   std::span<const std::uint8_t> mask);

/// s_t = k_t . q / sqrt(width).
std::vector<double> score_scaled_dot(ConstMatrix keys,
                                     std::span<const double> query,
                                     std::span<const std::uint8_t> mask);

/// Softmax over masked-in positions; masked-out weights are exactly 0.
/// Throws std::invalid_argument when no position is masked in.
std::vector<double> align(std::span<const double> scores,
                          std::span<const std::uint8_t> mask);

/// sum_t a_t h_t.
std::vector<double> pool(ConstMatrix states, std::span<const double> weights);

struct AttentionRecord {
  std::vector<double> scores;  ///< max_len; -inf off-mask
  std::vector<double> weights; ///< max_len; 0 off-mask
  std::vector<std::uint8_t> mask;
  ScoreKind score_kind = ScoreKind::additive;
};

struct Prediction {
  std::vector<double> instance; ///< pooled state, state_dim
  std::vector<double> logits;
  std::vector<double> probs;
};

struct PredictOutput {
  Prediction prediction;
  AttentionRecord attention;
};

/// Full forward pass over a batch. When score perturbations are given (one
/// per example, attention-score attachment, max_len entries) alignment runs
/// on the perturbed scores and the record reports them.
std::vector<PredictOutput>
predict(const TokenBatch &batch, const ModelParams &params,
        std::span<const Perturbation> score_perturbation = {});

/// Cached intermediates of one example's forward pass.
struct Trace {
  struct Direction {
    std::vector<double> h; ///< (length + 1) x m, row 0 is the zero state
    std::vector<double> z, r, n;
  };

  std::size_t length = 0;
  std::vector<int> ids;
  std::vector<double> x; ///< length x d, perturbation included
  Direction fwd, bwd;
  std::vector<double> states;       ///< length x 2m
  std::vector<double> attn_hidden;  ///< length x attn_dim (additive only)
  std::vector<double> clean_scores; ///< length, before perturbation
  std::vector<double> scores;       ///< length, after perturbation
  std::vector<double> weights;      ///< length
  std::vector<double> pooled;       ///< 2m
  std::vector<double> logits;
  std::vector<double> probs;
};

/**
 * Forward pass for one example. `ids` holds at least `length` entries.
 * Optional perturbations use the padded attachment layout (see
 * Perturbation) and only their first `length` (x d) entries are read.
 */
void forward_example(const ModelParams &params, std::span<const int> ids,
                     std::size_t length, Trace &trace,
                     std::span<const double> embedding_perturbation = {},
                     std::span<const double> score_perturbation = {});

/// Gradients of one example's scalar objective.
struct ExampleGrad {
  std::vector<double> body;     ///< layout.body_size(); all non-embedding params
  std::vector<double> embedded; ///< length x d; also the embedding-row grads
  std::vector<double> scores;   ///< length
  std::vector<int> ids;
  std::size_t length = 0;

  /// Sizes the buffers for `trace` and zeroes them.
  void reset(const ModelParams &params, const Trace &trace, bool with_body);
};

struct BackwardRequest {
  bool params = true;   ///< accumulate body gradients
  bool embedded = true; ///< propagate down to the word embeddings
};

/// Reverse pass seeded with dL/dlogits. Accumulates (+=) into `grad`, which
/// must have been reset for this trace.
void backward_example(const ModelParams &params, const Trace &trace,
                      std::span<const double> dlogits, ExampleGrad &grad,
                      BackwardRequest request = {});

/// Adds an example gradient into a full-size gradient vector, scattering the
/// embedding rows by token id.
void accumulate_gradient(const ModelParams &params, const ExampleGrad &grad,
                         std::span<double> full);

// Losses over a single distribution.
double cross_entropy(std::span<const double> logits, int label);
/// KL(p || softmax(logits)).
double kl_divergence(std::span<const double> p, std::span<const double> logits);
std::vector<double> softmax(std::span<const double> logits);

} // namespace attnrobust

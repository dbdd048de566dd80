// SPDX-License-Identifier: Apache-2.0
/**
 * @file   model.cpp
 * @brief  Forward and reverse passes of the attentive BiGRU classifier.
 */
#include <attnrobust/model.hpp>

#include "linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace attnrobust {

using detail::dot;
using detail::gemv_add;
using detail::gemv_t_add;
using detail::outer_add;
using detail::sigmoid;

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

std::string_view to_string(ScoreKind k) {
  return k == ScoreKind::additive ? "additive" : "scaled_dot";
}

std::optional<ScoreKind> parse_score_kind(std::string_view s) {
  if (s == "additive")
    return ScoreKind::additive;
  if (s == "scaled_dot")
    return ScoreKind::scaled_dot;
  return std::nullopt;
}

std::string_view to_string(Attachment a) {
  return a == Attachment::word_embedding ? "word_embedding" : "attention_scores";
}

ParamLayout ParamLayout::make(const ModelDims &dims) {
  if (dims.vocab_size < 2 || dims.embed_dim == 0 || dims.hidden_dim == 0 ||
      dims.attn_dim == 0 || dims.num_classes < 2)
    throw std::invalid_argument("model dimensions must be positive, |C| >= 2");

  ParamLayout l;
  std::size_t off = 0;
  auto take = [&](std::size_t rows, std::size_t cols) {
    Slice s{off, rows, cols};
    off += rows * cols;
    return s;
  };
  const std::size_t d = dims.embed_dim, m = dims.hidden_dim,
                    s = dims.state_dim(), a = dims.attn_dim;
  l.embedding = take(dims.vocab_size, d);
  for (GruSlices *g : {&l.forward, &l.backward}) {
    g->w_z = take(m, d);
    g->w_r = take(m, d);
    g->w_n = take(m, d);
    g->u_z = take(m, m);
    g->u_r = take(m, m);
    g->u_n = take(m, m);
    g->b_z = take(m, 1);
    g->b_r = take(m, 1);
    g->b_n = take(m, 1);
  }
  l.w1 = take(a, s);
  l.w2 = take(a, s);
  l.v = take(a, 1);
  l.query = take(s, 1);
  l.cls_w = take(dims.num_classes, s);
  l.cls_b = take(dims.num_classes, 1);
  l.total = off;
  return l;
}

std::vector<std::pair<std::string, Slice>> ParamLayout::named() const {
  std::vector<std::pair<std::string, Slice>> out{{"embedding", embedding}};
  for (auto [prefix, g] : {std::pair{"gru_fwd.", &forward},
                           std::pair{"gru_bwd.", &backward}}) {
    const std::string p = prefix;
    out.emplace_back(p + "w_z", g->w_z);
    out.emplace_back(p + "w_r", g->w_r);
    out.emplace_back(p + "w_n", g->w_n);
    out.emplace_back(p + "u_z", g->u_z);
    out.emplace_back(p + "u_r", g->u_r);
    out.emplace_back(p + "u_n", g->u_n);
    out.emplace_back(p + "b_z", g->b_z);
    out.emplace_back(p + "b_r", g->b_r);
    out.emplace_back(p + "b_n", g->b_n);
  }
  out.emplace_back("attn.w1", w1);
  out.emplace_back("attn.w2", w2);
  out.emplace_back("attn.v", v);
  out.emplace_back("attn.query", query);
  out.emplace_back("cls.w", cls_w);
  out.emplace_back("cls.b", cls_b);
  return out;
}

ModelParams::ModelParams(ModelDims dims, ScoreKind kind)
  : dims_(dims), kind_(kind), layout_(ParamLayout::make(dims)),
    values_(layout_.total, 0.0) {}

ModelParams ModelParams::initialize(ModelDims dims, ScoreKind kind,
                                    std::uint64_t seed) {
  ModelParams p(dims, kind);
  std::mt19937_64 rng(seed);
  const auto &l = p.layout_;
  auto fill = [&](const Slice &s, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double &x : p.view(s))
      x = dist(rng);
  };
  fill(l.embedding, dims.embed_dim);
  for (const GruSlices *g : {&l.forward, &l.backward}) {
    for (const Slice *s : {&g->w_z, &g->w_r, &g->w_n, &g->u_z, &g->u_r, &g->u_n})
      fill(*s, dims.hidden_dim);
  }
  fill(l.w1, dims.state_dim());
  fill(l.w2, dims.state_dim());
  fill(l.v, dims.attn_dim);
  fill(l.query, dims.state_dim());
  fill(l.cls_w, dims.state_dim());
  return p;
}

bool ModelParams::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(),
                     [](double x) { return std::isfinite(x); });
}

namespace {

void check_ids(std::span<const int> ids, std::size_t length,
               std::size_t vocab_size) {
  if (length == 0)
    throw std::invalid_argument("sequence length must be >= 1");
  if (ids.size() < length)
    throw std::invalid_argument("id row shorter than sequence length");
  for (std::size_t t = 0; t < length; ++t)
    if (ids[t] < 0 || static_cast<std::size_t>(ids[t]) >= vocab_size)
      throw std::invalid_argument("token id " + std::to_string(ids[t]) +
                                  " outside vocabulary of size " +
                                  std::to_string(vocab_size));
}

// Runs one GRU direction. Step k consumes x row order[k].
void run_gru(const ModelParams &p, const GruSlices &g, const double *x,
             std::size_t length, bool reverse, Trace::Direction &dir) {
  const std::size_t m = p.dims().hidden_dim, d = p.dims().embed_dim;
  dir.h.assign((length + 1) * m, 0.0);
  dir.z.assign(length * m, 0.0);
  dir.r.assign(length * m, 0.0);
  dir.n.assign(length * m, 0.0);
  const double *wz = p.view(g.w_z).data(), *wr = p.view(g.w_r).data(),
               *wn = p.view(g.w_n).data(), *uz = p.view(g.u_z).data(),
               *ur = p.view(g.u_r).data(), *un = p.view(g.u_n).data(),
               *bz = p.view(g.b_z).data(), *br = p.view(g.b_r).data(),
               *bn = p.view(g.b_n).data();
  std::vector<double> rh(m);
  for (std::size_t k = 0; k < length; ++k) {
    const std::size_t pos = reverse ? length - 1 - k : k;
    const double *xt = x + pos * d;
    const double *hp = dir.h.data() + k * m;
    double *z = dir.z.data() + k * m, *r = dir.r.data() + k * m,
           *n = dir.n.data() + k * m, *h = dir.h.data() + (k + 1) * m;
    std::copy(bz, bz + m, z);
    std::copy(br, br + m, r);
    std::copy(bn, bn + m, n);
    gemv_add(wz, m, d, xt, z);
    gemv_add(uz, m, m, hp, z);
    gemv_add(wr, m, d, xt, r);
    gemv_add(ur, m, m, hp, r);
    for (std::size_t i = 0; i < m; ++i) {
      z[i] = sigmoid(z[i]);
      r[i] = sigmoid(r[i]);
      rh[i] = r[i] * hp[i];
    }
    gemv_add(wn, m, d, xt, n);
    gemv_add(un, m, m, rh.data(), n);
    for (std::size_t i = 0; i < m; ++i) {
      n[i] = std::tanh(n[i]);
      h[i] = (1.0 - z[i]) * n[i] + z[i] * hp[i];
    }
  }
}

// dstates: length x 2m, column block `col` belongs to this direction.
void backprop_gru(const ModelParams &p, const GruSlices &g, const Trace &tr,
                  const Trace::Direction &dir, bool reverse,
                  const std::vector<double> &dstates, std::size_t col,
                  ExampleGrad &grad, const BackwardRequest &req) {
  const std::size_t m = p.dims().hidden_dim, d = p.dims().embed_dim,
                    s = p.dims().state_dim(), L = tr.length;
  const std::size_t base = p.layout().body_offset();
  auto body = [&](const Slice &sl) { return grad.body.data() + sl.offset - base; };
  const double *wz = p.view(g.w_z).data(), *wr = p.view(g.w_r).data(),
               *wn = p.view(g.w_n).data(), *uz = p.view(g.u_z).data(),
               *ur = p.view(g.u_r).data(), *un = p.view(g.u_n).data();

  std::vector<double> carry(m, 0.0), dh(m), daz(m), dar(m), dan(m), rh(m),
      drh(m);
  for (std::size_t kk = L; kk-- > 0;) {
    const std::size_t pos = reverse ? L - 1 - kk : kk;
    const double *hp = dir.h.data() + kk * m;
    const double *z = dir.z.data() + kk * m, *r = dir.r.data() + kk * m,
                 *n = dir.n.data() + kk * m;
    const double *xt = tr.x.data() + pos * d;
    const double *ds = dstates.data() + pos * s + col;
    for (std::size_t i = 0; i < m; ++i) {
      dh[i] = ds[i] + carry[i];
      const double dn = dh[i] * (1.0 - z[i]);
      const double dz = dh[i] * (hp[i] - n[i]);
      carry[i] = dh[i] * z[i];
      dan[i] = dn * (1.0 - n[i] * n[i]);
      daz[i] = dz * z[i] * (1.0 - z[i]);
      rh[i] = r[i] * hp[i];
    }
    std::fill(drh.begin(), drh.end(), 0.0);
    gemv_t_add(un, m, m, dan.data(), drh.data());
    for (std::size_t i = 0; i < m; ++i) {
      const double dr = drh[i] * hp[i];
      carry[i] += drh[i] * r[i];
      dar[i] = dr * r[i] * (1.0 - r[i]);
    }
    gemv_t_add(uz, m, m, daz.data(), carry.data());
    gemv_t_add(ur, m, m, dar.data(), carry.data());

    if (req.embedded) {
      double *dx = grad.embedded.data() + pos * d;
      gemv_t_add(wz, m, d, daz.data(), dx);
      gemv_t_add(wr, m, d, dar.data(), dx);
      gemv_t_add(wn, m, d, dan.data(), dx);
    }
    if (req.params) {
      outer_add(body(g.w_z), m, d, daz.data(), xt);
      outer_add(body(g.w_r), m, d, dar.data(), xt);
      outer_add(body(g.w_n), m, d, dan.data(), xt);
      outer_add(body(g.u_z), m, m, daz.data(), hp);
      outer_add(body(g.u_r), m, m, dar.data(), hp);
      outer_add(body(g.u_n), m, m, dan.data(), rh.data());
      double *bz = body(g.b_z), *br = body(g.b_r), *bn = body(g.b_n);
      for (std::size_t i = 0; i < m; ++i) {
        bz[i] += daz[i];
        br[i] += dar[i];
        bn[i] += dan[i];
      }
    }
  }
}

} // namespace

std::vector<double> embed(const TokenBatch &batch, const ModelParams &params) {
  const std::size_t d = params.dims().embed_dim;
  const auto table = params.view(params.layout().embedding);
  std::vector<double> out(batch.ids.size() * d);
  for (std::size_t i = 0; i < batch.ids.size(); ++i) {
    const int id = batch.ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= params.dims().vocab_size)
      throw std::invalid_argument("token id " + std::to_string(id) +
                                  " outside vocabulary");
    std::copy_n(table.begin() + static_cast<std::ptrdiff_t>(id * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return out;
}

std::vector<double> encode(std::span<const double> embedded, std::size_t length,
                           const ModelParams &params) {
  const std::size_t d = params.dims().embed_dim, m = params.dims().hidden_dim;
  if (length == 0)
    throw std::invalid_argument("sequence length must be >= 1");
  if (embedded.size() < length * d)
    throw std::invalid_argument("embedded sequence shorter than length x d");
  Trace::Direction fwd, bwd;
  run_gru(params, params.layout().forward, embedded.data(), length, false, fwd);
  run_gru(params, params.layout().backward, embedded.data(), length, true, bwd);
  std::vector<double> states(length * 2 * m);
  for (std::size_t t = 0; t < length; ++t) {
    std::copy_n(fwd.h.data() + (t + 1) * m, m, states.data() + t * 2 * m);
    std::copy_n(bwd.h.data() + (length - t) * m, m, states.data() + t * 2 * m + m);
  }
  return states;
}

std::vector<double> score_additive(ConstMatrix keys, std::span<const double> query,
                                   ConstMatrix w1, ConstMatrix w2,
                                   std::span<const double> v,
                                   std::span<const std::uint8_t> mask) {
  if (w1.cols != keys.cols || w2.cols != query.size() || w1.rows != w2.rows ||
      v.size() != w1.rows || mask.size() != keys.rows)
    throw std::invalid_argument("score_additive: inconsistent shapes");
  const std::size_t a = w1.rows;
  std::vector<double> wq(a, 0.0), pre(a);
  gemv_add(w2.data.data(), a, w2.cols, query.data(), wq.data());
  std::vector<double> out(keys.rows, kNegInf);
  for (std::size_t t = 0; t < keys.rows; ++t) {
    if (!mask[t])
      continue;
    pre = wq;
    gemv_add(w1.data.data(), a, w1.cols, keys.row(t).data(), pre.data());
    double s = 0.0;
    for (std::size_t j = 0; j < a; ++j)
      s += v[j] * std::tanh(pre[j]);
    out[t] = s;
  }
  return out;
}

std::vector<double> score_scaled_dot(ConstMatrix keys,
                                     std::span<const double> query,
                                     std::span<const std::uint8_t> mask) {
  if (query.size() != keys.cols || mask.size() != keys.rows)
    throw std::invalid_argument("score_scaled_dot: inconsistent shapes");
  const double scale = 1.0 / std::sqrt(static_cast<double>(keys.cols));
  std::vector<double> out(keys.rows, kNegInf);
  for (std::size_t t = 0; t < keys.rows; ++t)
    if (mask[t])
      out[t] = dot(keys.row(t).data(), query.data(), keys.cols) * scale;
  return out;
}

std::vector<double> align(std::span<const double> scores,
                          std::span<const std::uint8_t> mask) {
  if (scores.size() != mask.size())
    throw std::invalid_argument("align: scores and mask differ in length");
  double mx = kNegInf;
  bool any = false;
  for (std::size_t t = 0; t < scores.size(); ++t)
    if (mask[t]) {
      any = true;
      mx = std::max(mx, scores[t]);
    }
  if (!any)
    throw std::invalid_argument("align: every position is masked out");
  if (mx == kNegInf)
    throw std::invalid_argument("align: every masked-in score is -inf");
  std::vector<double> w(scores.size(), 0.0);
  double z = 0.0;
  for (std::size_t t = 0; t < scores.size(); ++t)
    if (mask[t]) {
      w[t] = std::exp(scores[t] - mx);
      z += w[t];
    }
  for (double &x : w)
    x /= z;
  return w;
}

std::vector<double> pool(ConstMatrix states, std::span<const double> weights) {
  if (weights.size() != states.rows)
    throw std::invalid_argument("pool: weights and states differ in length");
  std::vector<double> out(states.cols, 0.0);
  for (std::size_t t = 0; t < states.rows; ++t) {
    if (weights[t] == 0.0)
      continue;
    const auto h = states.row(t);
    for (std::size_t j = 0; j < states.cols; ++j)
      out[j] += weights[t] * h[j];
  }
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (double &x : p)
    x /= z;
  return p;
}

namespace {
double log_sum_exp(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits)
    z += std::exp(l - mx);
  return mx + std::log(z);
}
} // namespace

double cross_entropy(std::span<const double> logits, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size())
    throw std::invalid_argument("label outside class range");
  return log_sum_exp(logits) - logits[static_cast<std::size_t>(label)];
}

double kl_divergence(std::span<const double> p, std::span<const double> logits) {
  const double lse = log_sum_exp(logits);
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0)
      kl += p[i] * (std::log(p[i]) - (logits[i] - lse));
  return std::max(kl, 0.0);
}

void forward_example(const ModelParams &params, std::span<const int> ids,
                     std::size_t length, Trace &tr,
                     std::span<const double> embedding_perturbation,
                     std::span<const double> score_perturbation) {
  const auto &dims = params.dims();
  const auto &l = params.layout();
  const std::size_t d = dims.embed_dim, m = dims.hidden_dim,
                    s = dims.state_dim(), a = dims.attn_dim,
                    C = dims.num_classes;
  check_ids(ids, length, dims.vocab_size);
  if (!embedding_perturbation.empty() && embedding_perturbation.size() < length * d)
    throw std::invalid_argument("embedding perturbation shorter than length x d");
  if (!score_perturbation.empty() && score_perturbation.size() < length)
    throw std::invalid_argument("score perturbation shorter than length");

  tr.length = length;
  tr.ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(length));
  tr.x.resize(length * d);
  const auto table = params.view(l.embedding);
  for (std::size_t t = 0; t < length; ++t) {
    const double *row = table.data() + static_cast<std::size_t>(ids[t]) * d;
    double *xt = tr.x.data() + t * d;
    for (std::size_t j = 0; j < d; ++j)
      xt[j] = row[j] + (embedding_perturbation.empty()
                            ? 0.0
                            : embedding_perturbation[t * d + j]);
  }

  run_gru(params, l.forward, tr.x.data(), length, false, tr.fwd);
  run_gru(params, l.backward, tr.x.data(), length, true, tr.bwd);
  tr.states.resize(length * s);
  for (std::size_t t = 0; t < length; ++t) {
    std::copy_n(tr.fwd.h.data() + (t + 1) * m, m, tr.states.data() + t * s);
    std::copy_n(tr.bwd.h.data() + (length - t) * m, m, tr.states.data() + t * s + m);
  }

  const double *q = params.view(l.query).data();
  tr.clean_scores.resize(length);
  if (params.score_kind() == ScoreKind::additive) {
    std::vector<double> wq(a, 0.0);
    gemv_add(params.view(l.w2).data(), a, s, q, wq.data());
    const double *w1 = params.view(l.w1).data(), *v = params.view(l.v).data();
    tr.attn_hidden.resize(length * a);
    for (std::size_t t = 0; t < length; ++t) {
      double *u = tr.attn_hidden.data() + t * a;
      std::copy(wq.begin(), wq.end(), u);
      gemv_add(w1, a, s, tr.states.data() + t * s, u);
      for (std::size_t j = 0; j < a; ++j)
        u[j] = std::tanh(u[j]);
      tr.clean_scores[t] = dot(v, u, a);
    }
  } else {
    tr.attn_hidden.clear();
    const double scale = 1.0 / std::sqrt(static_cast<double>(s));
    for (std::size_t t = 0; t < length; ++t)
      tr.clean_scores[t] = dot(tr.states.data() + t * s, q, s) * scale;
  }
  tr.scores = tr.clean_scores;
  if (!score_perturbation.empty())
    for (std::size_t t = 0; t < length; ++t)
      tr.scores[t] += score_perturbation[t];

  const std::vector<std::uint8_t> ones(length, 1);
  tr.weights = align(tr.scores, ones);
  tr.pooled = pool({tr.states, length, s}, tr.weights);
  tr.logits.assign(params.view(l.cls_b).begin(), params.view(l.cls_b).end());
  gemv_add(params.view(l.cls_w).data(), C, s, tr.pooled.data(), tr.logits.data());
  tr.probs = softmax(tr.logits);
}

void ExampleGrad::reset(const ModelParams &params, const Trace &trace,
                        bool with_body) {
  if (with_body)
    body.assign(params.layout().body_size(), 0.0);
  else
    body.clear();
  embedded.assign(trace.length * params.dims().embed_dim, 0.0);
  scores.assign(trace.length, 0.0);
  ids = trace.ids;
  length = trace.length;
}

void backward_example(const ModelParams &params, const Trace &tr,
                      std::span<const double> dlogits, ExampleGrad &grad,
                      BackwardRequest req) {
  const auto &dims = params.dims();
  const auto &l = params.layout();
  const std::size_t s = dims.state_dim(), a = dims.attn_dim,
                    C = dims.num_classes, L = tr.length;
  if (dlogits.size() != C)
    throw std::invalid_argument("dlogits size differs from class count");
  if (grad.length != L || (req.params && grad.body.size() != l.body_size()))
    throw std::invalid_argument("gradient buffer was not reset for this trace");
  const std::size_t base = l.body_offset();
  auto body = [&](const Slice &sl) { return grad.body.data() + sl.offset - base; };

  if (req.params) {
    outer_add(body(l.cls_w), C, s, dlogits.data(), tr.pooled.data());
    double *db = body(l.cls_b);
    for (std::size_t c = 0; c < C; ++c)
      db[c] += dlogits[c];
  }
  std::vector<double> dpooled(s, 0.0);
  gemv_t_add(params.view(l.cls_w).data(), C, s, dlogits.data(), dpooled.data());

  std::vector<double> da(L), dscore(L);
  double wsum = 0.0;
  for (std::size_t t = 0; t < L; ++t) {
    da[t] = dot(dpooled.data(), tr.states.data() + t * s, s);
    wsum += tr.weights[t] * da[t];
  }
  for (std::size_t t = 0; t < L; ++t) {
    dscore[t] = tr.weights[t] * (da[t] - wsum);
    grad.scores[t] += dscore[t];
  }
  if (!req.params && !req.embedded)
    return;

  std::vector<double> dstates(L * s, 0.0);
  for (std::size_t t = 0; t < L; ++t) {
    double *dst = dstates.data() + t * s;
    for (std::size_t j = 0; j < s; ++j)
      dst[j] += tr.weights[t] * dpooled[j];
  }

  const double *q = params.view(l.query).data();
  if (params.score_kind() == ScoreKind::additive) {
    const double *v = params.view(l.v).data(), *w1 = params.view(l.w1).data(),
                 *w2 = params.view(l.w2).data();
    std::vector<double> dpre(a), dpre_sum(a, 0.0);
    for (std::size_t t = 0; t < L; ++t) {
      const double *u = tr.attn_hidden.data() + t * a;
      for (std::size_t j = 0; j < a; ++j) {
        dpre[j] = dscore[t] * v[j] * (1.0 - u[j] * u[j]);
        dpre_sum[j] += dpre[j];
      }
      gemv_t_add(w1, a, s, dpre.data(), dstates.data() + t * s);
      if (req.params) {
        double *dv = body(l.v);
        for (std::size_t j = 0; j < a; ++j)
          dv[j] += dscore[t] * u[j];
        outer_add(body(l.w1), a, s, dpre.data(), tr.states.data() + t * s);
      }
    }
    if (req.params) {
      outer_add(body(l.w2), a, s, dpre_sum.data(), q);
      gemv_t_add(w2, a, s, dpre_sum.data(), body(l.query));
    }
  } else {
    const double scale = 1.0 / std::sqrt(static_cast<double>(s));
    double *dq = req.params ? body(l.query) : nullptr;
    for (std::size_t t = 0; t < L; ++t) {
      const double g = dscore[t] * scale;
      double *dst = dstates.data() + t * s;
      const double *h = tr.states.data() + t * s;
      for (std::size_t j = 0; j < s; ++j) {
        dst[j] += g * q[j];
        if (dq)
          dq[j] += g * h[j];
      }
    }
  }

  backprop_gru(params, l.forward, tr, tr.fwd, false, dstates, 0, grad, req);
  backprop_gru(params, l.backward, tr, tr.bwd, true, dstates, dims.hidden_dim,
               grad, req);
}

void accumulate_gradient(const ModelParams &params, const ExampleGrad &grad,
                         std::span<double> full) {
  const auto &l = params.layout();
  if (full.size() != l.total)
    throw std::invalid_argument("gradient vector has the wrong size");
  const std::size_t base = l.body_offset();
  for (std::size_t i = 0; i < grad.body.size(); ++i)
    full[base + i] += grad.body[i];
  const std::size_t d = params.dims().embed_dim;
  for (std::size_t t = 0; t < grad.length; ++t) {
    double *row = full.data() + static_cast<std::size_t>(grad.ids[t]) * d;
    const double *g = grad.embedded.data() + t * d;
    for (std::size_t j = 0; j < d; ++j)
      row[j] += g[j];
  }
}

std::vector<PredictOutput> predict(const TokenBatch &batch,
                                   const ModelParams &params,
                                   std::span<const Perturbation> score_perturbation) {
  if (!score_perturbation.empty()) {
    if (score_perturbation.size() != batch.batch_size)
      throw std::invalid_argument("one score perturbation per example required");
    for (const auto &p : score_perturbation)
      if (p.attachment != Attachment::attention_scores ||
          p.realized.size() != batch.max_len)
        throw std::invalid_argument(
            "score perturbation must target attention scores with max_len entries");
  }
  std::vector<PredictOutput> out(batch.batch_size);
  Trace tr;
  for (std::size_t i = 0; i < batch.batch_size; ++i) {
    const auto len = static_cast<std::size_t>(batch.lengths[i]);
    std::span<const double> sp;
    if (!score_perturbation.empty())
      sp = score_perturbation[i].realized;
    forward_example(params, batch.row(i), len, tr, {}, sp);

    auto &o = out[i];
    o.prediction.instance = tr.pooled;
    o.prediction.logits = tr.logits;
    o.prediction.probs = tr.probs;
    o.attention.score_kind = params.score_kind();
    o.attention.mask.assign(batch.mask.begin() + static_cast<std::ptrdiff_t>(i * batch.max_len),
                            batch.mask.begin() + static_cast<std::ptrdiff_t>((i + 1) * batch.max_len));
    o.attention.scores.assign(batch.max_len, kNegInf);
    o.attention.weights.assign(batch.max_len, 0.0);
    std::copy(tr.scores.begin(), tr.scores.end(), o.attention.scores.begin());
    std::copy(tr.weights.begin(), tr.weights.end(), o.attention.weights.begin());
  }
  return out;
}

} // namespace attnrobust

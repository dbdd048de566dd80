// SPDX-License-Identifier: Apache-2.0
/**
 * @file   support.hpp
 * @brief  Shared fixtures and independent oracles for the unit tests.
 */
#pragma once

#include <attnrobust/adversarial.hpp>
#include <attnrobust/data_text.hpp>
#include <attnrobust/model.hpp>
#include <attnrobust/training.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace testsupport {

using namespace attnrobust;

/// Parameters drawn from U(-scale, scale), biases included.
inline ModelParams random_params(const ModelDims &dims, ScoreKind kind,
                                 std::uint64_t seed, double scale = 0.5) {
  ModelParams p(dims, kind);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (double &x : p.values())
    x = u(rng);
  return p;
}

/// Random labeled batch with lengths in [1, max_len].
inline TokenBatch random_batch(std::size_t batch, std::size_t max_len,
                               std::size_t vocab, std::size_t classes,
                               std::uint64_t seed, bool labeled = true) {
  std::mt19937_64 rng(seed);
  std::vector<EncodedExample> ex(batch);
  for (auto &e : ex) {
    const std::size_t len = 1 + rng() % max_len;
    for (std::size_t t = 0; t < len; ++t)
      e.ids.push_back(static_cast<int>(2 + rng() % (vocab - 2)));
    if (labeled)
      e.label = static_cast<int>(rng() % classes);
  }
  std::vector<const EncodedExample *> rows;
  for (auto &e : ex)
    rows.push_back(&e);
  return collate(rows, max_len);
}

/// |a - n| / max(|a|, |n|, floor).
inline double rel_err(double a, double n, double floor = 1e-6) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

/// Central difference of f along every coordinate of x.
inline std::vector<double> numeric_grad(const std::function<double()> &f,
                                        std::span<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline double max_rel_err(std::span<const double> a, std::span<const double> n,
                          double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, rel_err(a[i], n[i], floor));
  return worst;
}

// Scalar re-implementation of the model, written independently of the
// library kernels (plain loops over std::vector, no spans or slices).

struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> v;
  double at(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
};

inline Mat take(const ModelParams &p, const Slice &s) {
  auto view = p.view(s);
  return {s.rows, s.cols, std::vector<double>(view.begin(), view.end())};
}

inline std::vector<double> matvec(const Mat &m, const std::vector<double> &x) {
  std::vector<double> y(m.rows, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c)
      y[r] += m.at(r, c) * x[c];
  return y;
}

inline double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// One GRU step: z, r gates; candidate uses r applied to the previous state.
inline std::vector<double> gru_step(const ModelParams &p, const GruSlices &g,
                                    const std::vector<double> &x,
                                    const std::vector<double> &h) {
  const auto wz = matvec(take(p, g.w_z), x), wr = matvec(take(p, g.w_r), x),
             wn = matvec(take(p, g.w_n), x);
  const auto uz = matvec(take(p, g.u_z), h), ur = matvec(take(p, g.u_r), h);
  const auto bz = take(p, g.b_z).v, br = take(p, g.b_r).v, bn = take(p, g.b_n).v;
  const std::size_t m = h.size();
  std::vector<double> z(m), r(m), rh(m), out(m);
  for (std::size_t k = 0; k < m; ++k) {
    z[k] = sigm(wz[k] + uz[k] + bz[k]);
    r[k] = sigm(wr[k] + ur[k] + br[k]);
    rh[k] = r[k] * h[k];
  }
  const auto un = matvec(take(p, g.u_n), rh);
  for (std::size_t k = 0; k < m; ++k) {
    const double n = std::tanh(wn[k] + un[k] + bn[k]);
    out[k] = (1.0 - z[k]) * n + z[k] * h[k];
  }
  return out;
}

/// Hidden states (length x 2m) of a sequence of embedding rows.
inline std::vector<std::vector<double>>
oracle_encode(const ModelParams &p, const std::vector<std::vector<double>> &xs) {
  const std::size_t m = p.dims().hidden_dim, T = xs.size();
  std::vector<std::vector<double>> H(T, std::vector<double>(2 * m));
  std::vector<double> h(m, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    h = gru_step(p, p.layout().forward, xs[t], h);
    std::copy(h.begin(), h.end(), H[t].begin());
  }
  h.assign(m, 0.0);
  for (std::size_t t = T; t-- > 0;) {
    h = gru_step(p, p.layout().backward, xs[t], h);
    std::copy(h.begin(), h.end(), H[t].begin() + static_cast<long>(m));
  }
  return H;
}

struct OracleOut {
  std::vector<std::vector<double>> states;
  std::vector<double> scores, weights, pooled, logits, probs;
};

/// Whole forward pass for one unpadded example; `score_pert` may be empty.
inline OracleOut oracle_forward(const ModelParams &p,
                                const std::vector<std::vector<double>> &xs,
                                const std::vector<double> &score_pert = {}) {
  OracleOut o;
  const auto &L = p.layout();
  o.states = oracle_encode(p, xs);
  const std::size_t T = xs.size(), M = 2 * p.dims().hidden_dim;
  const auto q = take(p, L.query).v;
  for (std::size_t t = 0; t < T; ++t) {
    double s = 0.0;
    if (p.score_kind() == ScoreKind::additive) {
      const auto a = matvec(take(p, L.w1), o.states[t]);
      const auto b = matvec(take(p, L.w2), q);
      const auto v = take(p, L.v).v;
      for (std::size_t j = 0; j < a.size(); ++j)
        s += v[j] * std::tanh(a[j] + b[j]);
    } else {
      for (std::size_t k = 0; k < M; ++k)
        s += o.states[t][k] * q[k];
      s /= std::sqrt(static_cast<double>(M));
    }
    o.scores.push_back(s + (score_pert.empty() ? 0.0 : score_pert[t]));
  }
  const double mx = *std::max_element(o.scores.begin(), o.scores.end());
  double z = 0.0;
  for (double s : o.scores)
    z += std::exp(s - mx);
  for (double s : o.scores)
    o.weights.push_back(std::exp(s - mx) / z);
  o.pooled.assign(M, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t k = 0; k < M; ++k)
      o.pooled[k] += o.weights[t] * o.states[t][k];
  o.logits = matvec(take(p, L.cls_w), o.pooled);
  const auto b = take(p, L.cls_b).v;
  for (std::size_t c = 0; c < o.logits.size(); ++c)
    o.logits[c] += b[c];
  const double lm = *std::max_element(o.logits.begin(), o.logits.end());
  double zz = 0.0;
  for (double l : o.logits)
    zz += std::exp(l - lm);
  for (double l : o.logits)
    o.probs.push_back(std::exp(l - lm) / zz);
  return o;
}

/// Embedding rows of the first `length` ids of a batch row.
inline std::vector<std::vector<double>> rows_of(const ModelParams &p,
                                                std::span<const int> ids,
                                                std::size_t length) {
  const auto table = p.view(p.layout().embedding);
  const std::size_t d = p.dims().embed_dim;
  std::vector<std::vector<double>> xs;
  for (std::size_t t = 0; t < length; ++t) {
    const auto id = static_cast<std::size_t>(ids[t]);
    xs.emplace_back(table.begin() + static_cast<long>(id * d),
                    table.begin() + static_cast<long>((id + 1) * d));
  }
  return xs;
}

// Objective with every perturbation held fixed, written from the public
// single-example forward pass only.
inline double replay_total(const ModelParams &p, const TokenBatch &lab, const TokenBatch *vat,
                    const TrainOptions &o, const std::vector<Perturbation> &perts,
                    const std::vector<std::vector<double>> &p0) {
  const auto B = static_cast<double>(lab.batch_size);
  double ce = 0.0, adv = 0.0, kl = 0.0;
  std::size_t k = 0;
  for (std::size_t i = 0; i < lab.batch_size; ++i) {
    const auto len = static_cast<std::size_t>(lab.lengths[i]);
    const int y = (*lab.labels)[i];
    Trace tr;
    forward_example(p, lab.row(i), len, tr);
    ce += cross_entropy(tr.logits, y);
    if (is_adversarial(o.variant)) {
      const auto &r = perts[k++].realized;
      Trace at;
      if (o.variant == Variant::word_at)
        forward_example(p, lab.row(i), len, at, r, {});
      else
        forward_example(p, lab.row(i), len, at, {}, r);
      adv += cross_entropy(at.logits, y);
    }
  }
  double total = ce / B + o.lambda_adv * adv / B;
  if (vat) {
    for (std::size_t i = 0; i < vat->batch_size; ++i) {
      Trace tr;
      forward_example(p, vat->row(i), static_cast<std::size_t>(vat->lengths[i]), tr, {},
                      perts[k++].realized);
      kl += kl_divergence(p0[i], tr.logits);
    }
    total += o.lambda_vat * kl / static_cast<double>(vat->batch_size);
  }
  return total;
}

inline std::vector<std::vector<double>> clean_probs(const ModelParams &p, const TokenBatch &b) {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < b.batch_size; ++i) {
    Trace tr;
    forward_example(p, b.row(i), static_cast<std::size_t>(b.lengths[i]), tr);
    out.push_back(tr.probs);
  }
  return out;
}

// All-pairs tau-b with integer pair counts.
inline std::optional<double> brute_tau(const std::vector<double> &x, const std::vector<double> &y) {
  long long conc = 0, disc = 0, tx = 0, ty = 0;
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double a = x[i] - x[j], b = y[i] - y[j];
      if (a == 0.0 && b == 0.0) {
        ++tx;
        ++ty;
      } else if (a == 0.0) {
        ++tx;
      } else if (b == 0.0) {
        ++ty;
      } else if ((a > 0) == (b > 0)) {
        ++conc;
      } else {
        ++disc;
      }
    }
  const long long n0 = static_cast<long long>(n * (n - 1) / 2);
  if (n0 == tx || n0 == ty)
    return std::nullopt;
  return static_cast<double>(conc - disc) /
         std::sqrt(static_cast<double>(n0 - tx) * static_cast<double>(n0 - ty));
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string &name) {
  auto dir = std::filesystem::temp_directory_path() / ("attnrobust_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

} // namespace testsupport

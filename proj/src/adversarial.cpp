// SPDX-License-Identifier: Apache-2.0
/**
 * @file   adversarial.cpp
 * @brief  Fast-gradient AT directions and power-iteration VAT directions.
 */
#include <attnrobust/adversarial.hpp>
#include <attnrobust/util.hpp>

#include <cmath>
#include <random>
#include <stdexcept>

#include <json.hpp>

namespace attnrobust {

std::string_view to_string(Variant v) {
  switch (v) {
  case Variant::vanilla:
    return "vanilla";
  case Variant::word_at:
    return "word_at";
  case Variant::attention_at:
    return "attention_at";
  case Variant::attention_iat:
    return "attention_iat";
  case Variant::attention_vat:
    return "attention_vat";
  case Variant::attention_ivat:
    return "attention_ivat";
  }
  return "unknown";
}

std::optional<Variant> parse_variant(std::string_view s) {
  for (Variant v : {Variant::vanilla, Variant::word_at, Variant::attention_at,
                    Variant::attention_iat, Variant::attention_vat,
                    Variant::attention_ivat})
    if (to_string(v) == s)
      return v;
  return std::nullopt;
}

void AdvConfig::validate() const {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon))
    throw std::invalid_argument("epsilon must be a finite value > 0");
  if (!(vat_xi > 0.0) || !std::isfinite(vat_xi))
    throw std::invalid_argument("vat_xi must be a finite value > 0");
  if (vat_power_iters < 1)
    throw std::invalid_argument("vat_power_iters must be >= 1");
}

double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v)
    s += x * x;
  return std::sqrt(s);
}

namespace {

void check_epsilon(double epsilon) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon))
    throw std::invalid_argument("epsilon must be a finite value > 0");
}

// Normalized copy, or all zeros when the norm is zero.
std::vector<double> normalized(std::span<const double> v) {
  std::vector<double> out(v.begin(), v.end());
  const double n = l2_norm(v);
  if (n > 0.0)
    for (double &x : out)
      x /= n;
  else
    std::fill(out.begin(), out.end(), 0.0);
  return out;
}

Perturbation padded(Attachment attachment, std::span<const double> direction,
                    std::size_t padded_entries, double epsilon) {
  Perturbation p;
  p.attachment = attachment;
  p.epsilon = epsilon;
  p.direction.assign(padded_entries, 0.0);
  p.realized.assign(padded_entries, 0.0);
  for (std::size_t i = 0; i < direction.size(); ++i) {
    p.direction[i] = direction[i];
    p.realized[i] = epsilon * direction[i];
  }
  return p;
}

std::size_t attachment_width(Attachment a, const ModelParams &params) {
  return a == Attachment::word_embedding ? params.dims().embed_dim : 1;
}

} // namespace

Perturbation perturbation_from_gradient(Attachment attachment,
                                        std::span<const double> gradient,
                                        std::size_t length, std::size_t width,
                                        std::size_t padded_len, double epsilon) {
  if (gradient.size() < length * width || padded_len < length)
    throw std::invalid_argument("gradient does not cover the masked-in entries");
  const auto dir = normalized(gradient.first(length * width));
  return padded(attachment, dir, padded_len * width, epsilon);
}

std::vector<double> deviation_weights(std::span<const double> scores,
                                      double delta) {
  std::vector<double> w(scores.size(), 0.0);
  if (scores.empty())
    return w;
  const double mu = mean(scores);
  double mean_abs = 0.0;
  for (std::size_t t = 0; t < scores.size(); ++t) {
    w[t] = std::abs(scores[t] - mu);
    mean_abs += w[t];
  }
  mean_abs /= static_cast<double>(scores.size());
  for (double &x : w)
    x /= (mean_abs + delta);
  return w;
}

Perturbation reweight_by_deviation(std::span<const double> direction,
                                   std::span<const double> clean_scores,
                                   std::size_t padded_len, double epsilon,
                                   double delta) {
  if (direction.size() != clean_scores.size() || padded_len < direction.size())
    throw std::invalid_argument("reweight_by_deviation: length mismatch");
  const auto w = deviation_weights(clean_scores, delta);
  std::vector<double> weighted(direction.size());
  for (std::size_t t = 0; t < direction.size(); ++t)
    weighted[t] = direction[t] * w[t];
  auto dir = normalized(weighted);
  if (l2_norm(dir) == 0.0)
    dir = normalized(direction);
  return padded(Attachment::attention_scores, dir, padded_len, epsilon);
}

std::vector<double> power_iteration(
    const std::function<std::vector<double>(std::span<const double>)> &grad_at,
    std::vector<double> start, double xi, int iters) {
  if (iters < 1)
    throw std::invalid_argument("power iteration needs at least one step");
  auto u = normalized(start);
  std::vector<double> probe(u.size());
  for (int k = 0; k < iters; ++k) {
    for (std::size_t i = 0; i < u.size(); ++i)
      probe[i] = xi * u[i];
    const auto g = grad_at(probe);
    if (g.size() != u.size())
      throw std::invalid_argument("power iteration gradient has the wrong size");
    u = normalized(g);
    if (l2_norm(u) == 0.0)
      break;
  }
  return u;
}

std::vector<double> random_unit_vector(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> u(n);
  for (double &x : u)
    x = dist(rng);
  return normalized(u);
}

Perturbation adversarial_from_gradient(Variant variant, const Trace &clean,
                                       const ExampleGrad &grad,
                                       std::size_t embed_dim,
                                       std::size_t padded_len, double epsilon) {
  switch (variant) {
  case Variant::word_at:
    return perturbation_from_gradient(Attachment::word_embedding, grad.embedded,
                                      clean.length, embed_dim, padded_len, epsilon);
  case Variant::attention_at:
    return perturbation_from_gradient(Attachment::attention_scores, grad.scores,
                                      clean.length, 1, padded_len, epsilon);
  case Variant::attention_iat:
    return reweight_by_deviation(grad.scores, clean.clean_scores, padded_len,
                                 epsilon);
  default:
    throw std::invalid_argument("not an adversarial-training variant");
  }
}

Perturbation virtual_adversarial_example(const ModelParams &params,
                                         const Trace &clean,
                                         Attachment attachment,
                                         bool deviation_weighted, double epsilon,
                                         double xi, int iters,
                                         std::uint64_t seed,
                                         std::size_t padded_len) {
  if (deviation_weighted && attachment != Attachment::attention_scores)
    throw std::invalid_argument("deviation weighting applies to attention scores");
  const std::size_t width = attachment_width(attachment, params);
  const std::size_t n = clean.length * width;
  const auto &p0 = clean.probs;
  const bool on_embedding = attachment == Attachment::word_embedding;

  Trace tr;
  ExampleGrad g;
  std::vector<double> dl(p0.size());
  auto grad_at = [&](std::span<const double> r) {
    forward_example(params, clean.ids, clean.length, tr,
                    on_embedding ? r : std::span<const double>{},
                    on_embedding ? std::span<const double>{} : r);
    for (std::size_t c = 0; c < dl.size(); ++c)
      dl[c] = tr.probs[c] - p0[c];
    g.reset(params, tr, false);
    backward_example(params, tr, dl, g, {.params = false, .embedded = on_embedding});
    return on_embedding ? g.embedded : g.scores;
  };
  const auto u = power_iteration(grad_at, random_unit_vector(n, seed), xi, iters);
  if (deviation_weighted)
    return reweight_by_deviation(u, clean.clean_scores, padded_len, epsilon);
  return padded(attachment, u, padded_len * width, epsilon);
}

std::vector<Perturbation> perturb_at(const ModelParams &params,
                                     const TokenBatch &batch,
                                     Attachment attachment, double epsilon) {
  const auto &labels = batch.require_labels();
  check_epsilon(epsilon);
  const Variant v = attachment == Attachment::word_embedding ? Variant::word_at
                                                             : Variant::attention_at;
  std::vector<Perturbation> out(batch.batch_size);
  Trace tr;
  ExampleGrad g;
  for (std::size_t i = 0; i < batch.batch_size; ++i) {
    forward_example(params, batch.row(i), static_cast<std::size_t>(batch.lengths[i]), tr);
    std::vector<double> dl(tr.probs);
    dl[static_cast<std::size_t>(labels[i])] -= 1.0;
    g.reset(params, tr, false);
    backward_example(params, tr, dl, g,
                     {.params = false, .embedded = attachment == Attachment::word_embedding});
    out[i] = adversarial_from_gradient(v, tr, g, params.dims().embed_dim,
                                       batch.max_len, epsilon);
  }
  return out;
}

std::vector<Perturbation> perturb_iat(const ModelParams &params,
                                      const TokenBatch &batch, double epsilon) {
  const auto &labels = batch.require_labels();
  check_epsilon(epsilon);
  std::vector<Perturbation> out(batch.batch_size);
  Trace tr;
  ExampleGrad g;
  for (std::size_t i = 0; i < batch.batch_size; ++i) {
    forward_example(params, batch.row(i), static_cast<std::size_t>(batch.lengths[i]), tr);
    std::vector<double> dl(tr.probs);
    dl[static_cast<std::size_t>(labels[i])] -= 1.0;
    g.reset(params, tr, false);
    backward_example(params, tr, dl, g, {.params = false, .embedded = false});
    out[i] = adversarial_from_gradient(Variant::attention_iat, tr, g,
                                       params.dims().embed_dim, batch.max_len,
                                       epsilon);
  }
  return out;
}

namespace {
std::vector<Perturbation> vat_batch(const ModelParams &params,
                                    const TokenBatch &batch, Attachment attachment,
                                    bool weighted, double epsilon, double xi,
                                    int iters, std::uint64_t seed) {
  AdvConfig{epsilon, Variant::attention_vat, xi, iters}.validate();
  std::vector<Perturbation> out(batch.batch_size);
  Trace clean;
  for (std::size_t i = 0; i < batch.batch_size; ++i) {
    forward_example(params, batch.row(i), static_cast<std::size_t>(batch.lengths[i]), clean);
    out[i] = virtual_adversarial_example(params, clean, attachment, weighted,
                                         epsilon, xi, iters, mix_seed(seed, i),
                                         batch.max_len);
  }
  return out;
}
} // namespace

std::vector<Perturbation> perturb_vat(const ModelParams &params,
                                      const TokenBatch &batch,
                                      Attachment attachment, double epsilon,
                                      double xi, int iters, std::uint64_t seed) {
  return vat_batch(params, batch, attachment, false, epsilon, xi, iters, seed);
}

std::vector<Perturbation> perturb_ivat(const ModelParams &params,
                                       const TokenBatch &batch, double epsilon,
                                       double xi, int iters, std::uint64_t seed) {
  return vat_batch(params, batch, Attachment::attention_scores, true, epsilon,
                   xi, iters, seed);
}

std::vector<Perturbation> perturb(const ModelParams &params,
                                  const TokenBatch &batch, const AdvConfig &cfg,
                                  std::uint64_t seed) {
  cfg.validate();
  switch (cfg.variant) {
  case Variant::word_at:
    return perturb_at(params, batch, Attachment::word_embedding, cfg.epsilon);
  case Variant::attention_at:
    return perturb_at(params, batch, Attachment::attention_scores, cfg.epsilon);
  case Variant::attention_iat:
    return perturb_iat(params, batch, cfg.epsilon);
  case Variant::attention_vat:
    return perturb_vat(params, batch, Attachment::attention_scores, cfg.epsilon,
                       cfg.vat_xi, cfg.vat_power_iters, seed);
  case Variant::attention_ivat:
    return perturb_ivat(params, batch, cfg.epsilon, cfg.vat_xi,
                        cfg.vat_power_iters, seed);
  case Variant::vanilla:
    break;
  }
  throw std::invalid_argument("vanilla training has no perturbation");
}

std::string perturbation_audit(const AdvConfig &cfg,
                               std::span<const Perturbation> perturbations) {
  nlohmann::json j;
  j["variant"] = std::string(to_string(cfg.variant));
  j["epsilon"] = cfg.epsilon;
  j["attachment"] = perturbations.empty()
                        ? std::string()
                        : std::string(to_string(perturbations.front().attachment));
  auto norms = nlohmann::json::array();
  for (const auto &p : perturbations)
    norms.push_back(l2_norm(p.realized));
  j["norm"] = norms;
  return j.dump();
}

} // namespace attnrobust

// SPDX-License-Identifier: Apache-2.0
/**
 * @file   test_adversarial.cpp
 * @brief  Perturbation contracts and finite-difference / eigen oracles.
 */
#include "support.hpp"

#include <attnrobust/errors.hpp>
#include <attnrobust/synthetic.hpp>
#include <attnrobust/util.hpp>

#include <Eigen/Dense>
#include <doctest.h>
#include <json.hpp>

using namespace attnrobust;
using namespace testsupport;

namespace {

const ModelDims kDims{14, 4, 3, 5, 2};

std::vector<double> prefix(const std::vector<double> &v, std::size_t n) {
  return {v.begin(), v.begin() + static_cast<long>(n)};
}

std::vector<double> unit(std::vector<double> v) {
  const double n = l2_norm(v);
  for (double &x : v)
    x /= n;
  return v;
}

// d/d(attachment) of the example's cross-entropy at the clean point.
std::vector<double> fd_label_gradient(const ModelParams &p, const TokenBatch &b,
                                      std::size_t i, Attachment att) {
  const auto len = static_cast<std::size_t>(b.lengths[i]);
  const int y = (*b.labels)[i];
  const bool emb = att == Attachment::word_embedding;
  std::vector<double> r(emb ? len * p.dims().embed_dim : len, 0.0);
  return numeric_grad(
      [&] {
        Trace tr;
        forward_example(p, b.row(i), len, tr, emb ? std::span<const double>(r)
                                                  : std::span<const double>{},
                        emb ? std::span<const double>{} : std::span<const double>(r));
        return cross_entropy(tr.logits, y);
      },
      r);
}

// d/du' KL(p0 || p(. | scores + u')) at u' = at, by central differences.
std::vector<double> fd_kl_gradient(const ModelParams &p, const TokenBatch &b,
                                   std::size_t i, std::vector<double> at) {
  const auto len = static_cast<std::size_t>(b.lengths[i]);
  Trace clean;
  forward_example(p, b.row(i), len, clean);
  return numeric_grad(
      [&] {
        Trace tr;
        forward_example(p, b.row(i), len, tr, {}, at);
        return kl_divergence(clean.probs, tr.logits);
      },
      at);
}

std::vector<double> clean_scores(const ModelParams &p, const TokenBatch &b,
                                 std::size_t i) {
  Trace tr;
  forward_example(p, b.row(i), static_cast<std::size_t>(b.lengths[i]), tr);
  return tr.clean_scores;
}

std::vector<double> weighted_unit(const std::vector<double> &dir,
                                  const std::vector<double> &scores) {
  const auto w = deviation_weights(scores);
  std::vector<double> out(dir.size());
  for (std::size_t t = 0; t < dir.size(); ++t)
    out[t] = dir[t] * w[t];
  return unit(out);
}

ModelParams trained_tiny_model(std::vector<EncodedExample> &test, std::size_t &max_len) {
  SyntheticSpec spec;
  spec.train = 600;
  spec.validation = 0;
  spec.test = 200;
  spec.max_len = 16;
  spec.filler_vocab = 60;
  const auto corpus = make_sentiment_corpus(spec);
  std::vector<std::vector<std::string>> toks;
  for (const auto &r : corpus.train)
    toks.push_back(tokenize(r.text));
  const auto vocab = build_vocabulary(toks, 1);
  max_len = 20;
  TrainingData data;
  data.max_len = max_len;
  for (const auto &r : corpus.train)
    data.train.push_back(encode_example(r.text, r.label, vocab, max_len));
  for (const auto &r : corpus.test)
    test.push_back(encode_example(r.text, r.label, vocab, max_len));
  TrainOptions opts;
  opts.max_epochs = 4;
  opts.learning_rate = 5e-3;
  opts.policy = ExecPolicy::serial;
  const ModelDims dims{vocab.size(), 12, 10, 8, 2};
  return train(ModelParams::initialize(dims, ScoreKind::additive, 1), data, opts)
      .final_params;
}

} // namespace

TEST_CASE("variant names round trip") {
  for (auto v : {Variant::vanilla, Variant::word_at, Variant::attention_at,
                 Variant::attention_iat, Variant::attention_vat, Variant::attention_ivat})
    CHECK(parse_variant(to_string(v)) == v);
  CHECK_FALSE(parse_variant("attention_xat"));
  CHECK(is_adversarial(Variant::attention_iat));
  CHECK_FALSE(is_adversarial(Variant::attention_vat));
  CHECK(is_virtual_adversarial(Variant::attention_ivat));
}

TEST_CASE("AdvConfig validation") {
  AdvConfig c;
  CHECK_NOTHROW(c.validate());
  c.epsilon = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.vat_xi = -1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.vat_power_iters = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("perturbation_from_gradient normalizes and pads") {
  const std::vector<double> g{3, 4};
  const auto p = perturbation_from_gradient(Attachment::attention_scores, g, 2, 1, 4, 1.0);
  CHECK(p.realized == std::vector<double>{0.6, 0.8, 0.0, 0.0});
  CHECK(p.direction == std::vector<double>{0.6, 0.8, 0.0, 0.0});
  CHECK(p.epsilon == 1.0);

  const std::vector<double> z{0, 0};
  const auto q = perturbation_from_gradient(Attachment::attention_scores, z, 2, 1, 3, 2.0);
  CHECK(q.realized == std::vector<double>{0, 0, 0});
  CHECK(q.direction == std::vector<double>{0, 0, 0});

  const std::vector<double> ge{1, 0, 0, 1}; // two rows of width 2
  const auto e = perturbation_from_gradient(Attachment::word_embedding, ge, 2, 2, 3, 2.0);
  REQUIRE(e.realized.size() == 6);
  CHECK(e.realized[0] == doctest::Approx(std::sqrt(2.0)));
  CHECK(e.realized[4] == 0.0);
  CHECK(l2_norm(e.realized) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("deviation weighting arithmetic") {
  const std::vector<double> s{2, 0, -2};
  const auto w = deviation_weights(s, 0.0);
  CHECK(w[0] == doctest::Approx(1.5));
  CHECK(w[1] == 0.0);
  CHECK(w[2] == doctest::Approx(1.5));

  // g = [1, 1, 0] weighted by [1.5, 0, 1.5] leaves only the first coordinate
  const std::vector<double> g{1, 1, 0};
  const auto r = reweight_by_deviation(g, s, 4, 1.0, 0.0);
  CHECK(r.direction[0] == doctest::Approx(1.0));
  CHECK(r.direction[1] == 0.0);
  CHECK(r.realized[1] == 0.0);
  CHECK(r.realized[3] == 0.0);

  // uniform scores cancel the weighting; the plain direction is used
  const std::vector<double> flat{0.7, 0.7, 0.7};
  const std::vector<double> d{0.0, 3.0, 4.0};
  const auto f = reweight_by_deviation(d, flat, 3, 2.0);
  CHECK(f.realized[1] == doctest::Approx(1.2));
  CHECK(f.realized[2] == doctest::Approx(1.6));
}

TEST_CASE("perturb_at follows the finite-difference gradient") {
  const auto p = random_params(kDims, ScoreKind::additive, 3);
  const auto b = random_batch(6, 7, kDims.vocab_size, 2, 4);
  for (auto att : {Attachment::attention_scores, Attachment::word_embedding}) {
    const auto perts = perturb_at(p, b, att, 0.5);
    REQUIRE(perts.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) {
      const auto len = static_cast<std::size_t>(b.lengths[i]);
      const std::size_t w = att == Attachment::word_embedding ? kDims.embed_dim : 1;
      const auto g = fd_label_gradient(p, b, i, att);
      const double n = l2_norm(g);
      if (n < 1e-10) {
        // single-token score attachments have zero gradient (shift invariance)
        CHECK(l2_norm(perts[i].realized) == 0.0);
        continue;
      }
      const auto dir = prefix(perts[i].direction, len * w);
      for (std::size_t k = 0; k < g.size(); ++k)
        CHECK(std::abs(dir[k] - g[k] / n) < 1e-6);
      CHECK(perts[i].attachment == att);
    }
  }
  CHECK_THROWS_AS(perturb_at(p, b.without_labels(), Attachment::attention_scores, 1.0),
                  PreconditionError);
  CHECK_THROWS_AS(perturb_at(p, b, Attachment::attention_scores, 0.0),
                  std::invalid_argument);
}

TEST_CASE("perturb_iat composes the gradient oracle with the deviation weighting") {
  const auto p = random_params(kDims, ScoreKind::additive, 5);
  const auto b = random_batch(6, 7, kDims.vocab_size, 2, 6);
  const auto perts = perturb_iat(p, b, 1.5);
  for (std::size_t i = 0; i < 6; ++i) {
    const auto len = static_cast<std::size_t>(b.lengths[i]);
    const auto g = fd_label_gradient(p, b, i, Attachment::attention_scores);
    if (l2_norm(g) < 1e-10)
      continue;
    const auto expect = weighted_unit(g, clean_scores(p, b, i));
    for (std::size_t t = 0; t < len; ++t)
      CHECK(std::abs(perts[i].realized[t] - 1.5 * expect[t]) < 1e-6);
  }
  CHECK_THROWS_AS(perturb_iat(p, b.without_labels(), 1.0), PreconditionError);
}

TEST_CASE("perturb_vat is one power step on the finite-difference KL gradient") {
  const auto p = random_params(kDims, ScoreKind::additive, 7);
  const auto b = random_batch(6, 7, kDims.vocab_size, 2, 8);
  const double xi = 0.5;
  const auto perts = perturb_vat(p, b, Attachment::attention_scores, 2.0, xi, 1, 99);
  const auto ivat = perturb_ivat(p, b, 2.0, xi, 1, 99);
  for (std::size_t i = 0; i < 6; ++i) {
    const auto len = static_cast<std::size_t>(b.lengths[i]);
    auto start = random_unit_vector(len, mix_seed(99, i));
    for (double &x : start)
      x *= xi;
    const auto g = fd_kl_gradient(p, b, i, start);
    if (l2_norm(g) < 1e-9)
      continue;
    const auto u = unit(g);
    for (std::size_t t = 0; t < len; ++t)
      CHECK(std::abs(perts[i].direction[t] - u[t]) < 1e-5);
    const auto w = weighted_unit(u, clean_scores(p, b, i));
    for (std::size_t t = 0; t < len; ++t)
      CHECK(std::abs(ivat[i].realized[t] - 2.0 * w[t]) < 1e-5);
  }
}

TEST_CASE("perturb_vat is deterministic and never reads labels") {
  const auto p = random_params(kDims, ScoreKind::additive, 9);
  const auto b = random_batch(8, 9, kDims.vocab_size, 2, 10);
  const auto stripped = b.without_labels();
  for (auto att : {Attachment::attention_scores, Attachment::word_embedding}) {
    const auto x = perturb_vat(p, b, att, 1.0, 1.0, 2, 5);
    const auto y = perturb_vat(p, b, att, 1.0, 1.0, 2, 5);
    const auto z = perturb_vat(p, stripped, att, 1.0, 1.0, 2, 5);
    for (std::size_t i = 0; i < 8; ++i) {
      CHECK(x[i].realized == y[i].realized);
      CHECK(x[i].realized == z[i].realized);
    }
  }
  const auto a = perturb_ivat(p, b, 1.0, 1.0, 1, 5);
  const auto c = perturb_ivat(p, stripped, 1.0, 1.0, 1, 5);
  for (std::size_t i = 0; i < 8; ++i)
    CHECK(a[i].realized == c[i].realized);
}

TEST_CASE("uniform scores make iVAT fall back to VAT") {
  auto p = random_params(kDims, ScoreKind::additive, 12);
  for (double &x : p.view(p.layout().v))
    x = 0.0; // every score is exactly 0
  const auto b = random_batch(5, 6, kDims.vocab_size, 2, 13);
  const auto vat = perturb_vat(p, b, Attachment::attention_scores, 1.0, 1.0, 1, 3);
  const auto ivat = perturb_ivat(p, b, 1.0, 1.0, 1, 3);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t t = 0; t < 6; ++t)
      CHECK(ivat[i].realized[t] == doctest::Approx(vat[i].realized[t]).epsilon(1e-12));
}

TEST_CASE("power iteration finds the top eigenvector of a quadratic") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 5; ++trial) {
    const int n = 8;
    Eigen::MatrixXd Q = Eigen::MatrixXd::NullaryExpr(n, n, [&] { return nd(rng); });
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(Q);
    const Eigen::MatrixXd U = qr.householderQ();
    Eigen::VectorXd lambdas(n);
    for (int k = 0; k < n; ++k)
      lambdas[k] = 1.0 + k; // top eigenvalue 8, gap ratio 7/8
    const Eigen::MatrixXd A = U * lambdas.asDiagonal() * U.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
    const Eigen::VectorXd top = es.eigenvectors().col(n - 1);

    // gradient of 0.5 r^T A r is A r
    auto grad = [&](std::span<const double> r) {
      Eigen::Map<const Eigen::VectorXd> rv(r.data(), n);
      Eigen::VectorXd g = A * rv;
      return std::vector<double>(g.data(), g.data() + n);
    };
    const auto u = power_iteration(grad, random_unit_vector(n, 100 + trial), 1e-3, 60);
    Eigen::Map<const Eigen::VectorXd> uv(u.data(), n);
    CHECK(std::abs(uv.dot(top)) > 0.99);
  }

  // larger gap: 10 iterations suffice
  const int n = 6;
  Eigen::VectorXd diag(n);
  diag << 10, 2, 1.5, 1, 0.5, 0.1;
  auto grad = [&](std::span<const double> r) {
    std::vector<double> g(n);
    for (int k = 0; k < n; ++k)
      g[static_cast<std::size_t>(k)] = diag[k] * r[static_cast<std::size_t>(k)];
    return g;
  };
  const auto u = power_iteration(grad, random_unit_vector(n, 7), 1.0, 10);
  CHECK(std::abs(u[0]) > 0.99);

  const auto zero = power_iteration(
      [](std::span<const double> r) { return std::vector<double>(r.size(), 0.0); },
      random_unit_vector(4, 1), 1.0, 3);
  CHECK(zero == std::vector<double>(4, 0.0));
}

TEST_CASE("all five variants satisfy the norm, mask and scale contracts") {
  const auto p = random_params(kDims, ScoreKind::additive, 15);
  const auto b = random_batch(10, 8, kDims.vocab_size, 2, 16);
  for (auto v : {Variant::word_at, Variant::attention_at, Variant::attention_iat,
                 Variant::attention_vat, Variant::attention_ivat}) {
    AdvConfig cfg;
    cfg.variant = v;
    cfg.epsilon = 0.75;
    const auto a = perturb(p, b, cfg, 21);
    cfg.epsilon = 1.5;
    const auto d = perturb(p, b, cfg, 21);
    const std::size_t w = v == Variant::word_at ? kDims.embed_dim : 1;
    for (std::size_t i = 0; i < 10; ++i) {
      const double n = l2_norm(a[i].realized);
      if (n != 0.0)
        CHECK(std::abs(n - 0.75) <= 1e-6);
      for (std::size_t k = static_cast<std::size_t>(b.lengths[i]) * w;
           k < a[i].realized.size(); ++k)
        CHECK(a[i].realized[k] == 0.0);
      CHECK(d[i].direction == a[i].direction);
      for (std::size_t k = 0; k < a[i].realized.size(); ++k)
        CHECK(d[i].realized[k] == 2.0 * a[i].realized[k]);
    }
  }
  AdvConfig vanilla;
  vanilla.variant = Variant::vanilla;
  CHECK_THROWS_AS(perturb(p, b, vanilla, 0), std::invalid_argument);
}

TEST_CASE("attention AT perturbations increase the loss on a trained model") {
  std::vector<EncodedExample> test;
  std::size_t max_len = 0;
  const auto p = trained_tiny_model(test, max_len);
  REQUIRE(test.size() == 200);
  std::size_t up = 0, counted = 0;
  for (const auto &ex : test) {
    const std::vector<const EncodedExample *> rows{&ex};
    const auto b = collate(rows, max_len);
    const auto r = perturb_at(p, b, Attachment::attention_scores, 1.0)[0];
    const auto len = static_cast<std::size_t>(b.lengths[0]);
    Trace clean, adv;
    forward_example(p, b.row(0), len, clean);
    forward_example(p, b.row(0), len, adv, {}, r.realized);
    ++counted;
    up += cross_entropy(adv.logits, *ex.label) >= cross_entropy(clean.logits, *ex.label);
  }
  MESSAGE("loss increased on " << up << " of " << counted << " examples");
  CHECK(up * 10 >= counted * 9);
}

TEST_CASE("perturbation audit is a JSON record") {
  const auto p = random_params(kDims, ScoreKind::additive, 1);
  const auto b = random_batch(3, 5, kDims.vocab_size, 2, 2);
  AdvConfig cfg;
  cfg.variant = Variant::attention_iat;
  cfg.epsilon = 0.25;
  const auto perts = perturb(p, b, cfg, 0);
  const auto j = nlohmann::json::parse(perturbation_audit(cfg, perts));
  CHECK(j["variant"] == "attention_iat");
  CHECK(j["epsilon"] == 0.25);
  CHECK(j["attachment"] == "attention_scores");
  REQUIRE(j["norm"].size() == 3);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(j["norm"][i].get<double>() == doctest::Approx(l2_norm(perts[i].realized)));
}

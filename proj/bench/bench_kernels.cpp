// SPDX-License-Identifier: Apache-2.0
/**
 * @file   bench_kernels.cpp
 * @brief  Serial reference versus OpenMP batch kernels.
 */
#include <attnrobust/kernels.hpp>
#include <attnrobust/synthetic.hpp>

#include <benchmark/benchmark.h>

namespace {

using namespace attnrobust;

struct Fixture {
  Vocabulary vocab;
  TokenBatch batch;
  ModelParams params;
};

Fixture make_fixture(std::size_t batch_size, std::size_t dim) {
  SyntheticSpec spec;
  spec.train = 512;
  spec.validation = spec.test = 0;
  const auto corpus = make_sentiment_corpus(spec);
  std::vector<std::vector<std::string>> toks;
  for (const auto &r : corpus.train)
    toks.push_back(tokenize(r.text));
  Vocabulary vocab = build_vocabulary(toks, 1);
  std::vector<TextItem> items;
  for (std::size_t i = 0; i < batch_size; ++i)
    items.push_back({corpus.train[i].text, corpus.train[i].label});
  TokenBatch batch = encode_batch(items, vocab, 64);
  const ModelDims dims{vocab.size(), dim, dim, dim / 2, 2};
  auto params = ModelParams::initialize(dims, ScoreKind::additive, 1);
  return {std::move(vocab), std::move(batch), std::move(params)};
}

void BM_SupervisedGradient(benchmark::State &state, ExecPolicy policy) {
  const auto f = make_fixture(static_cast<std::size_t>(state.range(0)),
                              static_cast<std::size_t>(state.range(1)));
  std::vector<double> grad;
  for (auto _ : state) {
    benchmark::DoNotOptimize(supervised_gradient(f.params, f.batch, policy, grad));
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_PredictProbs(benchmark::State &state, ExecPolicy policy) {
  const auto f = make_fixture(static_cast<std::size_t>(state.range(0)),
                              static_cast<std::size_t>(state.range(1)));
  for (auto _ : state)
    benchmark::DoNotOptimize(predict_probs(f.params, f.batch, policy));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void args(benchmark::internal::Benchmark *b) {
  b->Args({32, 32})->Args({32, 64})->Args({128, 64})->Unit(benchmark::kMillisecond);
}

} // namespace

BENCHMARK_CAPTURE(BM_SupervisedGradient, serial, ExecPolicy::serial)->Apply(args);
BENCHMARK_CAPTURE(BM_SupervisedGradient, parallel, ExecPolicy::parallel)->Apply(args);
BENCHMARK_CAPTURE(BM_PredictProbs, serial, ExecPolicy::serial)->Apply(args);
BENCHMARK_CAPTURE(BM_PredictProbs, parallel, ExecPolicy::parallel)->Apply(args);

BENCHMARK_MAIN();

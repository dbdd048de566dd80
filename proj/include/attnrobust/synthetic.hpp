// SPDX-License-Identifier: Apache-2.0
/**
 * @file   synthetic.hpp
 * @brief  Seeded generator for a binary sentiment corpus.
 *
 * Sentences mix Zipf-distributed filler words with a few polar words
 * ("great", "awful", ...). A polar word may be preceded by "not", which flips
 * its polarity; the label is the sign of the summed polarity. Filler words
 * depend on a domain seed, so a second domain yields out-of-domain text that
 * shares only the sentiment lexicon.
 */
#pragma once

#include <attnrobust/data_text.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace attnrobust {

struct SyntheticSpec {
  std::size_t train = 2000;
  std::size_t validation = 500;
  std::size_t test = 500;
  std::size_t unlabeled = 0;
  std::size_t min_len = 8;
  std::size_t max_len = 30;
  std::size_t filler_vocab = 400;
  int min_polar = 1;
  int max_polar = 3;
  double negation_prob = 0.15;
  double distractor_prob = 0.35;
  double label_noise = 0.0;
  std::uint64_t seed = 7;
  /// Selects the filler vocabulary; the unlabeled pool can use its own.
  std::uint64_t domain = 0;
  std::uint64_t unlabeled_domain = 0;
};

/// One sentence and its label (0 negative, 1 positive).
struct SyntheticSentence {
  std::string text;
  int label = 0;
};

std::vector<SyntheticSentence> generate_sentences(const SyntheticSpec &spec,
                                                  std::uint64_t domain,
                                                  std::size_t count,
                                                  std::uint64_t stream);

/// Label names are {"0", "1"}.
CorpusSplit make_sentiment_corpus(const SyntheticSpec &spec);

/// Writes train/valid/test/unlabeled .jsonl files (the unlabeled file is
/// omitted when the pool is empty).
void write_corpus_jsonl(const CorpusSplit &corpus,
                        const std::filesystem::path &dir);

} // namespace attnrobust

// SPDX-License-Identifier: Apache-2.0
/**
 * @file   data_text.hpp
 * @brief  Corpus ingestion, vocabulary and padded token batches.
 */
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace attnrobust {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kUnkToken = "<unk>";

/**
 * Lowercases ASCII letters and splits on whitespace; every ASCII punctuation
 * character becomes a token of its own. Bytes >= 0x80 are treated as word
 * characters so UTF-8 sequences stay intact.
 */
std::vector<std::string> tokenize(std::string_view text);

class Vocabulary {
public:
  Vocabulary();

  /// Rebuilds a vocabulary from its id -> token list (ids 0 and 1 must be the
  /// PAD and UNK tokens).
  static Vocabulary from_tokens(std::vector<std::string> id_to_token,
                                int min_freq);

  /// Id for a token, UNK when absent.
  int id(std::string_view token) const;
  const std::string &token(int id) const;
  std::size_t size() const noexcept { return id_to_token_.size(); }
  int min_freq() const noexcept { return min_freq_; }
  const std::vector<std::string> &tokens() const noexcept {
    return id_to_token_;
  }

  bool operator==(const Vocabulary &other) const {
    return min_freq_ == other.min_freq_ && id_to_token_ == other.id_to_token_;
  }

private:
  friend Vocabulary
  build_vocabulary(const std::vector<std::vector<std::string>> &, int);

  std::unordered_map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
  int min_freq_ = 1;
};

/// Tokens with frequency >= min_freq get ids from 2 upward, ordered by
/// descending frequency and then lexicographically.
Vocabulary build_vocabulary(const std::vector<std::vector<std::string>> &corpus,
                            int min_freq);

/// Padded batch of token ids. Row-major `ids` of shape batch x max_len.
struct TokenBatch {
  std::size_t batch_size = 0;
  std::size_t max_len = 0;
  std::vector<int> ids;
  std::vector<int> lengths;
  std::vector<std::uint8_t> mask;
  std::optional<std::vector<int>> labels;

  bool is_labeled() const noexcept { return labels.has_value(); }
  std::span<const int> row(std::size_t i) const {
    return {ids.data() + i * max_len, max_len};
  }
  /// Throws PreconditionError when the batch carries no labels.
  const std::vector<int> &require_labels() const;
  TokenBatch without_labels() const;
};

/// One token-id sequence with an optional class index.
struct EncodedExample {
  std::vector<int> ids;
  std::optional<int> label;
};

/// Maps tokens to ids and truncates to max_len. An empty token list becomes a
/// single UNK so every encoded example has length >= 1.
EncodedExample encode_example(std::string_view text, std::optional<int> label,
                              const Vocabulary &vocab, std::size_t max_len);

/// Pads already-encoded examples. Labels are kept only when every example has
/// one; a mix of labeled and unlabeled examples is rejected.
TokenBatch collate(std::span<const EncodedExample *const> examples,
                   std::size_t max_len);

struct TextItem {
  std::string text;
  std::optional<int> label;
};

TokenBatch encode_batch(std::span<const TextItem> examples,
                        const Vocabulary &vocab, std::size_t max_len);

struct LabeledText {
  std::string text;
  int label = 0;
};

/// Train/validation/test splits plus a label-free pool. Unlabeled entries are
/// plain strings so no label can be observed through them.
struct CorpusSplit {
  std::vector<LabeledText> train;
  std::vector<LabeledText> validation;
  std::vector<LabeledText> test;
  std::vector<std::string> unlabeled_pool;
  /// Class index -> original label string, fixed from the train split.
  std::vector<std::string> label_names;
};

enum class CorpusFormat { jsonl, tsv };

std::optional<CorpusFormat> parse_corpus_format(std::string_view name);

/// One parsed line: text plus the raw label if present.
struct RawRecord {
  std::string text;
  std::optional<std::string> label;
  std::size_t line = 0;
};

/// Parses a single corpus file. Blank lines are skipped; a malformed line
/// raises ParseError with its line number.
std::vector<RawRecord> read_records(const std::filesystem::path &file,
                                    CorpusFormat format);

/**
 * Loads train/valid/test/unlabeled files (`<split>.jsonl` or `<split>.tsv`)
 * from a corpus directory. Only train is required. Records without a label go
 * to the unlabeled pool; labels in the unlabeled file are dropped. The label
 * set comes from train and an unseen label elsewhere raises LabelError.
 */
CorpusSplit load_corpus(const std::filesystem::path &dir, CorpusFormat format);

/// Stable fingerprint of the corpus files (FNV-1a over their bytes).
std::string corpus_fingerprint(const std::filesystem::path &dir,
                               CorpusFormat format);

} // namespace attnrobust

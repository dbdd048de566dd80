// SPDX-License-Identifier: Apache-2.0
#include <attnrobust/synthetic.hpp>
#include <attnrobust/util.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <stdexcept>

#include <json.hpp>

namespace attnrobust {

namespace {

constexpr std::array<const char *, 24> kPositive = {
    "good",     "great",     "excellent", "wonderful", "superb",   "delightful",
    "enjoyable", "brilliant", "charming",  "moving",    "solid",    "fun",
    "beautiful", "clever",    "fresh",     "touching",  "strong",   "lovely",
    "terrific",  "gripping",  "smart",     "warm",      "inspired", "perfect"};

constexpr std::array<const char *, 24> kNegative = {
    "bad",     "awful",  "terrible", "boring",    "dull",     "weak",
    "poor",    "messy",  "tedious",  "bland",     "clumsy",   "annoying",
    "stale",   "flat",   "lifeless", "dreadful",  "shallow",  "pointless",
    "sloppy",  "tired",  "forced",   "hollow",    "painful",  "worst"};

constexpr std::array<const char *, 20> kOnsets = {
    "b", "c", "d", "f", "g", "h", "j", "k", "l", "m",
    "n", "p", "r", "s", "t", "v", "w", "z", "br", "st"};
constexpr std::array<const char *, 6> kVowels = {"a", "e", "i", "o", "u", "ou"};

// Distinct pseudo-words for one domain; each domain has its own syllable
// stream, so fillers of two domains rarely collide.
std::vector<std::string> filler_words(std::size_t count, std::uint64_t domain) {
  std::mt19937_64 rng(mix_seed(0xf111e5ULL, domain));
  std::vector<std::string> out;
  std::vector<std::string> seen;
  while (out.size() < count) {
    const int syllables = 2 + static_cast<int>(rng() % 2);
    std::string w;
    for (int s = 0; s < syllables; ++s) {
      w += kOnsets[rng() % kOnsets.size()];
      w += kVowels[rng() % kVowels.size()];
    }
    if (w == "not" || std::find(seen.begin(), seen.end(), w) != seen.end())
      continue;
    seen.push_back(w);
    out.push_back(std::move(w));
  }
  return out;
}

} // namespace

std::vector<SyntheticSentence> generate_sentences(const SyntheticSpec &spec,
                                                  std::uint64_t domain,
                                                  std::size_t count,
                                                  std::uint64_t stream) {
  if (spec.min_len < 2 || spec.max_len < spec.min_len)
    throw std::invalid_argument("synthetic lengths must satisfy 2 <= min <= max");
  if (spec.min_polar < 1 || spec.max_polar < spec.min_polar)
    throw std::invalid_argument("synthetic polar counts must satisfy 1 <= min <= max");

  const auto fillers = filler_words(spec.filler_vocab, domain);
  std::vector<double> zipf(fillers.size());
  for (std::size_t i = 0; i < zipf.size(); ++i)
    zipf[i] = 1.0 / static_cast<double>(i + 1);
  std::discrete_distribution<std::size_t> pick_filler(zipf.begin(), zipf.end());

  std::mt19937_64 rng(mix_seed(spec.seed, stream));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform_int = [&](std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
  };

  std::vector<SyntheticSentence> out;
  out.reserve(count);
  while (out.size() < count) {
    const std::size_t len = uniform_int(spec.min_len, spec.max_len);
    std::vector<std::string> words(len);
    for (auto &w : words)
      w = fillers[pick_filler(rng)];

    const int target = static_cast<int>(rng() % 2); // 1 = positive
    std::size_t polar = uniform_int(static_cast<std::size_t>(spec.min_polar),
                                    static_cast<std::size_t>(spec.max_polar));
    std::vector<int> signs(polar, target ? 1 : -1);
    if (unit(rng) < spec.distractor_prob)
      signs.push_back(target ? -1 : 1);

    int sum = 0;
    std::vector<std::size_t> slots(len);
    for (std::size_t i = 0; i < len; ++i)
      slots[i] = i;
    std::shuffle(slots.begin(), slots.end(), rng);
    std::size_t used = 0;
    std::vector<std::uint8_t> reserved(len, 0);
    for (int sign : signs) {
      while (used < len && reserved[slots[used]])
        ++used;
      if (used >= len)
        break;
      const std::size_t pos = slots[used++];
      reserved[pos] = 1;
      const bool negated =
          pos > 0 && !reserved[pos - 1] && unit(rng) < spec.negation_prob;
      if (negated)
        reserved[pos - 1] = 1;
      const int word_sign = negated ? -sign : sign;
      const auto &lex = word_sign > 0 ? kPositive : kNegative;
      words[pos] = lex[rng() % lex.size()];
      if (negated)
        words[pos - 1] = "not";
      sum += sign;
    }
    if (sum == 0)
      continue;

    int label = sum > 0 ? 1 : 0;
    if (spec.label_noise > 0.0 && unit(rng) < spec.label_noise)
      label = 1 - label;
    std::string text;
    for (std::size_t i = 0; i < len; ++i) {
      if (i)
        text += ' ';
      text += words[i];
    }
    text += " .";
    out.push_back({std::move(text), label});
  }
  return out;
}

CorpusSplit make_sentiment_corpus(const SyntheticSpec &spec) {
  CorpusSplit c;
  c.label_names = {"0", "1"};
  auto fill = [&](std::vector<LabeledText> &dest, std::size_t n,
                  std::uint64_t stream) {
    for (auto &s : generate_sentences(spec, spec.domain, n, stream))
      dest.push_back({std::move(s.text), s.label});
  };
  fill(c.train, spec.train, 1);
  fill(c.validation, spec.validation, 2);
  fill(c.test, spec.test, 3);
  for (auto &s : generate_sentences(spec, spec.unlabeled_domain, spec.unlabeled, 4))
    c.unlabeled_pool.push_back(std::move(s.text));
  return c;
}

void write_corpus_jsonl(const CorpusSplit &corpus,
                        const std::filesystem::path &dir) {
  std::filesystem::create_directories(dir);
  auto write = [&](const char *name, const std::vector<LabeledText> &rows) {
    std::ofstream out(dir / name, std::ios::trunc);
    for (const auto &r : rows)
      out << nlohmann::json{{"text", r.text},
                            {"label", corpus.label_names.at(static_cast<std::size_t>(r.label))}}
                 .dump()
          << '\n';
  };
  write("train.jsonl", corpus.train);
  write("valid.jsonl", corpus.validation);
  write("test.jsonl", corpus.test);
  if (!corpus.unlabeled_pool.empty()) {
    std::ofstream out(dir / "unlabeled.jsonl", std::ios::trunc);
    for (const auto &t : corpus.unlabeled_pool)
      out << nlohmann::json{{"text", t}}.dump() << '\n';
  }
}

} // namespace attnrobust

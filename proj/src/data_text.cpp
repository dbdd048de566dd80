// SPDX-License-Identifier: Apache-2.0
/**
 * @file   data_text.cpp
 * @brief  Tokenizer, vocabulary, batching and corpus loading.
 */
#include <attnrobust/data_text.hpp>
#include <attnrobust/errors.hpp>
#include <attnrobust/util.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace attnrobust {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string format_g17(double v) {
  if (!std::isfinite(v))
    return "null";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double mean(std::span<const double> xs) {
  if (xs.empty())
    return 0.0;
  double s = 0.0;
  for (double x : xs)
    s += x;
  return s / static_cast<double>(xs.size());
}

double sample_std(std::span<const double> xs) {
  if (xs.size() < 2)
    return 0.0;
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs)
    ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

double median(std::span<const double> xs) {
  if (xs.empty())
    return 0.0;
  std::vector<double> v(xs.begin(), xs.end());
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80 && std::isspace(c)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return out;
}

Vocabulary::Vocabulary()
  : id_to_token_{std::string(kPadToken), std::string(kUnkToken)} {}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> id_to_token,
                                   int min_freq) {
  if (id_to_token.size() < 2 || id_to_token[0] != kPadToken ||
      id_to_token[1] != kUnkToken)
    throw std::invalid_argument("vocabulary must start with <pad>, <unk>");
  Vocabulary v;
  v.min_freq_ = min_freq;
  v.id_to_token_ = std::move(id_to_token);
  for (std::size_t i = 2; i < v.id_to_token_.size(); ++i) {
    const auto &tok = v.id_to_token_[i];
    if (tok == kPadToken || tok == kUnkToken ||
        !v.token_to_id_.emplace(tok, static_cast<int>(i)).second)
      throw std::invalid_argument("duplicate vocabulary token: " +
                                  v.id_to_token_[i]);
  }
  return v;
}

int Vocabulary::id(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnkId : it->second;
}

const std::string &Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size())
    throw std::out_of_range("token id out of range: " + std::to_string(id));
  return id_to_token_[static_cast<std::size_t>(id)];
}

Vocabulary build_vocabulary(const std::vector<std::vector<std::string>> &corpus,
                            int min_freq) {
  if (min_freq < 1)
    throw std::invalid_argument("min_freq must be >= 1");
  if (corpus.empty())
    throw std::invalid_argument("cannot build a vocabulary from an empty corpus");

  std::unordered_map<std::string, std::size_t> counts;
  for (const auto &doc : corpus)
    for (const auto &tok : doc)
      ++counts[tok];

  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto &[tok, n] : counts)
    if (n >= static_cast<std::size_t>(min_freq) && tok != kPadToken &&
        tok != kUnkToken)
      kept.emplace_back(tok, n);
  std::sort(kept.begin(), kept.end(), [](const auto &a, const auto &b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });

  Vocabulary v;
  v.min_freq_ = min_freq;
  for (auto &[tok, n] : kept) {
    v.token_to_id_.emplace(tok, static_cast<int>(v.id_to_token_.size()));
    v.id_to_token_.push_back(tok);
  }
  return v;
}

const std::vector<int> &TokenBatch::require_labels() const {
  if (!labels)
    throw PreconditionError("operation requires a labeled batch");
  return *labels;
}

TokenBatch TokenBatch::without_labels() const {
  TokenBatch b = *this;
  b.labels.reset();
  return b;
}

EncodedExample encode_example(std::string_view text, std::optional<int> label,
                              const Vocabulary &vocab, std::size_t max_len) {
  if (max_len < 1)
    throw std::invalid_argument("max_len must be >= 1");
  EncodedExample ex;
  ex.label = label;
  for (const auto &tok : tokenize(text)) {
    if (ex.ids.size() == max_len)
      break;
    ex.ids.push_back(vocab.id(tok));
  }
  if (ex.ids.empty())
    ex.ids.push_back(kUnkId);
  return ex;
}

TokenBatch collate(std::span<const EncodedExample *const> examples,
                   std::size_t max_len) {
  if (examples.empty())
    throw std::invalid_argument("cannot build a batch from zero examples");
  if (max_len < 1)
    throw std::invalid_argument("max_len must be >= 1");

  const std::size_t labeled = static_cast<std::size_t>(
      std::count_if(examples.begin(), examples.end(),
                    [](const EncodedExample *e) { return e->label.has_value(); }));
  if (labeled != 0 && labeled != examples.size())
    throw std::invalid_argument("batch mixes labeled and unlabeled examples");

  TokenBatch b;
  b.batch_size = examples.size();
  b.max_len = max_len;
  b.ids.assign(b.batch_size * max_len, kPadId);
  b.mask.assign(b.batch_size * max_len, 0);
  b.lengths.resize(b.batch_size);
  if (labeled)
    b.labels.emplace(b.batch_size);

  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto &ex = *examples[i];
    const std::size_t len = std::min(ex.ids.size(), max_len);
    if (len == 0)
      throw std::invalid_argument("encoded example has no tokens");
    b.lengths[i] = static_cast<int>(len);
    for (std::size_t t = 0; t < len; ++t) {
      b.ids[i * max_len + t] = ex.ids[t];
      b.mask[i * max_len + t] = 1;
    }
    if (labeled)
      (*b.labels)[i] = *ex.label;
  }
  return b;
}

TokenBatch encode_batch(std::span<const TextItem> examples,
                        const Vocabulary &vocab, std::size_t max_len) {
  if (examples.empty())
    throw std::invalid_argument("cannot encode an empty example list");
  if (max_len < 1)
    throw std::invalid_argument("T_max must be >= 1");
  std::vector<EncodedExample> encoded;
  encoded.reserve(examples.size());
  for (const auto &e : examples)
    encoded.push_back(encode_example(e.text, e.label, vocab, max_len));
  std::vector<const EncodedExample *> ptrs;
  for (const auto &e : encoded)
    ptrs.push_back(&e);
  return collate(ptrs, max_len);
}

std::optional<CorpusFormat> parse_corpus_format(std::string_view name) {
  if (name == "jsonl")
    return CorpusFormat::jsonl;
  if (name == "tsv")
    return CorpusFormat::tsv;
  return std::nullopt;
}

namespace {

const char *extension(CorpusFormat f) {
  return f == CorpusFormat::jsonl ? ".jsonl" : ".tsv";
}

RawRecord parse_jsonl_line(const std::string &line, std::size_t lineno,
                           const std::string &source) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error &e) {
    throw ParseError(source, lineno, std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object())
    throw ParseError(source, lineno, "record is not a JSON object");
  auto text = j.find("text");
  if (text == j.end() || !text->is_string())
    throw ParseError(source, lineno, "missing string field \"text\"");

  RawRecord rec{text->get<std::string>(), std::nullopt, lineno};
  if (auto label = j.find("label"); label != j.end() && !label->is_null()) {
    if (label->is_string())
      rec.label = label->get<std::string>();
    else if (label->is_number_integer())
      rec.label = std::to_string(label->get<long long>());
    else
      throw ParseError(source, lineno, "\"label\" must be a string or integer");
  }
  return rec;
}

RawRecord parse_tsv_line(const std::string &line, std::size_t lineno,
                         const std::string &source) {
  const auto tab = line.find('\t');
  if (tab == std::string::npos)
    return {line, std::nullopt, lineno};
  if (line.find('\t', tab + 1) != std::string::npos)
    throw ParseError(source, lineno, "expected at most two tab-separated columns");
  std::string label = line.substr(tab + 1);
  RawRecord rec{line.substr(0, tab), std::nullopt, lineno};
  if (!label.empty())
    rec.label = std::move(label);
  return rec;
}

bool is_integer_label(const std::string &s) {
  if (s.empty())
    return false;
  std::size_t i = (s[0] == '-') ? 1 : 0;
  if (i == s.size())
    return false;
  for (; i < s.size(); ++i)
    if (!std::isdigit(static_cast<unsigned char>(s[i])))
      return false;
  return true;
}

} // namespace

std::vector<RawRecord> read_records(const std::filesystem::path &file,
                                    CorpusFormat format) {
  std::ifstream in(file, std::ios::binary);
  if (!in)
    throw std::runtime_error("cannot open corpus file " + file.string());
  std::vector<RawRecord> out;
  std::string line;
  std::size_t lineno = 0;
  const std::string source = file.filename().string();
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos)
      continue;
    out.push_back(format == CorpusFormat::jsonl
                      ? parse_jsonl_line(line, lineno, source)
                      : parse_tsv_line(line, lineno, source));
  }
  return out;
}

CorpusSplit load_corpus(const std::filesystem::path &dir, CorpusFormat format) {
  namespace fs = std::filesystem;
  const auto file = [&](const char *split) {
    return dir / (std::string(split) + extension(format));
  };
  if (!fs::is_regular_file(file("train")))
    throw ConfigError("corpus directory lacks " + file("train").string());

  CorpusSplit split;
  const auto train = read_records(file("train"), format);

  std::set<std::string> label_set;
  for (const auto &r : train)
    if (r.label)
      label_set.insert(*r.label);
  std::vector<std::string> names(label_set.begin(), label_set.end());
  if (std::all_of(names.begin(), names.end(), is_integer_label))
    std::sort(names.begin(), names.end(), [](const auto &a, const auto &b) {
      return std::stoll(a) < std::stoll(b);
    });
  split.label_names = names;
  std::map<std::string, int> label_index;
  for (std::size_t i = 0; i < names.size(); ++i)
    label_index[names[i]] = static_cast<int>(i);

  const auto route = [&](const std::vector<RawRecord> &records,
                         std::vector<LabeledText> &dest, const char *name) {
    for (const auto &r : records) {
      if (!r.label) {
        split.unlabeled_pool.push_back(r.text);
        continue;
      }
      auto it = label_index.find(*r.label);
      if (it == label_index.end())
        throw LabelError(std::string(name) + extension(format) + ":" +
                         std::to_string(r.line) + ": label \"" + *r.label +
                         "\" does not occur in the train split");
      dest.push_back({r.text, it->second});
    }
  };
  route(train, split.train, "train");
  if (fs::is_regular_file(file("valid")))
    route(read_records(file("valid"), format), split.validation, "valid");
  if (fs::is_regular_file(file("test")))
    route(read_records(file("test"), format), split.test, "test");
  if (fs::is_regular_file(file("unlabeled")))
    for (auto &r : read_records(file("unlabeled"), format))
      split.unlabeled_pool.push_back(std::move(r.text));
  return split;
}

std::string corpus_fingerprint(const std::filesystem::path &dir,
                               CorpusFormat format) {
  std::uint64_t h = kFnvOffset;
  for (const char *split : {"train", "valid", "test", "unlabeled"}) {
    const auto path = dir / (std::string(split) + extension(format));
    h = fnv1a64(split, h);
    std::ifstream in(path, std::ios::binary);
    if (!in)
      continue;
    std::ostringstream ss;
    ss << in.rdbuf();
    h = fnv1a64(ss.str(), h);
  }
  return hex64(h);
}

} // namespace attnrobust

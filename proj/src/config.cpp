// SPDX-License-Identifier: Apache-2.0
/**
 * @file   config.cpp
 * @brief  TOML decoding, overrides and validation of ExperimentConfig.
 */
#include <attnrobust/config.hpp>
#include <attnrobust/errors.hpp>
#include <attnrobust/util.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <toml.hpp>

namespace attnrobust {

namespace {

struct Field {
  std::string_view section; // empty for top level
  std::string_view key;
};

constexpr Field kFields[] = {
    {"", "corpus_dir"},           {"", "corpus_format"},
    {"", "output_dir"},           {"", "variant"},
    {"", "score_kind"},           {"", "epsilon"},
    {"", "seeds"},                {"", "debug_perturbations"},
    {"model", "embed_dim"},       {"model", "hidden_dim"},
    {"model", "attn_dim"},        {"training", "learning_rate"},
    {"training", "batch_size"},   {"training", "max_epochs"},
    {"training", "patience"},     {"training", "lambda_adv"},
    {"training", "lambda_vat"},   {"training", "unlabeled_per_labeled"},
    {"training", "vat_xi"},       {"training", "vat_power_iters"},
    {"training", "divergence_threshold"},
    {"data", "min_freq"},         {"data", "max_len"},
    {"eval", "reduction"},        {"sweep", "epsilon_grid"},
};

bool is_section(std::string_view name) {
  return std::any_of(std::begin(kFields), std::end(kFields),
                     [&](const Field &f) { return f.section == name; });
}

bool is_field(std::string_view section, std::string_view key) {
  return std::any_of(std::begin(kFields), std::end(kFields), [&](const Field &f) {
    return f.section == section && f.key == key;
  });
}

std::string dotted(std::string_view section, std::string_view key) {
  return section.empty() ? std::string(key)
                         : std::string(section) + "." + std::string(key);
}

[[noreturn]] void fail(std::string_view field, const std::string &msg) {
  throw ConfigError("config field '" + std::string(field) + "': " + msg);
}

void apply_override(toml::table &root, std::string_view raw) {
  while (raw.starts_with("-"))
    raw.remove_prefix(1);
  const auto eq = raw.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw ConfigError("override '" + std::string(raw) + "' is not key=value");
  const std::string key(raw.substr(0, eq));
  const std::string value(raw.substr(eq + 1));

  std::string section, name;
  if (const auto dot = key.find('.'); dot != std::string::npos) {
    section = key.substr(0, dot);
    name = key.substr(dot + 1);
  } else if (is_field("", key)) {
    name = key;
  } else {
    std::vector<std::string_view> owners;
    for (const auto &f : kFields)
      if (f.key == key)
        owners.push_back(f.section);
    if (owners.size() != 1)
      throw ConfigError("unknown or ambiguous override key '" + key + "'");
    section = owners.front();
    name = key;
  }
  if (!is_field(section, name))
    throw ConfigError("unknown override key '" + key + "'");

  toml::table *dest = &root;
  if (!section.empty()) {
    if (!root.contains(section))
      root.insert(section, toml::table{});
    dest = root[section].as_table();
    if (!dest)
      fail(section, "expected a table");
  }

  toml::table parsed;
  bool ok = true;
  try {
    parsed = toml::parse("v = " + value);
  } catch (const toml::parse_error &) {
    ok = false;
  }
  if (ok)
    parsed["v"].visit([&](auto &&node) { dest->insert_or_assign(name, node); });
  else
    dest->insert_or_assign(name, value);
}

void reject_unknown(const toml::table &root) {
  for (const auto &[k, node] : root) {
    const std::string_view key = k.str();
    if (const auto *sub = node.as_table(); sub && is_section(key)) {
      for (const auto &[k2, unused] : *sub)
        if (!is_field(key, k2.str()))
          fail(dotted(key, k2.str()), "unknown field");
    } else if (!is_field("", key)) {
      fail(key, "unknown field");
    }
  }
}

const toml::node *lookup(const toml::table &root, std::string_view section,
                         std::string_view key) {
  if (section.empty())
    return root.get(key);
  const auto *sub = root.get_as<toml::table>(section);
  return sub ? sub->get(key) : nullptr;
}

class Reader {
public:
  explicit Reader(const toml::table &root) : root_(root) {}

  void str(std::string_view s, std::string_view k, std::string &out) const {
    if (const auto *n = lookup(root_, s, k)) {
      auto v = n->value<std::string>();
      if (!n->is_string() || !v)
        fail(dotted(s, k), "expected a string");
      out = *v;
    }
  }
  void real(std::string_view s, std::string_view k, double &out) const {
    if (const auto *n = lookup(root_, s, k)) {
      if (!n->is_number())
        fail(dotted(s, k), "expected a number");
      out = *n->value<double>();
    }
  }
  template <class Int>
  void integer(std::string_view s, std::string_view k, Int &out) const {
    if (const auto *n = lookup(root_, s, k)) {
      if (!n->is_integer())
        fail(dotted(s, k), "expected an integer");
      const auto v = *n->value<std::int64_t>();
      if (v < 0)
        fail(dotted(s, k), "must be non-negative");
      out = static_cast<Int>(v);
    }
  }
  void boolean(std::string_view s, std::string_view k, bool &out) const {
    if (const auto *n = lookup(root_, s, k)) {
      if (!n->is_boolean())
        fail(dotted(s, k), "expected true or false");
      out = *n->value<bool>();
    }
  }
  void reals(std::string_view s, std::string_view k, std::vector<double> &out) const {
    if (const auto *n = lookup(root_, s, k)) {
      const auto *arr = n->as_array();
      if (!arr)
        fail(dotted(s, k), "expected an array of numbers");
      out.clear();
      for (const auto &e : *arr) {
        if (!e.is_number())
          fail(dotted(s, k), "expected an array of numbers");
        out.push_back(*e.value<double>());
      }
    }
  }
  void seeds(std::string_view s, std::string_view k,
             std::vector<std::uint64_t> &out) const {
    if (const auto *n = lookup(root_, s, k)) {
      const auto *arr = n->as_array();
      if (!arr)
        fail(dotted(s, k), "expected an array of integers");
      out.clear();
      for (const auto &e : *arr) {
        if (!e.is_integer() || *e.value<std::int64_t>() < 0)
          fail(dotted(s, k), "expected an array of non-negative integers");
        out.push_back(static_cast<std::uint64_t>(*e.value<std::int64_t>()));
      }
    }
  }

private:
  const toml::table &root_;
};

ExperimentConfig decode(const toml::table &root,
                        const std::filesystem::path &base_dir) {
  reject_unknown(root);
  ExperimentConfig c;
  Reader r(root);

  std::string corpus_dir, output_dir, format = "jsonl", variant = "vanilla",
                                      score_kind = "additive",
                                      reduction = "grad_x_input";
  r.str("", "corpus_dir", corpus_dir);
  r.str("", "output_dir", output_dir);
  r.str("", "corpus_format", format);
  r.str("", "variant", variant);
  r.str("", "score_kind", score_kind);
  r.real("", "epsilon", c.epsilon);
  r.seeds("", "seeds", c.seeds);
  r.boolean("", "debug_perturbations", c.debug_perturbations);

  r.integer("model", "embed_dim", c.embed_dim);
  r.integer("model", "hidden_dim", c.hidden_dim);
  r.integer("model", "attn_dim", c.attn_dim);

  r.real("training", "learning_rate", c.learning_rate);
  r.integer("training", "batch_size", c.batch_size);
  r.integer("training", "max_epochs", c.max_epochs);
  r.integer("training", "patience", c.patience);
  r.real("training", "lambda_adv", c.lambda_adv);
  r.real("training", "lambda_vat", c.lambda_vat);
  r.integer("training", "unlabeled_per_labeled", c.unlabeled_per_labeled);
  r.real("training", "vat_xi", c.vat_xi);
  r.integer("training", "vat_power_iters", c.vat_power_iters);
  r.real("training", "divergence_threshold", c.divergence_threshold);

  r.integer("data", "min_freq", c.min_freq);
  r.integer("data", "max_len", c.max_len);
  r.str("eval", "reduction", reduction);
  r.reals("sweep", "epsilon_grid", c.epsilon_grid);

  auto resolve = [&](const std::string &p) {
    std::filesystem::path path(p);
    if (!p.empty() && path.is_relative() && !base_dir.empty())
      path = base_dir / path;
    return path;
  };
  c.corpus_dir = resolve(corpus_dir);
  c.output_dir = resolve(output_dir);

  const auto f = parse_corpus_format(format);
  if (!f)
    fail("corpus_format", "expected \"jsonl\" or \"tsv\"");
  c.corpus_format = *f;
  const auto v = parse_variant(variant);
  if (!v)
    fail("variant", "unknown variant \"" + variant + "\"");
  c.variant = *v;
  const auto k = parse_score_kind(score_kind);
  if (!k)
    fail("score_kind", "expected \"additive\" or \"scaled_dot\"");
  c.score_kind = *k;
  const auto red = parse_reduction(reduction);
  if (!red)
    fail("eval.reduction", "expected \"grad_x_input\" or \"grad_l2\"");
  c.reduction = *red;
  return c;
}

} // namespace

void ExperimentConfig::validate() const {
  if (corpus_dir.empty())
    fail("corpus_dir", "is required");
  if (!std::filesystem::is_directory(corpus_dir))
    fail("corpus_dir", "directory " + corpus_dir.string() + " does not exist");
  if (output_dir.empty())
    fail("output_dir", "is required");
  if (seeds.empty())
    fail("seeds", "must list at least one seed");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
    fail("seeds", "contains duplicates");
  if (variant != Variant::vanilla && !(epsilon > 0.0 && std::isfinite(epsilon)))
    fail("epsilon", "must be > 0 for adversarial variants");
  if (embed_dim == 0)
    fail("model.embed_dim", "must be >= 1");
  if (hidden_dim == 0)
    fail("model.hidden_dim", "must be >= 1");
  if (attn_dim == 0)
    fail("model.attn_dim", "must be >= 1");
  if (!(learning_rate > 0.0))
    fail("training.learning_rate", "must be > 0");
  if (batch_size == 0)
    fail("training.batch_size", "must be >= 1");
  if (max_epochs < 1)
    fail("training.max_epochs", "must be >= 1");
  if (patience < 1)
    fail("training.patience", "must be >= 1");
  if (lambda_adv < 0.0)
    fail("training.lambda_adv", "must be >= 0");
  if (lambda_vat < 0.0)
    fail("training.lambda_vat", "must be >= 0");
  if (unlabeled_per_labeled == 0)
    fail("training.unlabeled_per_labeled", "must be >= 1");
  if (!(vat_xi > 0.0))
    fail("training.vat_xi", "must be > 0");
  if (vat_power_iters < 1)
    fail("training.vat_power_iters", "must be >= 1");
  if (!(divergence_threshold > 0.0))
    fail("training.divergence_threshold", "must be > 0");
  if (min_freq < 1)
    fail("data.min_freq", "must be >= 1");
  if (max_len == 0)
    fail("data.max_len", "must be >= 1");
  if (epsilon_grid.empty())
    fail("sweep.epsilon_grid", "must not be empty");
  for (double e : epsilon_grid)
    if (!(e > 0.0 && std::isfinite(e)))
      fail("sweep.epsilon_grid", "values must be > 0");
  if (std::set<double>(epsilon_grid.begin(), epsilon_grid.end()).size() !=
      epsilon_grid.size())
    fail("sweep.epsilon_grid", "contains duplicate values");
}

nlohmann::json ExperimentConfig::to_json() const {
  return {
      {"corpus_dir", corpus_dir.string()},
      {"corpus_format", corpus_format == CorpusFormat::jsonl ? "jsonl" : "tsv"},
      {"output_dir", output_dir.string()},
      {"variant", std::string(attnrobust::to_string(variant))},
      {"score_kind", std::string(attnrobust::to_string(score_kind))},
      {"epsilon", epsilon},
      {"seeds", seeds},
      {"debug_perturbations", debug_perturbations},
      {"model",
       {{"embed_dim", embed_dim}, {"hidden_dim", hidden_dim}, {"attn_dim", attn_dim}}},
      {"training",
       {{"learning_rate", learning_rate},
        {"batch_size", batch_size},
        {"max_epochs", max_epochs},
        {"patience", patience},
        {"lambda_adv", lambda_adv},
        {"lambda_vat", lambda_vat},
        {"unlabeled_per_labeled", unlabeled_per_labeled},
        {"vat_xi", vat_xi},
        {"vat_power_iters", vat_power_iters},
        {"divergence_threshold", divergence_threshold}}},
      {"data", {{"min_freq", min_freq}, {"max_len", max_len}}},
      {"eval", {{"reduction", std::string(attnrobust::to_string(reduction))}}},
      {"sweep", {{"epsilon_grid", epsilon_grid}}},
  };
}

std::string ExperimentConfig::hash() const {
  auto j = to_json();
  // where the run is written does not change what is trained
  j.erase("output_dir");
  return hex64(fnv1a64(j.dump()));
}

TrainOptions ExperimentConfig::train_options(std::uint64_t seed) const {
  TrainOptions o;
  o.variant = variant;
  o.epsilon = epsilon;
  o.vat_xi = vat_xi;
  o.vat_power_iters = vat_power_iters;
  o.lambda_adv = lambda_adv;
  o.lambda_vat = lambda_vat;
  o.learning_rate = learning_rate;
  o.batch_size = batch_size;
  o.max_epochs = max_epochs;
  o.patience = patience;
  o.unlabeled_per_labeled = unlabeled_per_labeled;
  o.divergence_threshold = divergence_threshold;
  o.seed = seed;
  o.policy = default_policy();
  o.config_hash = hash();
  return o;
}

ExperimentConfig parse_config(std::string_view toml_text,
                              std::span<const std::string> overrides,
                              const std::filesystem::path &base_dir) {
  toml::table root;
  try {
    root = toml::parse(toml_text);
  } catch (const toml::parse_error &e) {
    std::ostringstream os;
    os << "config is not valid TOML: " << e.description() << " (line "
       << e.source().begin.line << ")";
    throw ConfigError(os.str());
  }
  for (const auto &o : overrides)
    apply_override(root, o);
  return decode(root, base_dir);
}

ExperimentConfig load_config(const std::filesystem::path &file,
                             std::span<const std::string> overrides) {
  std::ifstream in(file);
  if (!in)
    throw ConfigError("cannot read config file " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), overrides, file.parent_path());
}

std::vector<double> parse_grid(std::string_view text) {
  std::vector<double> grid;
  std::string item;
  std::istringstream in{std::string(text)};
  while (std::getline(in, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception &) {
      used = 0;
    }
    if (used == 0 || used != item.size())
      throw ConfigError("--grid: '" + item + "' is not a number");
    grid.push_back(v);
  }
  if (grid.empty())
    throw ConfigError("--grid must list at least one epsilon");
  return grid;
}

} // namespace attnrobust

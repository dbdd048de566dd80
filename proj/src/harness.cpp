// SPDX-License-Identifier: Apache-2.0
/**
 * @file   harness.cpp
 * @brief  Experiment runs, sweeps, comparisons and report re-rendering.
 */
#include <attnrobust/checkpoint.hpp>
#include <attnrobust/errors.hpp>
#include <attnrobust/harness.hpp>
#include <attnrobust/util.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace attnrobust {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json opt(const std::optional<double> &v) {
  return v ? json(*v) : json(nullptr);
}

std::optional<double> opt_from(const json &j, const char *key) {
  if (!j.contains(key) || j.at(key).is_null())
    return std::nullopt;
  return j.at(key).get<double>();
}

void write_text(const fs::path &path, const std::string &text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Aggregate agg_of(std::span<const double> xs) {
  return {mean(xs), sample_std(xs)};
}

std::string html_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
    case '&': out += "&amp;"; break;
    case '<': out += "&lt;"; break;
    case '>': out += "&gt;"; break;
    case '"': out += "&quot;"; break;
    default: out += c;
    }
  }
  return out;
}

std::string cell(const json &v) {
  return v.is_null() ? std::string("n/a") : format_g17(v.get<double>());
}

std::vector<EncodedExample> encode_all(const std::vector<LabeledText> &rows,
                                       const Vocabulary &vocab,
                                       std::size_t max_len) {
  std::vector<EncodedExample> out;
  out.reserve(rows.size());
  for (const auto &r : rows)
    out.push_back(encode_example(r.text, r.label, vocab, max_len));
  return out;
}

void write_audit(const ExperimentConfig &cfg, const ModelParams &params,
                 const std::vector<EncodedExample> &test, std::uint64_t seed,
                 const fs::path &dir) {
  const std::size_t n = std::min(test.size(), cfg.batch_size);
  std::vector<const EncodedExample *> rows;
  for (std::size_t i = 0; i < n; ++i)
    rows.push_back(&test[i]);
  const TokenBatch batch = collate(rows, cfg.max_len);
  const AdvConfig adv = cfg.train_options(seed).adv_config();
  const auto perts = perturb(params, batch, adv, mix_seed(seed, 0xa0d17));
  write_text(dir / "perturbation_audit.json", perturbation_audit(adv, perts) + "\n");
}

} // namespace

nlohmann::json RunSummary::to_json() const {
  json seeds = json::array();
  for (const auto &s : per_seed)
    seeds.push_back({{"seed", s.seed},
                     {"test_acc", s.test_acc},
                     {"mean_tau", opt(s.mean_tau)},
                     {"median_tau", opt(s.median_tau)},
                     {"evaluated", s.evaluated},
                     {"skipped", s.skipped},
                     {"best_epoch", s.best_epoch},
                     {"best_val_acc", opt(s.best_val_acc)},
                     {"steps", s.steps}});
  return {{"variant", std::string(attnrobust::to_string(variant))},
          {"epsilon", epsilon},
          {"score_kind", std::string(attnrobust::to_string(score_kind))},
          {"corpus_fingerprint", corpus_fingerprint},
          {"config_hash", config_hash},
          {"per_seed", seeds},
          {"aggregates",
           {{"acc_mean", acc.mean},
            {"acc_std", acc.std},
            {"tau_mean", tau ? json(tau->mean) : json(nullptr)},
            {"tau_std", tau ? json(tau->std) : json(nullptr)}}}};
}

RunSummary RunSummary::from_json(const nlohmann::json &j) {
  RunSummary s;
  const auto v = parse_variant(j.at("variant").get<std::string>());
  const auto k = parse_score_kind(j.at("score_kind").get<std::string>());
  if (!v || !k)
    throw ConfigError("summary.json has an unknown variant or score_kind");
  s.variant = *v;
  s.score_kind = *k;
  s.epsilon = j.at("epsilon").get<double>();
  s.corpus_fingerprint = j.at("corpus_fingerprint").get<std::string>();
  s.config_hash = j.at("config_hash").get<std::string>();
  for (const auto &e : j.at("per_seed")) {
    SeedResult r;
    r.seed = e.at("seed").get<std::uint64_t>();
    r.test_acc = e.at("test_acc").get<double>();
    r.mean_tau = opt_from(e, "mean_tau");
    r.median_tau = opt_from(e, "median_tau");
    r.evaluated = e.at("evaluated").get<std::size_t>();
    r.skipped = e.at("skipped").get<std::size_t>();
    r.best_epoch = e.at("best_epoch").get<int>();
    r.best_val_acc = opt_from(e, "best_val_acc");
    r.steps = e.at("steps").get<std::int64_t>();
    s.per_seed.push_back(r);
  }
  aggregate(s);
  return s;
}

void aggregate(RunSummary &s) {
  std::vector<double> accs, taus;
  for (const auto &r : s.per_seed) {
    accs.push_back(r.test_acc);
    if (r.mean_tau)
      taus.push_back(*r.mean_tau);
  }
  s.acc = agg_of(accs);
  s.tau.reset();
  if (!taus.empty())
    s.tau = agg_of(taus);
}

RunSummary run_experiment(const ExperimentConfig &cfg, std::ostream *log) {
  cfg.validate();
  const CorpusSplit corpus = load_corpus(cfg.corpus_dir, cfg.corpus_format);
  if (corpus.label_names.size() < 2)
    throw ConfigError("corpus_dir: the train split needs at least two labels");
  if (corpus.test.empty())
    throw ConfigError("corpus_dir: no labeled test split found");

  std::vector<std::vector<std::string>> tokenized;
  for (const auto &r : corpus.train)
    tokenized.push_back(tokenize(r.text));
  for (const auto &t : corpus.unlabeled_pool)
    tokenized.push_back(tokenize(t));
  const Vocabulary vocab = build_vocabulary(tokenized, cfg.min_freq);

  TrainingData data;
  data.max_len = cfg.max_len;
  data.train = encode_all(corpus.train, vocab, cfg.max_len);
  data.validation = encode_all(corpus.validation, vocab, cfg.max_len);
  for (const auto &t : corpus.unlabeled_pool)
    data.unlabeled.push_back(encode_example(t, std::nullopt, vocab, cfg.max_len));
  const auto test = encode_all(corpus.test, vocab, cfg.max_len);
  std::vector<std::string> test_texts;
  for (const auto &r : corpus.test)
    test_texts.push_back(r.text);

  const ModelDims dims{vocab.size(), cfg.embed_dim, cfg.hidden_dim, cfg.attn_dim,
                       corpus.label_names.size()};

  RunSummary summary;
  summary.variant = cfg.variant;
  summary.epsilon = cfg.epsilon;
  summary.score_kind = cfg.score_kind;
  summary.corpus_fingerprint = corpus_fingerprint(cfg.corpus_dir, cfg.corpus_format);
  summary.config_hash = cfg.hash();

  fs::create_directories(cfg.output_dir);
  write_text(cfg.output_dir / "config.json", cfg.to_json().dump(2) + "\n");
  write_text(cfg.output_dir / "vocab.json",
             json{{"min_freq", cfg.min_freq},
                  {"labels", corpus.label_names},
                  {"tokens", vocab.tokens()}}
                     .dump() +
                 "\n");

  for (const std::uint64_t seed : cfg.seeds) {
    const fs::path dir = cfg.output_dir / ("seed_" + std::to_string(seed));
    TrainOptions opts = cfg.train_options(seed);
    opts.output_dir = dir;
    if (log)
      *log << "[" << attnrobust::to_string(cfg.variant) << " eps=" << cfg.epsilon
           << "] seed " << seed << ": training on " << data.train.size()
           << " examples" << std::endl;

    const TrainResult tr =
        train(ModelParams::initialize(dims, cfg.score_kind, seed), data, opts);

    SeedResult r;
    r.seed = seed;
    r.test_acc = accuracy(tr.best_params, test, cfg.max_len, opts.policy);
    r.best_epoch = tr.best_epoch;
    r.best_val_acc = tr.best_val_acc;
    r.steps = tr.steps;

    const AgreementSummary agree = agreement_report(
        tr.best_params, test_texts, vocab, cfg.max_len, cfg.reduction, opts.policy);
    r.evaluated = agree.evaluated;
    r.skipped = agree.skipped;
    if (agree.evaluated > 0) {
      r.mean_tau = agree.mean_tau;
      r.median_tau = agree.median_tau;
    }

    std::string lines;
    for (const auto &rep : agree.reports)
      lines += to_json_line(rep) + "\n";
    write_text(dir / "reports.jsonl", lines);
    write_text(dir / "heatmaps.html",
               render_heatmap_page(agree.reports, "seed " + std::to_string(seed)));
    if (cfg.debug_perturbations && cfg.variant != Variant::vanilla)
      write_audit(cfg, tr.best_params, test, seed, dir);

    if (log)
      *log << "  test_acc=" << r.test_acc << " mean_tau="
           << (r.mean_tau ? format_g17(*r.mean_tau) : std::string("n/a"))
           << " best_epoch=" << r.best_epoch << std::endl;
    summary.per_seed.push_back(r);
  }

  aggregate(summary);
  write_text(cfg.output_dir / "summary.json", summary.to_json().dump(2) + "\n");
  return summary;
}

nlohmann::json SweepResult::to_json() const {
  json cs = json::array();
  for (const auto &c : cells)
    cs.push_back({{"epsilon", c.epsilon},
                  {"seed", c.seed},
                  {"test_acc", c.test_acc},
                  {"mean_tau", opt(c.mean_tau)}});
  json pe = json::array();
  for (const auto &p : per_epsilon)
    pe.push_back({{"epsilon", p.epsilon},
                  {"acc_mean", p.acc.mean},
                  {"acc_std", p.acc.std},
                  {"tau_mean", p.tau ? json(p.tau->mean) : json(nullptr)},
                  {"tau_std", p.tau ? json(p.tau->std) : json(nullptr)}});
  return {{"variant", std::string(attnrobust::to_string(variant))},
          {"grid", grid},
          {"cells", cs},
          {"per_epsilon", pe},
          {"robustness", robustness}};
}

void aggregate(SweepResult &s) {
  s.per_epsilon.clear();
  std::vector<double> means;
  for (const double eps : s.grid) {
    std::vector<double> accs, taus;
    for (const auto &c : s.cells) {
      if (c.epsilon != eps)
        continue;
      accs.push_back(c.test_acc);
      if (c.mean_tau)
        taus.push_back(*c.mean_tau);
    }
    SweepPoint p;
    p.epsilon = eps;
    p.acc = agg_of(accs);
    if (!taus.empty())
      p.tau = agg_of(taus);
    means.push_back(p.acc.mean);
    s.per_epsilon.push_back(p);
  }
  s.robustness = sample_std(means);
}

SweepResult run_sweep(const ExperimentConfig &cfg, std::span<const double> grid,
                      std::ostream *log) {
  if (grid.empty())
    throw ConfigError("--grid must list at least one epsilon");
  for (double e : grid)
    if (!(e > 0.0 && std::isfinite(e)))
      throw ConfigError("--grid: epsilon values must be > 0");
  if (std::set<double>(grid.begin(), grid.end()).size() != grid.size())
    throw ConfigError("--grid: duplicate epsilon values");
  cfg.validate();

  SweepResult res;
  res.variant = cfg.variant;
  res.grid.assign(grid.begin(), grid.end());
  for (const double eps : grid) {
    ExperimentConfig c = cfg;
    c.epsilon = eps;
    c.output_dir = cfg.output_dir / ("eps_" + format_g17(eps));
    const RunSummary s = run_experiment(c, log);
    for (const auto &r : s.per_seed)
      res.cells.push_back({eps, r.seed, r.test_acc, r.mean_tau});
  }
  aggregate(res);
  write_text(cfg.output_dir / "sweep.json", res.to_json().dump(2) + "\n");
  return res;
}

nlohmann::json compare_runs(std::span<const fs::path> run_dirs,
                            const fs::path &out_dir) {
  if (run_dirs.size() < 2)
    throw ConfigError("compare needs at least two run directories");
  std::vector<RunSummary> runs;
  for (const auto &d : run_dirs) {
    json j;
    try {
      j = json::parse(read_text(d / "summary.json"));
      runs.push_back(RunSummary::from_json(j));
    } catch (const json::exception &e) {
      throw ConfigError(d.string() + "/summary.json is malformed: " + e.what());
    }
  }
  for (std::size_t i = 1; i < runs.size(); ++i)
    if (runs[i].corpus_fingerprint != runs[0].corpus_fingerprint)
      throw ConfigError("runs " + run_dirs[0].string() + " and " +
                        run_dirs[i].string() + " use different corpora");

  json rows = json::array();
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto &r = runs[i];
    rows.push_back({{"run", run_dirs[i].string()},
                    {"variant", std::string(attnrobust::to_string(r.variant))},
                    {"epsilon", r.epsilon},
                    {"seeds", r.per_seed.size()},
                    {"acc_mean", r.acc.mean},
                    {"acc_std", r.acc.std},
                    {"tau_mean", r.tau ? json(r.tau->mean) : json(nullptr)},
                    {"tau_std", r.tau ? json(r.tau->std) : json(nullptr)}});
  }

  json paired = json::array();
  const auto &base = runs[0];
  for (std::size_t i = 1; i < runs.size(); ++i) {
    json diffs = json::array();
    std::vector<double> dacc, dtau;
    for (const auto &b : base.per_seed) {
      const auto it = std::find_if(runs[i].per_seed.begin(), runs[i].per_seed.end(),
                                   [&](const SeedResult &s) { return s.seed == b.seed; });
      if (it == runs[i].per_seed.end())
        continue;
      const double da = it->test_acc - b.test_acc;
      dacc.push_back(da);
      std::optional<double> dt;
      if (it->mean_tau && b.mean_tau) {
        dt = *it->mean_tau - *b.mean_tau;
        dtau.push_back(*dt);
      }
      diffs.push_back({{"seed", b.seed}, {"acc_diff", da}, {"tau_diff", opt(dt)}});
    }
    paired.push_back({{"run", run_dirs[i].string()},
                      {"baseline", run_dirs[0].string()},
                      {"per_seed", diffs},
                      {"acc_diff_mean", dacc.empty() ? json(nullptr) : json(mean(dacc))},
                      {"tau_diff_mean", dtau.empty() ? json(nullptr) : json(mean(dtau))}});
  }

  const json result{{"corpus_fingerprint", base.corpus_fingerprint},
                    {"runs", rows},
                    {"paired", paired}};

  std::ostringstream h;
  h << "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>compare</title>"
       "<style>body{font-family:sans-serif}table{border-collapse:collapse}"
       "td,th{border:1px solid #999;padding:4px 8px;text-align:right}"
       "td:first-child{text-align:left}</style></head><body>\n"
       "<h1>Run comparison</h1>\n<table>\n<tr><th>run</th><th>variant</th>"
       "<th>epsilon</th><th>seeds</th><th>acc mean</th><th>acc std</th>"
       "<th>tau mean</th><th>tau std</th></tr>\n";
  for (const auto &r : rows)
    h << "<tr><td>" << html_escape(r["run"].get<std::string>()) << "</td><td>"
      << html_escape(r["variant"].get<std::string>()) << "</td><td>"
      << cell(r["epsilon"]) << "</td><td>" << r["seeds"].get<std::size_t>()
      << "</td><td>" << cell(r["acc_mean"]) << "</td><td>" << cell(r["acc_std"])
      << "</td><td>" << cell(r["tau_mean"]) << "</td><td>" << cell(r["tau_std"])
      << "</td></tr>\n";
  h << "</table>\n";
  for (const auto &p : paired) {
    h << "<h2>" << html_escape(p["run"].get<std::string>()) << " minus "
      << html_escape(p["baseline"].get<std::string>())
      << "</h2>\n<table>\n<tr><th>seed</th><th>acc diff</th><th>tau diff</th></tr>\n";
    for (const auto &d : p["per_seed"])
      h << "<tr><td>" << d["seed"].get<std::uint64_t>() << "</td><td>"
        << cell(d["acc_diff"]) << "</td><td>" << cell(d["tau_diff"]) << "</td></tr>\n";
    h << "<tr><td>mean</td><td>" << cell(p["acc_diff_mean"]) << "</td><td>"
      << cell(p["tau_diff_mean"]) << "</td></tr>\n</table>\n";
  }
  h << "</body></html>\n";

  fs::create_directories(out_dir);
  write_text(out_dir / "compare.json", result.dump(2) + "\n");
  write_text(out_dir / "compare.html", h.str());
  return result;
}

std::size_t rerender_reports(const fs::path &run_dir) {
  if (!fs::is_directory(run_dir))
    throw ConfigError("run directory " + run_dir.string() + " does not exist");
  std::vector<fs::path> seed_dirs;
  for (const auto &e : fs::directory_iterator(run_dir))
    if (e.is_directory() && fs::exists(e.path() / "reports.jsonl"))
      seed_dirs.push_back(e.path());
  std::sort(seed_dirs.begin(), seed_dirs.end());
  if (seed_dirs.empty())
    throw ConfigError(run_dir.string() + " holds no reports.jsonl");

  for (const auto &d : seed_dirs) {
    std::ifstream in(d / "reports.jsonl");
    std::vector<AttributionReport> reports;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (line.empty())
        continue;
      try {
        reports.push_back(report_from_json(line));
      } catch (const std::exception &e) {
        throw ParseError((d / "reports.jsonl").string(), n, e.what());
      }
    }
    std::string title = d.filename().string();
    if (title.starts_with("seed_"))
      title = "seed " + title.substr(5);
    write_text(d / "heatmaps.html", render_heatmap_page(reports, title));
  }
  return seed_dirs.size();
}

} // namespace attnrobust

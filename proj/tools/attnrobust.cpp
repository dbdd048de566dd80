// SPDX-License-Identifier: Apache-2.0
/**
 * @file   attnrobust.cpp
 * @brief  Command-line front end.
 *
 *   attnrobust run <config.toml> [--key=value ...]
 *   attnrobust sweep <config.toml> --grid 0.5,1,2 [--key=value ...]
 *   attnrobust compare <dir> <dir>... [--out DIR]
 *   attnrobust report <dir>
 *   attnrobust synth <dir> [--train N ...]
 *
 * Exit codes: 0 success, 2 invalid input, 3 training divergence, 1 other.
 */
#include <attnrobust/errors.hpp>
#include <attnrobust/harness.hpp>
#include <attnrobust/synthetic.hpp>

#include <iostream>

#include <CLI11.hpp>

namespace {

using namespace attnrobust;

/// Unparsed "--key=value" arguments become config overrides.
std::vector<std::string> overrides_of(const CLI::App *sub) {
  std::vector<std::string> out;
  for (const auto &arg : sub->remaining()) {
    if (!arg.starts_with("--") || arg.find('=') == std::string::npos)
      throw ConfigError("unexpected argument '" + arg +
                        "' (overrides take the form --key=value)");
    out.push_back(arg.substr(2));
  }
  return out;
}

int run_cli(int argc, char **argv) {
  CLI::App app{"Attention-level adversarial training experiments"};
  app.require_subcommand(1);

  std::string config_path;
  auto *run = app.add_subcommand("run", "Train and evaluate every seed of a config");
  run->add_option("config", config_path, "TOML config file")->required();
  run->allow_extras();

  std::string sweep_config, grid_text;
  auto *sweep = app.add_subcommand("sweep", "Run a config over an epsilon grid");
  sweep->add_option("config", sweep_config, "TOML config file")->required();
  sweep->add_option("--grid", grid_text,
                    "Comma-separated epsilon values (default: sweep.epsilon_grid)");
  sweep->allow_extras();

  std::vector<std::string> compare_dirs;
  std::string compare_out = ".";
  auto *compare = app.add_subcommand("compare", "Compare completed run directories");
  compare->add_option("dirs", compare_dirs, "Run directories")->required();
  compare->add_option("--out", compare_out, "Where compare.json/.html are written");

  std::string report_dir;
  auto *report = app.add_subcommand("report", "Re-render heatmaps.html of a run");
  report->add_option("dir", report_dir, "Run directory")->required();

  std::string synth_dir;
  SyntheticSpec spec;
  auto *synth = app.add_subcommand("synth", "Write a synthetic sentiment corpus");
  synth->add_option("dir", synth_dir, "Output corpus directory")->required();
  synth->add_option("--train", spec.train);
  synth->add_option("--valid", spec.validation);
  synth->add_option("--test", spec.test);
  synth->add_option("--unlabeled", spec.unlabeled);
  synth->add_option("--min-len", spec.min_len);
  synth->add_option("--max-len", spec.max_len);
  synth->add_option("--label-noise", spec.label_noise);
  synth->add_option("--seed", spec.seed);
  synth->add_option("--domain", spec.domain);
  synth->add_option("--unlabeled-domain", spec.unlabeled_domain);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (run->parsed()) {
    const auto cfg = load_config(config_path, overrides_of(run));
    const auto s = run_experiment(cfg, &std::cerr);
    std::cout << (cfg.output_dir / "summary.json").string() << "\n"
              << "acc_mean=" << s.acc.mean << " tau_mean="
              << (s.tau ? std::to_string(s.tau->mean) : std::string("n/a")) << "\n";
  } else if (sweep->parsed()) {
    const auto cfg = load_config(sweep_config, overrides_of(sweep));
    const auto grid = grid_text.empty() ? cfg.epsilon_grid : parse_grid(grid_text);
    const auto r = run_sweep(cfg, grid, &std::cerr);
    std::cout << (cfg.output_dir / "sweep.json").string() << "\n"
              << "robustness=" << r.robustness << "\n";
  } else if (compare->parsed()) {
    std::vector<std::filesystem::path> dirs(compare_dirs.begin(), compare_dirs.end());
    compare_runs(dirs, compare_out);
    std::cout << (std::filesystem::path(compare_out) / "compare.json").string() << "\n";
  } else if (report->parsed()) {
    const auto n = rerender_reports(report_dir);
    std::cout << "re-rendered " << n << " heatmap page(s)\n";
  } else if (synth->parsed()) {
    write_corpus_jsonl(make_sentiment_corpus(spec), synth_dir);
    std::cout << synth_dir << "\n";
  }
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  try {
    return run_cli(argc, argv);
  } catch (const attnrobust::ConfigError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const attnrobust::LabelError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const attnrobust::ParseError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const attnrobust::DivergenceError &e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return 3;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

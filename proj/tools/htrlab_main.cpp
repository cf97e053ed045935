// htrlab: train, evaluate, adapt and report on writer-adaptive recognizers.

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>

#include "htrlab/app/commands.hpp"

namespace {

using namespace htrlab;
namespace fs = std::filesystem;

app::ExperimentConfig config_of(const std::string& path, const std::vector<std::string>& sets) {
  return path.empty() ? app::config_from_overrides(sets) : app::load_config(path, sets);
}

void log_line(const std::string& s) { std::cerr << s << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Writer-adaptive handwriting recognition laboratory"};
  cli.require_subcommand(1);

  std::string config;
  std::vector<std::string> sets;
  std::vector<std::uint64_t> seeds;
  auto* train = cli.add_subcommand("train", "Train one run per seed");
  train->add_option("--config", config, "Config file (key = value lines)");
  train->add_option("--set", sets, "Override, key=value (repeatable)");
  train->add_option("--seed", seeds, "Seed(s); replaces the config's seed list");

  std::string run;
  bool with = false, without = false, both = false;
  std::int64_t runs = 0;
  auto* ev = cli.add_subcommand("eval", "Evaluate a trained run on the test writers");
  ev->add_option("--run", run, "Run directory")->required();
  auto* g1 = ev->add_flag("--with-adaptation", with);
  auto* g2 = ev->add_flag("--without-adaptation", without);
  auto* g3 = ev->add_flag("--both", both, "Both conditions plus the paired t-test");
  g1->excludes(g2)->excludes(g3);
  g2->excludes(g3);
  ev->add_option("--runs", runs, "Support/query splits per writer (overrides eval.runs)");

  std::string writer;
  std::int64_t run_index = 0;
  auto* adapt = cli.add_subcommand("adapt", "Adapt to one writer and decode its queries");
  adapt->add_option("--run", run, "Run directory")->required();
  adapt->add_option("--writer", writer, "Writer id")->required();
  adapt->add_option("--run-index", run_index, "Which support/query split");

  std::string out;
  auto* gen = cli.add_subcommand("gen-data", "Write the synthetic corpus as PNGs plus manifest");
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--config", config, "Config file");
  gen->add_option("--set", sets, "Override, key=value (repeatable)");

  std::vector<std::string> run_dirs;
  auto* report = cli.add_subcommand("report", "Aggregate evaluated runs");
  report->add_option("--out", out, "Output directory")->required();
  report->add_option("runs", run_dirs, "Run directories")->required();

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = cli.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*train) {
      auto cfg = config_of(config, sets);
      if (!seeds.empty()) cfg.seeds = seeds;
      for (auto s : cfg.seeds) std::cout << app::cmd_train(cfg, s, log_line).string() << '\n';
    } else if (*ev) {
      const auto mode = both ? app::EvalMode::Both
                             : without ? app::EvalMode::WithoutAdaptation : app::EvalMode::WithAdaptation;
      for (const auto& r : app::cmd_eval(run, mode, runs, log_line)) std::cout << eval::to_text(r);
    } else if (*adapt) {
      std::cout << app::cmd_adapt(run, writer, run_index);
    } else if (*gen) {
      std::cout << app::cmd_gen_data(config_of(config, sets), out).string() << '\n';
    } else if (*report) {
      std::vector<fs::path> paths(run_dirs.begin(), run_dirs.end());
      const auto dir = app::cmd_report(paths, out);
      std::cout << (dir / "summary.txt").string() << '\n';
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return app::exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

// distill: run, compare and plot score-distillation experiments.
//
//   distill run <config.json> [--set key.path=value ...] [--seed S] [--out DIR]
//   distill ensemble <config.json> --seeds N [--jobs J] [--compare key.path=value ...]
//   distill plot <run-dir>
//   distill oracle <suite|list|all>
//
// Relative output directories are placed under $DISTILL_OUTPUT_ROOT (default ./runs).

#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "distill/config.hpp"
#include "distill/runner.hpp"
#include "distill/svg_plot.hpp"
#include "oracles.hpp"

using namespace distill;
namespace fs = std::filesystem;

namespace {

ExperimentConfig load_with_overrides(const std::string& path, const std::vector<std::string>& sets,
                                     std::optional<std::uint64_t> seed) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot read config file '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("", "malformed config '" + path + "': " + e.what());
  }
  apply_overrides(j, sets);
  if (seed) j["seed"] = *seed;
  return parse_config(j);
}

fs::path output_dir_for(const ExperimentConfig& c, const std::string& out) {
  if (out.empty()) return resolve_output_dir(c);
  const fs::path p(out);
  return p.is_absolute() ? p : output_root() / p;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Score-distillation laboratory"};
  app.require_subcommand(1);

  std::string config_path, out, dir, suite;
  std::vector<std::string> sets, compare;
  std::optional<std::uint64_t> seed;
  int seeds = 1, jobs = 1;
  bool no_per_seed = false;

  auto* run = app.add_subcommand("run", "Run one experiment and write its artifacts");
  run->add_option("config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--set", sets, "Override a config key, e.g. --set method.eta=0.01");
  run->add_option("--seed", seed, "Override the seed");
  run->add_option("--out", out, "Output directory (relative paths go under the output root)");

  auto* ens = app.add_subcommand("ensemble", "Run seeds base..base+N-1 and summarize final divergences");
  ens->add_option("config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  ens->add_option("--seeds", seeds, "Number of seeds")->required()->check(CLI::PositiveNumber);
  ens->add_option("--jobs", jobs, "Concurrent runs")->check(CLI::PositiveNumber);
  ens->add_option("--set", sets, "Override a config key for both arms");
  ens->add_option("--compare", compare, "Override defining a second arm, e.g. --compare method.name=real-vsd");
  ens->add_option("--seed", seed, "Base seed");
  ens->add_option("--out", out, "Output directory");
  ens->add_flag("--no-per-seed", no_per_seed, "Only write ensemble.json");

  auto* plot = app.add_subcommand("plot", "Write SVG plots for a run directory");
  plot->add_option("dir", dir, "Run directory")->required()->check(CLI::ExistingDirectory);

  auto* orc = app.add_subcommand("oracle", "Run an oracle suite and print its findings");
  orc->add_option("suite", suite, "Suite name, 'list' or 'all'")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      const ExperimentConfig c = load_with_overrides(config_path, sets, seed);
      const fs::path target = output_dir_for(c, out);
      std::cout << to_json(c).dump(2) << "\n";
      const RunArtifacts a = run_experiment(c, target);
      std::cout << "wrote " << a.dir.string() << "\n";
      if (a.truncated) {
        std::cerr << "run diverged: " << a.truncation_reason << "\n";
        return kExitDiverged;
      }
      std::cout << "final KL(q||p) " << a.final_divergence << "\n";
      return kExitOk;
    }
    if (ens->parsed()) {
      EnsembleRequest req{load_with_overrides(config_path, sets, seed), seeds, jobs, compare, !no_per_seed};
      fs::path target = out.empty() ? output_root() / ("ensemble-" + req.config.method_name()) : fs::path(out);
      if (!target.is_absolute() && !out.empty()) target = output_root() / target;
      const EnsembleOutcome o = run_ensemble_request(req, target);
      auto show = [](const EnsembleSummary& s) {
        std::cout << s.label << ": median " << s.median << "  IQR [" << s.q1 << ", " << s.q3 << "]  failures "
                  << s.failures() << "/" << s.values.size() << "\n";
      };
      show(o.a);
      if (o.b) show(*o.b);
      if (o.comparison) std::cout << "verdict: " << to_string(o.comparison->verdict) << "\n";
      std::cout << "wrote " << o.summary_path.string() << "\n";
      return kExitOk;
    }
    if (plot->parsed()) {
      for (const auto& p : emit_plots(dir)) std::cout << "wrote " << p.string() << "\n";
      return kExitOk;
    }
    if (orc->parsed()) {
      const auto all = oracle::suites();
      if (suite == "list") {
        for (const auto& s : all) std::cout << s.name << "  " << s.description << "\n";
        return kExitOk;
      }
      bool ok = true, found = false;
      for (const auto& s : all) {
        if (suite != "all" && suite != s.name) continue;
        found = true;
        std::cout << "[" << s.name << "]\n";
        const bool pass = s.run(std::cout);
        std::cout << (pass ? "agree" : "DISAGREE") << "\n";
        ok = ok && pass;
      }
      if (!found) {
        std::cerr << "unknown oracle suite '" << suite << "' (try 'list')\n";
        return kExitConfigError;
      }
      return ok ? kExitOk : kExitFailure;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

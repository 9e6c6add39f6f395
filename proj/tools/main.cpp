// mirror-select: command-line front end for the experiment harness.
#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>

#include "mirrorsel/errors.hpp"
#include "mirrorsel/harness.hpp"
#include "mirrorsel/io.hpp"

namespace fs = std::filesystem;
using namespace mirrorsel;
using nlohmann::json;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> runs;
  std::optional<double> alpha;
  std::optional<std::string> psi;
  std::optional<std::size_t> iterations;
  std::string out;
  bool paper_scale = false;
};

void add_common(CLI::App* sub, Overrides& o) {
  sub->add_option("--config", o.config, "JSON experiment config");
  sub->add_option("--seed", o.seed, "base seed");
  sub->add_option("--runs", o.runs, "number of seeds");
  sub->add_option("--alpha", o.alpha, "target FDR level");
  sub->add_option("--psi", o.psi, "combination function: min, product, sum");
  sub->add_option("--iterations", o.iterations, "training iterations");
  sub->add_option("--out", o.out, "output directory");
  sub->add_flag("--paper-scale", o.paper_scale, "paper-sized grids and 20 seeds");
}

ExperimentConfig resolve(const std::string& command, const Overrides& o) {
  std::optional<ExperimentKind> kind;
  if (command == "normality") kind = ExperimentKind::Normality;
  if (command == "sweep") kind = ExperimentKind::FdrSweep;
  if (command == "compare") kind = ExperimentKind::Compare;
  if (command == "classify") kind = ExperimentKind::Classification;

  ExperimentConfig cfg;
  if (o.config.empty()) {
    cfg = default_config(kind.value_or(ExperimentKind::FdrSweep));
  } else {
    if (!fs::exists(o.config)) throw ConfigError("config file not found: " + o.config);
    const json j = io::read_json(o.config);
    if (kind) {
      ExperimentConfig base = default_config(*kind);
      if (j.contains("experiment") && j["experiment"] != to_string(*kind))
        throw ConfigError("config experiment does not match subcommand '" + command + "'");
      cfg = config_from_json(j, base);
    } else {
      cfg = j.contains("experiment") ? config_from_json(j)
                                     : config_from_json(j, default_config(ExperimentKind::FdrSweep));
    }
  }
  if (o.paper_scale) apply_paper_scale(cfg);
  if (o.seed) cfg.base_seed = *o.seed;
  if (o.runs) cfg.n_runs = *o.runs;
  if (o.alpha) cfg.alpha = *o.alpha;
  if (o.psi) cfg.psi = psi_from_string(*o.psi);
  if (o.iterations) {
    cfg.train.iterations = *o.iterations;
    std::erase_if(cfg.checkpoints, [&](std::size_t t) { return t > *o.iterations; });
  }
  if (!o.out.empty()) cfg.output_dir = o.out;
  if (cfg.output_dir.empty()) cfg.output_dir = (fs::path("out") / command).string();
  return cfg;
}

json dispatch(const std::string& command, const ExperimentConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  // Run without an output dir so artifacts are written once, below.
  ExperimentConfig quiet = cfg;
  quiet.output_dir.clear();
  json summary;
  if (command == "gen") {
    const Dataset ds = run_gen(quiet);
    io::save_dataset(fs::path(cfg.output_dir) / "data", ds, to_string(cfg.design.family),
                     run_seed(cfg, 0));
    summary = {{"m", ds.m()}, {"n", ds.n()}, {"q_star", ds.signal.q_star()}};
  } else if (command == "normality") {
    summary = write_normality(cfg.output_dir, cfg, run_normality(quiet));
  } else if (command == "select") {
    summary = write_select(cfg.output_dir, run_select(quiet));
  } else if (command == "sweep") {
    summary = write_sweep(cfg.output_dir, run_fdr_sweep(quiet));
  } else if (command == "compare") {
    summary = write_compare(cfg.output_dir, run_compare(quiet));
  } else {
    const ClassificationOutcome out = run_classification(quiet);
    summary = {{"normality", write_normality((fs::path(cfg.output_dir) / "normality").string(), cfg,
                                             out.normality)},
               {"sweep", write_sweep((fs::path(cfg.output_dir) / "sweep").string(), out.sweep)}};
  }
  write_manifest(cfg.output_dir, cfg,
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  summary["command"] = command;
  summary["output_dir"] = cfg.output_dir;
  return summary;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feature selection with FDR control via network input sensitivities"};
  app.require_subcommand(1);
  Overrides o;
  for (const char* name : {"gen", "normality", "select", "sweep", "compare", "classify"})
    add_common(app.add_subcommand(name), o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    const ExperimentConfig cfg = resolve(command, o);
    std::cout << dispatch(command, cfg).dump() << '\n';
    return 0;
  } catch (const NumericOverflow& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 2;
  } catch (const DegenerateInput& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

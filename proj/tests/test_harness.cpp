#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "mirrorsel/errors.hpp"
#include "mirrorsel/harness.hpp"
#include "mirrorsel/io.hpp"

using namespace mirrorsel;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mirrorsel_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ExperimentConfig tiny(ExperimentKind kind) {
  ExperimentConfig c = default_config(kind);
  c.design.m = 120;
  c.design.n = 40;
  c.netspec.first_width = 16;
  c.netspec.tail_widths = {16, 8};
  c.train.batch_size = 16;
  c.train.iterations = 20;
  c.n_runs = 3;
  c.settings = {{120, 40}, {10, 40}};
  c.sweep_shape = {120, 24};
  c.compare_m = {120, 60};
  c.design.n = kind == ExperimentKind::Compare ? 30 : 40;
  return c;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

struct Cli {
  int code;
  std::string out;
};

Cli run_cli(const std::string& args) {
  const std::string cmd = std::string(MIRRORSEL_CLI) + " " + args + " 2>/dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  std::string out;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe)) out += buf;
  const int status = pclose(pipe);
  return {WEXITSTATUS(status), out};
}

Cli run_cli_stderr(const std::string& args) {
  const std::string cmd = std::string(MIRRORSEL_CLI) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  std::string out;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, pipe)) out += buf;
  const int status = pclose(pipe);
  return {WEXITSTATUS(status), out};
}

}  // namespace

TEST_CASE("presets carry the documented defaults") {
  const auto n = default_config(ExperimentKind::Normality);
  CHECK(n.dgp.q_star == 8);
  CHECK(n.train.batch_size == 128);
  CHECK(n.train.learning_rate == 3e-3);
  CHECK(n.train.iterations == 10);
  CHECK(n.netspec.first_width == 1024);
  CHECK(n.netspec.tail_widths == std::vector<std::size_t>{1024, 512, 256});
  CHECK(n.netspec.dropout_rate == 0.1);
  const auto s = default_config(ExperimentKind::FdrSweep);
  CHECK(s.design.m == 1600);
  CHECK(s.design.n == 400);
  CHECK(s.alpha == 0.1);
  CHECK(s.psi == PsiKind::Min);
  const auto c = default_config(ExperimentKind::Compare);
  CHECK(c.design.n == 500);
  CHECK(c.design.scale == DesignScale::OneOverSqrtN);
  CHECK(c.compare_m == std::vector<std::size_t>{2000, 1000, 500});
  auto p = n;
  apply_paper_scale(p);
  CHECK(p.n_runs == 20);
  CHECK(p.settings.front().m == 100000);
}

TEST_CASE("config json round-trips and rejects unknown keys") {
  ExperimentConfig c = tiny(ExperimentKind::FdrSweep);
  c.alpha = 0.2;
  c.psi = PsiKind::Sum;
  c.train.weight_decay = 1e-4;
  c.design.family = DesignFamily::Ar1Gaussian;
  c.design.rho = 0.5;
  const auto j = to_json(c);
  const ExperimentConfig back = config_from_json(j);
  CHECK(to_json(back) == j);

  auto bad = j;
  bad["train"]["momentum"] = 0.9;
  CHECK_THROWS_AS(config_from_json(bad), ConfigError);
  bad = j;
  bad["alpha"] = "high";
  CHECK_THROWS_AS(config_from_json(bad), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"alpha", 0.1}}), ConfigError);
}

TEST_CASE("config validation") {
  ExperimentConfig c = tiny(ExperimentKind::FdrSweep);
  c.n_runs = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny(ExperimentKind::FdrSweep);
  c.alpha = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny(ExperimentKind::FdrSweep);
  c.train.loss = Loss::CrossEntropy;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("aggregates use the n-1 denominator") {
  const Aggregate a = aggregate({1, 2, 3, 4});
  CHECK(a.mean == 2.5);
  CHECK(a.std == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(aggregate({7}).std == 0.0);
}

TEST_CASE("default checkpoint grid") {
  CHECK(default_checkpoints(500) == std::vector<std::size_t>{0, 1, 2, 5, 10, 20, 50, 100, 200, 500});
  CHECK(default_checkpoints(30) == std::vector<std::size_t>{0, 1, 2, 5, 10, 20, 30});
  CHECK(default_checkpoints(0) == std::vector<std::size_t>{0});
}

TEST_CASE("parallel_for visits every index once and propagates errors") {
  std::vector<int> hits(50, 0);
  parallel_for(50, [&](std::size_t i) { ++hits[i]; });
  for (int h : hits) CHECK(h == 1);
  CHECK_THROWS_AS(parallel_for(5, [](std::size_t i) {
                    if (i == 3) throw DegenerateInput("x");
                  }),
                  DegenerateInput);
}

TEST_CASE("run seeds are distinct") {
  const auto c = tiny(ExperimentKind::FdrSweep);
  CHECK(run_seed(c, 0) != run_seed(c, 1));
}

TEST_CASE("sweep artifacts and aggregate reproduction") {
  ExperimentConfig c = tiny(ExperimentKind::FdrSweep);
  const fs::path dir = scratch("sweep");
  c.output_dir = dir.string();
  const SweepOutcome out = run_fdr_sweep(c);
  CHECK(out.iterations == default_checkpoints(20));
  const auto agg = read_csv(dir / "fdr_power_vs_iter.csv");
  REQUIRE(agg.size() == out.iterations.size() + 1);
  CHECK(agg[0] == std::vector<std::string>{"iter", "fdr_mean", "fdr_std", "power_mean", "power_std", "loss_mean"});
  const auto per_seed = read_csv(dir / "per_seed.csv");
  REQUIRE(per_seed.size() == out.iterations.size() * 3 + 1);
  std::map<std::string, std::vector<double>> fdp, power;
  for (std::size_t r = 1; r < per_seed.size(); ++r) {
    fdp[per_seed[r][2]].push_back(io::parse_double(per_seed[r][3]));
    power[per_seed[r][2]].push_back(io::parse_double(per_seed[r][4]));
  }
  for (std::size_t r = 1; r < agg.size(); ++r) {
    const Aggregate f = aggregate(fdp[agg[r][0]]), p = aggregate(power[agg[r][0]]);
    CHECK(io::format_double(f.mean) == agg[r][1]);
    CHECK(io::format_double(f.std) == agg[r][2]);
    CHECK(io::format_double(p.mean) == agg[r][3]);
    CHECK(io::format_double(p.std) == agg[r][4]);
  }
  const auto manifest = io::read_json(dir / "manifest.json");
  CHECK(manifest.contains("config"));
  CHECK(manifest.contains("build"));
  CHECK(manifest.contains("wall_clock_seconds"));
}

TEST_CASE("untrained networks select nothing useful") {
  ExperimentConfig c = tiny(ExperimentKind::FdrSweep);
  c.checkpoints = {0};
  c.n_runs = 4;
  const SweepOutcome out = run_fdr_sweep(c);
  CHECK(out.reports[0].power.mean <= 0.2);
}

TEST_CASE("artifacts replay byte for byte") {
  ExperimentConfig c = tiny(ExperimentKind::Normality);
  c.n_runs = 1;
  const fs::path a = scratch("replay_a"), b = scratch("replay_b");
  write_normality(a.string(), c, run_normality(c));
  write_normality(b.string(), c, run_normality(c));
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path other = b / fs::relative(e.path(), a);
    CHECK(io::read_text(e.path()) == io::read_text(other));
  }

  ExperimentConfig s = tiny(ExperimentKind::FdrSweep);
  const fs::path sa = scratch("replay_sa"), sb = scratch("replay_sb");
  write_sweep(sa.string(), run_fdr_sweep(s));
  write_sweep(sb.string(), run_fdr_sweep(s));
  CHECK(io::read_text(sa / "per_seed.csv") == io::read_text(sb / "per_seed.csv"));
}

TEST_CASE("thread count does not change results") {
  ExperimentConfig c = tiny(ExperimentKind::FdrSweep);
  setenv("MIRROR_SELECT_THREADS", "1", 1);
  const SweepOutcome one = run_fdr_sweep(c);
  setenv("MIRROR_SELECT_THREADS", "3", 1);
  const SweepOutcome three = run_fdr_sweep(c);
  unsetenv("MIRROR_SELECT_THREADS");
  for (std::size_t k = 0; k < one.reports.size(); ++k) {
    CHECK(one.reports[k].fdp.mean == three.reports[k].fdp.mean);
    CHECK(one.reports[k].power.mean == three.reports[k].power.mean);
  }
}

TEST_CASE("normality panels include the tiny-sample setting") {
  const auto out = run_normality(tiny(ExperimentKind::Normality));
  REQUIRE(out.panels.size() == 2);
  CHECK(out.panels[1].shape.m == 10);
  // 3 runs x the 20 coordinates in the second half
  CHECK(out.panels[1].pooled.standardized.size() == 3 * 20);
  CHECK(out.panels[0].runs.records.size() == 3);
}

TEST_CASE("compare writes one table per sample size") {
  ExperimentConfig c = tiny(ExperimentKind::Compare);
  const fs::path dir = scratch("compare");
  c.n_runs = 2;
  write_compare(dir.string(), run_compare(c));
  for (const char* f : {"compare_m120.csv", "compare_m60.csv"}) {
    const auto rows = read_csv(dir / f);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0] == std::vector<std::string>{"method", "design", "fdr_mean", "fdr_std", "power_mean", "power_std"});
    CHECK(rows[3][1] == "Spiked");
  }
}

TEST_CASE("classification pipeline runs") {
  ExperimentConfig c = tiny(ExperimentKind::Classification);
  c.n_runs = 2;
  const auto out = run_classification(c);
  CHECK(out.normality.panels.size() == 2);
  CHECK(out.sweep.reports.size() == default_checkpoints(20).size());
}

TEST_CASE("spiked split-consistent halves") {
  ExperimentConfig c = tiny(ExperimentKind::FdrSweep);
  c.design.family = DesignFamily::Spiked;
  c.design.scale = DesignScale::OneOverSqrtN;
  c.spiked_split_consistent = true;
  c.n_runs = 2;
  const auto out = run_fdr_sweep(c);
  CHECK(out.reports.back().records.size() == 2);
}

TEST_CASE("cli select writes its artifacts") {
  const fs::path dir = scratch("cli_select");
  ExperimentConfig c = tiny(ExperimentKind::FdrSweep);
  io::write_json(dir / "cfg.json", to_json(c));
  const Cli r = run_cli("select --config " + (dir / "cfg.json").string() + " --alpha 0.1 --psi min --out " +
                        (dir / "out").string());
  CHECK(r.code == 0);
  CHECK(fs::exists(dir / "out" / "mirror_result.csv"));
  CHECK(fs::exists(dir / "out" / "summary.json"));
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["alpha"] == 0.1);
  CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 1);
}

TEST_CASE("cli sweep writes the aggregate curve") {
  const fs::path dir = scratch("cli_sweep");
  ExperimentConfig c = tiny(ExperimentKind::FdrSweep);
  io::write_json(dir / "cfg.json", to_json(c));
  const Cli r = run_cli("sweep --config " + (dir / "cfg.json").string() + " --runs 2 --seed 5 --out " +
                        (dir / "out").string());
  CHECK(r.code == 0);
  const auto rows = read_csv(dir / "out" / "fdr_power_vs_iter.csv");
  REQUIRE(!rows.empty());
  CHECK(rows[0] == std::vector<std::string>{"iter", "fdr_mean", "fdr_std", "power_mean", "power_std", "loss_mean"});
  const auto manifest = io::read_json(dir / "out" / "manifest.json");
  CHECK(manifest["config"]["n_runs"] == 2);
  CHECK(manifest["config"]["base_seed"] == 5);
}

TEST_CASE("cli exit codes") {
  const Cli missing = run_cli_stderr("select --config /no/such/cfg.json");
  CHECK(missing.code == 1);
  CHECK(missing.out.find("/no/such/cfg.json") != std::string::npos);
  CHECK(run_cli("select --frobnicate").code == 1);
  CHECK(run_cli("").code == 1);

  const fs::path dir = scratch("cli_codes");
  io::write_text(dir / "bad.json", "{\"experiment\": \"FdrSweep\", \"bogus\": 1}");
  CHECK(run_cli("sweep --config " + (dir / "bad.json").string()).code == 1);
  io::write_text(dir / "broken.json", "{not json");
  CHECK(run_cli("sweep --config " + (dir / "broken.json").string()).code == 1);

  ExperimentConfig c = tiny(ExperimentKind::FdrSweep);
  c.train.learning_rate = 1e6;
  c.train.reduction = Reduction::Sum;
  io::write_json(dir / "diverge.json", to_json(c));
  CHECK(run_cli("select --config " + (dir / "diverge.json").string() + " --out " + (dir / "d").string()).code == 2);
}

TEST_CASE("diverging normality runs propagate once retries are spent") {
  ExperimentConfig c = tiny(ExperimentKind::Normality);
  c.settings = {{120, 40}};
  c.n_runs = 2;
  c.train.learning_rate = 1e4;
  c.retry_diverged = 0;
  CHECK_THROWS_AS(run_normality(c), NumericOverflow);
  c.retry_diverged = 2;
  CHECK_THROWS_AS(run_normality(c), NumericOverflow);
  c.train.learning_rate = 3e-3;
  CHECK(run_normality(c).panels[0].diverged == 0);
}

#include "mirrorsel/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <mutex>
#include <thread>

#include "mirrorsel/errors.hpp"
#include "mirrorsel/io.hpp"
#include "mirrorsel/rng.hpp"

#ifndef MIRRORSEL_VERSION
#define MIRRORSEL_VERSION "dev"
#endif

namespace mirrorsel {

namespace fs = std::filesystem;
using nlohmann::json;
using io::format_double;

// ---------------------------------------------------------------------------
// Configuration

std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::Normality: return "Normality";
    case ExperimentKind::FdrSweep: return "FdrSweep";
    case ExperimentKind::Compare: return "Compare";
    case ExperimentKind::Classification: return "Classification";
  }
  return "?";
}

ExperimentKind experiment_from_string(const std::string& s) {
  for (auto k : {ExperimentKind::Normality, ExperimentKind::FdrSweep, ExperimentKind::Compare,
                 ExperimentKind::Classification})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown experiment '" + s + "'");
}

void ExperimentConfig::validate() const {
  if (n_runs < 1) throw ConfigError("n_runs must be >= 1");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  const bool classify = dgp.kind == Dgp::ClassificationD;
  if (classify != (train.loss == Loss::CrossEntropy))
    throw ConfigError("loss must be CrossEntropy for ClassificationD and Squared for Regression51");
  if (!std::is_sorted(checkpoints.begin(), checkpoints.end()) ||
      std::adjacent_find(checkpoints.begin(), checkpoints.end()) != checkpoints.end())
    throw ConfigError("checkpoints must be strictly ascending");
  if (!checkpoints.empty() && checkpoints.back() > train.iterations)
    throw ConfigError("checkpoints exceed train.iterations");
  try {
    design.validate();
    NetworkSpec net = netspec;
    net.n_in = std::max<std::size_t>(design.n, 1);
    net.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
}

ExperimentConfig default_config(ExperimentKind kind) {
  ExperimentConfig c;
  c.experiment = kind;
  c.design = {DesignFamily::IidGaussian, 1600, 400, 0.0, 2, DesignScale::UnitVariance, false};
  c.netspec.first_width = 1024;
  c.netspec.tail_widths = {1024, 512, 256};
  c.netspec.dropout_rate = 0.1;
  c.netspec.init = InitScheme::HeNormal;
  c.train.loss = Loss::Squared;
  c.train.batch_size = 128;
  c.train.learning_rate = 3e-3;
  c.train.sampling = Sampling::WithoutReplacement;
  c.train.reduction = Reduction::Mean;
  c.train.loss_every = 0;
  c.psi = PsiKind::Min;
  c.alpha = 0.1;
  switch (kind) {
    case ExperimentKind::Normality:
      c.design.m = 2000;
      c.design.n = 1000;
      c.train.iterations = 10;
      c.train.loss_every = 1;
      c.settings = {{2000, 1000}, {10, 1000}};
      c.n_runs = 5;
      c.retry_diverged = 10;
      break;
    case ExperimentKind::FdrSweep:
      c.train.iterations = 500;
      c.n_runs = 10;
      break;
    case ExperimentKind::Compare:
      c.design.n = 500;
      c.design.m = 2000;
      c.design.scale = DesignScale::OneOverSqrtN;
      c.train.iterations = 500;
      c.compare_m = {2000, 1000, 500};
      c.compare_designs = {DesignFamily::IidGaussian, DesignFamily::ScaledT3, DesignFamily::Spiked};
      c.n_runs = 5;
      break;
    case ExperimentKind::Classification:
      c.design.m = 2000;
      c.design.n = 1000;
      c.dgp.kind = Dgp::ClassificationD;
      c.dgp.q_star = kNumClasses;
      c.train.loss = Loss::CrossEntropy;
      c.train.iterations = 10;
      c.settings = {{2000, 1000}, {10, 1000}};
      c.sweep_shape = {4000, 400};
      c.n_runs = 5;
      c.retry_diverged = 10;
      break;
  }
  return c;
}

void apply_paper_scale(ExperimentConfig& cfg) {
  cfg.paper_scale = true;
  cfg.n_runs = 20;
  if (cfg.experiment == ExperimentKind::Normality || cfg.experiment == ExperimentKind::Classification) {
    const SampleShape big{100000, 1000};
    if (std::find(cfg.settings.begin(), cfg.settings.end(), big) == cfg.settings.end())
      cfg.settings.insert(cfg.settings.begin(), big);
  }
}

namespace {

template <std::size_t N>
std::vector<double> to_vec(const std::array<double, N>& a) {
  return {a.begin(), a.end()};
}

template <std::size_t N>
std::array<double, N> to_arr(const json& j, const char* name) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != N) throw ConfigError(std::string(name) + " needs " + std::to_string(N) + " values");
  std::array<double, N> a{};
  std::copy(v.begin(), v.end(), a.begin());
  return a;
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; }))
      throw ConfigError("unknown field '" + key + "' in " + where);
  }
}

json design_json(const DesignSpec& d) {
  return {{"family", to_string(d.family)}, {"m", d.m},
          {"n", d.n},                      {"rho", d.rho},
          {"spike_rank", d.spike_rank},    {"scale", to_string(d.scale)},
          {"normalize_t", d.normalize_t}};
}

DesignSpec design_from_json(const json& j, DesignSpec d) {
  reject_unknown(j, {"family", "m", "n", "rho", "spike_rank", "scale", "normalize_t"}, "design");
  if (j.contains("family")) d.family = design_family_from_string(j["family"].get<std::string>());
  d.m = j.value("m", d.m);
  d.n = j.value("n", d.n);
  d.rho = j.value("rho", d.rho);
  d.spike_rank = j.value("spike_rank", d.spike_rank);
  if (j.contains("scale")) d.scale = design_scale_from_string(j["scale"].get<std::string>());
  d.normalize_t = j.value("normalize_t", d.normalize_t);
  return d;
}

json dgp_json(const DgpConfig& d) {
  const auto& p = d.classification;
  return {{"kind", to_string(d.kind)},      {"q_star", d.q_star},         {"noise_sd", d.noise_sd},
          {"alpha", to_vec(p.alpha)},       {"beta", to_vec(p.beta)},     {"gamma", to_vec(p.gamma)},
          {"omega", to_vec(p.omega)},       {"nu", to_vec(p.nu)},         {"bias", to_vec(p.bias)},
          {"tau", p.tau}};
}

DgpConfig dgp_from_json(const json& j, DgpConfig d) {
  reject_unknown(j, {"kind", "q_star", "noise_sd", "alpha", "beta", "gamma", "omega", "nu", "bias", "tau"},
                 "dgp");
  if (j.contains("kind")) d.kind = dgp_from_string(j["kind"].get<std::string>());
  d.q_star = j.value("q_star", d.q_star);
  d.noise_sd = j.value("noise_sd", d.noise_sd);
  auto& p = d.classification;
  if (j.contains("alpha")) p.alpha = to_arr<kNumClasses>(j["alpha"], "dgp.alpha");
  if (j.contains("beta")) p.beta = to_arr<kNumClasses>(j["beta"], "dgp.beta");
  if (j.contains("gamma")) p.gamma = to_arr<kNumClasses>(j["gamma"], "dgp.gamma");
  if (j.contains("omega")) p.omega = to_arr<kNumClasses>(j["omega"], "dgp.omega");
  if (j.contains("nu")) p.nu = to_arr<kNumClasses>(j["nu"], "dgp.nu");
  if (j.contains("bias")) p.bias = to_arr<kNumClasses>(j["bias"], "dgp.bias");
  p.tau = j.value("tau", p.tau);
  if (!(p.tau > 0.0)) throw ConfigError("dgp.tau must be positive");
  return d;
}

json train_json(const TrainConfig& t) {
  return {{"loss", to_string(t.loss)},
          {"batch_size", t.batch_size},
          {"learning_rate", t.learning_rate},
          {"lr_schedule", t.lr_schedule},
          {"iterations", t.iterations},
          {"sampling", to_string(t.sampling)},
          {"reduction", to_string(t.reduction)},
          {"weight_decay", t.weight_decay},
          {"loss_every", t.loss_every}};
}

TrainConfig train_from_json(const json& j, TrainConfig t) {
  reject_unknown(j, {"loss", "batch_size", "learning_rate", "lr_schedule", "iterations", "sampling",
                     "reduction", "weight_decay", "loss_every"},
                 "train");
  if (j.contains("loss")) t.loss = loss_from_string(j["loss"].get<std::string>());
  t.batch_size = j.value("batch_size", t.batch_size);
  t.learning_rate = j.value("learning_rate", t.learning_rate);
  t.lr_schedule = j.value("lr_schedule", t.lr_schedule);
  t.iterations = j.value("iterations", t.iterations);
  if (j.contains("sampling")) t.sampling = sampling_from_string(j["sampling"].get<std::string>());
  if (j.contains("reduction")) t.reduction = reduction_from_string(j["reduction"].get<std::string>());
  t.weight_decay = j.value("weight_decay", t.weight_decay);
  t.loss_every = j.value("loss_every", t.loss_every);
  return t;
}

json netspec_json(const NetworkSpec& s) {
  json j = io::to_json(s);
  j.erase("n_in");
  j.erase("out_width");
  return j;
}

json shapes_json(const std::vector<SampleShape>& v) {
  json a = json::array();
  for (const auto& s : v) a.push_back({s.m, s.n});
  return a;
}

std::vector<SampleShape> shapes_from_json(const json& j) {
  std::vector<SampleShape> out;
  for (const auto& e : j) {
    const auto v = e.get<std::vector<std::size_t>>();
    if (v.size() != 2) throw ConfigError("settings entries must be [m, n] pairs");
    out.push_back({v[0], v[1]});
  }
  return out;
}

}  // namespace

json to_json(const ExperimentConfig& c) {
  json designs = json::array();
  for (auto f : c.compare_designs) designs.push_back(to_string(f));
  return {{"experiment", to_string(c.experiment)},
          {"design", design_json(c.design)},
          {"dgp", dgp_json(c.dgp)},
          {"netspec", netspec_json(c.netspec)},
          {"train", train_json(c.train)},
          {"psi", to_string(c.psi)},
          {"alpha", c.alpha},
          {"n_runs", c.n_runs},
          {"base_seed", c.base_seed},
          {"output_dir", c.output_dir},
          {"checkpoints", c.checkpoints},
          {"settings", shapes_json(c.settings)},
          {"compare_m", c.compare_m},
          {"compare_designs", designs},
          {"sweep_shape", json{c.sweep_shape.m, c.sweep_shape.n}},
          {"shared_init", c.shared_init},
          {"spiked_split_consistent", c.spiked_split_consistent},
          {"output_reduction", to_string(c.output_reduction)},
          {"logit", c.logit},
          {"hist_bins", c.hist_bins},
          {"paper_scale", c.paper_scale},
          {"retry_diverged", c.retry_diverged}};
}

ExperimentConfig config_from_json(const json& j, const ExperimentConfig& base) {
  ExperimentConfig c = base;
  try {
    reject_unknown(j, {"experiment", "design", "dgp", "netspec", "train", "psi", "alpha", "n_runs",
                       "base_seed", "output_dir", "checkpoints", "settings", "compare_m",
                       "compare_designs", "sweep_shape", "shared_init", "spiked_split_consistent",
                       "output_reduction", "logit", "hist_bins", "paper_scale", "retry_diverged"},
                   "config");
    if (j.contains("design")) c.design = design_from_json(j["design"], c.design);
    if (j.contains("dgp")) c.dgp = dgp_from_json(j["dgp"], c.dgp);
    if (j.contains("netspec")) {
      json merged = netspec_json(c.netspec);
      merged.update(j["netspec"]);
      c.netspec = io::network_spec_from_json(merged, 0);
    }
    if (j.contains("train")) c.train = train_from_json(j["train"], c.train);
    if (j.contains("psi")) c.psi = psi_from_string(j["psi"].get<std::string>());
    c.alpha = j.value("alpha", c.alpha);
    c.n_runs = j.value("n_runs", c.n_runs);
    c.base_seed = j.value("base_seed", c.base_seed);
    c.output_dir = j.value("output_dir", c.output_dir);
    c.checkpoints = j.value("checkpoints", c.checkpoints);
    if (j.contains("settings")) c.settings = shapes_from_json(j["settings"]);
    c.compare_m = j.value("compare_m", c.compare_m);
    if (j.contains("compare_designs")) {
      c.compare_designs.clear();
      for (const auto& f : j["compare_designs"])
        c.compare_designs.push_back(design_family_from_string(f.get<std::string>()));
    }
    if (j.contains("sweep_shape")) {
      const auto v = j["sweep_shape"].get<std::vector<std::size_t>>();
      if (v.size() != 2) throw ConfigError("sweep_shape must be [m, n]");
      c.sweep_shape = {v[0], v[1]};
    }
    c.shared_init = j.value("shared_init", c.shared_init);
    c.spiked_split_consistent = j.value("spiked_split_consistent", c.spiked_split_consistent);
    if (j.contains("output_reduction"))
      c.output_reduction = output_reduction_from_string(j["output_reduction"].get<std::string>());
    c.logit = j.value("logit", c.logit);
    c.hist_bins = j.value("hist_bins", c.hist_bins);
    c.paper_scale = j.value("paper_scale", c.paper_scale);
    c.retry_diverged = j.value("retry_diverged", c.retry_diverged);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config: ") + e.what());
  }
  return c;
}

ExperimentConfig config_from_json(const json& j) {
  if (!j.is_object() || !j.contains("experiment"))
    throw ConfigError("config needs an 'experiment' field");
  ExperimentKind kind;
  try {
    kind = experiment_from_string(j.at("experiment").get<std::string>());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config: ") + e.what());
  }
  return config_from_json(j, default_config(kind));
}

// ---------------------------------------------------------------------------
// Aggregation and workers

Aggregate aggregate(const std::vector<double>& values) {
  Aggregate a;
  if (values.empty()) return a;
  double sum = 0.0;
  for (double v : values) sum += v;
  a.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double sq = 0.0;
    for (double v : values) sq += (v - a.mean) * (v - a.mean);
    a.std = std::sqrt(sq / static_cast<double>(values.size() - 1));
  }
  return a;
}

RunReport RunReport::from_records(std::vector<RunRecord> records) {
  std::sort(records.begin(), records.end(),
            [](const RunRecord& a, const RunRecord& b) { return a.run_index < b.run_index; });
  RunReport r;
  std::vector<double> fdp, power, ks, nsel;
  for (const auto& rec : records) {
    fdp.push_back(rec.fdp);
    power.push_back(rec.power);
    ks.push_back(rec.ks);
    nsel.push_back(static_cast<double>(rec.n_selected));
  }
  r.fdp = aggregate(fdp);
  r.power = aggregate(power);
  r.ks = aggregate(ks);
  r.n_selected = aggregate(nsel);
  r.records = std::move(records);
  return r;
}

std::size_t worker_count() {
  if (const char* env = std::getenv("MIRROR_SELECT_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(worker_count(), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------
// Building blocks

std::uint64_t run_seed(const ExperimentConfig& cfg, std::size_t index) {
  return derive_seed(cfg.base_seed, index);
}

namespace {

SignalMatrix make_signal(const ExperimentConfig& cfg, const DesignSpec& design, std::uint64_t seed) {
  if (cfg.dgp.kind == Dgp::ClassificationD) return make_signal_classification(design.n, seed);
  return make_signal_regression(design.n, cfg.dgp.q_star, design.scale);
}

Dataset respond(const ExperimentConfig& cfg, const Matrix& X, const SignalMatrix& signal,
                std::uint64_t seed) {
  if (cfg.dgp.kind == Dgp::ClassificationD)
    return gen_classification(X, signal, cfg.dgp.classification, seed);
  return gen_regression(X, signal, seed, cfg.dgp.noise_sd);
}

}  // namespace

Dataset make_dataset(const ExperimentConfig& cfg, const DesignSpec& design, std::uint64_t seed) {
  const SignalMatrix signal = make_signal(cfg, design, seed);
  return respond(cfg, sample_design(design, seed), signal, seed);
}

SelectionSetup selection_setup(const ExperimentConfig& cfg, std::size_t n, std::size_t half_m) {
  SelectionSetup s;
  s.net = cfg.netspec;
  s.net.n_in = n;
  s.net.out_width = cfg.dgp.kind == Dgp::ClassificationD ? kNumClasses : 1;
  s.train = cfg.train;
  s.train.dropout_rate = s.net.dropout_rate;
  // Tiny samples (e.g. m = 10) train full-batch.
  s.train.batch_size = std::min(s.train.batch_size, half_m);
  s.psi = cfg.psi;
  s.alpha = cfg.alpha;
  s.output_reduction = cfg.output_reduction;
  s.logit = cfg.logit;
  s.shared_init = cfg.shared_init;
  return s;
}

std::vector<std::size_t> default_checkpoints(std::size_t iterations) {
  std::vector<std::size_t> out{0};
  for (std::size_t decade = 1; decade <= iterations; decade *= 10) {
    for (std::size_t step : {1, 2, 5}) {
      const std::size_t t = step * decade;
      if (t <= iterations) out.push_back(t);
    }
  }
  if (out.back() != iterations) out.push_back(iterations);
  return out;
}

namespace {

std::vector<std::size_t> checkpoints_of(const ExperimentConfig& cfg) {
  return cfg.checkpoints.empty() ? default_checkpoints(cfg.train.iterations) : cfg.checkpoints;
}

struct SeedSweep {
  std::vector<SweepPoint> points;
  SignalMatrix signal;
};

SeedSweep sweep_one_seed(const ExperimentConfig& cfg, const DesignSpec& design, std::uint64_t seed,
                         const std::vector<std::size_t>& checkpoints) {
  if (design.m % 2 != 0) throw ConfigError("selection needs an even sample size m");
  const SelectionSetup setup = selection_setup(cfg, design.n, design.m / 2);
  if (design.family == DesignFamily::Spiked && cfg.spiked_split_consistent) {
    auto [x1, x2] = sample_spiked_halves(design, seed);
    const SignalMatrix signal = make_signal(cfg, design, seed);
    const Dataset h1 = respond(cfg, x1, signal, derive_seed(seed, 1));
    const Dataset h2 = respond(cfg, x2, signal, derive_seed(seed, 2));
    return {select_features_sweep(h1, h2, setup, seed, checkpoints), signal};
  }
  const Dataset ds = make_dataset(cfg, design, seed);
  return {select_features_sweep(ds, setup, seed, checkpoints), ds.signal};
}

SweepOutcome sweep_design(const ExperimentConfig& cfg, const DesignSpec& design,
                          const std::vector<std::size_t>& checkpoints) {
  std::vector<SeedSweep> per_seed(cfg.n_runs);
  parallel_for(cfg.n_runs, [&](std::size_t r) {
    per_seed[r] = sweep_one_seed(cfg, design, run_seed(cfg, r), checkpoints);
  });
  SweepOutcome out;
  out.iterations = checkpoints;
  for (std::size_t k = 0; k < checkpoints.size(); ++k) {
    std::vector<RunRecord> records;
    std::vector<double> losses;
    for (std::size_t r = 0; r < cfg.n_runs; ++r) {
      const SweepPoint& p = per_seed[r].points[k];
      const SelectionMetrics m = evaluate(p.result, per_seed[r].signal);
      const double loss = 0.5 * (p.loss1 + p.loss2);
      losses.push_back(loss);
      records.push_back({r, run_seed(cfg, r), m.fdp, m.power, 0.0, p.result.tau, m.n_selected,
                         {{p.iteration, loss}}});
    }
    out.reports.push_back(RunReport::from_records(std::move(records)));
    out.loss_mean.push_back(aggregate(losses).mean);
  }
  return out;
}

NormalityPanel normality_panel(const ExperimentConfig& cfg, SampleShape shape) {
  DesignSpec design = cfg.design;
  design.m = shape.m;
  design.n = shape.n;
  const SelectionSetup setup = selection_setup(cfg, shape.n, shape.m);
  std::vector<Vector> standardized(cfg.n_runs);
  std::vector<RunRecord> records(cfg.n_runs);
  std::vector<std::size_t> diverged(cfg.n_runs, 0);
  parallel_for(cfg.n_runs, [&](std::size_t r) {
    for (std::size_t attempt = 0;; ++attempt) {
      const std::uint64_t seed = run_seed(cfg, r + attempt * cfg.n_runs);
      try {
        const Dataset ds = make_dataset(cfg, design, seed);
        const NetworkParams params0 = init_params(setup.net, derive_seed(seed, streams::kInit));
        TrainConfig tc = setup.train;
        tc.seed = seed;
        const TrainResult trained = train(params0, ds, tc);
        const Vector xi = input_sensitivity(trained.params, ds.X, setup.output_reduction, setup.logit);
        standardized[r] = standardized_null(xi, ds.signal);
        RunRecord& rec = records[r];
        rec.run_index = r;
        rec.seed = seed;
        rec.ks = ks_statistic(standardized[r]);
        rec.loss_trajectory = trained.loss_trajectory;
        return;
      } catch (const NumericOverflow&) {
        if (attempt >= cfg.retry_diverged) throw;
        ++diverged[r];
      }
    }
  });
  Eigen::Index total = 0;
  for (const auto& v : standardized) total += v.size();
  Vector pooled(total);
  Eigen::Index at = 0;
  for (const auto& v : standardized) {
    pooled.segment(at, v.size()) = v;
    at += v.size();
  }
  std::size_t n_diverged = 0;
  for (auto d : diverged) n_diverged += d;
  return {shape, normality_report(pooled, cfg.hist_bins), n_diverged,
          RunReport::from_records(std::move(records))};
}

NormalityOutcome normality_panels(const ExperimentConfig& cfg) {
  NormalityOutcome out;
  const auto settings =
      cfg.settings.empty() ? std::vector<SampleShape>{{cfg.design.m, cfg.design.n}} : cfg.settings;
  for (const auto& shape : settings) out.panels.push_back(normality_panel(cfg, shape));
  return out;
}

void finish(const ExperimentConfig& cfg, const std::chrono::steady_clock::time_point& start) {
  if (cfg.output_dir.empty()) return;
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(cfg.output_dir, cfg, seconds);
}

}  // namespace

// ---------------------------------------------------------------------------
// Experiments

NormalityOutcome run_normality(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  NormalityOutcome out = normality_panels(cfg);
  if (!cfg.output_dir.empty()) write_normality(cfg.output_dir, cfg, out);
  finish(cfg, start);
  return out;
}

SweepOutcome run_fdr_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  SweepOutcome out = sweep_design(cfg, cfg.design, checkpoints_of(cfg));
  if (!cfg.output_dir.empty()) write_sweep(cfg.output_dir, out);
  finish(cfg, start);
  return out;
}

CompareOutcome run_compare(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  CompareOutcome out;
  const auto ms = cfg.compare_m.empty() ? std::vector<std::size_t>{cfg.design.m} : cfg.compare_m;
  const auto designs =
      cfg.compare_designs.empty() ? std::vector<DesignFamily>{cfg.design.family} : cfg.compare_designs;
  for (std::size_t m : ms) {
    for (DesignFamily family : designs) {
      DesignSpec design = cfg.design;
      design.m = m;
      design.family = family;
      SweepOutcome s = sweep_design(cfg, design, {cfg.train.iterations});
      out.rows.push_back({m, family, std::move(s.reports.back())});
    }
  }
  if (!cfg.output_dir.empty()) write_compare(cfg.output_dir, out);
  finish(cfg, start);
  return out;
}

ClassificationOutcome run_classification(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.dgp.kind != Dgp::ClassificationD)
    throw ConfigError("classification experiment needs dgp.kind = ClassificationD");
  const auto start = std::chrono::steady_clock::now();
  ClassificationOutcome out;
  out.normality = normality_panels(cfg);
  ExperimentConfig sweep_cfg = cfg;
  sweep_cfg.design.m = cfg.sweep_shape.m;
  sweep_cfg.design.n = cfg.sweep_shape.n;
  out.sweep = sweep_design(sweep_cfg, sweep_cfg.design, checkpoints_of(cfg));
  if (!cfg.output_dir.empty()) {
    write_normality((fs::path(cfg.output_dir) / "normality").string(), cfg, out.normality);
    write_sweep((fs::path(cfg.output_dir) / "sweep").string(), out.sweep);
  }
  finish(cfg, start);
  return out;
}

SelectOutcome run_select(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  const std::uint64_t seed = run_seed(cfg, 0);
  SeedSweep s = sweep_one_seed(cfg, cfg.design, seed, {cfg.train.iterations});
  SelectOutcome out{std::move(s.points.back().result), {}};
  out.metrics = evaluate(out.result, s.signal);
  if (!cfg.output_dir.empty()) write_select(cfg.output_dir, out);
  finish(cfg, start);
  return out;
}

Dataset run_gen(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::uint64_t seed = run_seed(cfg, 0);
  Dataset ds = make_dataset(cfg, cfg.design, seed);
  if (!cfg.output_dir.empty())
    io::save_dataset(fs::path(cfg.output_dir) / "data", ds, to_string(cfg.design.family), seed);
  return ds;
}

// ---------------------------------------------------------------------------
// Artifacts

namespace {

json tau_json(double tau) { return std::isfinite(tau) ? json(tau) : json(nullptr); }

}  // namespace

json write_normality(const std::string& dir, const ExperimentConfig& cfg, const NormalityOutcome& out) {
  json panels = json::array();
  for (const auto& p : out.panels) {
    const fs::path sub = fs::path(dir) / ("m" + std::to_string(p.shape.m) + "_n" + std::to_string(p.shape.n));
    io::write_normality_csvs(sub, p.pooled);
    io::CsvTable runs({"run", "seed", "ks", "final_loss"});
    for (const auto& r : p.runs.records) {
      const double loss = r.loss_trajectory.empty() ? std::nan("") : r.loss_trajectory.back().loss;
      runs.row({std::to_string(r.run_index), std::to_string(r.seed), format_double(r.ks),
                format_double(loss)});
    }
    runs.write(sub / "runs.csv");
    io::CsvTable losses({"run", "iter", "loss"});
    for (const auto& r : p.runs.records)
      for (const auto& lp : r.loss_trajectory)
        losses.row({std::to_string(r.run_index), std::to_string(lp.iteration), format_double(lp.loss)});
    losses.write(sub / "loss.csv");
    const json summary = {{"ks", p.pooled.ks_stat},
                          {"mean", p.pooled.mean},
                          {"variance", p.pooled.variance},
                          {"n", p.shape.n},
                          {"q_star", cfg.dgp.kind == Dgp::ClassificationD ? kNumClasses : cfg.dgp.q_star},
                          {"m", p.shape.m},
                          {"t", cfg.train.iterations},
                          {"n_values", p.pooled.standardized.size()},
                          {"diverged", p.diverged},
                          {"runs", p.runs.records.size()}};
    io::write_json(sub / "summary.json", summary);
    panels.push_back(summary);
  }
  const json summary = {{"experiment", "Normality"}, {"panels", panels}};
  io::write_json(fs::path(dir) / "summary.json", summary);
  return summary;
}

json write_sweep(const std::string& dir, const SweepOutcome& out) {
  io::CsvTable agg({"iter", "fdr_mean", "fdr_std", "power_mean", "power_std", "loss_mean"});
  io::CsvTable per_seed({"run", "seed", "iter", "fdp", "power", "tau", "n_selected", "loss"});
  for (std::size_t k = 0; k < out.iterations.size(); ++k) {
    const RunReport& r = out.reports[k];
    agg.row({std::to_string(out.iterations[k]), format_double(r.fdp.mean), format_double(r.fdp.std),
             format_double(r.power.mean), format_double(r.power.std), format_double(out.loss_mean[k])});
    for (const auto& rec : r.records) {
      per_seed.row({std::to_string(rec.run_index), std::to_string(rec.seed),
                    std::to_string(out.iterations[k]), format_double(rec.fdp), format_double(rec.power),
                    format_double(rec.tau), std::to_string(rec.n_selected),
                    format_double(rec.loss_trajectory.back().loss)});
    }
  }
  agg.write(fs::path(dir) / "fdr_power_vs_iter.csv");
  per_seed.write(fs::path(dir) / "per_seed.csv");
  const RunReport& last = out.reports.back();
  const json summary = {{"experiment", "FdrSweep"},
                        {"iter", out.iterations.back()},
                        {"fdr_mean", last.fdp.mean},
                        {"fdr_std", last.fdp.std},
                        {"power_mean", last.power.mean},
                        {"power_std", last.power.std},
                        {"loss_mean", out.loss_mean.back()},
                        {"runs", last.records.size()}};
  io::write_json(fs::path(dir) / "summary.json", summary);
  return summary;
}

json write_compare(const std::string& dir, const CompareOutcome& out) {
  std::vector<std::size_t> ms;
  for (const auto& row : out.rows)
    if (std::find(ms.begin(), ms.end(), row.m) == ms.end()) ms.push_back(row.m);
  json rows = json::array();
  io::CsvTable per_seed({"m", "design", "run", "seed", "fdp", "power", "tau", "n_selected"});
  for (std::size_t m : ms) {
    io::CsvTable t({"method", "design", "fdr_mean", "fdr_std", "power_mean", "power_std"});
    for (const auto& row : out.rows) {
      if (row.m != m) continue;
      const auto& r = row.report;
      t.row({"MLP", to_string(row.design), format_double(r.fdp.mean), format_double(r.fdp.std),
             format_double(r.power.mean), format_double(r.power.std)});
      rows.push_back({{"m", m},
                      {"design", to_string(row.design)},
                      {"fdr_mean", r.fdp.mean},
                      {"power_mean", r.power.mean}});
      for (const auto& rec : r.records)
        per_seed.row({std::to_string(m), to_string(row.design), std::to_string(rec.run_index),
                      std::to_string(rec.seed), format_double(rec.fdp), format_double(rec.power),
                      format_double(rec.tau), std::to_string(rec.n_selected)});
    }
    t.write(fs::path(dir) / ("compare_m" + std::to_string(m) + ".csv"));
  }
  per_seed.write(fs::path(dir) / "per_seed.csv");
  const json summary = {{"experiment", "Compare"}, {"rows", rows}};
  io::write_json(fs::path(dir) / "summary.json", summary);
  return summary;
}

json write_select(const std::string& dir, const SelectOutcome& out) {
  io::mirror_result_table(out.result).write(fs::path(dir) / "mirror_result.csv");
  const json summary = {{"tau", tau_json(out.result.tau)},
                        {"alpha", out.result.alpha},
                        {"n_selected", out.metrics.n_selected},
                        {"fdp", out.metrics.fdp},
                        {"power", out.metrics.power}};
  io::write_json(fs::path(dir) / "summary.json", summary);
  return summary;
}

std::string build_id() {
  return std::string("mirrorsel ") + MIRRORSEL_VERSION + " (" + __VERSION__ + ")";
}

void write_manifest(const std::string& dir, const ExperimentConfig& cfg, double seconds) {
  io::write_json(fs::path(dir) / "manifest.json",
                 {{"config", to_json(cfg)}, {"build", build_id()}, {"wall_clock_seconds", seconds}});
}

}  // namespace mirrorsel

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mirrorsel/datagen.hpp"
#include "mirrorsel/diag.hpp"
#include "mirrorsel/net.hpp"
#include "mirrorsel/select.hpp"

namespace mirrorsel {

enum class ExperimentKind { Normality, FdrSweep, Compare, Classification };

struct SampleShape {
  std::size_t m = 0;
  std::size_t n = 0;
  bool operator==(const SampleShape&) const = default;
};

struct DgpConfig {
  Dgp kind = Dgp::Regression51;
  std::size_t q_star = 8;
  double noise_sd = 1.0;
  ClassificationParams classification;
};

/// Everything an experiment needs. JSON field names match the member names.
struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::FdrSweep;
  DesignSpec design;
  DgpConfig dgp;
  /// n_in and out_width are filled in from the design and the dgp.
  NetworkSpec netspec;
  TrainConfig train;
  PsiKind psi = PsiKind::Min;
  double alpha = 0.1;
  std::size_t n_runs = 5;
  std::uint64_t base_seed = 1;
  std::string output_dir;

  /// Iterations at which sweeps evaluate the selection; empty = default grid.
  std::vector<std::size_t> checkpoints;
  /// (m, n) panels for normality diagnostics.
  std::vector<SampleShape> settings;
  /// Sample sizes and design families for the comparison table.
  std::vector<std::size_t> compare_m;
  std::vector<DesignFamily> compare_designs;
  /// Shape of the classification selection sweep.
  SampleShape sweep_shape{4000, 400};
  bool shared_init = false;
  bool spiked_split_consistent = false;
  OutputReduction output_reduction = OutputReduction::SumOutputs;
  std::size_t logit = 0;
  std::size_t hist_bins = 0;
  bool paper_scale = false;
  /// Normality runs: a seed whose training overflows is retried with
  /// run_seed(index + k * n_runs), k = 1..retry_diverged. 0 propagates.
  std::size_t retry_diverged = 0;

  void validate() const;
};

/// Desk-scale defaults for each experiment.
ExperimentConfig default_config(ExperimentKind kind);
/// Widens runs and panels to the published sizes.
void apply_paper_scale(ExperimentConfig& cfg);

nlohmann::json to_json(const ExperimentConfig& cfg);
/// Fields absent from `j` keep the values of `base`. Unknown fields throw.
ExperimentConfig config_from_json(const nlohmann::json& j, const ExperimentConfig& base);
ExperimentConfig config_from_json(const nlohmann::json& j);

struct RunRecord {
  std::size_t run_index = 0;
  std::uint64_t seed = 0;
  double fdp = 0.0;
  double power = 0.0;
  double ks = 0.0;
  double tau = kNoCutoff;
  std::size_t n_selected = 0;
  std::vector<LossPoint> loss_trajectory;
};

struct Aggregate {
  double mean = 0.0;
  /// Sample standard deviation (n - 1 denominator); 0 for a single run.
  double std = 0.0;
};

Aggregate aggregate(const std::vector<double>& values);

struct RunReport {
  std::vector<RunRecord> records;
  Aggregate fdp;
  Aggregate power;
  Aggregate ks;
  Aggregate n_selected;

  static RunReport from_records(std::vector<RunRecord> records);
};

struct NormalityPanel {
  SampleShape shape;
  NormalityReport pooled;
  std::size_t diverged = 0;
  RunReport runs;
};

struct NormalityOutcome {
  std::vector<NormalityPanel> panels;
};

struct SweepOutcome {
  std::vector<std::size_t> iterations;
  std::vector<RunReport> reports;
  /// Mean over runs of the two halves' average training loss.
  std::vector<double> loss_mean;
};

struct CompareRow {
  std::size_t m = 0;
  DesignFamily design = DesignFamily::IidGaussian;
  RunReport report;
};

struct CompareOutcome {
  std::vector<CompareRow> rows;
};

struct ClassificationOutcome {
  NormalityOutcome normality;
  SweepOutcome sweep;
};

struct SelectOutcome {
  MirrorResult result;
  SelectionMetrics metrics;
};

/// Seed of run `index`; distinct indices never share a seed.
std::uint64_t run_seed(const ExperimentConfig& cfg, std::size_t index);

/// Dataset of one run: design draw, signal and response from `seed`.
Dataset make_dataset(const ExperimentConfig& cfg, const DesignSpec& design, std::uint64_t seed);

/// Selection setup for data of width n whose halves have `half_m` rows.
SelectionSetup selection_setup(const ExperimentConfig& cfg, std::size_t n, std::size_t half_m);

std::vector<std::size_t> default_checkpoints(std::size_t iterations);

/// Worker count: MIRROR_SELECT_THREADS if set, else hardware concurrency.
std::size_t worker_count();

/// Calls fn(i) for i in [0, count) on the worker pool. Exceptions are
/// rethrown on the caller after all workers finish.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

NormalityOutcome run_normality(const ExperimentConfig& cfg);
SweepOutcome run_fdr_sweep(const ExperimentConfig& cfg);
CompareOutcome run_compare(const ExperimentConfig& cfg);
ClassificationOutcome run_classification(const ExperimentConfig& cfg);
SelectOutcome run_select(const ExperimentConfig& cfg);
/// Writes one dataset (run 0) under output_dir/data.
Dataset run_gen(const ExperimentConfig& cfg);

/// Artifact writers; each returns the JSON summary it wrote.
nlohmann::json write_normality(const std::string& dir, const ExperimentConfig& cfg,
                               const NormalityOutcome& out);
nlohmann::json write_sweep(const std::string& dir, const SweepOutcome& out);
nlohmann::json write_compare(const std::string& dir, const CompareOutcome& out);
nlohmann::json write_select(const std::string& dir, const SelectOutcome& out);

/// manifest.json with the config, build identifier and wall-clock seconds.
void write_manifest(const std::string& dir, const ExperimentConfig& cfg, double seconds);

std::string build_id();

std::string to_string(ExperimentKind k);
ExperimentKind experiment_from_string(const std::string& s);

}  // namespace mirrorsel

#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dfm/core.hpp"
#include "dfm/metrics.hpp"
#include "dfm/oracle.hpp"
#include "dfm/paths.hpp"
#include "dfm/sampler.hpp"
#include "dfm/trainer.hpp"
#include "dfm/verify.hpp"

namespace dfm {

// Where the sampling posterior comes from: exact enumeration, a checkpoint on
// disk, a fresh training run, or the count-based estimator.
struct PosteriorChoice {
  enum class Kind { oracle, trained, train_now, counts };

  Kind kind = Kind::oracle;
  std::string checkpoint;          // trained
  TrainConfig train;               // train_now
  std::size_t time_bins = 0;       // train_now; 0 picks the provable default
  EstimatorConfig estimator;       // counts
};

struct ExperimentConfig {
  SpaceSpec space;
  SourceSpec source;
  TargetSpec target;
  CouplingSpec coupling;
  ConditionalPath path = ConditionalPath::convex(ScalarScheduler::linear());
  PosteriorChoice posterior;
  SamplerConfig sampler;
  std::vector<std::string> metrics;  // empty selects every feasible metric
  std::uint64_t n_samples = 10000;
  std::string output_dir = "out";
  std::uint64_t seed = 0;
  std::size_t workers = 0;  // chain worker threads; 0 asks the hardware
  VerifyOptions verify;

  void validate() const;
};

// Provider plus whatever owning state it needs kept alive.
struct BuiltPosterior {
  std::unique_ptr<EnumeratedSpace> enumerated;
  std::unique_ptr<ExplicitCoupling> coupling;
  std::unique_ptr<PosteriorProvider> provider;
  const TabularPosterior* table = nullptr;  // set for tabular kinds
  std::optional<TrainReport> train_report;
};

BuiltPosterior build_posterior(const ExperimentConfig& config);

struct RunMetricValues {
  std::optional<double> tv;
  std::optional<double> tv_exact;
  std::optional<double> entropy;
  std::optional<NfeStats> nfe;
  std::optional<double> runtime_seconds;
  std::uint64_t fallback_served = 0;
};

struct RunResult {
  std::vector<Sequence> samples;
  std::vector<std::uint64_t> nfe_per_chain;
  RunMetricValues metrics;
  std::optional<TrainReport> train_report;
};

// Optional training, sampling, metrics. Pure compute; writes nothing.
RunResult run_experiment(const ExperimentConfig& config,
                         const BuiltPosterior& posterior);

// report.json, summary.csv, samples.jsonl, plus checkpoint.json and
// loss_curve.csv after a training run.
void write_run_outputs(const ExperimentConfig& config,
                       const BuiltPosterior& posterior, const RunResult& result);

struct SweepAxis {
  std::string key;  // kappa.a, kappa.b, corrector.alpha, corrector.a,
                    // corrector.b, temperature.tau, n_steps
  std::vector<double> values;
};

struct SweepRow {
  std::size_t cell = 0;
  std::uint64_t seed = 0;
  std::vector<double> values;
  RunMetricValues metrics;
  std::string error;  // empty on success
};

std::vector<SweepRow> run_sweep(const ExperimentConfig& config,
                                const std::vector<SweepAxis>& axes);

void write_sweep_csv(const ExperimentConfig& config,
                     const std::vector<SweepAxis>& axes,
                     const std::vector<SweepRow>& rows);

// The configuration a grid cell runs with; exposed for tests.
ExperimentConfig apply_sweep_value(const ExperimentConfig& config,
                                   const std::string& key, double value);

}  // namespace dfm

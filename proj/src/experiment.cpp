#include "dfm/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <mutex>
#include <sstream>
#include <thread>
#include <utility>

#include "dfm/rng.hpp"
#include "dfm/serialize.hpp"

namespace dfm {

namespace {

constexpr const char* kMetricNames[] = {"tv", "tv_exact", "entropy", "nfe",
                                        "runtime"};

bool known_metric(const std::string& name) {
  return std::find(std::begin(kMetricNames), std::end(kMetricNames), name) !=
         std::end(kMetricNames);
}

bool within_oracle_cap(const SpaceSpec& space) {
  std::uint64_t states = 1;
  for (std::size_t i = 0; i < space.positions; ++i) {
    if (states > EnumeratedSpace::kDefaultMaxStates / space.alphabet_size()) {
      return false;
    }
    states *= space.alphabet_size();
  }
  return states <= EnumeratedSpace::kDefaultMaxStates;
}

// The law a backward run should land on.
JointPMF source_joint(const SpaceSpec& space, const SourceSpec& source) {
  if (source.kind == SourceSpec::Kind::all_mask) {
    JointPMF law;
    law[Sequence(space.positions, static_cast<TokenId>(space.d))] = 1.0;
    return law;
  }
  const EnumeratedSpace enumerated(space);
  return dense_to_joint(enumerated, source_law_dense(enumerated, source));
}

bool wants(const std::vector<std::string>& selected, const std::string& name) {
  return std::find(selected.begin(), selected.end(), name) != selected.end();
}

std::vector<std::string> select_metrics(const ExperimentConfig& config) {
  if (!config.metrics.empty()) return config.metrics;
  std::vector<std::string> selected{"entropy", "nfe"};
  const bool cap = within_oracle_cap(config.space);
  const bool backward = config.sampler.direction == Direction::backward;
  if (!backward || cap || config.source.kind == SourceSpec::Kind::all_mask) {
    selected.insert(selected.begin(), "tv");
  }
  if (cap) selected.insert(selected.begin() + 1, "tv_exact");
  return selected;
}

std::string csv_escape(const std::string& value) {
  if (value.find_first_of(",\"\n") == std::string::npos) return value;
  std::string quoted = "\"";
  for (char c : value) {
    if (c == '"') quoted += '"';
    quoted += c;
  }
  quoted += '"';
  return quoted;
}

std::string csv_number(double value) { return Json(value).dump(); }

void append_metric_columns(std::string& line, const RunMetricValues& metrics) {
  auto cell = [&line](const std::string& value) {
    line += ',';
    line += value;
  };
  cell(metrics.tv ? csv_number(*metrics.tv) : "");
  cell(metrics.tv_exact ? csv_number(*metrics.tv_exact) : "");
  cell(metrics.entropy ? csv_number(*metrics.entropy) : "");
  if (metrics.nfe) {
    cell(std::to_string(metrics.nfe->min));
    cell(std::to_string(metrics.nfe->max));
    cell(csv_number(metrics.nfe->mean));
    cell(std::to_string(metrics.nfe->total));
  } else {
    line += ",,,,";
  }
  cell(metrics.runtime_seconds ? csv_number(*metrics.runtime_seconds) : "");
  cell(std::to_string(metrics.fallback_served));
}

constexpr const char* kMetricColumns =
    "tv,tv_exact,entropy,nfe_min,nfe_max,nfe_mean,nfe_total,runtime_seconds,"
    "fallback_served";

}  // namespace

void ExperimentConfig::validate() const {
  if (space.d == 0) throw config_error("space needs at least one data token");
  if (space.positions == 0) {
    throw config_error("space needs at least one position");
  }
  source.validate(space);
  target.validate(space);
  coupling.validate(space, source);
  if (sampler.corrector) sampler.corrector->validate();
  if (sampler.temperature) sampler.temperature->validate();
  if (sampler.corrector_iterations) sampler.corrector_iterations->validate();
  if (sampler.conditioning) sampler.conditioning->validate(space);
  if (n_samples == 0) throw config_error("n_samples must be positive");

  const bool cap = within_oracle_cap(space);
  if (posterior.kind == PosteriorChoice::Kind::oracle) {
    if (target.kind != TargetSpec::Kind::explicit_pmf) {
      throw config_error(
          "the oracle posterior needs an explicit target distribution");
    }
    if (!cap) {
      throw config_error(
          "the oracle posterior needs a space small enough to enumerate");
    }
  }
  if (posterior.kind == PosteriorChoice::Kind::trained &&
      posterior.checkpoint.empty()) {
    throw config_error("a trained posterior needs a checkpoint path");
  }

  for (const std::string& name : metrics) {
    if (!known_metric(name)) throw config_error("unknown metric: " + name);
  }
  if (wants(metrics, "tv_exact") && !cap) {
    throw config_error(
        "the tv_exact metric needs a space small enough to enumerate");
  }
  if (wants(metrics, "tv") && sampler.direction == Direction::backward &&
      !cap && source.kind != SourceSpec::Kind::all_mask) {
    throw config_error(
        "the tv metric of a backward run needs an enumerable source law");
  }
}

BuiltPosterior build_posterior(const ExperimentConfig& config) {
  BuiltPosterior built;
  switch (config.posterior.kind) {
    case PosteriorChoice::Kind::oracle: {
      built.enumerated = std::make_unique<EnumeratedSpace>(config.space);
      built.coupling = std::make_unique<ExplicitCoupling>(ExplicitCoupling::of(
          *built.enumerated, config.coupling, config.source, config.target));
      built.provider = std::make_unique<OracleProvider>(
          *built.enumerated, *built.coupling, config.path);
      return built;
    }
    case PosteriorChoice::Kind::trained: {
      const Json doc =
          load_json_file(config.posterior.checkpoint, "posterior.checkpoint");
      auto table = checkpoint_from_json(doc, "posterior.checkpoint");
      if (!(table->space() == config.space)) {
        throw schema_error("posterior.checkpoint",
                           "checkpoint space differs from the experiment");
      }
      if (table->factor_count() != config.path.factor_count()) {
        throw schema_error("posterior.checkpoint",
                           "checkpoint factor count differs from the path");
      }
      built.table = table.get();
      built.provider = std::move(table);
      return built;
    }
    case PosteriorChoice::Kind::train_now: {
      const std::size_t bins =
          config.posterior.time_bins != 0
              ? config.posterior.time_bins
              : default_time_bins(config.space, config.source, config.coupling,
                                  config.path);
      auto table = std::make_unique<TabularPosterior>(
          config.space, config.path.factor_count(), bins);
      const bool masked_independent =
          config.source.kind == SourceSpec::Kind::all_mask &&
          config.coupling.kind == CouplingSpec::Kind::independent;
      for (std::size_t j = 0; j < config.path.factor_count(); ++j) {
        switch (config.path.factor(j)) {
          case ConditionalPath::FactorKind::uniform:
            table->set_constant_factor(j, config.path.uniform_pmf(config.space));
            break;
          case ConditionalPath::FactorKind::source_delta:
            if (masked_independent) {
              table->set_constant_factor(
                  j, delta_pmf(static_cast<TokenId>(config.space.d),
                               config.space.alphabet_size()));
            }
            break;
          case ConditionalPath::FactorKind::target_delta:
            break;
        }
      }
      built.train_report =
          train_tabular(*table, config.source, config.coupling, config.target,
                        config.path, config.posterior.train);
      built.table = table.get();
      built.provider = std::move(table);
      return built;
    }
    case PosteriorChoice::Kind::counts: {
      built.provider =
          std::make_unique<CountsPosterior>(empirical_posterior_estimate(
              config.space, config.source, config.coupling, config.target,
              config.path, config.posterior.estimator));
      return built;
    }
  }
  throw contract_error("unreachable posterior kind");
}

RunResult run_experiment(const ExperimentConfig& config,
                         const BuiltPosterior& posterior) {
  const auto start = std::chrono::steady_clock::now();
  RunResult result;
  result.train_report = posterior.train_report;

  SamplerConfig sampler_config = config.sampler;
  sampler_config.coupling = config.coupling;
  const bool backward = sampler_config.direction == Direction::backward;

  const std::uint64_t n = config.n_samples;
  result.samples.resize(n);
  result.nfe_per_chain.resize(n);

  auto run_range = [&](std::uint64_t lo, std::uint64_t hi) {
    Sampler sampler(config.space, config.path, config.source,
                    *posterior.provider, sampler_config);
    for (std::uint64_t c = lo; c < hi; ++c) {
      RngStream rng(config.seed, stream_id("chain", c));
      SampleResult sample;
      if (backward) {
        Sequence init = config.target.sample(rng);
        sample = sampler.run_chain(rng, std::move(init));
      } else {
        sample = sampler.run_chain(rng);
      }
      result.samples[c] = std::move(sample.final_state);
      result.nfe_per_chain[c] = sample.nfe;
    }
  };

  std::size_t workers =
      config.workers != 0
          ? config.workers
          : std::max<std::size_t>(
                1, std::min<std::size_t>(std::thread::hardware_concurrency(),
                                         8));
  workers = std::min<std::uint64_t>(workers, n);
  if (workers <= 1) {
    run_range(0, n);
  } else {
    const std::uint64_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    std::exception_ptr failure;
    std::mutex failure_mutex;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::uint64_t lo = w * chunk;
      const std::uint64_t hi = std::min<std::uint64_t>(n, lo + chunk);
      if (lo >= hi) break;
      pool.emplace_back([&, lo, hi] {
        try {
          run_range(lo, hi);
        } catch (...) {
          const std::lock_guard<std::mutex> hold(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      });
    }
    for (std::thread& worker : pool) worker.join();
    if (failure) std::rethrow_exception(failure);
  }

  if (posterior.table != nullptr) {
    result.metrics.fallback_served = posterior.table->fallback_served();
  }

  const std::vector<std::string> selected = select_metrics(config);

  const JointPMF reference = backward
                                 ? source_joint(config.space, config.source)
                                 : config.target.joint();
  if (wants(selected, "tv")) {
    result.metrics.tv = tv_to_target(result.samples, reference);
  }
  if (wants(selected, "tv_exact")) {
    const EnumeratedSpace* enumerated = posterior.enumerated.get();
    std::unique_ptr<EnumeratedSpace> local;
    if (enumerated == nullptr) {
      local = std::make_unique<EnumeratedSpace>(config.space);
      enumerated = local.get();
    }
    Sampler exact(config.space, config.path, config.source,
                  *posterior.provider, sampler_config);
    const DensePMF init =
        backward ? joint_to_dense(*enumerated, config.target.joint())
                 : source_law_dense(*enumerated, config.source);
    const DensePMF end_law = exact_chain_law(*enumerated, exact, init);
    result.metrics.tv_exact =
        dense_tv(end_law, joint_to_dense(*enumerated, reference));
  }
  if (wants(selected, "entropy")) {
    result.metrics.entropy = sequence_entropy(result.samples);
  }
  if (wants(selected, "nfe")) {
    result.metrics.nfe = nfe_stats(result.nfe_per_chain);
  }
  if (wants(selected, "runtime")) {
    result.metrics.runtime_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
  }
  return result;
}

void write_run_outputs(const ExperimentConfig& config,
                       const BuiltPosterior& posterior,
                       const RunResult& result) {
  const std::filesystem::path dir(config.output_dir);
  std::filesystem::create_directories(dir);

  write_text_file((dir / "report.json").string(),
                  render_json(run_report_to_json(config, result)));

  std::string samples;
  for (std::size_t c = 0; c < result.samples.size(); ++c) {
    samples += sample_line(c, result.samples[c], result.nfe_per_chain[c]);
    samples += '\n';
  }
  write_text_file((dir / "samples.jsonl").string(), samples);

  std::string summary = "metric,value\n";
  summary += "seed," + std::to_string(config.seed) + "\n";
  summary += "n_samples," + std::to_string(config.n_samples) + "\n";
  const RunMetricValues& m = result.metrics;
  if (m.tv) summary += "tv," + csv_number(*m.tv) + "\n";
  if (m.tv_exact) summary += "tv_exact," + csv_number(*m.tv_exact) + "\n";
  if (m.entropy) summary += "entropy," + csv_number(*m.entropy) + "\n";
  if (m.nfe) {
    summary += "nfe_min," + std::to_string(m.nfe->min) + "\n";
    summary += "nfe_max," + std::to_string(m.nfe->max) + "\n";
    summary += "nfe_mean," + csv_number(m.nfe->mean) + "\n";
    summary += "nfe_total," + std::to_string(m.nfe->total) + "\n";
  }
  if (m.runtime_seconds) {
    summary += "runtime_seconds," + csv_number(*m.runtime_seconds) + "\n";
  }
  summary += "fallback_served," + std::to_string(m.fallback_served) + "\n";
  write_text_file((dir / "summary.csv").string(), summary);

  if (result.train_report && posterior.table != nullptr) {
    write_text_file((dir / "checkpoint.json").string(),
                    render_json(checkpoint_to_json(*posterior.table)));
    std::string curve = "step,loss\n";
    for (const auto& [step, loss] : result.train_report->loss_history) {
      curve += std::to_string(step) + "," + csv_number(loss) + "\n";
    }
    write_text_file((dir / "loss_curve.csv").string(), curve);
  }
}

ExperimentConfig apply_sweep_value(const ExperimentConfig& config,
                                   const std::string& key, double value) {
  ExperimentConfig cell = config;
  if (key == "kappa.a" || key == "kappa.b") {
    const ScalarScheduler base = config.path.scheduler().base();
    if (base.kind() != ScalarScheduler::Kind::cubic_poly) {
      throw config_error(
          "sweeping kappa coefficients requires a cubic schedule");
    }
    const ScalarScheduler kappa =
        key == "kappa.a" ? ScalarScheduler::cubic_poly(value, base.b())
                         : ScalarScheduler::cubic_poly(base.a(), value);
    if (config.path.is_convex()) {
      cell.path = ConditionalPath::convex(kappa);
    } else if (config.path.scheduler().kind() ==
               MixtureScheduler::Kind::uniform_noise_triple) {
      cell.path = ConditionalPath::uniform_noise(
          kappa, config.path.scheduler().c(),
          config.path.include_mask_in_uniform());
    } else {
      throw config_error("sweeping kappa requires a catalog path");
    }
    return cell;
  }
  if (key == "corrector.alpha" || key == "corrector.a" ||
      key == "corrector.b") {
    CorrectorSchedule schedule =
        cell.sampler.corrector.value_or(CorrectorSchedule{});
    if (key == "corrector.alpha") schedule.alpha = value;
    if (key == "corrector.a") schedule.a = value;
    if (key == "corrector.b") schedule.b = value;
    schedule.validate();
    cell.sampler.corrector = schedule;
    return cell;
  }
  if (key == "temperature.tau") {
    TemperatureSchedule schedule =
        cell.sampler.temperature.value_or(TemperatureSchedule{});
    schedule.tau = value;
    schedule.validate();
    cell.sampler.temperature = schedule;
    return cell;
  }
  if (key == "n_steps") {
    if (value < 1.0 || value != std::floor(value)) {
      throw config_error("n_steps grid values must be positive integers");
    }
    cell.sampler.n_steps = static_cast<std::size_t>(value);
    return cell;
  }
  throw config_error("unknown sweep key: " + key);
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& config,
                                const std::vector<SweepAxis>& axes) {
  if (axes.empty()) throw config_error("a sweep needs at least one axis");
  std::uint64_t total = 1;
  for (const SweepAxis& axis : axes) {
    if (axis.values.empty()) {
      throw config_error("sweep axis " + axis.key + " has no values");
    }
    total *= axis.values.size();
  }

  std::vector<SweepRow> rows;
  rows.reserve(total);
  for (std::uint64_t cell = 0; cell < total; ++cell) {
    SweepRow row;
    row.cell = cell;

    std::uint64_t remainder = cell;
    row.values.resize(axes.size());
    for (std::size_t axis = axes.size(); axis-- > 0;) {
      const std::size_t pos = remainder % axes[axis].values.size();
      remainder /= axes[axis].values.size();
      row.values[axis] = axes[axis].values[pos];
    }

    row.seed = RngStream(config.seed, stream_id("sweep", cell)).next_u64();
    try {
      ExperimentConfig cell_config = config;
      for (std::size_t axis = 0; axis < axes.size(); ++axis) {
        cell_config =
            apply_sweep_value(cell_config, axes[axis].key, row.values[axis]);
      }
      cell_config.seed = row.seed;
      cell_config.validate();
      const BuiltPosterior posterior = build_posterior(cell_config);
      row.metrics = run_experiment(cell_config, posterior).metrics;
    } catch (const error& failure) {
      row.error = failure.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_sweep_csv(const ExperimentConfig& config,
                     const std::vector<SweepAxis>& axes,
                     const std::vector<SweepRow>& rows) {
  const std::filesystem::path dir(config.output_dir);
  std::filesystem::create_directories(dir);

  std::string csv;
  for (const SweepAxis& axis : axes) {
    csv += csv_escape(axis.key);
    csv += ',';
  }
  csv += "seed,";
  csv += kMetricColumns;
  csv += ",error\n";

  for (const SweepRow& row : rows) {
    std::string line;
    for (double value : row.values) {
      line += csv_number(value);
      line += ',';
    }
    line += std::to_string(row.seed);
    append_metric_columns(line, row.metrics);
    line += ',';
    line += csv_escape(row.error);
    csv += line;
    csv += '\n';
  }
  write_text_file((dir / "summary.csv").string(), csv);
}

}  // namespace dfm

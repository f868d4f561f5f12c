#include "dfm/serialize.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>

namespace dfm {

namespace {

std::string join(const std::string& at, const std::string& key) {
  return at.empty() ? key : at + "." + key;
}

std::string indexed(const std::string& at, std::size_t i) {
  return at + "[" + std::to_string(i) + "]";
}

const Json& need_object(const Json& j, const std::string& at) {
  if (!j.is_object()) throw schema_error(at, "expected an object");
  return j;
}

const Json& need_array(const Json& j, const std::string& at) {
  if (!j.is_array()) throw schema_error(at, "expected an array");
  return j;
}

void check_keys(const Json& j, const std::string& at,
                std::initializer_list<const char*> allowed) {
  need_object(j, at);
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* k : allowed) {
      if (key == k) {
        known = true;
        break;
      }
    }
    if (!known) throw schema_error(join(at, key), "unknown field");
  }
}

const Json* find(const Json& j, const std::string& at, const char* key) {
  need_object(j, at);
  auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

const Json& need(const Json& j, const std::string& at, const char* key) {
  const Json* found = find(j, at, key);
  if (found == nullptr) throw schema_error(join(at, key), "missing field");
  return *found;
}

double as_double(const Json& j, const std::string& at) {
  if (!j.is_number()) throw schema_error(at, "expected a number");
  return j.get<double>();
}

std::uint64_t as_u64(const Json& j, const std::string& at) {
  if (!j.is_number_integer() && !j.is_number_unsigned()) {
    throw schema_error(at, "expected a non-negative integer");
  }
  if (j.is_number_integer() && j.get<std::int64_t>() < 0) {
    throw schema_error(at, "expected a non-negative integer");
  }
  return j.get<std::uint64_t>();
}

bool as_bool(const Json& j, const std::string& at) {
  if (!j.is_boolean()) throw schema_error(at, "expected a boolean");
  return j.get<bool>();
}

std::string as_string(const Json& j, const std::string& at) {
  if (!j.is_string()) throw schema_error(at, "expected a string");
  return j.get<std::string>();
}

double field_double(const Json& j, const std::string& at, const char* key) {
  return as_double(need(j, at, key), join(at, key));
}

std::uint64_t field_u64(const Json& j, const std::string& at, const char* key) {
  return as_u64(need(j, at, key), join(at, key));
}

double opt_double(const Json& j, const std::string& at, const char* key,
                  double fallback) {
  const Json* found = find(j, at, key);
  return found ? as_double(*found, join(at, key)) : fallback;
}

std::uint64_t opt_u64(const Json& j, const std::string& at, const char* key,
                      std::uint64_t fallback) {
  const Json* found = find(j, at, key);
  return found ? as_u64(*found, join(at, key)) : fallback;
}

bool opt_bool(const Json& j, const std::string& at, const char* key,
              bool fallback) {
  const Json* found = find(j, at, key);
  return found ? as_bool(*found, join(at, key)) : fallback;
}

std::string opt_string(const Json& j, const std::string& at, const char* key,
                       const std::string& fallback) {
  const Json* found = find(j, at, key);
  return found ? as_string(*found, join(at, key)) : fallback;
}

TokenPMF pmf_from_json(const Json& j, const std::string& at) {
  need_array(j, at);
  TokenPMF pmf;
  for (std::size_t i = 0; i < j.size(); ++i) {
    pmf.p.push_back(as_double(j[i], indexed(at, i)));
  }
  return pmf;
}

Json pmf_to_json(const TokenPMF& pmf) { return Json(pmf.p); }

Sequence sequence_from_json(const Json& j, const std::string& at) {
  need_array(j, at);
  Sequence s;
  for (std::size_t i = 0; i < j.size(); ++i) {
    s.tokens.push_back(
        static_cast<TokenId>(as_u64(j[i], indexed(at, i))));
  }
  return s;
}

Json sequence_to_json(const Sequence& s) { return Json(s.tokens); }

Json nfe_to_json(const NfeStats& stats) {
  return Json{{"min", stats.min},
              {"max", stats.max},
              {"mean", stats.mean},
              {"total", stats.total}};
}

NfeStats nfe_from_json(const Json& j, const std::string& at) {
  check_keys(j, at, {"min", "max", "mean", "total"});
  NfeStats stats;
  stats.min = field_u64(j, at, "min");
  stats.max = field_u64(j, at, "max");
  stats.mean = field_double(j, at, "mean");
  stats.total = field_u64(j, at, "total");
  return stats;
}

}  // namespace

Json space_to_json(const SpaceSpec& space) {
  return Json{{"d", space.d},
              {"mask", space.has_mask},
              {"positions", space.positions}};
}

SpaceSpec space_from_json(const Json& j, const std::string& at) {
  check_keys(j, at, {"d", "mask", "positions"});
  SpaceSpec space;
  space.d = static_cast<std::uint32_t>(field_u64(j, at, "d"));
  space.has_mask = as_bool(need(j, at, "mask"), join(at, "mask"));
  space.positions = field_u64(j, at, "positions");
  return space;
}

Json source_to_json(const SourceSpec& source) {
  switch (source.kind) {
    case SourceSpec::Kind::all_mask:
      return Json{{"kind", "all_mask"}};
    case SourceSpec::Kind::uniform:
      return Json{{"kind", "uniform"}, {"include_mask", source.include_mask}};
    case SourceSpec::Kind::iid_custom:
      return Json{{"kind", "iid_custom"}, {"pmf", pmf_to_json(source.custom)}};
  }
  throw contract_error("unreachable source kind");
}

SourceSpec source_from_json(const Json& j, const std::string& at) {
  check_keys(j, at, {"kind", "include_mask", "pmf"});
  const std::string kind = as_string(need(j, at, "kind"), join(at, "kind"));
  if (kind == "all_mask") return SourceSpec::all_mask();
  if (kind == "uniform") {
    return SourceSpec::uniform(opt_bool(j, at, "include_mask", false));
  }
  if (kind == "iid_custom") {
    return SourceSpec::iid_custom(
        pmf_from_json(need(j, at, "pmf"), join(at, "pmf")));
  }
  throw schema_error(join(at, "kind"),
                     "expected all_mask, uniform, or iid_custom");
}

Json target_to_json(const TargetSpec& target) {
  if (target.kind == TargetSpec::Kind::explicit_pmf) {
    Json entries = Json::array();
    for (const auto& [x, p] : target.q.mass) {
      entries.push_back(Json{{"x", sequence_to_json(x)}, {"p", p}});
    }
    return Json{{"kind", "explicit"}, {"pmf", entries}};
  }
  Json rows = Json::array();
  for (const Sequence& s : target.data) rows.push_back(sequence_to_json(s));
  return Json{{"kind", "dataset"}, {"sequences", rows}};
}

TargetSpec target_from_json(const Json& j, const std::string& at) {
  check_keys(j, at, {"kind", "pmf", "sequences"});
  const std::string kind = as_string(need(j, at, "kind"), join(at, "kind"));
  if (kind == "explicit") {
    const Json& entries = need_array(need(j, at, "pmf"), join(at, "pmf"));
    JointPMF q;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const std::string row_at = indexed(join(at, "pmf"), i);
      check_keys(entries[i], row_at, {"x", "p"});
      const Sequence x =
          sequence_from_json(need(entries[i], row_at, "x"), join(row_at, "x"));
      if (q.mass.count(x) != 0) throw schema_error(row_at, "duplicate state");
      q[x] = field_double(entries[i], row_at, "p");
    }
    return TargetSpec::explicit_pmf(std::move(q));
  }
  if (kind == "dataset") {
    const Json& rows =
        need_array(need(j, at, "sequences"), join(at, "sequences"));
    std::vector<Sequence> data;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      data.push_back(
          sequence_from_json(rows[i], indexed(join(at, "sequences"), i)));
    }
    return TargetSpec::dataset(std::move(data));
  }
  throw schema_error(join(at, "kind"), "expected explicit or dataset");
}

Json coupling_to_json(const CouplingSpec& coupling) {
  return Json{{"kind", coupling.kind == CouplingSpec::Kind::independent
                           ? "independent"
                           : "conditional_prefix"}};
}

CouplingSpec coupling_from_json(const Json& j, const std::string& at) {
  check_keys(j, at, {"kind"});
  const std::string kind = as_string(need(j, at, "kind"), join(at, "kind"));
  CouplingSpec coupling;
  if (kind == "independent") {
    coupling.kind = CouplingSpec::Kind::independent;
  } else if (kind == "conditional_prefix") {
    coupling.kind = CouplingSpec::Kind::conditional_prefix;
  } else {
    throw schema_error(join(at, "kind"),
                       "expected independent or conditional_prefix");
  }
  return coupling;
}

Json scheduler_to_json(const ScalarScheduler& kappa) {
  switch (kappa.kind()) {
    case ScalarScheduler::Kind::linear:
      return Json{{"kind", "linear"}};
    case ScalarScheduler::Kind::cubic_poly:
      return Json{{"kind", "cubic"}, {"a", kappa.a()}, {"b", kappa.b()}};
    case ScalarScheduler::Kind::cosine:
      return Json{{"kind", "cosine"}};
  }
  throw contract_error("unreachable scheduler kind");
}

ScalarScheduler scheduler_from_json(const Json& j, const std::string& at) {
  check_keys(j, at, {"kind", "a", "b"});
  const std::string kind = as_string(need(j, at, "kind"), join(at, "kind"));
  if (kind == "linear") return ScalarScheduler::linear();
  if (kind == "cosine") return ScalarScheduler::cosine();
  if (kind == "cubic") {
    return ScalarScheduler::cubic_poly(field_double(j, at, "a"),
                                       field_double(j, at, "b"));
  }
  throw schema_error(join(at, "kind"), "expected linear, cubic, or cosine");
}

Json path_to_json(const ConditionalPath& path) {
  Json kappa = scheduler_to_json(path.scheduler().base());
  if (path.is_convex()) {
    return Json{{"kind", "convex"}, {"kappa", std::move(kappa)}};
  }
  if (path.scheduler().kind() == MixtureScheduler::Kind::uniform_noise_triple) {
    return Json{{"kind", "uniform_noise"},
                {"kappa", std::move(kappa)},
                {"c", path.scheduler().c()},
                {"include_mask", path.include_mask_in_uniform()}};
  }
  throw contract_error("only catalog paths serialize");
}

ConditionalPath path_from_json(const Json& j, const std::string& at) {
  check_keys(j, at, {"kind", "kappa", "c", "include_mask"});
  const std::string kind = as_string(need(j, at, "kind"), join(at, "kind"));
  const ScalarScheduler kappa =
      scheduler_from_json(need(j, at, "kappa"), join(at, "kappa"));
  if (kind == "convex") return ConditionalPath::convex(kappa);
  if (kind == "uniform_noise") {
    return ConditionalPath::uniform_noise(kappa, field_double(j, at, "c"),
                                          opt_bool(j, at, "include_mask",
                                                   false));
  }
  throw schema_error(join(at, "kind"), "expected convex or uniform_noise");
}

Json sampler_to_json(const SamplerConfig& config) {
  Json j{{"direction",
          config.direction == Direction::forward ? "forward" : "backward"},
         {"n_steps", config.n_steps},
         {"adaptive", config.adaptive},
         {"backward_kind", config.backward_kind == BackwardKind::posterior
                               ? "posterior"
                               : "simple"}};
  if (config.corrector) {
    j["corrector"] = Json{{"alpha", config.corrector->alpha},
                          {"a", config.corrector->a},
                          {"b", config.corrector->b}};
  }
  if (config.temperature) {
    j["temperature"] = Json{{"tau", config.temperature->tau},
                            {"decay", config.temperature->decay}};
  }
  if (config.corrector_iterations) {
    j["corrector_iterations"] =
        Json{{"t_fixed", config.corrector_iterations->t_fixed},
             {"iterations", config.corrector_iterations->iterations},
             {"step_scale", config.corrector_iterations->step_scale}};
  }
  if (config.conditioning) {
    Json pins = Json::array();
    for (const auto& [position, token] : config.conditioning->fixed) {
      pins.push_back(Json{{"position", position}, {"token", token}});
    }
    j["conditioning"] = std::move(pins);
  }
  if (config.record_trajectory) j["record_trajectory"] = true;
  return j;
}

SamplerConfig sampler_from_json(const Json& j, const std::string& at) {
  check_keys(j, at,
             {"direction", "n_steps", "adaptive", "backward_kind", "corrector",
              "temperature", "corrector_iterations", "conditioning",
              "record_trajectory", "max_plan_steps"});
  SamplerConfig config;
  const std::string direction = opt_string(j, at, "direction", "forward");
  if (direction == "forward") {
    config.direction = Direction::forward;
  } else if (direction == "backward") {
    config.direction = Direction::backward;
  } else {
    throw schema_error(join(at, "direction"), "expected forward or backward");
  }
  config.n_steps = static_cast<std::size_t>(opt_u64(j, at, "n_steps", 128));
  config.adaptive = opt_bool(j, at, "adaptive", true);
  const std::string backward = opt_string(j, at, "backward_kind", "posterior");
  if (backward == "posterior") {
    config.backward_kind = BackwardKind::posterior;
  } else if (backward == "simple") {
    config.backward_kind = BackwardKind::simple;
  } else {
    throw schema_error(join(at, "backward_kind"),
                       "expected posterior or simple");
  }
  if (const Json* corrector = find(j, at, "corrector")) {
    const std::string c_at = join(at, "corrector");
    check_keys(*corrector, c_at, {"alpha", "a", "b"});
    CorrectorSchedule schedule;
    schedule.alpha = opt_double(*corrector, c_at, "alpha", schedule.alpha);
    schedule.a = opt_double(*corrector, c_at, "a", schedule.a);
    schedule.b = opt_double(*corrector, c_at, "b", schedule.b);
    config.corrector = schedule;
  }
  if (const Json* temperature = find(j, at, "temperature")) {
    const std::string t_at = join(at, "temperature");
    check_keys(*temperature, t_at, {"tau", "decay"});
    TemperatureSchedule schedule;
    schedule.tau = field_double(*temperature, t_at, "tau");
    schedule.decay = opt_bool(*temperature, t_at, "decay", false);
    config.temperature = schedule;
  }
  if (const Json* iterations = find(j, at, "corrector_iterations")) {
    const std::string i_at = join(at, "corrector_iterations");
    check_keys(*iterations, i_at, {"t_fixed", "iterations", "step_scale"});
    CorrectorIterationSpec spec;
    spec.t_fixed = opt_double(*iterations, i_at, "t_fixed", spec.t_fixed);
    spec.iterations = static_cast<std::size_t>(
        opt_u64(*iterations, i_at, "iterations", spec.iterations));
    spec.step_scale = opt_double(*iterations, i_at, "step_scale",
                                 spec.step_scale);
    config.corrector_iterations = spec;
  }
  if (const Json* conditioning = find(j, at, "conditioning")) {
    const std::string c_at = join(at, "conditioning");
    need_array(*conditioning, c_at);
    ConditioningSpec spec;
    for (std::size_t i = 0; i < conditioning->size(); ++i) {
      const std::string pin_at = indexed(c_at, i);
      check_keys((*conditioning)[i], pin_at, {"position", "token"});
      const auto position = static_cast<std::size_t>(
          field_u64((*conditioning)[i], pin_at, "position"));
      const auto token = static_cast<TokenId>(
          field_u64((*conditioning)[i], pin_at, "token"));
      if (spec.fixed.count(position) != 0) {
        throw schema_error(pin_at, "duplicate position");
      }
      spec.fixed[position] = token;
    }
    config.conditioning = spec;
  }
  config.record_trajectory = opt_bool(j, at, "record_trajectory", false);
  config.max_plan_steps = static_cast<std::size_t>(
      opt_u64(j, at, "max_plan_steps", config.max_plan_steps));
  return config;
}

Json train_to_json(const TrainConfig& config) {
  Json time_dist{{"kind", config.time_dist.kind == TimeDistribution::Kind::uniform
                              ? "uniform"
                              : "power"}};
  if (config.time_dist.kind == TimeDistribution::Kind::power) {
    time_dist["gamma"] = config.time_dist.gamma;
  }
  return Json{{"steps", config.steps},
              {"batch_size", config.batch_size},
              {"learning_rate", config.learning_rate},
              {"time_dist", std::move(time_dist)},
              {"seed", config.seed},
              {"divergence_factor", config.divergence_factor},
              {"log_every", config.log_every}};
}

TrainConfig train_from_json(const Json& j, const std::string& at) {
  check_keys(j, at,
             {"steps", "batch_size", "learning_rate", "time_dist", "seed",
              "divergence_factor", "log_every"});
  TrainConfig config;
  config.steps = static_cast<std::size_t>(opt_u64(j, at, "steps", config.steps));
  config.batch_size = static_cast<std::size_t>(
      opt_u64(j, at, "batch_size", config.batch_size));
  config.learning_rate =
      opt_double(j, at, "learning_rate", config.learning_rate);
  if (const Json* time_dist = find(j, at, "time_dist")) {
    const std::string t_at = join(at, "time_dist");
    check_keys(*time_dist, t_at, {"kind", "gamma"});
    const std::string kind =
        as_string(need(*time_dist, t_at, "kind"), join(t_at, "kind"));
    if (kind == "uniform") {
      config.time_dist.kind = TimeDistribution::Kind::uniform;
    } else if (kind == "power") {
      config.time_dist.kind = TimeDistribution::Kind::power;
      config.time_dist.gamma = opt_double(*time_dist, t_at, "gamma", 1.0);
    } else {
      throw schema_error(join(t_at, "kind"), "expected uniform or power");
    }
  }
  config.seed = opt_u64(j, at, "seed", config.seed);
  config.divergence_factor =
      opt_double(j, at, "divergence_factor", config.divergence_factor);
  config.log_every = static_cast<std::size_t>(
      opt_u64(j, at, "log_every", config.log_every));
  return config;
}

Json estimator_to_json(const EstimatorConfig& config) {
  return Json{{"min_cell_count", config.min_cell_count},
              {"max_samples", config.max_samples},
              {"round_size", config.round_size},
              {"lambda", config.lambda},
              {"seed", config.seed}};
}

EstimatorConfig estimator_from_json(const Json& j, const std::string& at) {
  check_keys(j, at,
             {"min_cell_count", "max_samples", "round_size", "lambda", "seed"});
  EstimatorConfig config;
  config.min_cell_count =
      opt_u64(j, at, "min_cell_count", config.min_cell_count);
  config.max_samples = opt_u64(j, at, "max_samples", config.max_samples);
  config.round_size = opt_u64(j, at, "round_size", config.round_size);
  config.lambda = opt_double(j, at, "lambda", config.lambda);
  config.seed = opt_u64(j, at, "seed", config.seed);
  return config;
}

Json posterior_to_json(const PosteriorChoice& choice) {
  switch (choice.kind) {
    case PosteriorChoice::Kind::oracle:
      return Json{{"kind", "oracle"}};
    case PosteriorChoice::Kind::trained:
      return Json{{"kind", "trained"}, {"checkpoint", choice.checkpoint}};
    case PosteriorChoice::Kind::train_now:
      return Json{{"kind", "train_now"},
                  {"train", train_to_json(choice.train)},
                  {"time_bins", choice.time_bins}};
    case PosteriorChoice::Kind::counts:
      return Json{{"kind", "counts"},
                  {"estimator", estimator_to_json(choice.estimator)}};
  }
  throw contract_error("unreachable posterior kind");
}

PosteriorChoice posterior_from_json(const Json& j, const std::string& at) {
  check_keys(j, at, {"kind", "checkpoint", "train", "time_bins", "estimator"});
  PosteriorChoice choice;
  const std::string kind = as_string(need(j, at, "kind"), join(at, "kind"));
  if (kind == "oracle") {
    choice.kind = PosteriorChoice::Kind::oracle;
  } else if (kind == "trained") {
    choice.kind = PosteriorChoice::Kind::trained;
    choice.checkpoint =
        as_string(need(j, at, "checkpoint"), join(at, "checkpoint"));
  } else if (kind == "train_now") {
    choice.kind = PosteriorChoice::Kind::train_now;
    if (const Json* train = find(j, at, "train")) {
      choice.train = train_from_json(*train, join(at, "train"));
    }
    choice.time_bins =
        static_cast<std::size_t>(opt_u64(j, at, "time_bins", 0));
  } else if (kind == "counts") {
    choice.kind = PosteriorChoice::Kind::counts;
    if (const Json* estimator = find(j, at, "estimator")) {
      choice.estimator = estimator_from_json(*estimator, join(at, "estimator"));
    }
  } else {
    throw schema_error(join(at, "kind"),
                       "expected oracle, trained, train_now, or counts");
  }
  return choice;
}

Json experiment_to_json(const ExperimentConfig& config) {
  Json j{{"space", space_to_json(config.space)},
         {"source", source_to_json(config.source)},
         {"target", target_to_json(config.target)},
         {"coupling", coupling_to_json(config.coupling)},
         {"path", path_to_json(config.path)},
         {"posterior", posterior_to_json(config.posterior)},
         {"sampler", sampler_to_json(config.sampler)},
         {"n_samples", config.n_samples},
         {"output_dir", config.output_dir},
         {"seed", config.seed}};
  if (!config.metrics.empty()) j["metrics"] = config.metrics;
  if (config.workers != 0) j["workers"] = config.workers;
  if (config.verify.checks || config.verify.kappa_dot_scale != 1.0) {
    Json v = Json::object();
    if (config.verify.checks) v["checks"] = *config.verify.checks;
    if (config.verify.kappa_dot_scale != 1.0) {
      v["kappa_dot_scale"] = config.verify.kappa_dot_scale;
    }
    j["verify"] = std::move(v);
  }
  return j;
}

ExperimentConfig experiment_from_json(const Json& j) {
  check_keys(j, "",
             {"space", "source", "target", "coupling", "path", "posterior",
              "sampler", "metrics", "n_samples", "output_dir", "seed",
              "workers", "verify"});
  ExperimentConfig config;
  config.space = space_from_json(need(j, "", "space"), "space");
  config.source = source_from_json(need(j, "", "source"), "source");
  config.target = target_from_json(need(j, "", "target"), "target");
  if (const Json* coupling = find(j, "", "coupling")) {
    config.coupling = coupling_from_json(*coupling, "coupling");
  }
  config.path = path_from_json(need(j, "", "path"), "path");
  if (const Json* posterior = find(j, "", "posterior")) {
    config.posterior = posterior_from_json(*posterior, "posterior");
  }
  if (const Json* sampler = find(j, "", "sampler")) {
    config.sampler = sampler_from_json(*sampler, "sampler");
  }
  if (const Json* metrics = find(j, "", "metrics")) {
    need_array(*metrics, "metrics");
    for (std::size_t i = 0; i < metrics->size(); ++i) {
      config.metrics.push_back(
          as_string((*metrics)[i], indexed("metrics", i)));
    }
  }
  config.n_samples = opt_u64(j, "", "n_samples", config.n_samples);
  config.output_dir = opt_string(j, "", "output_dir", config.output_dir);
  config.seed = opt_u64(j, "", "seed", config.seed);
  config.workers =
      static_cast<std::size_t>(opt_u64(j, "", "workers", config.workers));
  if (const Json* verify = find(j, "", "verify")) {
    check_keys(*verify, "verify", {"checks", "kappa_dot_scale"});
    if (const Json* checks = find(*verify, "verify", "checks")) {
      need_array(*checks, "verify.checks");
      std::vector<std::string> names;
      for (std::size_t i = 0; i < checks->size(); ++i) {
        names.push_back(
            as_string((*checks)[i], indexed("verify.checks", i)));
      }
      config.verify.checks = std::move(names);
    }
    config.verify.kappa_dot_scale =
        opt_double(*verify, "verify", "kappa_dot_scale", 1.0);
  }
  config.validate();
  return config;
}

Json checkpoint_to_json(const TabularPosterior& model) {
  Json entries = Json::array();
  for (const auto& [key, logits] : model.cells()) {
    entries.push_back(Json{{"factor", key.factor},
                           {"i", key.position},
                           {"bin", key.bin},
                           {"z", sequence_to_json(key.state)},
                           {"logits", logits}});
  }
  Json constants = Json::array();
  for (std::size_t factor = 0; factor < model.factor_count(); ++factor) {
    if (model.is_constant(factor)) {
      constants.push_back(Json{
          {"factor", factor}, {"pmf", pmf_to_json(model.constant_factor(factor))}});
    }
  }
  Json priors = Json::array();
  for (const auto& [key, counts] : model.priors()) {
    priors.push_back(Json{{"factor", std::get<0>(key)},
                          {"i", std::get<1>(key)},
                          {"bin", std::get<2>(key)},
                          {"counts", counts}});
  }
  return Json{{"space", space_to_json(model.space())},
              {"factors", model.factor_count()},
              {"bins", model.time_bins()},
              {"entries", std::move(entries)},
              {"constants", std::move(constants)},
              {"priors", std::move(priors)}};
}

std::unique_ptr<TabularPosterior> checkpoint_from_json(const Json& j,
                                                       const std::string& at) {
  check_keys(j, at,
             {"space", "factors", "bins", "entries", "constants", "priors"});
  const SpaceSpec space =
      space_from_json(need(j, at, "space"), join(at, "space"));
  const auto factors = static_cast<std::size_t>(field_u64(j, at, "factors"));
  const auto bins = static_cast<std::size_t>(field_u64(j, at, "bins"));
  auto model = std::make_unique<TabularPosterior>(space, factors, bins);

  const Json& entries = need_array(need(j, at, "entries"), join(at, "entries"));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const std::string e_at = indexed(join(at, "entries"), i);
    check_keys(entries[i], e_at, {"factor", "i", "bin", "z", "logits"});
    TabularPosterior::CellKey key;
    key.factor = static_cast<std::size_t>(field_u64(entries[i], e_at, "factor"));
    key.position = static_cast<std::size_t>(field_u64(entries[i], e_at, "i"));
    key.bin = static_cast<std::size_t>(field_u64(entries[i], e_at, "bin"));
    key.state = sequence_from_json(need(entries[i], e_at, "z"), join(e_at, "z"));
    const Json& logits = need_array(need(entries[i], e_at, "logits"),
                                    join(e_at, "logits"));
    if (logits.size() != space.alphabet_size()) {
      throw schema_error(join(e_at, "logits"), "wrong alphabet size");
    }
    std::vector<double>& cell = model->mutable_cell(key);
    for (std::size_t k = 0; k < logits.size(); ++k) {
      cell[k] = as_double(logits[k], indexed(join(e_at, "logits"), k));
    }
  }

  if (const Json* constants = find(j, at, "constants")) {
    need_array(*constants, join(at, "constants"));
    for (std::size_t i = 0; i < constants->size(); ++i) {
      const std::string c_at = indexed(join(at, "constants"), i);
      check_keys((*constants)[i], c_at, {"factor", "pmf"});
      model->set_constant_factor(
          static_cast<std::size_t>(field_u64((*constants)[i], c_at, "factor")),
          pmf_from_json(need((*constants)[i], c_at, "pmf"), join(c_at, "pmf")));
    }
  }

  if (const Json* priors = find(j, at, "priors")) {
    need_array(*priors, join(at, "priors"));
    for (std::size_t i = 0; i < priors->size(); ++i) {
      const std::string p_at = indexed(join(at, "priors"), i);
      check_keys((*priors)[i], p_at, {"factor", "i", "bin", "counts"});
      const Json& counts =
          need_array(need((*priors)[i], p_at, "counts"), join(p_at, "counts"));
      std::vector<std::uint64_t> values;
      for (std::size_t k = 0; k < counts.size(); ++k) {
        values.push_back(as_u64(counts[k], indexed(join(p_at, "counts"), k)));
      }
      model->set_prior(
          {static_cast<std::size_t>(field_u64((*priors)[i], p_at, "factor")),
           static_cast<std::size_t>(field_u64((*priors)[i], p_at, "i")),
           static_cast<std::size_t>(field_u64((*priors)[i], p_at, "bin"))},
          std::move(values));
    }
  }
  return model;
}

Json run_report_to_json(const ExperimentConfig& config,
                        const RunResult& result) {
  Json metrics = Json::object();
  if (result.metrics.tv) metrics["tv"] = *result.metrics.tv;
  if (result.metrics.tv_exact) metrics["tv_exact"] = *result.metrics.tv_exact;
  if (result.metrics.entropy) metrics["entropy"] = *result.metrics.entropy;
  if (result.metrics.nfe) metrics["nfe"] = nfe_to_json(*result.metrics.nfe);
  if (result.metrics.runtime_seconds) {
    metrics["runtime_seconds"] = *result.metrics.runtime_seconds;
  }
  metrics["fallback_served"] = result.metrics.fallback_served;

  Json j{{"seed", config.seed},
         {"n_samples", config.n_samples},
         {"direction", config.sampler.direction == Direction::forward
                           ? "forward"
                           : "backward"},
         {"metrics", std::move(metrics)}};
  if (result.train_report) {
    j["train"] = Json{{"initial_loss", result.train_report->initial_loss},
                      {"final_loss", result.train_report->final_loss},
                      {"steps_run", result.train_report->steps_run}};
  }
  return j;
}

ParsedRunReport run_report_from_json(const Json& j) {
  check_keys(j, "", {"seed", "n_samples", "direction", "metrics", "train"});
  ParsedRunReport report;
  report.seed = field_u64(j, "", "seed");
  report.n_samples = field_u64(j, "", "n_samples");
  const Json& metrics = need(j, "", "metrics");
  check_keys(metrics, "metrics",
             {"tv", "tv_exact", "entropy", "nfe", "runtime_seconds",
              "fallback_served"});
  if (const Json* tv = find(metrics, "metrics", "tv")) {
    report.metrics.tv = as_double(*tv, "metrics.tv");
  }
  if (const Json* tv = find(metrics, "metrics", "tv_exact")) {
    report.metrics.tv_exact = as_double(*tv, "metrics.tv_exact");
  }
  if (const Json* entropy = find(metrics, "metrics", "entropy")) {
    report.metrics.entropy = as_double(*entropy, "metrics.entropy");
  }
  if (const Json* nfe = find(metrics, "metrics", "nfe")) {
    report.metrics.nfe = nfe_from_json(*nfe, "metrics.nfe");
  }
  if (const Json* runtime = find(metrics, "metrics", "runtime_seconds")) {
    report.metrics.runtime_seconds =
        as_double(*runtime, "metrics.runtime_seconds");
  }
  report.metrics.fallback_served =
      opt_u64(metrics, "metrics", "fallback_served", 0);
  if (const Json* train = find(j, "", "train")) {
    check_keys(*train, "train", {"initial_loss", "final_loss", "steps_run"});
    TrainReport summary;
    summary.initial_loss = field_double(*train, "train", "initial_loss");
    summary.final_loss = field_double(*train, "train", "final_loss");
    summary.steps_run =
        static_cast<std::size_t>(field_u64(*train, "train", "steps_run"));
    report.train_report = std::move(summary);
  }
  return report;
}

Json check_results_to_json(const std::vector<CheckResult>& results) {
  Json rows = Json::array();
  for (const CheckResult& r : results) {
    rows.push_back(Json{{"name", r.name},
                        {"passed", r.passed},
                        {"residual", r.residual},
                        {"tolerance", r.tolerance},
                        {"detail", r.detail}});
  }
  return Json{{"checks", std::move(rows)}};
}

std::vector<SweepAxis> axes_from_json(const Json& j, const std::string& at) {
  check_keys(j, at, {"axes"});
  const Json& axes = need_array(need(j, at, "axes"), join(at, "axes"));
  if (axes.empty()) throw schema_error(join(at, "axes"), "expected axes");
  std::vector<SweepAxis> result;
  for (std::size_t i = 0; i < axes.size(); ++i) {
    const std::string a_at = indexed(join(at, "axes"), i);
    check_keys(axes[i], a_at, {"key", "values"});
    SweepAxis axis;
    axis.key = as_string(need(axes[i], a_at, "key"), join(a_at, "key"));
    const Json& values =
        need_array(need(axes[i], a_at, "values"), join(a_at, "values"));
    if (values.empty()) throw schema_error(join(a_at, "values"), "empty axis");
    for (std::size_t k = 0; k < values.size(); ++k) {
      axis.values.push_back(
          as_double(values[k], indexed(join(a_at, "values"), k)));
    }
    result.push_back(std::move(axis));
  }
  return result;
}

std::string sample_line(std::size_t chain, const Sequence& tokens,
                        std::uint64_t nfe) {
  return Json{{"chain", chain}, {"nfe", nfe}, {"tokens", tokens.tokens}}.dump();
}

std::vector<Sequence> read_samples_jsonl(const std::string& file) {
  std::ifstream in(file);
  if (!in) throw data_error("cannot open sample dump: " + file);
  std::vector<Sequence> samples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const Json j = Json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("tokens")) {
      throw data_error(file + ":" + std::to_string(line_no) +
                       ": expected a JSON object with a tokens array");
    }
    samples.push_back(
        sequence_from_json(j["tokens"], indexed("tokens@line", line_no)));
  }
  return samples;
}

void apply_override(Json& doc, const std::string& dotted,
                    const std::string& value) {
  if (dotted.empty()) throw schema_error(dotted, "empty override path");
  std::vector<std::string> parts;
  std::stringstream stream(dotted);
  std::string part;
  while (std::getline(stream, part, '.')) parts.push_back(part);

  Json* node = &doc;
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    const std::string& key = parts[i];
    if (node->is_array()) {
      std::size_t index = 0;
      try {
        index = std::stoul(key);
      } catch (const std::exception&) {
        throw schema_error(dotted, "array index expected at '" + key + "'");
      }
      if (index >= node->size()) {
        throw schema_error(dotted, "array index out of range at '" + key + "'");
      }
      node = &(*node)[index];
    } else if (node->is_object() || node->is_null()) {
      node = &(*node)[key];
    } else {
      throw schema_error(dotted, "cannot descend through a scalar at '" +
                                     key + "'");
    }
  }

  Json parsed = Json::parse(value, nullptr, false);
  if (parsed.is_discarded()) parsed = value;
  const std::string& leaf = parts.back();
  if (node->is_array()) {
    std::size_t index = 0;
    try {
      index = std::stoul(leaf);
    } catch (const std::exception&) {
      throw schema_error(dotted, "array index expected at '" + leaf + "'");
    }
    if (index >= node->size()) {
      throw schema_error(dotted, "array index out of range at '" + leaf + "'");
    }
    (*node)[index] = std::move(parsed);
  } else if (node->is_object() || node->is_null()) {
    (*node)[leaf] = std::move(parsed);
  } else {
    throw schema_error(dotted,
                       "cannot descend through a scalar at '" + leaf + "'");
  }
}

Json parse_json_text(const std::string& text, const std::string& what) {
  const Json j = Json::parse(text, nullptr, false);
  if (j.is_discarded()) throw data_error(what + ": invalid JSON");
  return j;
}

Json load_json_file(const std::string& file, const std::string& at) {
  std::ifstream in(file);
  if (!in) throw schema_error(at, "cannot open file: " + file);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_json_text(buffer.str(), file);
}

void write_text_file(const std::string& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw data_error("cannot write file: " + file);
  out << text;
  if (!out) throw data_error("failed writing file: " + file);
}

std::string render_json(const Json& j) { return j.dump(2) + "\n"; }

}  // namespace dfm

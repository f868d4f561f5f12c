#include "dfm/verify.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <utility>

#include "dfm/oracle.hpp"
#include "dfm/rng.hpp"
#include "dfm/sampler.hpp"
#include "dfm/trainer.hpp"
#include "dfm/velocities.hpp"

namespace dfm {

namespace {

constexpr double kContinuityTol = 1e-6;
constexpr double kExactTol = 1e-12;
constexpr double kDivergenceTol = 1e-9;

std::string format_times(const std::vector<double>& ts) {
  std::ostringstream out;
  out << "t in {";
  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (i != 0) out << ", ";
    out << ts[i];
  }
  out << "}";
  return out.str();
}

VelocityField scaled(VelocityField field, double scale) {
  if (scale == 1.0) return field;
  return [field = std::move(field), scale](std::size_t i, const Sequence& z,
                                           double t) {
    RateVector rates = field(i, z, t);
    for (double& r : rates.rates) r *= scale;
    return rates;
  };
}

// Everything the checks share; paths and couplings derived from the config
// are materialized lazily per check so each one states its own assumptions.
struct Context {
  const SpaceSpec& space;
  const SourceSpec& source;
  const TargetSpec& target;
  const CouplingSpec& coupling;
  const ConditionalPath& path;
  double scale;
  EnumeratedSpace enumerated;

  Context(const SpaceSpec& space_in, const SourceSpec& source_in,
          const TargetSpec& target_in, const CouplingSpec& coupling_in,
          const ConditionalPath& path_in, double scale_in)
      : space(space_in),
        source(source_in),
        target(target_in),
        coupling(coupling_in),
        path(path_in),
        scale(scale_in),
        enumerated(space_in) {}

  ScalarScheduler base_kappa() const { return path.scheduler().base(); }
};

CheckResult continuity_check(const Context& ctx, const std::string& name,
                             const ConditionalPath& path) {
  const ExplicitCoupling coupling =
      ExplicitCoupling::of(ctx.enumerated, ctx.coupling, ctx.source, ctx.target);
  const OracleProvider oracle(ctx.enumerated, coupling, path);
  const VelocityField field = scaled(
      make_marginal_velocity_field(path, ctx.space, oracle, Direction::forward),
      ctx.scale);

  const std::vector<double> ts{0.1, 0.3, 0.5, 0.7, 0.9};
  CheckResult result{name, false, 0.0, kContinuityTol, ""};
  for (double t : ts) {
    const ContinuityReport report =
        continuity_residual(ctx.enumerated, coupling, path, field, t);
    result.residual = std::max(result.residual, report.max_residual);
  }
  result.passed = result.residual <= result.tolerance;
  result.detail = "max residual of d/dt p + div(p u) over all states, " +
                  format_times(ts);
  return result;
}

CheckResult continuity_convex(const Context& ctx) {
  return continuity_check(ctx, "continuity_convex",
                          ConditionalPath::convex(ctx.base_kappa()));
}

CheckResult continuity_uniform_noise(const Context& ctx) {
  return continuity_check(
      ctx, "continuity_uniform_noise",
      ConditionalPath::uniform_noise(ctx.base_kappa(), 0.5,
                                     ctx.path.include_mask_in_uniform()));
}

CheckResult marginalization(const Context& ctx) {
  const ExplicitCoupling coupling =
      ExplicitCoupling::of(ctx.enumerated, ctx.coupling, ctx.source, ctx.target);
  const OracleProvider oracle(ctx.enumerated, coupling, ctx.path);

  RngStream rng(1789, stream_id("verify_marginalization", 0));
  CheckResult result{"marginalization", false, 0.0, kExactTol, ""};
  const std::size_t positions = ctx.space.positions;

  for (std::size_t draw = 0; draw < 100; ++draw) {
    const double t = 0.05 + 0.9 * rng.next_double();
    const DensePMF law =
        exact_marginal_dense(ctx.enumerated, coupling, ctx.path, t);
    std::vector<std::uint64_t> reachable;
    for (std::uint64_t s = 0; s < law.size(); ++s) {
      if (law[s] > 1e-9) reachable.push_back(s);
    }
    const Sequence& z =
        ctx.enumerated.state(reachable[rng.next_below(reachable.size())]);
    const auto posterior =
        exact_posterior(ctx.enumerated, coupling, ctx.path, z, t);

    for (Direction dir : {Direction::forward, Direction::backward}) {
      for (std::size_t i = 0; i < positions; ++i) {
        const RateVector direct =
            marginal_velocity(ctx.path, ctx.space, oracle, dir, t, i, z);
        std::vector<double> mixed(direct.rates.size(), 0.0);
        for (const auto& [pair_index, weight] : posterior) {
          if (weight <= 1e-15) continue;
          const CoupledPair& pair = coupling.pairs()[pair_index];
          const RateVector conditional = conditional_velocity(
              ctx.path, ctx.space, dir, t, i, z,
              ctx.enumerated.state(pair.x0), ctx.enumerated.state(pair.x1));
          for (std::size_t k = 0; k < mixed.size(); ++k) {
            mixed[k] += weight * conditional.rates[k];
          }
        }
        for (std::size_t k = 0; k < mixed.size(); ++k) {
          result.residual =
              std::max(result.residual, std::abs(direct.rates[k] - mixed[k]));
        }
      }
    }
  }
  result.passed = result.residual <= result.tolerance;
  result.detail =
      "marginal velocity vs posterior-weighted conditional velocities, "
      "100 random (state, t), both directions";
  return result;
}

CheckResult order_check(const Context& ctx, const std::string& name,
                        Direction direction) {
  const ExplicitCoupling coupling =
      ExplicitCoupling::of(ctx.enumerated, ctx.coupling, ctx.source, ctx.target);
  const OracleProvider oracle(ctx.enumerated, coupling, ctx.path);
  const VelocityField field = scaled(
      make_marginal_velocity_field(ctx.path, ctx.space, oracle, direction),
      ctx.scale);

  const std::vector<double> ts{0.25, 0.5, 0.75};
  const std::vector<double> hs{1.0 / 32, 1.0 / 64, 1.0 / 128};
  const double lo = 3.2;
  const double hi = 4.8;

  CheckResult result{name, false, 0.0, 0.0, ""};
  std::ostringstream detail;
  detail << "TV error ratios per halving of h, band [" << lo << ", " << hi
         << "]:";
  for (double t : ts) {
    const DensePMF p_t =
        exact_marginal_dense(ctx.enumerated, coupling, ctx.path, t);
    std::vector<double> errs;
    for (double h : hs) {
      const DensePMF stepped = exact_euler_pushforward(ctx.enumerated, p_t,
                                                       field, t, h, direction);
      const double t_end = direction == Direction::forward ? t + h : t - h;
      const DensePMF truth =
          exact_marginal_dense(ctx.enumerated, coupling, ctx.path, t_end);
      errs.push_back(dense_tv(stepped, truth));
    }
    for (std::size_t k = 0; k + 1 < errs.size(); ++k) {
      if (errs[k + 1] < 1e-15) continue;  // exact to roundoff, no order to read
      const double ratio = errs[k] / errs[k + 1];
      detail << " " << ratio;
      result.residual = std::max(
          result.residual, std::max(lo - ratio, ratio - hi));
    }
  }
  result.residual = std::max(result.residual, 0.0);
  result.passed = result.residual <= result.tolerance;
  result.detail = detail.str();
  return result;
}

CheckResult one_step_order(const Context& ctx) {
  return order_check(ctx, "one_step_order", Direction::forward);
}

CheckResult backward_order(const Context& ctx) {
  return order_check(ctx, "backward_order", Direction::backward);
}

VelocityField corrector_field(const ConditionalPath& path,
                              const SpaceSpec& space,
                              const PosteriorProvider& oracle,
                              std::function<CorrectorSchedule::Value(double)>
                                  weights) {
  const VelocityField forward =
      make_marginal_velocity_field(path, space, oracle, Direction::forward);
  const VelocityField backward =
      make_marginal_velocity_field(path, space, oracle, Direction::backward);
  return [forward, backward, weights = std::move(weights)](
             std::size_t i, const Sequence& z, double t) {
    const CorrectorSchedule::Value value = weights(t);
    return corrector_velocity(forward(i, z, t), backward(i, z, t),
                              value.alpha_t, value.beta_t);
  };
}

CheckResult corrector_continuity(const Context& ctx) {
  const ExplicitCoupling coupling =
      ExplicitCoupling::of(ctx.enumerated, ctx.coupling, ctx.source, ctx.target);
  const OracleProvider oracle(ctx.enumerated, coupling, ctx.path);
  const CorrectorSchedule schedule;
  const VelocityField field =
      scaled(corrector_field(ctx.path, ctx.space, oracle,
                             [schedule](double t) { return schedule.eval(t); }),
             ctx.scale);

  const std::vector<double> ts{0.2, 0.5, 0.8};
  CheckResult result{"corrector_continuity", false, 0.0, kContinuityTol, ""};
  for (double t : ts) {
    const ContinuityReport report =
        continuity_residual(ctx.enumerated, coupling, ctx.path, field, t);
    result.residual = std::max(result.residual, report.max_residual);
  }
  result.passed = result.residual <= result.tolerance;
  result.detail = "alpha_t - beta_t = 1 corrector keeps the continuity "
                  "equation, " +
                  format_times(ts);
  return result;
}

CheckResult corrector_stationarity(const Context& ctx) {
  const ExplicitCoupling coupling =
      ExplicitCoupling::of(ctx.enumerated, ctx.coupling, ctx.source, ctx.target);
  const OracleProvider oracle(ctx.enumerated, coupling, ctx.path);
  const CorrectorSchedule schedule;
  const VelocityField field = scaled(
      corrector_field(ctx.path, ctx.space, oracle,
                      [schedule](double t) {
                        const double a = schedule.eval(t).alpha_t;
                        return CorrectorSchedule::Value{a, a};
                      }),
      ctx.scale);

  const std::vector<double> ts{0.3, 0.5, 0.7};
  CheckResult result{"corrector_stationarity", false, 0.0, kDivergenceTol, ""};
  for (double t : ts) {
    const DensePMF law =
        exact_marginal_dense(ctx.enumerated, coupling, ctx.path, t);
    for (std::uint64_t s = 0; s < ctx.enumerated.size(); ++s) {
      const double div = discrete_divergence(ctx.enumerated, law, field, t,
                                             ctx.enumerated.state(s));
      result.residual = std::max(result.residual, std::abs(div));
    }
  }
  result.passed = result.residual <= result.tolerance;
  result.detail = "alpha_t = beta_t corrector leaves p_t stationary: "
                  "max |div(p u)| over all states, " +
                  format_times(ts);
  return result;
}

CheckResult divergence_free(const Context& ctx) {
  const SourceSpec uniform_source = SourceSpec::uniform(false);
  CouplingSpec independent;
  const ConditionalPath path = ConditionalPath::convex(ctx.base_kappa());
  const ExplicitCoupling coupling = ExplicitCoupling::of(
      ctx.enumerated, independent, uniform_source, ctx.target);
  const OracleProvider oracle(ctx.enumerated, coupling, path);
  const ScalarScheduler kappa = ctx.base_kappa();

  const VelocityField difference = scaled(
      [&](std::size_t i, const Sequence& z, double t) {
        RateVector simple = simple_backward_velocity(
            kappa, ctx.space, uniform_source, independent, t, i, z);
        const RateVector posterior = marginal_velocity(
            path, ctx.space, oracle, Direction::backward, t, i, z);
        for (std::size_t k = 0; k < simple.rates.size(); ++k) {
          simple.rates[k] -= posterior.rates[k];
        }
        return simple;
      },
      ctx.scale);

  const std::vector<double> ts{0.2, 0.5, 0.8};
  CheckResult result{"divergence_free", false, 0.0, kDivergenceTol, ""};
  for (double t : ts) {
    const DensePMF law = exact_marginal_dense(ctx.enumerated, coupling, path, t);
    for (std::uint64_t s = 0; s < ctx.enumerated.size(); ++s) {
      const double div = discrete_divergence(ctx.enumerated, law, difference, t,
                                             ctx.enumerated.state(s));
      result.residual = std::max(result.residual, std::abs(div));
    }
  }
  result.passed = result.residual <= result.tolerance;
  result.detail = "simple vs posterior backward velocity under a uniform iid "
                  "source: max |div(p (u_simple - u_posterior))|, " +
                  format_times(ts);
  return result;
}

std::vector<Sequence> all_states(const EnumeratedSpace& enumerated) {
  std::vector<Sequence> states;
  states.reserve(enumerated.size());
  for (std::uint64_t s = 0; s < enumerated.size(); ++s) {
    states.push_back(enumerated.state(s));
  }
  return states;
}

CheckResult time_independence(const Context& ctx) {
  CheckResult result{"time_independence", false, 0.0, kExactTol, ""};
  if (!ctx.space.has_mask) {
    result.passed = true;
    result.detail = "skipped: the space has no mask token";
    return result;
  }
  const SourceSpec masked = SourceSpec::all_mask();
  CouplingSpec independent;
  const ConditionalPath path = ConditionalPath::convex(ctx.base_kappa());
  const ExplicitCoupling coupling =
      ExplicitCoupling::of(ctx.enumerated, independent, masked, ctx.target);
  const OracleProvider oracle(ctx.enumerated, coupling, path);

  result.residual = check_time_independence(
      oracle, ctx.space, all_states(ctx.enumerated), 2,
      {0.1, 0.25, 0.5, 0.75, 0.9});
  result.passed = result.residual <= result.tolerance;
  result.detail = "all-mask source: max TV between posteriors served at "
                  "different times";
  return result;
}

CheckResult time_dependence_control(const Context& ctx) {
  const SourceSpec uniform_source = SourceSpec::uniform(false);
  CouplingSpec independent;
  const ConditionalPath path = ConditionalPath::convex(ctx.base_kappa());
  const ExplicitCoupling coupling = ExplicitCoupling::of(
      ctx.enumerated, independent, uniform_source, ctx.target);
  const OracleProvider oracle(ctx.enumerated, coupling, path);

  CheckResult result{"time_dependence_control", false, 0.0, 1e-3, ""};
  result.residual = check_time_independence(
      oracle, ctx.space, all_states(ctx.enumerated), 2,
      {0.1, 0.25, 0.5, 0.75, 0.9});
  result.passed = result.residual > result.tolerance;
  result.detail = "negative control: a uniform-source posterior must move "
                  "with t (passes when the residual exceeds the tolerance)";
  return result;
}

CheckResult posterior_counts(const Context& ctx) {
  CheckResult result{"posterior_counts", false, 0.0, 0.08, ""};
  if (!ctx.space.has_mask) {
    result.passed = true;
    result.detail = "skipped: the space has no mask token";
    return result;
  }
  const SourceSpec masked = SourceSpec::all_mask();
  CouplingSpec independent;
  const ConditionalPath path = ConditionalPath::convex(ctx.base_kappa());
  const ExplicitCoupling coupling =
      ExplicitCoupling::of(ctx.enumerated, independent, masked, ctx.target);
  const OracleProvider oracle(ctx.enumerated, coupling, path);

  EstimatorConfig estimator;
  estimator.min_cell_count = 2000;
  estimator.max_samples = 4000000;
  estimator.round_size = 50000;
  estimator.seed = 7;
  const CountsPosterior counts = empirical_posterior_estimate(
      ctx.space, masked, independent, ctx.target, path, estimator);

  const double t = 0.5;
  const DensePMF law = exact_marginal_dense(ctx.enumerated, coupling, path, t);
  for (std::uint64_t s = 0; s < ctx.enumerated.size(); ++s) {
    if (law[s] <= 1e-9) continue;
    const Sequence& z = ctx.enumerated.state(s);
    for (std::size_t factor = 0; factor < 2; ++factor) {
      for (std::size_t i = 0; i < ctx.space.positions; ++i) {
        const TokenPMF expected = oracle.factor_posterior(factor, i, z, t);
        const TokenPMF estimated = counts.factor_posterior(factor, i, z, t);
        result.residual =
            std::max(result.residual, pmf_tv(expected, estimated));
      }
    }
  }
  result.passed = result.residual <= result.tolerance;
  result.detail = "count-based estimator (cell floor 2000) vs oracle "
                  "posterior: max TV over reachable states at t = 0.5";
  return result;
}

CheckResult scheduler_remap(const Context& ctx) {
  const ScalarScheduler trained = ctx.base_kappa();
  const ScalarScheduler sampling =
      trained.kind() == ScalarScheduler::Kind::cosine
          ? ScalarScheduler::cubic_poly(0.0, 2.0)
          : ScalarScheduler::cosine();

  const SourceSpec uniform_source = SourceSpec::uniform(false);
  CouplingSpec independent;
  const ConditionalPath trained_path = ConditionalPath::convex(trained);
  const ConditionalPath sampling_path = ConditionalPath::convex(sampling);
  const ExplicitCoupling coupling = ExplicitCoupling::of(
      ctx.enumerated, independent, uniform_source, ctx.target);

  const OracleProvider trained_oracle(ctx.enumerated, coupling, trained_path);
  const RemappedPosterior remapped(trained_oracle, trained, sampling);
  const OracleProvider direct_oracle(ctx.enumerated, coupling, sampling_path);

  SamplerConfig config;
  config.n_steps = 32;
  config.coupling = independent;
  Sampler via_remap(ctx.space, sampling_path, uniform_source, remapped, config);
  Sampler direct(ctx.space, sampling_path, uniform_source, direct_oracle,
                 config);

  const DensePMF init = source_law_dense(ctx.enumerated, uniform_source);
  const DensePMF law_remap = exact_chain_law(ctx.enumerated, via_remap, init);
  const DensePMF law_direct = exact_chain_law(ctx.enumerated, direct, init);

  CheckResult result{"scheduler_remap", false,
                     dense_tv(law_remap, law_direct), kDivergenceTol, ""};
  result.passed = result.residual <= result.tolerance;
  result.detail = "end law sampled through the time-remapped provider vs a "
                  "provider evaluated directly under the sampling schedule";
  return result;
}

using CheckFn = CheckResult (*)(const Context&);

const std::vector<std::pair<std::string, CheckFn>>& check_table() {
  static const std::vector<std::pair<std::string, CheckFn>> table{
      {"continuity_convex", continuity_convex},
      {"continuity_uniform_noise", continuity_uniform_noise},
      {"marginalization", marginalization},
      {"one_step_order", one_step_order},
      {"backward_order", backward_order},
      {"corrector_continuity", corrector_continuity},
      {"corrector_stationarity", corrector_stationarity},
      {"divergence_free", divergence_free},
      {"time_independence", time_independence},
      {"time_dependence_control", time_dependence_control},
      {"posterior_counts", posterior_counts},
      {"scheduler_remap", scheduler_remap},
  };
  return table;
}

}  // namespace

const std::vector<std::string>& default_check_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> all;
    for (const auto& [name, fn] : check_table()) all.push_back(name);
    return all;
  }();
  return names;
}

std::vector<CheckResult> run_checks(const SpaceSpec& space,
                                    const SourceSpec& source,
                                    const TargetSpec& target,
                                    const CouplingSpec& coupling,
                                    const ConditionalPath& path,
                                    const VerifyOptions& options) {
  const std::vector<std::string>& names =
      options.checks ? *options.checks : default_check_names();

  Context ctx(space, source, target, coupling, path, options.kappa_dot_scale);
  std::vector<CheckResult> results;
  for (const std::string& name : names) {
    const auto it = std::find_if(
        check_table().begin(), check_table().end(),
        [&name](const auto& entry) { return entry.first == name; });
    if (it == check_table().end()) {
      throw config_error("unknown verification check: " + name);
    }
    results.push_back(it->second(ctx));
  }
  return results;
}

}  // namespace dfm

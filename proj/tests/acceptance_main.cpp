// Acceptance suite: one pass/fail line per criterion, exit status 0 only
// when every criterion holds. Tolerances and runtime budgets are pinned
// here, not configurable.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dfm/core.hpp"
#include "dfm/metrics.hpp"
#include "dfm/oracle.hpp"
#include "dfm/paths.hpp"
#include "dfm/rng.hpp"
#include "dfm/sampler.hpp"
#include "dfm/schedulers.hpp"
#include "dfm/stats.hpp"
#include "dfm/trainer.hpp"
#include "dfm/velocities.hpp"

namespace {

using namespace dfm;

std::string strf(const char* fmt, ...) {
  va_list args;
  va_start(args, fmt);
  char buf[512];
  std::vsnprintf(buf, sizeof(buf), fmt, args);
  va_end(args);
  return buf;
}

struct Outcome {
  bool passed = false;
  std::string detail;
};

// Explicit target with full support over the data sequences, seeded per index.
TargetSpec random_target(const SpaceSpec& space, std::uint64_t idx) {
  RngStream rng(7741, stream_id("target", idx));
  std::uint64_t count = 1;
  for (std::uint64_t i = 0; i < space.positions; ++i) count *= space.d;
  std::vector<std::pair<Sequence, double>> rows;
  double total = 0.0;
  for (std::uint64_t n = 0; n < count; ++n) {
    Sequence s(space.positions, 0);
    std::uint64_t rem = n;
    for (std::size_t i = space.positions; i-- > 0;) {
      s[i] = static_cast<TokenId>(rem % space.d);
      rem /= space.d;
    }
    const double w = 0.02 + rng.next_double();
    rows.emplace_back(std::move(s), w);
    total += w;
  }
  JointPMF q;
  for (auto& [seq, w] : rows) q[seq] = w / total;
  return TargetSpec::explicit_pmf(std::move(q));
}

struct NamedPath {
  std::string name;
  ConditionalPath path;
};

// Both path families over the scheduler catalog.
std::vector<NamedPath> path_catalog() {
  const std::vector<std::pair<std::string, ScalarScheduler>> kappas = {
      {"linear", ScalarScheduler::linear()},
      {"cubic", ScalarScheduler::cubic_poly(0.0, 2.0)},
      {"cosine", ScalarScheduler::cosine()},
  };
  std::vector<NamedPath> out;
  for (const auto& [name, kappa] : kappas) {
    out.push_back({"convex-" + name, ConditionalPath::convex(kappa)});
    out.push_back({"noise-" + name, ConditionalPath::uniform_noise(kappa, 0.5)});
  }
  return out;
}

std::uint64_t draw_state_index(const DensePMF& p, RngStream& rng) {
  const double u = rng.next_double();
  double acc = 0.0;
  std::uint64_t last = 0;
  for (std::uint64_t n = 0; n < p.size(); ++n) {
    if (p[n] <= 0.0) continue;
    last = n;
    acc += p[n];
    if (u < acc) return n;
  }
  return last;
}

// -- criterion 1: continuity of the marginal velocity field ------------------

Outcome check_continuity() {
  const SpaceSpec space{3, true, 2};
  const SourceSpec source = SourceSpec::all_mask();
  double worst = 0.0;
  std::string worst_at = "-";
  for (std::uint64_t ti = 0; ti < 5; ++ti) {
    const TargetSpec target = random_target(space, ti);
    const EnumeratedSpace enumerated(space);
    const ExplicitCoupling coupling =
        ExplicitCoupling::independent(enumerated, source, target);
    for (const NamedPath& np : path_catalog()) {
      const OracleProvider oracle(enumerated, coupling, np.path);
      const VelocityField field = make_marginal_velocity_field(
          np.path, space, oracle, Direction::forward);
      for (int k = 1; k <= 9; ++k) {
        const double t = 0.1 * k;
        const double r =
            continuity_residual(enumerated, coupling, np.path, field, t, 1e-4)
                .max_residual;
        if (r > worst) {
          worst = r;
          worst_at = strf("%s target %llu t=%.1f", np.name.c_str(),
                          static_cast<unsigned long long>(ti), t);
        }
      }
    }
  }
  return {worst <= 1e-6,
          strf("max residual %.3e (tol 1e-06) at %s", worst, worst_at.c_str())};
}

// -- criterion 2: marginal velocity equals the posterior-weighted sum --------

Outcome check_marginalization() {
  const SpaceSpec space{3, true, 2};
  const SourceSpec source = SourceSpec::all_mask();
  double worst = 0.0;
  std::uint64_t setting = 0;
  for (std::uint64_t ti = 0; ti < 5; ++ti) {
    const TargetSpec target = random_target(space, ti);
    const EnumeratedSpace enumerated(space);
    const ExplicitCoupling coupling =
        ExplicitCoupling::independent(enumerated, source, target);
    for (const NamedPath& np : path_catalog()) {
      const OracleProvider oracle(enumerated, coupling, np.path);
      RngStream rng(4102, stream_id("marginalization", setting++));
      for (int draw = 0; draw < 100; ++draw) {
        const double t = 0.05 + 0.9 * rng.next_double();
        const DensePMF law = exact_marginal_dense(enumerated, coupling,
                                                  np.path, t);
        const Sequence& z = enumerated.state(draw_state_index(law, rng));
        const auto posterior =
            exact_posterior(enumerated, coupling, np.path, z, t);
        for (const Direction dir : {Direction::forward, Direction::backward}) {
          for (std::size_t i = 0; i < space.positions; ++i) {
            const RateVector got =
                marginal_velocity(np.path, space, oracle, dir, t, i, z);
            std::vector<double> manual(space.alphabet_size(), 0.0);
            for (const auto& [pair_idx, w] : posterior) {
              if (w <= 1e-15) continue;
              const CoupledPair& pair = coupling.pairs()[pair_idx];
              const RateVector cond = conditional_velocity(
                  np.path, space, dir, t, i, z,
                  enumerated.state(pair.x0), enumerated.state(pair.x1));
              for (std::size_t k = 0; k < manual.size(); ++k) {
                manual[k] += w * cond.rates[k];
              }
            }
            for (std::size_t k = 0; k < manual.size(); ++k) {
              worst = std::max(worst, std::abs(manual[k] - got.rates[k]));
            }
          }
        }
      }
    }
  }
  return {worst <= 1e-12, strf("max deviation %.3e (tol 1e-12)", worst)};
}

// -- criterion 3: one-step error shrinks at second order ---------------------

Outcome check_step_order() {
  const SpaceSpec space{3, true, 2};
  const SourceSpec source = SourceSpec::all_mask();
  const TargetSpec target = random_target(space, 0);
  const EnumeratedSpace enumerated(space);
  const ExplicitCoupling coupling =
      ExplicitCoupling::independent(enumerated, source, target);
  const std::vector<NamedPath> paths = {
      {"convex-linear", ConditionalPath::convex(ScalarScheduler::linear())},
      {"noise-linear",
       ConditionalPath::uniform_noise(ScalarScheduler::linear(), 0.5)},
  };
  double lo = 1e300;
  double hi = 0.0;
  std::string worst_at = "-";
  for (const NamedPath& np : paths) {
    const OracleProvider oracle(enumerated, coupling, np.path);
    const VelocityField field = make_marginal_velocity_field(
        np.path, space, oracle, Direction::forward);
    for (const double t : {0.25, 0.5, 0.75}) {
      const DensePMF p0 = exact_marginal_dense(enumerated, coupling, np.path, t);
      std::vector<double> errs;
      for (const double h : {1.0 / 32, 1.0 / 64, 1.0 / 128}) {
        const DensePMF stepped =
            exact_euler_pushforward(enumerated, p0, field, t, h);
        const DensePMF truth =
            exact_marginal_dense(enumerated, coupling, np.path, t + h);
        errs.push_back(dense_tv(stepped, truth));
      }
      for (std::size_t k = 0; k + 1 < errs.size(); ++k) {
        if (errs[k + 1] < 1e-15) continue;
        const double ratio = errs[k] / errs[k + 1];
        if (ratio < lo || ratio > hi) {
          worst_at = strf("%s t=%.2f", np.name.c_str(), t);
        }
        lo = std::min(lo, ratio);
        hi = std::max(hi, ratio);
      }
    }
  }
  const bool ok = lo >= 3.2 && hi <= 4.8;
  return {ok, strf("halving ratios in [%.2f, %.2f] (band [3.20, 4.80]), "
                   "extreme at %s", lo, hi, worst_at.c_str())};
}

// -- shared forward-sampling benchmark (criteria 4 and 11) -------------------

struct McStats {
  bool ran = false;
  std::uint64_t chains = 0;
  std::uint64_t max_nfe = 0;
};

Outcome check_forward_sampling(McStats& mc) {
  const SpaceSpec space{2, true, 3};
  const SourceSpec source = SourceSpec::all_mask();
  const TargetSpec target = random_target(space, 0);
  const ConditionalPath path = ConditionalPath::convex(ScalarScheduler::linear());
  const EnumeratedSpace enumerated(space);
  const ExplicitCoupling coupling =
      ExplicitCoupling::independent(enumerated, source, target);
  const OracleProvider oracle(enumerated, coupling, path);

  SamplerConfig config;
  config.direction = Direction::forward;
  config.n_steps = 128;
  Sampler sampler(space, path, source, oracle, config);

  const DensePMF end_law =
      exact_chain_law(enumerated, sampler, source_law_dense(enumerated, source));
  const double tv =
      dense_tv(end_law, joint_to_dense(enumerated, target.joint()));

  const std::uint64_t n_chains = 200000;
  std::vector<std::uint64_t> counts(enumerated.size(), 0);
  std::uint64_t max_nfe = 0;
  for (std::uint64_t c = 0; c < n_chains; ++c) {
    RngStream rng(909, stream_id("chain", c));
    const SampleResult res = sampler.run_chain(rng);
    counts[enumerated.index_of(res.final_state)] += 1;
    max_nfe = std::max(max_nfe, res.nfe);
  }
  mc = {true, n_chains, max_nfe};

  const ChiSquareResult chi = chi_square_gof(counts, end_law);
  const bool ok = tv <= 0.02 && chi.p_value >= 1e-3;
  return {ok, strf("end-law TV %.4f (tol 0.02), chi-square p %.3f "
                   "(floor 1e-03, dof %llu)", tv, chi.p_value,
                   static_cast<unsigned long long>(chi.dof))};
}

// -- criterion 5: backward sampling lands on the source ----------------------

Outcome check_backward_sampling() {
  const SpaceSpec space{2, true, 3};
  const SourceSpec source = SourceSpec::all_mask();
  const TargetSpec target = random_target(space, 0);
  const ConditionalPath path = ConditionalPath::convex(ScalarScheduler::linear());
  const EnumeratedSpace enumerated(space);
  const ExplicitCoupling coupling =
      ExplicitCoupling::independent(enumerated, source, target);
  const OracleProvider oracle(enumerated, coupling, path);

  SamplerConfig config;
  config.direction = Direction::backward;
  config.n_steps = 128;
  Sampler sampler(space, path, source, oracle, config);

  const DensePMF end_law = exact_chain_law(
      enumerated, sampler, joint_to_dense(enumerated, target.joint()));
  const double tv = dense_tv(end_law, source_law_dense(enumerated, source));
  return {tv <= 0.02, strf("end-law TV to source %.4f (tol 0.02)", tv)};
}

// -- criterion 6: corrector keeps continuity; fixed-t iteration contracts ----

Outcome check_corrector() {
  const SpaceSpec space{3, true, 2};
  const SourceSpec source = SourceSpec::all_mask();
  const TargetSpec target = random_target(space, 0);
  const ConditionalPath path = ConditionalPath::convex(ScalarScheduler::linear());
  const EnumeratedSpace enumerated(space);
  const ExplicitCoupling coupling =
      ExplicitCoupling::independent(enumerated, source, target);
  const OracleProvider oracle(enumerated, coupling, path);
  const VelocityField fwd =
      make_marginal_velocity_field(path, space, oracle, Direction::forward);
  const VelocityField bwd =
      make_marginal_velocity_field(path, space, oracle, Direction::backward);

  const CorrectorSchedule schedule{};
  const VelocityField corrector = [&](std::size_t i, const Sequence& z,
                                      double t) {
    const auto v = schedule.eval(t);
    return corrector_velocity(fwd(i, z, t), bwd(i, z, t), v.alpha_t, v.beta_t);
  };
  double residual = 0.0;
  for (const double t : {0.2, 0.5, 0.8}) {
    residual = std::max(
        residual,
        continuity_residual(enumerated, coupling, path, corrector, t, 1e-4)
            .max_residual);
  }
  if (residual > 1e-6) {
    return {false, strf("corrector continuity residual %.3e (tol 1e-06)",
                        residual)};
  }

  // Equal-weight iteration at fixed t from a half-TV perturbed start.
  const double t = 0.5;
  const double a_fix = schedule.eval(t).alpha_t;
  const VelocityField fix = [&](std::size_t i, const Sequence& z, double tt) {
    return corrector_velocity(fwd(i, z, tt), bwd(i, z, tt), a_fix, a_fix);
  };
  const DensePMF pt = exact_marginal_dense(enumerated, coupling, path, t);
  std::uint64_t spike = 0;
  double spike_mass = 2.0;
  for (std::uint64_t n = 0; n < pt.size(); ++n) {
    if (pt[n] > 1e-9 && pt[n] < spike_mass) {
      spike = n;
      spike_mass = pt[n];
    }
  }
  const double w = 0.5 / (1.0 - spike_mass);
  DensePMF law(pt.size(), 0.0);
  for (std::uint64_t n = 0; n < pt.size(); ++n) law[n] = (1.0 - w) * pt[n];
  law[spike] += w;
  const double start_tv = dense_tv(law, pt);

  double rate = 0.0;
  for (std::size_t i = 0; i < space.positions; ++i) {
    const double bf = std::abs(
        velocity_coefficients(path.scheduler(), t, i, Direction::forward).b);
    const double bb = std::abs(
        velocity_coefficients(path.scheduler(), t, i, Direction::backward).b);
    rate = std::max(rate, a_fix * (bf + bb));
  }
  const double h = 1.0 / rate;

  double tv = start_tv;
  int iterations = 0;
  while (tv > 0.02 && iterations < 200) {
    law = exact_euler_pushforward(enumerated, law, fix, t, h);
    tv = dense_tv(law, pt);
    iterations += 1;
  }
  const bool ok = start_tv >= 0.45 && tv <= 0.02;
  return {ok, strf("continuity residual %.3e; fixed-t iteration TV %.2f -> "
                   "%.4f in %d steps (cap 200, h=%.4f)",
                   residual, start_tv, tv, iterations, h)};
}

// -- criterion 7: source-only backward field agrees in divergence ------------

Outcome check_divergence_free() {
  const SpaceSpec space{3, true, 2};
  const SourceSpec source = SourceSpec::uniform(false);
  const CouplingSpec coupling_spec;
  const ScalarScheduler kappa = ScalarScheduler::linear();
  const ConditionalPath path = ConditionalPath::convex(kappa);
  double worst = 0.0;
  for (std::uint64_t ti = 0; ti < 5; ++ti) {
    const TargetSpec target = random_target(space, ti);
    const EnumeratedSpace enumerated(space);
    const ExplicitCoupling coupling =
        ExplicitCoupling::independent(enumerated, source, target);
    const OracleProvider oracle(enumerated, coupling, path);
    const VelocityField difference = [&](std::size_t i, const Sequence& z,
                                         double t) {
      const RateVector simple = simple_backward_velocity(
          kappa, space, source, coupling_spec, t, i, z);
      const RateVector posterior = marginal_velocity(
          path, space, oracle, Direction::backward, t, i, z);
      RateVector out{i, simple.rates};
      for (std::size_t k = 0; k < out.rates.size(); ++k) {
        out.rates[k] -= posterior.rates[k];
      }
      return out;
    };
    for (const double t : {0.2, 0.5, 0.8}) {
      const DensePMF law = exact_marginal_dense(enumerated, coupling, path, t);
      for (std::uint64_t n = 0; n < enumerated.size(); ++n) {
        worst = std::max(
            worst, std::abs(discrete_divergence(enumerated, law, difference, t,
                                                enumerated.state(n))));
      }
    }
  }
  return {worst <= 1e-9, strf("max |divergence| %.3e (tol 1e-09)", worst)};
}

// -- criterion 8: trained and counted posteriors approach the oracle ---------

Outcome check_posterior_training() {
  const SpaceSpec space{2, true, 2};
  const SourceSpec source = SourceSpec::all_mask();
  JointPMF q;
  q[Sequence{0, 1}] = 0.4;
  q[Sequence{1, 0}] = 0.6;
  const TargetSpec target = TargetSpec::explicit_pmf(q);
  const CouplingSpec coupling_spec;
  const ConditionalPath path = ConditionalPath::convex(ScalarScheduler::linear());
  const EnumeratedSpace enumerated(space);
  const ExplicitCoupling coupling =
      ExplicitCoupling::independent(enumerated, source, target);
  const OracleProvider oracle(enumerated, coupling, path);

  const DensePMF mid = exact_marginal_dense(enumerated, coupling, path, 0.5);
  std::vector<Sequence> reachable;
  for (std::uint64_t n = 0; n < enumerated.size(); ++n) {
    if (mid[n] > 1e-12) reachable.push_back(enumerated.state(n));
  }

  const std::size_t bins =
      default_time_bins(space, source, coupling_spec, path);
  TabularPosterior model(space, path.factor_count(), bins);
  model.set_constant_factor(1, delta_pmf(space.mask_token(),
                                         space.alphabet_size()));
  TrainConfig train;
  train.steps = 6000;
  train.batch_size = 4096;
  train.learning_rate = 0.25;
  train.seed = 17;
  train.log_every = 1000;
  const TrainReport report =
      train_tabular(model, source, coupling_spec, target, path, train);

  const auto max_tv = [&](const PosteriorProvider& provider) {
    double worst = 0.0;
    for (const Sequence& z : reachable) {
      for (std::size_t i = 0; i < space.positions; ++i) {
        worst = std::max(worst,
                         pmf_tv(provider.factor_posterior(0, i, z, 0.5),
                                oracle.factor_posterior(0, i, z, 0.5)));
      }
    }
    return worst;
  };
  const double sgd_tv = max_tv(model);

  EstimatorConfig estimator;
  estimator.min_cell_count = 1000000;
  estimator.max_samples = 60000000;
  estimator.round_size = 1000000;
  estimator.seed = 23;
  const CountsPosterior counts = empirical_posterior_estimate(
      space, source, coupling_spec, target, path, estimator);
  const double counts_tv = max_tv(counts);

  const bool ok = sgd_tv <= 0.01 && counts_tv <= 1e-3;
  return {ok, strf("sgd max TV %.4f (tol 0.01, %zu steps, loss %.3f -> %.3f); "
                   "counts max TV %.2e (tol 1e-03, floor 1e6)",
                   sgd_tv, report.steps_run, report.initial_loss,
                   report.final_loss, counts_tv)};
}

// -- criterion 9: posterior time dependence matches the source ---------------

Outcome check_time_dependence() {
  const SpaceSpec space{2, true, 3};
  const TargetSpec target = random_target(space, 0);
  const ConditionalPath path = ConditionalPath::convex(ScalarScheduler::linear());
  const EnumeratedSpace enumerated(space);
  const std::vector<double> times = {0.1, 0.25, 0.5, 0.75, 0.9};
  std::vector<Sequence> states;
  for (std::uint64_t n = 0; n < enumerated.size(); ++n) {
    states.push_back(enumerated.state(n));
  }

  const SourceSpec masked = SourceSpec::all_mask();
  const ExplicitCoupling coupling_masked =
      ExplicitCoupling::independent(enumerated, masked, target);
  const OracleProvider oracle_masked(enumerated, coupling_masked, path);
  const double masked_dev = check_time_independence(
      oracle_masked, space, states, path.factor_count(), times);

  const SourceSpec uniform = SourceSpec::uniform(false);
  const ExplicitCoupling coupling_uniform =
      ExplicitCoupling::independent(enumerated, uniform, target);
  const OracleProvider oracle_uniform(enumerated, coupling_uniform, path);
  const double uniform_dev = check_time_independence(
      oracle_uniform, space, states, path.factor_count(), times);

  const bool ok = masked_dev <= 1e-12 && uniform_dev > 1e-3;
  return {ok, strf("masked deviation %.3e (tol 1e-12); uniform control %.3e "
                   "(must exceed 1e-03)", masked_dev, uniform_dev)};
}

// -- criterion 10: schedule remapping reproduces the retrained law -----------

Outcome check_scheduler_remap() {
  const SpaceSpec space{3, true, 2};
  const SourceSpec source = SourceSpec::uniform(false);
  const TargetSpec target = random_target(space, 0);
  const ScalarScheduler trained = ScalarScheduler::linear();
  const ScalarScheduler sampling = ScalarScheduler::cosine();
  const ConditionalPath path_trained = ConditionalPath::convex(trained);
  const ConditionalPath path_sampling = ConditionalPath::convex(sampling);
  const EnumeratedSpace enumerated(space);
  const ExplicitCoupling coupling =
      ExplicitCoupling::independent(enumerated, source, target);
  const OracleProvider oracle_trained(enumerated, coupling, path_trained);
  const RemappedPosterior remapped(oracle_trained, trained, sampling);
  const OracleProvider oracle_direct(enumerated, coupling, path_sampling);

  SamplerConfig config;
  config.direction = Direction::forward;
  config.n_steps = 32;
  Sampler via_remap(space, path_sampling, source, remapped, config);
  Sampler direct(space, path_sampling, source, oracle_direct, config);
  const DensePMF init = source_law_dense(enumerated, source);
  const double tv = dense_tv(exact_chain_law(enumerated, via_remap, init),
                             exact_chain_law(enumerated, direct, init));
  return {tv <= 1e-9, strf("end-law TV remap vs direct %.3e (tol 1e-09)", tv)};
}

// -- criterion 11: NFE bound and cache freshness under re-masking ------------

Outcome check_nfe_and_cache(const McStats& mc) {
  const SpaceSpec space{2, true, 2};
  const SourceSpec source = SourceSpec::all_mask();
  JointPMF q;
  q[Sequence{0, 1}] = 0.4;
  q[Sequence{1, 0}] = 0.6;
  const TargetSpec target = TargetSpec::explicit_pmf(q);
  const ConditionalPath path = ConditionalPath::convex(ScalarScheduler::linear());
  const EnumeratedSpace enumerated(space);
  const ExplicitCoupling coupling =
      ExplicitCoupling::independent(enumerated, source, target);
  const OracleProvider oracle(enumerated, coupling, path);

  if (!mc.ran) return {false, "forward-sampling benchmark did not run"};
  if (mc.max_nfe > 3) {
    return {false, strf("three-position run exceeded the bound: max NFE %llu",
                        static_cast<unsigned long long>(mc.max_nfe))};
  }

  SamplerConfig plain;
  plain.n_steps = 64;
  Sampler no_corrector(space, path, source, oracle, plain);
  std::uint64_t plain_max = 0;
  for (std::uint64_t c = 0; c < 2000; ++c) {
    RngStream rng(5050, stream_id("nfe", c));
    plain_max = std::max(plain_max, no_corrector.run_chain(rng).nfe);
  }
  if (plain_max > space.positions) {
    return {false, strf("no-corrector max NFE %llu exceeds %llu",
                        static_cast<unsigned long long>(plain_max),
                        static_cast<unsigned long long>(space.positions))};
  }

  SamplerConfig noisy;
  noisy.n_steps = 32;
  noisy.corrector = CorrectorSchedule{};
  noisy.record_trajectory = true;
  noisy.trace_posteriors = true;
  Sampler with_corrector(space, path, source, oracle, noisy);
  // Shadow evaluator: the same serving logic, reset before every query so
  // nothing can be answered from a memo.
  PosteriorCache shadow(oracle, space, true, path.factor_count());
  std::uint64_t remask_events = 0;
  std::uint64_t served = 0;
  double stale = 0.0;
  const TokenId mask = space.mask_token();
  for (std::uint64_t c = 0; c < 200; ++c) {
    RngStream rng(5150, stream_id("trace", c));
    const SampleResult res = with_corrector.run_chain(rng);
    Sequence prev(space.positions, mask);
    for (const StepRecord& step : res.trajectory) {
      for (std::size_t i = 0; i < space.positions; ++i) {
        if (prev[i] != mask && step.state[i] == mask) remask_events += 1;
      }
      prev = step.state;
    }
    for (const PosteriorTraceEntry& entry : with_corrector.cache().trace()) {
      shadow.reset();
      const TokenPMF fresh = shadow.factor_posterior(
          entry.factor, entry.position, entry.state, entry.t);
      stale = std::max(stale, pmf_tv(entry.served, fresh));
      served += 1;
    }
  }
  const bool ok = remask_events > 0 && served > 0 && stale <= 1e-12;
  return {ok, strf("max NFE %llu of %llu chains (bound 3) and %llu (bound 2); "
                   "%llu re-masks, %llu served posteriors, max staleness %.1e",
                   static_cast<unsigned long long>(mc.max_nfe),
                   static_cast<unsigned long long>(mc.chains),
                   static_cast<unsigned long long>(plain_max),
                   static_cast<unsigned long long>(remask_events),
                   static_cast<unsigned long long>(served), stale)};
}

// -- criterion 12: analytic gradients match finite differences ---------------

Outcome check_gradients() {
  const SpaceSpec masked{2, true, 2};
  JointPMF q;
  q[Sequence{0, 1}] = 0.4;
  q[Sequence{1, 0}] = 0.6;
  const GradientCheckReport first = gradient_check(
      masked, SourceSpec::all_mask(), CouplingSpec{},
      TargetSpec::explicit_pmf(q),
      ConditionalPath::convex(ScalarScheduler::linear()), 25, 31);

  const SpaceSpec bare{3, false, 2};
  const GradientCheckReport second = gradient_check(
      bare, SourceSpec::uniform(false), CouplingSpec{},
      random_target(bare, 1),
      ConditionalPath::convex(ScalarScheduler::cubic_poly(0.0, 2.0)), 25, 37);

  const double worst = std::max(first.max_rel_error, second.max_rel_error);
  return {worst <= 1e-6,
          strf("max relative error %.3e over 50 instances (tol 1e-06)", worst)};
}

}  // namespace

int main() {
  McStats mc;
  int failed = 0;
  const auto run = [&](int id, const char* name, double budget,
                       const std::function<Outcome()>& fn) {
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = fn();
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    if (out.passed && budget > 0.0 && seconds >= budget) {
      out.passed = false;
      out.detail += strf(" [exceeded %.0fs budget]", budget);
    }
    if (!out.passed) failed += 1;
    std::printf("[%s] %02d %-20s %s (%.1fs)\n", out.passed ? "PASS" : "FAIL",
                id, name, out.detail.c_str(), seconds);
    std::fflush(stdout);
  };

  run(1, "continuity", 30.0, check_continuity);
  run(2, "marginalization", 0.0, check_marginalization);
  run(3, "step-order", 0.0, check_step_order);
  run(4, "forward-sampling", 120.0, [&] { return check_forward_sampling(mc); });
  run(5, "backward-sampling", 0.0, check_backward_sampling);
  run(6, "corrector", 0.0, check_corrector);
  run(7, "divergence-free", 0.0, check_divergence_free);
  run(8, "posterior-training", 300.0, check_posterior_training);
  run(9, "time-independence", 0.0, check_time_dependence);
  run(10, "scheduler-remap", 0.0, check_scheduler_remap);
  run(11, "nfe-and-cache", 0.0, [&] { return check_nfe_and_cache(mc); });
  run(12, "gradient-check", 0.0, check_gradients);

  std::printf("%d/12 criteria passed\n", 12 - failed);
  return failed == 0 ? 0 : 1;
}

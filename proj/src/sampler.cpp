#include "dfm/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "dfm/errors.hpp"

namespace dfm {
namespace {

constexpr double kPlanResolution = 1e-12;

double reciprocal_or_inf(double magnitude) {
  if (magnitude < 1e-300) return std::numeric_limits<double>::infinity();
  return 1.0 / magnitude;
}

void check_state_shape(const SpaceSpec& space, const Sequence& state) {
  if (state.size() != space.positions) {
    throw contract_error("state length does not match the space");
  }
  for (std::size_t i = 0; i < state.size(); ++i) {
    if (!space.valid_token(state[i])) {
      throw contract_error("state holds a token outside the alphabet");
    }
  }
}

void fan_out_product(DensePMF& out, double weight,
                     const std::vector<TokenPMF>& kernels) {
  std::vector<double> acc{weight};
  std::vector<double> next;
  for (const TokenPMF& kernel : kernels) {
    next.assign(acc.size() * kernel.size(), 0.0);
    for (std::size_t s = 0; s < acc.size(); ++s) {
      if (acc[s] == 0.0) continue;
      for (std::size_t k = 0; k < kernel.size(); ++k) {
        next[s * kernel.size() + k] = acc[s] * kernel[k];
      }
    }
    acc.swap(next);
  }
  if (acc.size() != out.size()) {
    throw contract_error("product expansion does not match the state count");
  }
  for (std::size_t s = 0; s < out.size(); ++s) out[s] += acc[s];
}

}  // namespace

double max_stable_step(const MixtureScheduler& scheduler, double t,
                       Direction direction) {
  const auto coeffs = velocity_coefficients(scheduler, t, 0, direction);
  return reciprocal_or_inf(std::abs(coeffs.b));
}

double max_stable_step(const MixtureScheduler& scheduler, double t,
                       const CorrectorSchedule& corrector) {
  const auto forward =
      velocity_coefficients(scheduler, t, 0, Direction::forward);
  const auto backward =
      velocity_coefficients(scheduler, t, 0, Direction::backward);
  const auto value = corrector.eval(clamp_time(t));
  return reciprocal_or_inf(value.alpha_t * std::abs(forward.b) +
                           value.beta_t * std::abs(backward.b));
}

TokenPMF apply_temperature(const TokenPMF& pmf, double tau) {
  if (tau < 0.0) throw config_error("temperature must be non-negative");
  if (std::abs(tau - 1.0) < 1e-15) return pmf;

  if (tau < 1e-12) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < pmf.size(); ++k) {
      if (pmf[k] > pmf[best]) best = k;
    }
    TokenPMF out(pmf.size());
    out[best] = 1.0;
    return out;
  }

  double max_log = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < pmf.size(); ++k) {
    if (pmf[k] > 0.0) max_log = std::max(max_log, std::log(pmf[k]) / tau);
  }
  if (!std::isfinite(max_log)) {
    throw contract_error("cannot temper a distribution with no mass");
  }
  TokenPMF out(pmf.size());
  double total = 0.0;
  for (std::size_t k = 0; k < pmf.size(); ++k) {
    if (pmf[k] > 0.0) {
      out[k] = std::exp(std::log(pmf[k]) / tau - max_log);
      total += out[k];
    }
  }
  for (std::size_t k = 0; k < out.size(); ++k) out[k] /= total;
  return out;
}

void CorrectorIterationSpec::validate() const {
  if (iterations == 0) {
    throw config_error("corrector iterations must be at least one");
  }
  if (!(t_fixed > 0.0) || !(t_fixed < 1.0)) {
    throw config_error("corrector iteration time must lie inside (0, 1)");
  }
  if (!(step_scale > 0.0) || step_scale > 1.0) {
    throw config_error("corrector iteration step scale must lie in (0, 1]");
  }
}

void ConditioningSpec::validate(const SpaceSpec& space) const {
  for (const auto& [position, token] : fixed) {
    if (position >= space.positions) {
      throw config_error("conditioning position out of range");
    }
    if (!space.valid_token(token)) {
      throw config_error("conditioning token outside the alphabet");
    }
  }
}

void ConditioningSpec::apply(Sequence& state) const {
  for (const auto& [position, token] : fixed) state[position] = token;
}

PosteriorCache::PosteriorCache(const PosteriorProvider& provider,
                               const SpaceSpec& space, bool masked_shortcut,
                               std::size_t factor_count)
    : provider_(provider),
      space_(space),
      masked_shortcut_(masked_shortcut && space.has_mask),
      factor_count_(factor_count) {}

void PosteriorCache::record(std::size_t factor, std::size_t position,
                            const Sequence& z, double t, bool shortcut,
                            const TokenPMF& served) {
  if (!trace_on_) return;
  trace_.push_back({factor, position, z, t, shortcut, served});
}

TokenPMF PosteriorCache::factor_posterior(std::size_t factor,
                                          std::size_t position,
                                          const Sequence& z, double t) {
  if (factor >= factor_count_) throw contract_error("factor index out of range");
  if (position >= space_.positions) {
    throw contract_error("position index out of range");
  }

  if (masked_shortcut_) {
    const TokenId mask = space_.mask_token();
    if (factor + 1 == factor_count_) {
      TokenPMF served = delta_pmf(mask, space_.alphabet_size());
      record(factor, position, z, t, true, served);
      return served;
    }
    if (factor == 0 && z[position] != mask) {
      TokenPMF served = delta_pmf(z[position], space_.alphabet_size());
      record(factor, position, z, t, true, served);
      return served;
    }
  }

  const bool same_state = have_state_ && state_ == z;
  const bool same_time = provider_.time_independent() || at_time_ == t;
  if (!same_state || !same_time) {
    memo_.clear();
    state_ = z;
    at_time_ = t;
    have_state_ = true;
    counted_ = false;
  }
  const auto key = std::make_pair(factor, position);
  auto it = memo_.find(key);
  if (it == memo_.end()) {
    if (!counted_) {
      ++nfe_;
      counted_ = true;
    }
    it = memo_.emplace(key, provider_.factor_posterior(factor, position, z, t))
             .first;
  }
  record(factor, position, z, t, false, it->second);
  return it->second;
}

void PosteriorCache::reset() {
  have_state_ = false;
  counted_ = false;
  memo_.clear();
  nfe_ = 0;
  trace_.clear();
}

// Routes posterior queries through the cache and tempers the data factor.
class SamplerRateAdapter : public PosteriorProvider {
 public:
  explicit SamplerRateAdapter(Sampler& sampler) : sampler_(&sampler) {}

  TokenPMF factor_posterior(std::size_t factor, std::size_t position,
                            const Sequence& z, double t) const override {
    TokenPMF pmf = sampler_->cache_.factor_posterior(factor, position, z, t);
    if (factor == 0 && sampler_->config_.temperature) {
      pmf = apply_temperature(pmf, sampler_->config_.temperature->eval(t));
    }
    return pmf;
  }

 private:
  Sampler* sampler_;
};

namespace {

bool masked_shortcut_applies(const SpaceSpec& space, const SourceSpec& source,
                             const CouplingSpec& coupling,
                             const ConditionalPath& path) {
  return space.has_mask && source.kind == SourceSpec::Kind::all_mask &&
         coupling.kind == CouplingSpec::Kind::independent && path.is_convex();
}

}  // namespace

Sampler::Sampler(SpaceSpec space, ConditionalPath path, SourceSpec source,
                 const PosteriorProvider& provider, SamplerConfig config)
    : space_(space),
      path_(std::move(path)),
      source_(std::move(source)),
      config_(std::move(config)),
      cache_(provider, space_,
             masked_shortcut_applies(space_, source_, config_.coupling, path_),
             path_.factor_count()) {
  space_.validate();
  source_.validate(space_);
  config_.coupling.validate(space_, source_);
  if (config_.n_steps == 0) {
    throw config_error("sampler needs at least one step");
  }
  if (config_.corrector) {
    config_.corrector->validate();
    if (config_.direction == Direction::backward) {
      throw config_error("corrector sampling runs forward only");
    }
  }
  if (config_.corrector_iterations) {
    config_.corrector_iterations->validate();
    if (!config_.corrector) {
      throw config_error("corrector iterations need a corrector schedule");
    }
  }
  if (config_.temperature) config_.temperature->validate();
  if (config_.conditioning) config_.conditioning->validate(space_);

  const bool needs_backward =
      config_.direction == Direction::backward || config_.corrector.has_value();
  if (needs_backward && config_.backward_kind == BackwardKind::simple) {
    if (!path_.is_convex()) {
      throw config_error("the simple backward velocity needs a convex path");
    }
    if (config_.coupling.kind != CouplingSpec::Kind::independent) {
      throw config_error(
          "the simple backward velocity needs the independent coupling");
    }
  }
  source_marginal_ = source_.token_pmf(space_);
  build_plan();
  if (config_.trace_posteriors) cache_.enable_trace(true);
}

double Sampler::stable_bound(double t) const {
  if (config_.direction == Direction::forward && config_.corrector) {
    return max_stable_step(path_.scheduler(), t, *config_.corrector);
  }
  return max_stable_step(path_.scheduler(), t, config_.direction);
}

void Sampler::build_plan() {
  plan_.clear();
  const double lo = kTimeEps;
  const double hi = 1.0 - kTimeEps;

  if (config_.direction == Direction::forward) {
    const double nominal = hi / static_cast<double>(config_.n_steps);
    double t = 0.0;
    while (hi - t > kPlanResolution) {
      double h = std::min(nominal, hi - t);
      if (config_.adaptive) h = std::min(h, stable_bound(t));
      if (!(h > 0.0) || !std::isfinite(h)) {
        throw step_error("step plan stalled before reaching the endpoint");
      }
      plan_.push_back({t, h, StepPlanEntry::Kind::advance});
      if (plan_.size() >= config_.max_plan_steps) {
        throw step_error("step plan exceeded its size cap");
      }
      t += h;
    }
    plan_.push_back({hi, max_stable_step(path_.scheduler(), hi,
                                         Direction::forward),
                     StepPlanEntry::Kind::maximal});
  } else {
    const double nominal = (1.0 - lo) / static_cast<double>(config_.n_steps);
    double t = 1.0;
    while (t - lo > kPlanResolution) {
      double h = std::min(nominal, t - lo);
      if (config_.adaptive) h = std::min(h, stable_bound(t));
      if (!(h > 0.0) || !std::isfinite(h)) {
        throw step_error("step plan stalled before reaching the endpoint");
      }
      plan_.push_back({t, h, StepPlanEntry::Kind::advance});
      if (plan_.size() >= config_.max_plan_steps) {
        throw step_error("step plan exceeded its size cap");
      }
      t -= h;
    }
    plan_.push_back({lo, max_stable_step(path_.scheduler(), lo,
                                         Direction::backward),
                     StepPlanEntry::Kind::maximal});
  }

  if (config_.corrector_iterations) {
    const auto& spec = *config_.corrector_iterations;
    std::size_t at = plan_.size() - 1;
    for (std::size_t k = 0; k < plan_.size(); ++k) {
      if (plan_[k].t >= spec.t_fixed) {
        at = k;
        break;
      }
    }
    const double t_fix = plan_[at].t;
    const double h_fix =
        spec.step_scale *
        max_stable_step(path_.scheduler(), t_fix, *config_.corrector);
    const StepPlanEntry entry{t_fix, h_fix, StepPlanEntry::Kind::fix};
    plan_.insert(plan_.begin() + static_cast<std::ptrdiff_t>(at),
                 spec.iterations, entry);
  }
}

RateVector Sampler::forward_rates(double t, std::size_t i, const Sequence& z) {
  SamplerRateAdapter adapter(*this);
  return marginal_velocity(path_, space_, adapter, Direction::forward, t, i, z);
}

RateVector Sampler::backward_rates(double t, std::size_t i, const Sequence& z) {
  if (config_.backward_kind == BackwardKind::simple) {
    return simple_backward_velocity(path_.scheduler().base(), space_,
                                    source_marginal_, t, i, z);
  }
  SamplerRateAdapter adapter(*this);
  return marginal_velocity(path_, space_, adapter, Direction::backward, t, i,
                           z);
}

RateVector Sampler::step_rates(const StepPlanEntry& entry, std::size_t i,
                               const Sequence& z) {
  switch (entry.kind) {
    case StepPlanEntry::Kind::maximal:
      return config_.direction == Direction::forward
                 ? forward_rates(entry.t, i, z)
                 : backward_rates(entry.t, i, z);
    case StepPlanEntry::Kind::advance:
      if (config_.direction == Direction::backward) {
        return backward_rates(entry.t, i, z);
      }
      if (!config_.corrector) return forward_rates(entry.t, i, z);
      [[fallthrough]];
    case StepPlanEntry::Kind::fix: {
      const auto value = config_.corrector->eval(clamp_time(entry.t));
      return corrector_velocity(forward_rates(entry.t, i, z),
                                backward_rates(entry.t, i, z), value.alpha_t,
                                value.beta_t);
    }
  }
  throw contract_error("unknown step kind");
}

std::vector<TokenPMF> Sampler::position_kernels(const Sequence& z,
                                                const StepPlanEntry& entry) {
  check_state_shape(space_, z);
  const double sign =
      config_.direction == Direction::forward ||
              entry.kind == StepPlanEntry::Kind::fix
          ? 1.0
          : -1.0;
  const std::uint32_t ab = space_.alphabet_size();
  std::vector<TokenPMF> kernels(space_.positions);
  for (std::size_t i = 0; i < space_.positions; ++i) {
    const RateVector rates = step_rates(entry, i, z);
    TokenPMF kernel(ab);
    for (std::uint32_t k = 0; k < ab; ++k) {
      kernel[k] = (k == z[i] ? 1.0 : 0.0) + sign * entry.h * rates.rates[k];
    }
    try {
      pmf_clamp_renormalize(kernel);
    } catch (const contract_error&) {
      throw step_error("update kernel left the simplex; reduce the step");
    }
    kernels[i] = std::move(kernel);
  }
  return kernels;
}

Sequence Sampler::draw_initial(RngStream& rng) const {
  return source_.sample(space_, rng);
}

SampleResult Sampler::run_chain(RngStream& rng, Sequence init) {
  check_state_shape(space_, init);
  cache_.reset();
  Sequence state = std::move(init);
  if (config_.conditioning) config_.conditioning->apply(state);

  SampleResult result;
  for (std::size_t n = 0; n < plan_.size(); ++n) {
    const StepPlanEntry& entry = plan_[n];
    const std::vector<TokenPMF> kernels = position_kernels(state, entry);
    for (std::size_t i = 0; i < space_.positions; ++i) {
      state[i] = pmf_sample(kernels[i], rng);
    }
    if (config_.conditioning) config_.conditioning->apply(state);
    if (config_.record_trajectory) {
      result.trajectory.push_back({n, entry.t, entry.h, entry.kind, state});
    }
  }
  result.final_state = std::move(state);
  result.steps = plan_.size();
  result.nfe = cache_.nfe();
  return result;
}

SampleResult Sampler::run_chain(RngStream& rng) {
  if (config_.direction == Direction::backward) {
    throw config_error("backward runs need an explicit initial state");
  }
  return run_chain(rng, draw_initial(rng));
}

DensePMF exact_chain_law(const EnumeratedSpace& space, Sampler& sampler,
                         DensePMF init) {
  if (init.size() != space.size()) {
    throw contract_error("dense law does not match the state count");
  }
  sampler.cache().reset();
  DensePMF law = std::move(init);
  DensePMF next(law.size(), 0.0);
  for (const StepPlanEntry& entry : sampler.plan()) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::uint64_t n = 0; n < law.size(); ++n) {
      if (law[n] == 0.0) continue;
      fan_out_product(next, law[n],
                      sampler.position_kernels(space.state(n), entry));
    }
    law.swap(next);
  }
  return law;
}

DensePMF source_law_dense(const EnumeratedSpace& space,
                          const SourceSpec& source) {
  const SpaceSpec& spec = space.spec();
  const std::vector<TokenPMF> kernels(spec.positions,
                                      source.token_pmf(spec));
  DensePMF out(space.size(), 0.0);
  fan_out_product(out, 1.0, kernels);
  return out;
}

}  // namespace dfm

#include "dfm/velocities.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace dfm {
namespace {

void check_state(const SpaceSpec& space, const Sequence& z, std::size_t i) {
  if (z.size() != space.positions)
    throw contract_error("state length does not match space");
  if (i >= space.positions) throw contract_error("position out of range");
  if (!space.valid_token(z[i]))
    throw contract_error("state token outside alphabet");
}

RateVector scaled_difference(const SpaceSpec& space, double scale,
                             const TokenPMF& toward, std::size_t i,
                             TokenId current) {
  RateVector out;
  out.position = i;
  out.rates.assign(space.alphabet_size(), 0.0);
  for (std::size_t k = 0; k < out.rates.size(); ++k) out.rates[k] = scale * toward[k];
  out.rates[current] -= scale;
  return out;
}

void check_posterior_pmf(const TokenPMF& pmf, const SpaceSpec& space,
                         const char* what) {
  if (pmf.size() != space.alphabet_size())
    throw contract_error(std::string(what) + " has wrong alphabet size");
  if (!pmf_validate(pmf, 1e-6))
    throw contract_error(std::string(what) + " does not validate");
}

}  // namespace

double clamp_time(double t) {
  return std::clamp(t, kTimeEps, 1.0 - kTimeEps);
}

VelocityCoefficients velocity_coefficients(const MixtureScheduler& scheduler,
                                           double t, std::size_t position,
                                           Direction direction) {
  const auto values = scheduler.eval(clamp_time(t), position);
  const std::size_t m = values.size();

  std::size_t pivot = m;
  double best = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    if (values[j].kappa <= kMassEps) continue;
    const double ratio = values[j].kappa_dot / values[j].kappa;
    const bool better = (pivot == m) ||
                        (direction == Direction::forward ? ratio < best
                                                         : ratio > best);
    if (better) {
      pivot = j;
      best = ratio;
    }
  }
  if (pivot == m)
    throw singularity_error(
        "velocity undefined: every mixture component lost its mass");

  VelocityCoefficients coeffs;
  coeffs.pivot = pivot;
  coeffs.b = best;
  coeffs.a.resize(m);
  for (std::size_t j = 0; j < m; ++j)
    coeffs.a[j] = values[j].kappa_dot - values[j].kappa * best;
  // Identically zero by construction; write it exactly so the pivot factor
  // is never queried.
  coeffs.a[pivot] = 0.0;
  return coeffs;
}

RateVector conditional_velocity(const ConditionalPath& path,
                                const SpaceSpec& space, Direction direction,
                                double t, std::size_t i, const Sequence& z,
                                const Sequence& x0, const Sequence& x1) {
  check_state(space, z, i);
  const auto coeffs = velocity_coefficients(path.scheduler(), t, i, direction);
  RateVector out;
  out.position = i;
  out.rates.assign(space.alphabet_size(), 0.0);
  for (std::size_t j = 0; j < path.factor_count(); ++j) {
    if (coeffs.a[j] == 0.0) continue;
    const TokenPMF factor = path.factor_pmf(j, space, i, x0, x1);
    for (std::size_t k = 0; k < out.rates.size(); ++k)
      out.rates[k] += coeffs.a[j] * factor[k];
  }
  out.rates[z[i]] += coeffs.b;
  return out;
}

RateVector marginal_velocity(const ConditionalPath& path,
                             const SpaceSpec& space,
                             const PosteriorProvider& posterior,
                             Direction direction, double t, std::size_t i,
                             const Sequence& z) {
  check_state(space, z, i);
  const auto coeffs = velocity_coefficients(path.scheduler(), t, i, direction);
  // The posterior is consulted at the same clamped time the coefficients use,
  // so states only reachable strictly inside (0, 1) stay well defined.
  const double tc = clamp_time(t);
  RateVector out;
  out.position = i;
  out.rates.assign(space.alphabet_size(), 0.0);
  for (std::size_t j = 0; j < path.factor_count(); ++j) {
    if (coeffs.a[j] == 0.0) continue;
    const TokenPMF factor = posterior.factor_posterior(j, i, z, tc);
    check_posterior_pmf(factor, space, "factor posterior");
    for (std::size_t k = 0; k < out.rates.size(); ++k)
      out.rates[k] += coeffs.a[j] * factor[k];
  }
  out.rates[z[i]] += coeffs.b;
  return out;
}

RateVector denoiser_velocity(const ScalarScheduler& kappa,
                             const SpaceSpec& space, const TokenPMF& p1t,
                             double t, std::size_t i, const Sequence& z) {
  check_state(space, z, i);
  check_posterior_pmf(p1t, space, "denoiser posterior");
  const auto value = kappa.eval(clamp_time(t));
  const double scale = value.kappa_dot / (1.0 - value.kappa);
  return scaled_difference(space, scale, p1t, i, z[i]);
}

RateVector denoiser_velocity(const ScalarScheduler& kappa,
                             const SpaceSpec& space,
                             const PosteriorProvider& posterior, double t,
                             std::size_t i, const Sequence& z) {
  return denoiser_velocity(kappa, space,
                           posterior.factor_posterior(0, i, z, clamp_time(t)),
                           t, i, z);
}

RateVector noise_pred_velocity(const ScalarScheduler& kappa,
                               const SpaceSpec& space, const TokenPMF& p0t,
                               double t, std::size_t i, const Sequence& z) {
  check_state(space, z, i);
  check_posterior_pmf(p0t, space, "noise posterior");
  const auto value = kappa.eval(clamp_time(t));
  const double scale = -value.kappa_dot / value.kappa;
  return scaled_difference(space, scale, p0t, i, z[i]);
}

RateVector noise_pred_velocity(const ScalarScheduler& kappa,
                               const SpaceSpec& space,
                               const PosteriorProvider& posterior, double t,
                               std::size_t i, const Sequence& z) {
  const std::size_t last = 1;  // noise factor of a convex path
  return noise_pred_velocity(
      kappa, space, posterior.factor_posterior(last, i, z, clamp_time(t)), t,
      i, z);
}

RateVector simple_backward_velocity(const ScalarScheduler& kappa,
                                    const SpaceSpec& space,
                                    const TokenPMF& source_marginal, double t,
                                    std::size_t i, const Sequence& z) {
  check_state(space, z, i);
  check_posterior_pmf(source_marginal, space, "source marginal");
  const auto value = kappa.eval(clamp_time(t));
  const double scale = -value.kappa_dot / value.kappa;
  return scaled_difference(space, scale, source_marginal, i, z[i]);
}

RateVector simple_backward_velocity(const ScalarScheduler& kappa,
                                    const SpaceSpec& space,
                                    const SourceSpec& source,
                                    const CouplingSpec& coupling, double t,
                                    std::size_t i, const Sequence& z) {
  if (coupling.kind != CouplingSpec::Kind::independent)
    throw config_error(
        "posterior-free backward velocity needs the independent coupling");
  return simple_backward_velocity(kappa, space, source.token_pmf(space), t, i,
                                  z);
}

RateVector corrector_velocity(const RateVector& forward,
                              const RateVector& backward, double alpha_t,
                              double beta_t) {
  if (!(alpha_t > 0.0) || !(beta_t >= 0.0))
    throw config_error("corrector weights need alpha_t > 0 and beta_t >= 0");
  if (forward.position != backward.position ||
      forward.rates.size() != backward.rates.size())
    throw contract_error("corrector velocity: mismatched rate vectors");
  RateVector out;
  out.position = forward.position;
  out.rates.resize(forward.rates.size());
  for (std::size_t k = 0; k < out.rates.size(); ++k)
    out.rates[k] = alpha_t * forward.rates[k] - beta_t * backward.rates[k];
  return out;
}

bool validate_rates(const RateVector& rates, TokenId current,
                    Direction direction, double tol) {
  if (current >= rates.rates.size()) return false;
  double sum = 0.0;
  for (std::size_t k = 0; k < rates.rates.size(); ++k) {
    const double r = rates.rates[k];
    sum += r;
    if (k == current) continue;
    if (direction == Direction::forward && r < -tol) return false;
    if (direction == Direction::backward && r > tol) return false;
  }
  return std::fabs(sum) <= tol;
}

VelocityField make_marginal_velocity_field(const ConditionalPath& path,
                                           const SpaceSpec& space,
                                           const PosteriorProvider& posterior,
                                           Direction direction) {
  return [&path, &space, &posterior, direction](
             std::size_t i, const Sequence& z, double t) {
    return marginal_velocity(path, space, posterior, direction, t, i, z);
  };
}

RemappedPosterior::RemappedPosterior(const PosteriorProvider& inner,
                                     ScalarScheduler trained,
                                     ScalarScheduler sampling)
    : inner_(inner),
      trained_(std::move(trained)),
      sampling_(std::move(sampling)) {}

TokenPMF RemappedPosterior::factor_posterior(std::size_t factor,
                                             std::size_t position,
                                             const Sequence& z,
                                             double t) const {
  const double mapped = scheduler_time_remap(trained_, sampling_, t);
  return inner_.factor_posterior(factor, position, z, mapped);
}

}  // namespace dfm

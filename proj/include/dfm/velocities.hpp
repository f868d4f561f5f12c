#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "dfm/core.hpp"
#include "dfm/paths.hpp"
#include "dfm/schedulers.hpp"

namespace dfm {

enum class Direction { forward, backward };

// Transition rates for one position: rates[k] is the jump intensity into
// token k; the entry at the current token balances the rest, so the vector
// sums to zero.
struct RateVector {
  std::size_t position = 0;
  std::vector<double> rates;
};

// Mixture decomposition of a velocity: u = sum_j a[j] * w^j + b * delta_z.
struct VelocityCoefficients {
  std::vector<double> a;
  double b = 0.0;
  std::size_t pivot = 0;  // component whose mass ratio was factored out
};

// Ratio singularities at the endpoints are avoided by clamping t into
// [kTimeEps, 1 - kTimeEps] before forming kappa_dot / kappa.
inline constexpr double kTimeEps = 1e-6;
// Mixture components with less mass than this are skipped when choosing the
// pivot; a velocity with no component above it is undefined.
inline constexpr double kMassEps = 1e-9;

double clamp_time(double t);

// Picks the pivot (smallest mass ratio forward, largest backward, ties to the
// lowest index) and forms the coefficients a_j = kappa_dot_j - kappa_j * b,
// b = kappa_dot_pivot / kappa_pivot.
VelocityCoefficients velocity_coefficients(const MixtureScheduler& scheduler,
                                           double t, std::size_t position,
                                           Direction direction);

// Posterior over tokens for each mixture factor given the current state.
// Implementations range from exact enumeration to trained tables.
class PosteriorProvider {
 public:
  virtual ~PosteriorProvider() = default;
  virtual TokenPMF factor_posterior(std::size_t factor, std::size_t position,
                                    const Sequence& z, double t) const = 0;
  // True when the posterior provably does not depend on t, which licenses
  // caching across steps while the state is unchanged.
  virtual bool time_independent() const { return false; }
};

// Velocity given the endpoints (the sampled pair the path conditions on).
RateVector conditional_velocity(const ConditionalPath& path,
                                const SpaceSpec& space, Direction direction,
                                double t, std::size_t i, const Sequence& z,
                                const Sequence& x0, const Sequence& x1);

// Velocity given factor posteriors of the marginal path at state z.
RateVector marginal_velocity(const ConditionalPath& path,
                             const SpaceSpec& space,
                             const PosteriorProvider& posterior,
                             Direction direction, double t, std::size_t i,
                             const Sequence& z);

// Forward velocity of a convex path written against the denoiser posterior:
// (kappa_dot / (1 - kappa)) * (p1t - delta_z).
RateVector denoiser_velocity(const ScalarScheduler& kappa,
                             const SpaceSpec& space, const TokenPMF& p1t,
                             double t, std::size_t i, const Sequence& z);
RateVector denoiser_velocity(const ScalarScheduler& kappa,
                             const SpaceSpec& space,
                             const PosteriorProvider& posterior, double t,
                             std::size_t i, const Sequence& z);

// Backward velocity of a convex path written against the noise posterior:
// (kappa_dot / kappa) * (delta_z - p0t).
RateVector noise_pred_velocity(const ScalarScheduler& kappa,
                               const SpaceSpec& space, const TokenPMF& p0t,
                               double t, std::size_t i, const Sequence& z);
RateVector noise_pred_velocity(const ScalarScheduler& kappa,
                               const SpaceSpec& space,
                               const PosteriorProvider& posterior, double t,
                               std::size_t i, const Sequence& z);

// Backward velocity that needs no posterior: (kappa_dot / kappa) *
// (delta_z - p) with p the iid source marginal. Valid for iid sources under
// the independent coupling.
RateVector simple_backward_velocity(const ScalarScheduler& kappa,
                                    const SpaceSpec& space,
                                    const TokenPMF& source_marginal, double t,
                                    std::size_t i, const Sequence& z);
RateVector simple_backward_velocity(const ScalarScheduler& kappa,
                                    const SpaceSpec& space,
                                    const SourceSpec& source,
                                    const CouplingSpec& coupling, double t,
                                    std::size_t i, const Sequence& z);

// Convex combination alpha_t * forward - beta_t * backward used by corrector
// sampling.
RateVector corrector_velocity(const RateVector& forward,
                              const RateVector& backward, double alpha_t,
                              double beta_t);

// Rate conditions: zero row sum and sign constraints off the current token
// (non-negative forward, non-positive backward).
bool validate_rates(const RateVector& rates, TokenId current,
                    Direction direction, double tol = 1e-9);

// Velocity field over (position, state, time); the building block the exact
// checks integrate.
using VelocityField =
    std::function<RateVector(std::size_t position, const Sequence& state,
                             double t)>;

VelocityField make_marginal_velocity_field(const ConditionalPath& path,
                                           const SpaceSpec& space,
                                           const PosteriorProvider& posterior,
                                           Direction direction);

// Decorator mapping requests at sampling time t to a model trained under a
// different schedule: t' solves kappa(t') = kappa_prime(t).
class RemappedPosterior : public PosteriorProvider {
 public:
  RemappedPosterior(const PosteriorProvider& inner, ScalarScheduler trained,
                    ScalarScheduler sampling);
  TokenPMF factor_posterior(std::size_t factor, std::size_t position,
                            const Sequence& z, double t) const override;
  bool time_independent() const override { return inner_.time_independent(); }

 private:
  const PosteriorProvider& inner_;
  ScalarScheduler trained_;
  ScalarScheduler sampling_;
};

}  // namespace dfm

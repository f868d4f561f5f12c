#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "dfm/core.hpp"
#include "dfm/paths.hpp"
#include "dfm/velocities.hpp"

namespace dfm {

// Fully enumerated state space for exact checks. States are ordered by the
// mixed-radix index with position 0 most significant, which coincides with
// lexicographic order on sequences.
class EnumeratedSpace {
 public:
  static constexpr std::uint64_t kDefaultMaxStates = 1ull << 21;

  explicit EnumeratedSpace(SpaceSpec spec,
                           std::uint64_t max_states = kDefaultMaxStates);

  const SpaceSpec& spec() const { return spec_; }
  std::uint64_t size() const { return states_.size(); }
  std::uint64_t index_of(const Sequence& s) const;
  const Sequence& state(std::uint64_t index) const { return states_.at(index); }

 private:
  SpaceSpec spec_;
  std::vector<Sequence> states_;
};

struct CoupledPair {
  std::uint64_t x0 = 0;
  std::uint64_t x1 = 0;
  double prob = 0.0;
};

// Materialized endpoint coupling over an enumerated space. Construction
// verifies that the marginals reproduce the source and target laws.
class ExplicitCoupling {
 public:
  static ExplicitCoupling independent(const EnumeratedSpace& space,
                                      const SourceSpec& source,
                                      const TargetSpec& target);
  static ExplicitCoupling conditional_prefix(const EnumeratedSpace& space,
                                             const TargetSpec& target);
  static ExplicitCoupling of(const EnumeratedSpace& space,
                             const CouplingSpec& coupling,
                             const SourceSpec& source,
                             const TargetSpec& target);

  const std::vector<CoupledPair>& pairs() const { return pairs_; }

 private:
  explicit ExplicitCoupling(std::vector<CoupledPair> pairs);
  std::vector<CoupledPair> pairs_;
};

// Dense distributions are indexed by EnumeratedSpace state index.
using DensePMF = std::vector<double>;

DensePMF joint_to_dense(const EnumeratedSpace& space, const JointPMF& q);
JointPMF dense_to_joint(const EnumeratedSpace& space, const DensePMF& p,
                        double drop_below = 0.0);
double dense_tv(const DensePMF& a, const DensePMF& b);

// Exact marginal law of X_t: sums the conditional product path over every
// coupled endpoint pair.
DensePMF exact_marginal_dense(const EnumeratedSpace& space,
                              const ExplicitCoupling& coupling,
                              const ConditionalPath& path, double t);
JointPMF exact_marginal(const EnumeratedSpace& space,
                        const ExplicitCoupling& coupling,
                        const ConditionalPath& path, double t);

// Posterior over coupling pairs given the state z; entries align with
// coupling.pairs() and carry normalized probabilities.
std::vector<std::pair<std::size_t, double>> exact_posterior(
    const EnumeratedSpace& space, const ExplicitCoupling& coupling,
    const ConditionalPath& path, const Sequence& z, double t);

// Posterior-weighted factor distribution at one position.
TokenPMF exact_factor_posterior(const EnumeratedSpace& space,
                                const ExplicitCoupling& coupling,
                                const ConditionalPath& path, std::size_t factor,
                                std::size_t i, const Sequence& z, double t);

// Exact posteriors served through the provider interface. Construction
// detects the one case with a provably time-independent posterior (all-mask
// source endpoints under a convex path).
class OracleProvider : public PosteriorProvider {
 public:
  OracleProvider(const EnumeratedSpace& space, const ExplicitCoupling& coupling,
                 const ConditionalPath& path);

  TokenPMF factor_posterior(std::size_t factor, std::size_t position,
                            const Sequence& z, double t) const override;
  bool time_independent() const override { return time_independent_; }

 private:
  const EnumeratedSpace& space_;
  const ExplicitCoupling& coupling_;
  const ConditionalPath& path_;
  bool time_independent_ = false;
};

// Divergence of the probability flux p * u at state x. Only the state itself
// and its single-token neighbours contribute.
double discrete_divergence(const EnumeratedSpace& space, const DensePMF& p,
                           const VelocityField& field, double t,
                           const Sequence& x);

struct ContinuityReport {
  double max_residual = 0.0;
  Sequence worst_state;
};

// Residual of d/dt p_t + div(p_t u_t) over every state, with the time
// derivative taken by central differences of the exact marginal.
ContinuityReport continuity_residual(const EnumeratedSpace& space,
                                     const ExplicitCoupling& coupling,
                                     const ConditionalPath& path,
                                     const VelocityField& field, double t,
                                     double fd_step = 1e-4);

// Pushes a law through one Euler step exactly: each state fans out through
// the product of its per-position update kernels.
DensePMF exact_euler_pushforward(const EnumeratedSpace& space,
                                 const DensePMF& p, const VelocityField& field,
                                 double t, double h,
                                 Direction direction = Direction::forward);

}  // namespace dfm

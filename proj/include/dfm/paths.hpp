#pragma once

#include <cstdint>
#include <vector>

#include "dfm/core.hpp"
#include "dfm/schedulers.hpp"

namespace dfm {

// Per-position distribution the chain starts from at t = 0. All catalog
// sources factorize across positions.
struct SourceSpec {
  enum class Kind { all_mask, uniform, iid_custom };

  Kind kind = Kind::all_mask;
  // Uniform / custom sources put zero mass on the mask unless asked to.
  bool include_mask = false;
  TokenPMF custom;

  static SourceSpec all_mask();
  static SourceSpec uniform(bool include_mask = false);
  static SourceSpec iid_custom(TokenPMF pmf);

  void validate(const SpaceSpec& space) const;
  TokenPMF token_pmf(const SpaceSpec& space) const;
  Sequence sample(const SpaceSpec& space, RngStream& rng) const;
};

// Data distribution the chain should reach at t = 1. Either an explicit
// joint PMF or an empirical dataset sampled with replacement.
struct TargetSpec {
  enum class Kind { explicit_pmf, dataset };

  Kind kind = Kind::explicit_pmf;
  JointPMF q;
  std::vector<Sequence> data;

  static TargetSpec explicit_pmf(JointPMF q);
  static TargetSpec dataset(std::vector<Sequence> sequences);

  void validate(const SpaceSpec& space) const;
  Sequence sample(RngStream& rng) const;
  // The joint law backing this target: q itself, or dataset frequencies.
  JointPMF joint() const;
};

// How endpoint pairs (x_0, x_1) are drawn. The independent coupling draws
// both sides separately; the prefix coupling reveals a uniformly sized
// prefix of the data sequence and masks the rest.
struct CouplingSpec {
  enum class Kind { independent, conditional_prefix };

  Kind kind = Kind::independent;

  void validate(const SpaceSpec& space, const SourceSpec& source) const;
};

struct EndpointPair {
  Sequence x0;
  Sequence x1;
};

EndpointPair coupling_sample(const CouplingSpec& coupling,
                             const SpaceSpec& space, const SourceSpec& source,
                             const TargetSpec& target, RngStream& rng);

// Conditional probability path: a per-position mixture over simple factor
// distributions whose weights follow a MixtureScheduler. The first factor is
// always the target delta and the last the source delta; the uniform-noise
// path inserts a fixed uniform factor in between.
class ConditionalPath {
 public:
  enum class FactorKind { target_delta, uniform, source_delta };

  // (1 - kappa) * delta_{x0} + kappa * delta_{x1}.
  static ConditionalPath convex(ScalarScheduler kappa);
  // kappa * delta_{x1} + c*kappa*(1-kappa) * uniform + rest * delta_{x0}.
  static ConditionalPath uniform_noise(ScalarScheduler base, double c,
                                       bool include_mask_in_uniform = false);
  static ConditionalPath general(MixtureScheduler scheduler,
                                 std::vector<FactorKind> factors,
                                 bool include_mask_in_uniform = false);

  const MixtureScheduler& scheduler() const { return scheduler_; }
  std::size_t factor_count() const { return factors_.size(); }
  FactorKind factor(std::size_t j) const { return factors_.at(j); }
  bool is_convex() const;
  bool include_mask_in_uniform() const { return include_mask_in_uniform_; }

  // w^j(. | x_0, x_1) at position i.
  TokenPMF factor_pmf(std::size_t j, const SpaceSpec& space, std::size_t i,
                      const Sequence& x0, const Sequence& x1) const;
  // The uniform factor's fixed distribution.
  TokenPMF uniform_pmf(const SpaceSpec& space) const;

 private:
  ConditionalPath(MixtureScheduler scheduler, std::vector<FactorKind> factors,
                  bool include_mask_in_uniform);

  MixtureScheduler scheduler_;
  std::vector<FactorKind> factors_;
  bool include_mask_in_uniform_ = false;
};

// Token distribution of X_t^i given the endpoints.
TokenPMF cond_path_token_pmf(const ConditionalPath& path,
                             const SpaceSpec& space, double t, std::size_t i,
                             const Sequence& x0, const Sequence& x1);

// Draws X_t given the endpoints, independently per position.
Sequence sample_xt(const ConditionalPath& path, const SpaceSpec& space,
                   double t, const Sequence& x0, const Sequence& x1,
                   RngStream& rng);

}  // namespace dfm

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "dfm/core.hpp"
#include "dfm/oracle.hpp"
#include "dfm/paths.hpp"
#include "dfm/schedulers.hpp"
#include "dfm/velocities.hpp"

namespace dfm {

// Largest h for which delta +/- h*u stays a distribution at every state:
// the reciprocal of the pivot ratio magnitude.
double max_stable_step(const MixtureScheduler& scheduler, double t,
                       Direction direction);
// Corrector variant: 1 / (alpha_t*|b_fwd| + beta_t*|b_bwd|).
double max_stable_step(const MixtureScheduler& scheduler, double t,
                       const CorrectorSchedule& corrector);

// Sharpens (tau < 1) or flattens (tau > 1) a distribution in the log domain.
// Zero entries stay zero; tau below 1e-12 returns the argmax (lowest index
// on ties).
TokenPMF apply_temperature(const TokenPMF& pmf, double tau);

struct StepPlanEntry {
  enum class Kind {
    advance,  // move t by h
    fix,      // corrector iteration at fixed t
    maximal,  // final jump onto the endpoint law
  };

  double t = 0.0;
  double h = 0.0;
  Kind kind = Kind::advance;
};

// Extra corrector iterations spliced into the plan at the first grid point
// at or past t_fixed; each uses step_scale times the stable corrector step.
struct CorrectorIterationSpec {
  double t_fixed = 0.5;
  std::size_t iterations = 1;
  double step_scale = 0.9;

  void validate() const;
};

// Tokens pinned at fixed positions; reapplied after the initial draw and
// after every step.
struct ConditioningSpec {
  std::map<std::size_t, TokenId> fixed;

  void validate(const SpaceSpec& space) const;
  void apply(Sequence& state) const;
};

enum class BackwardKind { posterior, simple };

struct SamplerConfig {
  Direction direction = Direction::forward;
  std::size_t n_steps = 128;
  bool adaptive = true;
  BackwardKind backward_kind = BackwardKind::posterior;
  CouplingSpec coupling;
  std::optional<CorrectorSchedule> corrector;
  std::optional<TemperatureSchedule> temperature;
  std::optional<CorrectorIterationSpec> corrector_iterations;
  std::optional<ConditioningSpec> conditioning;
  bool record_trajectory = false;
  bool trace_posteriors = false;
  std::size_t max_plan_steps = 1u << 20;
};

struct StepRecord {
  std::size_t index = 0;
  double t = 0.0;
  double h = 0.0;
  StepPlanEntry::Kind kind = StepPlanEntry::Kind::advance;
  Sequence state;  // after the step
};

struct PosteriorTraceEntry {
  std::size_t factor = 0;
  std::size_t position = 0;
  Sequence state;
  double t = 0.0;
  bool shortcut = false;
  TokenPMF served;
};

struct SampleResult {
  Sequence final_state;
  std::uint64_t nfe = 0;
  std::size_t steps = 0;
  std::vector<StepRecord> trajectory;
};

// Memoizes factor posteriors. One model evaluation covers every factor and
// position at a given state, so nfe() counts evaluations, not queries; the
// memo survives across times when the provider is time independent. With the
// masked shortcut enabled (all-mask source, independent coupling, convex
// path) unmasked positions and the source factor are answered locally.
class PosteriorCache {
 public:
  PosteriorCache(const PosteriorProvider& provider, const SpaceSpec& space,
                 bool masked_shortcut, std::size_t factor_count);

  TokenPMF factor_posterior(std::size_t factor, std::size_t position,
                            const Sequence& z, double t);
  void reset();
  std::uint64_t nfe() const { return nfe_; }
  void enable_trace(bool on) { trace_on_ = on; }
  const std::vector<PosteriorTraceEntry>& trace() const { return trace_; }

 private:
  void record(std::size_t factor, std::size_t position, const Sequence& z,
              double t, bool shortcut, const TokenPMF& served);

  const PosteriorProvider& provider_;
  SpaceSpec space_;
  bool masked_shortcut_;
  std::size_t factor_count_;
  bool have_state_ = false;
  bool counted_ = false;
  Sequence state_;
  double at_time_ = 0.0;
  std::map<std::pair<std::size_t, std::size_t>, TokenPMF> memo_;
  std::uint64_t nfe_ = 0;
  bool trace_on_ = false;
  std::vector<PosteriorTraceEntry> trace_;
};

// Euler-method CTMC simulator. Builds a step plan up front (nominal step
// shortened by the stability bound when adaptive), runs chains through it,
// and finishes with one maximal step that lands exactly on the endpoint law
// of the current posterior.
class Sampler {
 public:
  Sampler(SpaceSpec space, ConditionalPath path, SourceSpec source,
          const PosteriorProvider& provider, SamplerConfig config);

  const std::vector<StepPlanEntry>& plan() const { return plan_; }
  const SamplerConfig& config() const { return config_; }

  Sequence draw_initial(RngStream& rng) const;
  SampleResult run_chain(RngStream& rng, Sequence init);
  // Forward convenience: initial state drawn from the source.
  SampleResult run_chain(RngStream& rng);

  // The per-position one-step kernels the chain samples from; the exact law
  // evolution pushes mass through the same kernels.
  std::vector<TokenPMF> position_kernels(const Sequence& z,
                                         const StepPlanEntry& entry);

  PosteriorCache& cache() { return cache_; }

 private:
  friend class SamplerRateAdapter;

  double stable_bound(double t) const;
  RateVector step_rates(const StepPlanEntry& entry, std::size_t i,
                        const Sequence& z);
  RateVector forward_rates(double t, std::size_t i, const Sequence& z);
  RateVector backward_rates(double t, std::size_t i, const Sequence& z);
  void build_plan();

  SpaceSpec space_;
  ConditionalPath path_;
  SourceSpec source_;
  SamplerConfig config_;
  PosteriorCache cache_;
  TokenPMF source_marginal_;
  std::vector<StepPlanEntry> plan_;
};

// Evolves a whole law through the sampler's plan; the stochastic chains are
// iid draws from exactly this law. Resets the sampler's cache.
DensePMF exact_chain_law(const EnumeratedSpace& space, Sampler& sampler,
                         DensePMF init);

// Product law of iid draws from the source, indexed by the enumeration.
DensePMF source_law_dense(const EnumeratedSpace& space,
                          const SourceSpec& source);

}  // namespace dfm

#pragma once

#include <atomic>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <tuple>
#include <utility>
#include <vector>

#include "dfm/core.hpp"
#include "dfm/paths.hpp"
#include "dfm/velocities.hpp"

namespace dfm {

// Posterior model backed by per-cell softmax logits, keyed by factor,
// position, time bin, and the full state. Factors whose distribution is known
// in closed form can be pinned to a constant instead of a table. Queries for
// unseen cells fall back to a smoothed prior accumulated during training and
// are counted for telemetry.
class TabularPosterior : public PosteriorProvider {
 public:
  struct CellKey {
    std::size_t factor = 0;
    std::size_t position = 0;
    std::size_t bin = 0;
    Sequence state;

    auto operator<=>(const CellKey&) const = default;
  };

  using PriorKey = std::tuple<std::size_t, std::size_t, std::size_t>;

  TabularPosterior(SpaceSpec space, std::size_t factor_count,
                   std::size_t time_bins);

  const SpaceSpec& space() const { return space_; }
  std::size_t factor_count() const { return factor_count_; }
  std::size_t time_bins() const { return time_bins_; }
  std::size_t bin_of(double t) const;

  void set_constant_factor(std::size_t factor, TokenPMF pmf);
  bool is_constant(std::size_t factor) const;
  const TokenPMF& constant_factor(std::size_t factor) const;

  TokenPMF factor_posterior(std::size_t factor, std::size_t position,
                            const Sequence& z, double t) const override;
  bool time_independent() const override { return time_bins_ == 1; }

  // Creates the cell with zero logits when absent.
  std::vector<double>& mutable_cell(const CellKey& key);
  const std::map<CellKey, std::vector<double>>& cells() const {
    return cells_;
  }
  void note_prior(std::size_t factor, std::size_t position, std::size_t bin,
                  TokenId observed);
  const std::map<PriorKey, std::vector<std::uint64_t>>& priors() const {
    return priors_;
  }
  void set_prior(const PriorKey& key, std::vector<std::uint64_t> counts);

  std::uint64_t fallback_served() const { return fallback_served_.load(); }

 private:
  SpaceSpec space_;
  std::size_t factor_count_;
  std::size_t time_bins_;
  std::map<CellKey, std::vector<double>> cells_;
  std::map<std::size_t, TokenPMF> constants_;
  std::map<PriorKey, std::vector<std::uint64_t>> priors_;
  // Serving is const and shared across sampling workers; only the telemetry
  // counter mutates.
  mutable std::atomic<std::uint64_t> fallback_served_{0};
};

// One bin suffices exactly when the posterior provably ignores time: all-mask
// source, independent coupling, convex path. Everything else gets a binned
// approximation.
std::size_t default_time_bins(const SpaceSpec& space, const SourceSpec& source,
                              const CouplingSpec& coupling,
                              const ConditionalPath& path);

// Law of the training times. Uniform is the documented default; the power law
// draws t = u^(1/gamma), recovering uniform at gamma = 1.
struct TimeDistribution {
  enum class Kind { uniform, power };

  Kind kind = Kind::uniform;
  double gamma = 1.0;

  void validate() const;
  double draw(RngStream& rng) const;
};

struct TrainConfig {
  std::size_t steps = 20000;
  std::size_t batch_size = 512;
  double learning_rate = 0.25;
  TimeDistribution time_dist;
  std::uint64_t seed = 0;
  double divergence_factor = 10.0;
  std::size_t log_every = 100;
};

struct TrainReport {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::size_t steps_run = 0;
  // (step index, batch loss) at every log_every-th step and the last one.
  std::vector<std::pair<std::size_t, double>> loss_history;
};

// Minibatch SGD on the cross-entropy of factor realizations drawn from the
// conditional path. Zero steps is an explicit no-op that leaves the model
// untouched. Throws training_error when the loss exceeds divergence_factor
// times its initial value.
TrainReport train_tabular(TabularPosterior& model, const SourceSpec& source,
                          const CouplingSpec& coupling,
                          const TargetSpec& target,
                          const ConditionalPath& path,
                          const TrainConfig& config);

struct LossEstimate {
  double loss = 0.0;
  std::uint64_t clipped = 0;  // probabilities floored at 1e-30
  std::uint64_t samples = 0;
};

// Monte Carlo estimate of the cross-entropy objective for any provider.
LossEstimate loss_estimate(const PosteriorProvider& provider,
                           const SpaceSpec& space, const SourceSpec& source,
                           const CouplingSpec& coupling,
                           const TargetSpec& target,
                           const ConditionalPath& path,
                           std::uint64_t n_samples, std::uint64_t seed);

// Count-based posterior: endpoint tokens tallied against the observed state,
// served with additive smoothing. Valid when the posterior is time
// independent, which the pooled counts assume.
class CountsPosterior : public PosteriorProvider {
 public:
  CountsPosterior(SpaceSpec space, std::size_t factor_count, double lambda);

  TokenPMF factor_posterior(std::size_t factor, std::size_t position,
                            const Sequence& z, double t) const override;
  bool time_independent() const override { return true; }

  void add(std::size_t factor, std::size_t position, const Sequence& z,
           TokenId observed);
  std::uint64_t min_cell_total() const;
  std::size_t cell_count() const { return counts_.size(); }

 private:
  struct Key {
    std::size_t factor = 0;
    std::size_t position = 0;
    Sequence state;

    auto operator<=>(const Key&) const = default;
  };

  SpaceSpec space_;
  std::size_t factor_count_;
  double lambda_;
  std::map<Key, std::vector<std::uint64_t>> counts_;
};

struct EstimatorConfig {
  std::uint64_t min_cell_count = 1000;
  std::uint64_t max_samples = 100000000;
  std::uint64_t round_size = 100000;
  double lambda = 0.1;
  std::uint64_t seed = 0;
};

// Draws endpoint pairs and path states until every discovered cell reaches
// the per-cell floor; caps at max_samples with a training_error.
CountsPosterior empirical_posterior_estimate(const SpaceSpec& space,
                                             const SourceSpec& source,
                                             const CouplingSpec& coupling,
                                             const TargetSpec& target,
                                             const ConditionalPath& path,
                                             const EstimatorConfig& config);

// Largest total-variation distance between posteriors served at different
// times, maximized over the given states, positions, and factors. States the
// provider rejects are skipped.
double check_time_independence(const PosteriorProvider& provider,
                               const SpaceSpec& space,
                               const std::vector<Sequence>& states,
                               std::size_t factor_count,
                               const std::vector<double>& times);

struct GradientCheckReport {
  double max_rel_error = 0.0;
  std::size_t cells_checked = 0;
};

// Compares the analytic minibatch gradient against central finite
// differences on randomly hit cells.
GradientCheckReport gradient_check(const SpaceSpec& space,
                                   const SourceSpec& source,
                                   const CouplingSpec& coupling,
                                   const TargetSpec& target,
                                   const ConditionalPath& path,
                                   std::size_t instances, std::uint64_t seed);

}  // namespace dfm

#include "dfm/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "dfm/errors.hpp"

namespace dfm {
namespace {

constexpr double kLogFloor = 1e-30;
constexpr double kPriorLambda = 0.1;

TokenPMF softmax(const std::vector<double>& logits) {
  double max_logit = -std::numeric_limits<double>::infinity();
  for (double l : logits) max_logit = std::max(max_logit, l);
  TokenPMF out(logits.size());
  double total = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    out[k] = std::exp(logits[k] - max_logit);
    total += out[k];
  }
  for (std::size_t k = 0; k < out.size(); ++k) out[k] /= total;
  return out;
}

TokenPMF smoothed_counts(const std::vector<std::uint64_t>& counts,
                         double lambda) {
  TokenPMF out(counts.size());
  double total = 0.0;
  for (std::uint64_t c : counts) total += static_cast<double>(c);
  const double denom = total + lambda * static_cast<double>(counts.size());
  for (std::size_t k = 0; k < counts.size(); ++k) {
    out[k] = (static_cast<double>(counts[k]) + lambda) / denom;
  }
  return out;
}

struct PathDraw {
  double t = 0.0;
  EndpointPair endpoints;
  Sequence xt;
};

PathDraw draw_path_state(const SpaceSpec& space, const SourceSpec& source,
                         const CouplingSpec& coupling, const TargetSpec& target,
                         const ConditionalPath& path, RngStream& rng,
                         const TimeDistribution& time_dist = {}) {
  PathDraw draw;
  draw.t = time_dist.draw(rng);
  draw.endpoints = coupling_sample(coupling, space, source, target, rng);
  draw.xt = sample_xt(path, space, draw.t, draw.endpoints.x0,
                      draw.endpoints.x1, rng);
  return draw;
}

}  // namespace

void TimeDistribution::validate() const {
  if (kind == Kind::power && !(gamma > 0.0)) {
    throw config_error("power time distribution needs gamma > 0");
  }
}

double TimeDistribution::draw(RngStream& rng) const {
  const double u = rng.next_double();
  if (kind == Kind::uniform) return u;
  return std::pow(u, 1.0 / gamma);
}

TabularPosterior::TabularPosterior(SpaceSpec space, std::size_t factor_count,
                                   std::size_t time_bins)
    : space_(space), factor_count_(factor_count), time_bins_(time_bins) {
  space_.validate();
  if (factor_count_ == 0) {
    throw config_error("posterior table needs at least one factor");
  }
  if (time_bins_ == 0) {
    throw config_error("posterior table needs at least one time bin");
  }
}

std::size_t TabularPosterior::bin_of(double t) const {
  if (!(t >= 0.0)) return 0;
  const auto bin =
      static_cast<std::size_t>(t * static_cast<double>(time_bins_));
  return std::min(bin, time_bins_ - 1);
}

void TabularPosterior::set_constant_factor(std::size_t factor, TokenPMF pmf) {
  if (factor >= factor_count_) {
    throw config_error("constant factor index out of range");
  }
  if (pmf.size() != space_.alphabet_size() || !pmf_validate(pmf)) {
    throw config_error("constant factor distribution does not validate");
  }
  constants_[factor] = std::move(pmf);
}

bool TabularPosterior::is_constant(std::size_t factor) const {
  return constants_.find(factor) != constants_.end();
}

const TokenPMF& TabularPosterior::constant_factor(std::size_t factor) const {
  auto it = constants_.find(factor);
  if (it == constants_.end()) {
    throw contract_error("factor is not constant");
  }
  return it->second;
}

TokenPMF TabularPosterior::factor_posterior(std::size_t factor,
                                            std::size_t position,
                                            const Sequence& z, double t) const {
  if (factor >= factor_count_) {
    throw contract_error("factor index out of range");
  }
  if (position >= space_.positions) {
    throw contract_error("position index out of range");
  }
  auto constant = constants_.find(factor);
  if (constant != constants_.end()) return constant->second;

  const CellKey key{factor, position, bin_of(t), z};
  auto cell = cells_.find(key);
  if (cell != cells_.end()) return softmax(cell->second);

  ++fallback_served_;
  auto prior = priors_.find(PriorKey{factor, position, bin_of(t)});
  if (prior != priors_.end()) {
    return smoothed_counts(prior->second, kPriorLambda);
  }
  TokenPMF uniform(space_.alphabet_size());
  for (std::size_t k = 0; k < uniform.size(); ++k) {
    uniform[k] = 1.0 / static_cast<double>(uniform.size());
  }
  return uniform;
}

std::vector<double>& TabularPosterior::mutable_cell(const CellKey& key) {
  auto it = cells_.find(key);
  if (it == cells_.end()) {
    it = cells_
             .emplace(key, std::vector<double>(space_.alphabet_size(), 0.0))
             .first;
  }
  return it->second;
}

void TabularPosterior::note_prior(std::size_t factor, std::size_t position,
                                  std::size_t bin, TokenId observed) {
  auto& counts = priors_[PriorKey{factor, position, bin}];
  if (counts.empty()) counts.assign(space_.alphabet_size(), 0);
  counts.at(observed) += 1;
}

void TabularPosterior::set_prior(const PriorKey& key,
                                 std::vector<std::uint64_t> counts) {
  if (counts.size() != space_.alphabet_size()) {
    throw config_error("prior counts do not match the alphabet");
  }
  priors_[key] = std::move(counts);
}

std::size_t default_time_bins(const SpaceSpec& space, const SourceSpec& source,
                              const CouplingSpec& coupling,
                              const ConditionalPath& path) {
  const bool provably_flat =
      space.has_mask && source.kind == SourceSpec::Kind::all_mask &&
      coupling.kind == CouplingSpec::Kind::independent && path.is_convex();
  return provably_flat ? 1 : 16;
}

TrainReport train_tabular(TabularPosterior& model, const SourceSpec& source,
                          const CouplingSpec& coupling,
                          const TargetSpec& target,
                          const ConditionalPath& path,
                          const TrainConfig& config) {
  const SpaceSpec& space = model.space();
  source.validate(space);
  target.validate(space);
  coupling.validate(space, source);
  if (model.factor_count() != path.factor_count()) {
    throw config_error("posterior table and path disagree on factor count");
  }
  if (config.batch_size == 0) {
    throw config_error("training needs at least one example per step");
  }
  if (!(config.learning_rate > 0.0)) {
    throw config_error("learning rate must be positive");
  }
  config.time_dist.validate();

  RngStream rng(config.seed, stream_id("train", 0));
  TrainReport report;
  if (config.steps == 0) return report;
  std::map<TabularPosterior::CellKey, std::vector<double>> grads;

  for (std::size_t step = 0; step < config.steps; ++step) {
    grads.clear();
    double loss = 0.0;
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      const PathDraw draw = draw_path_state(space, source, coupling, target,
                                            path, rng, config.time_dist);
      const std::size_t bin = model.bin_of(draw.t);
      for (std::size_t j = 0; j < path.factor_count(); ++j) {
        if (model.is_constant(j)) continue;
        for (std::size_t i = 0; i < space.positions; ++i) {
          const TokenPMF w = path.factor_pmf(j, space, i, draw.endpoints.x0,
                                             draw.endpoints.x1);
          const TokenId y = pmf_sample(w, rng);
          const TabularPosterior::CellKey key{j, i, bin, draw.xt};
          const std::vector<double>& logits = model.mutable_cell(key);
          const TokenPMF probs = softmax(logits);
          loss -= std::log(std::max(probs[y], kLogFloor));
          auto& g = grads[key];
          if (g.empty()) g.assign(space.alphabet_size(), 0.0);
          for (std::size_t k = 0; k < g.size(); ++k) g[k] += probs[k];
          g[y] -= 1.0;
          model.note_prior(j, i, bin, y);
        }
      }
    }
    loss /= static_cast<double>(config.batch_size);

    const double scale =
        config.learning_rate / static_cast<double>(config.batch_size);
    for (const auto& [key, g] : grads) {
      std::vector<double>& logits = model.mutable_cell(key);
      for (std::size_t k = 0; k < g.size(); ++k) logits[k] -= scale * g[k];
    }

    if (step == 0) report.initial_loss = loss;
    report.final_loss = loss;
    report.steps_run = step + 1;
    if (config.log_every != 0 &&
        (step % config.log_every == 0 || step + 1 == config.steps)) {
      report.loss_history.emplace_back(step, loss);
    }
    if (loss > config.divergence_factor *
                   std::max(report.initial_loss, 1e-3)) {
      throw training_error("training diverged: loss " + std::to_string(loss) +
                           " from initial " +
                           std::to_string(report.initial_loss));
    }
  }
  return report;
}

LossEstimate loss_estimate(const PosteriorProvider& provider,
                           const SpaceSpec& space, const SourceSpec& source,
                           const CouplingSpec& coupling,
                           const TargetSpec& target,
                           const ConditionalPath& path,
                           std::uint64_t n_samples, std::uint64_t seed) {
  if (n_samples == 0) throw config_error("loss estimate needs samples");
  RngStream rng(seed, stream_id("loss", 0));
  LossEstimate estimate;
  double total = 0.0;
  for (std::uint64_t n = 0; n < n_samples; ++n) {
    const PathDraw draw =
        draw_path_state(space, source, coupling, target, path, rng);
    for (std::size_t j = 0; j < path.factor_count(); ++j) {
      for (std::size_t i = 0; i < space.positions; ++i) {
        const TokenPMF w = path.factor_pmf(j, space, i, draw.endpoints.x0,
                                           draw.endpoints.x1);
        const TokenId y = pmf_sample(w, rng);
        const TokenPMF served = provider.factor_posterior(j, i, draw.xt, draw.t);
        if (served.size() != space.alphabet_size()) {
          throw contract_error("posterior has the wrong alphabet size");
        }
        double p = served[y];
        if (p < kLogFloor) {
          p = kLogFloor;
          ++estimate.clipped;
        }
        total -= std::log(p);
      }
    }
  }
  estimate.loss = total / static_cast<double>(n_samples);
  estimate.samples = n_samples;
  return estimate;
}

CountsPosterior::CountsPosterior(SpaceSpec space, std::size_t factor_count,
                                 double lambda)
    : space_(space), factor_count_(factor_count), lambda_(lambda) {
  space_.validate();
  if (factor_count_ == 0) {
    throw config_error("counts posterior needs at least one factor");
  }
  if (!(lambda_ > 0.0)) {
    throw config_error("smoothing weight must be positive");
  }
}

TokenPMF CountsPosterior::factor_posterior(std::size_t factor,
                                           std::size_t position,
                                           const Sequence& z, double) const {
  if (factor >= factor_count_) {
    throw contract_error("factor index out of range");
  }
  if (position >= space_.positions) {
    throw contract_error("position index out of range");
  }
  auto it = counts_.find(Key{factor, position, z});
  if (it == counts_.end()) {
    return smoothed_counts(
        std::vector<std::uint64_t>(space_.alphabet_size(), 0), lambda_);
  }
  return smoothed_counts(it->second, lambda_);
}

void CountsPosterior::add(std::size_t factor, std::size_t position,
                          const Sequence& z, TokenId observed) {
  auto& counts = counts_[Key{factor, position, z}];
  if (counts.empty()) counts.assign(space_.alphabet_size(), 0);
  counts.at(observed) += 1;
}

std::uint64_t CountsPosterior::min_cell_total() const {
  std::uint64_t least = std::numeric_limits<std::uint64_t>::max();
  for (const auto& [key, counts] : counts_) {
    std::uint64_t total = 0;
    for (std::uint64_t c : counts) total += c;
    least = std::min(least, total);
  }
  return counts_.empty() ? 0 : least;
}

CountsPosterior empirical_posterior_estimate(const SpaceSpec& space,
                                             const SourceSpec& source,
                                             const CouplingSpec& coupling,
                                             const TargetSpec& target,
                                             const ConditionalPath& path,
                                             const EstimatorConfig& config) {
  source.validate(space);
  target.validate(space);
  coupling.validate(space, source);
  if (config.min_cell_count == 0 || config.round_size == 0) {
    throw config_error("estimator needs a positive floor and round size");
  }

  CountsPosterior counts(space, path.factor_count(), config.lambda);
  RngStream rng(config.seed, stream_id("counts", 0));
  std::uint64_t drawn = 0;
  while (true) {
    const std::size_t cells_before = counts.cell_count();
    for (std::uint64_t n = 0; n < config.round_size; ++n) {
      const PathDraw draw =
          draw_path_state(space, source, coupling, target, path, rng);
      for (std::size_t j = 0; j < path.factor_count(); ++j) {
        for (std::size_t i = 0; i < space.positions; ++i) {
          const TokenPMF w = path.factor_pmf(j, space, i, draw.endpoints.x0,
                                             draw.endpoints.x1);
          counts.add(j, i, draw.xt, pmf_sample(w, rng));
        }
      }
    }
    drawn += config.round_size;
    if (counts.cell_count() == cells_before &&
        counts.min_cell_total() >= config.min_cell_count) {
      break;
    }
    if (drawn >= config.max_samples) {
      throw training_error(
          "estimator hit its sample cap before every cell reached the floor");
    }
  }
  return counts;
}

double check_time_independence(const PosteriorProvider& provider,
                               const SpaceSpec& space,
                               const std::vector<Sequence>& states,
                               std::size_t factor_count,
                               const std::vector<double>& times) {
  double worst = 0.0;
  for (const Sequence& z : states) {
    for (std::size_t i = 0; i < space.positions; ++i) {
      for (std::size_t j = 0; j < factor_count; ++j) {
        std::vector<TokenPMF> served;
        bool supported = true;
        for (double t : times) {
          try {
            served.push_back(provider.factor_posterior(j, i, z, t));
          } catch (const unsupported_state_error&) {
            supported = false;
            break;
          }
        }
        if (!supported) continue;
        for (std::size_t a = 0; a < served.size(); ++a) {
          for (std::size_t b = a + 1; b < served.size(); ++b) {
            worst = std::max(worst, pmf_tv(served[a], served[b]));
          }
        }
      }
    }
  }
  return worst;
}

GradientCheckReport gradient_check(const SpaceSpec& space,
                                   const SourceSpec& source,
                                   const CouplingSpec& coupling,
                                   const TargetSpec& target,
                                   const ConditionalPath& path,
                                   std::size_t instances, std::uint64_t seed) {
  source.validate(space);
  target.validate(space);
  coupling.validate(space, source);
  if (instances == 0) throw config_error("gradient check needs instances");

  RngStream rng(seed, stream_id("grad", 0));
  TabularPosterior model(space, path.factor_count(), 4);

  struct Hit {
    TabularPosterior::CellKey key;
    TokenId y = 0;
  };
  const std::size_t batch = 64;
  std::vector<Hit> hits;
  for (std::size_t b = 0; b < batch; ++b) {
    const PathDraw draw =
        draw_path_state(space, source, coupling, target, path, rng);
    const std::size_t bin = model.bin_of(draw.t);
    for (std::size_t j = 0; j < path.factor_count(); ++j) {
      for (std::size_t i = 0; i < space.positions; ++i) {
        const TokenPMF w = path.factor_pmf(j, space, i, draw.endpoints.x0,
                                           draw.endpoints.x1);
        hits.push_back(
            {TabularPosterior::CellKey{j, i, bin, draw.xt}, pmf_sample(w, rng)});
      }
    }
  }
  for (const Hit& hit : hits) {
    std::vector<double>& logits = model.mutable_cell(hit.key);
    for (double& l : logits) l = 2.0 * rng.next_double() - 1.0;
  }

  const auto batch_loss = [&]() {
    double loss = 0.0;
    for (const Hit& hit : hits) {
      const TokenPMF probs = softmax(model.mutable_cell(hit.key));
      loss -= std::log(std::max(probs[hit.y], kLogFloor));
    }
    return loss / static_cast<double>(batch);
  };

  GradientCheckReport report;
  const double fd_step = 1e-5;
  for (std::size_t n = 0; n < instances; ++n) {
    const Hit& probe = hits[rng.next_below(hits.size())];
    const std::size_t component = static_cast<std::size_t>(
        rng.next_below(space.alphabet_size()));

    double analytic = 0.0;
    for (const Hit& hit : hits) {
      if (!(hit.key == probe.key)) continue;
      const TokenPMF probs = softmax(model.mutable_cell(hit.key));
      analytic += probs[component] - (hit.y == component ? 1.0 : 0.0);
    }
    analytic /= static_cast<double>(batch);

    std::vector<double>& logits = model.mutable_cell(probe.key);
    const double saved = logits[component];
    logits[component] = saved + fd_step;
    const double up = batch_loss();
    logits[component] = saved - fd_step;
    const double down = batch_loss();
    logits[component] = saved;

    const double fd = (up - down) / (2.0 * fd_step);
    const double rel =
        std::abs(fd - analytic) / std::max(std::abs(analytic), 1e-3);
    report.max_rel_error = std::max(report.max_rel_error, rel);
    ++report.cells_checked;
  }
  return report;
}

}  // namespace dfm

#include "dfm/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <utility>

#include "dfm/errors.hpp"

namespace dfm {
namespace {

constexpr double kMarginalTol = 1e-12;

// Distributes weight * prod_i kernels[i] over the dense state vector. The
// accumulator index grows position by position in the same mixed-radix order
// the enumeration uses.
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

std::vector<CoupledPair> sorted_pairs(
    const std::map<std::pair<std::uint64_t, std::uint64_t>, double>& mass) {
  std::vector<CoupledPair> pairs;
  pairs.reserve(mass.size());
  for (const auto& [key, prob] : mass) {
    if (prob <= 0.0) continue;
    pairs.push_back({key.first, key.second, prob});
  }
  return pairs;
}

void check_marginal(const std::map<std::uint64_t, double>& got,
                    const std::map<std::uint64_t, double>& want,
                    const std::string& side) {
  for (const auto& [index, prob] : want) {
    auto it = got.find(index);
    double have = it == got.end() ? 0.0 : it->second;
    if (std::abs(have - prob) > kMarginalTol) {
      throw contract_error("coupling does not reproduce the " + side +
                           " marginal");
    }
  }
  for (const auto& [index, prob] : got) {
    if (want.find(index) == want.end() && prob > kMarginalTol) {
      throw contract_error("coupling puts mass outside the " + side +
                           " support");
    }
  }
}

}  // namespace

EnumeratedSpace::EnumeratedSpace(SpaceSpec spec, std::uint64_t max_states)
    : spec_(spec) {
  spec_.validate();
  const std::uint64_t ab = spec_.alphabet_size();
  std::uint64_t total = 1;
  for (std::uint64_t i = 0; i < spec_.positions; ++i) {
    if (total > max_states / ab) {
      throw resource_error("state space too large to enumerate");
    }
    total *= ab;
  }
  states_.reserve(total);
  Sequence current(spec_.positions, 0);
  for (std::uint64_t n = 0; n < total; ++n) {
    states_.push_back(current);
    for (std::size_t i = spec_.positions; i-- > 0;) {
      if (++current[i] < ab) break;
      current[i] = 0;
    }
  }
}

std::uint64_t EnumeratedSpace::index_of(const Sequence& s) const {
  if (s.size() != spec_.positions) {
    throw contract_error("sequence length does not match the space");
  }
  const std::uint64_t ab = spec_.alphabet_size();
  std::uint64_t index = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!spec_.valid_token(s[i])) {
      throw contract_error("sequence holds a token outside the alphabet");
    }
    index = index * ab + s[i];
  }
  return index;
}

ExplicitCoupling::ExplicitCoupling(std::vector<CoupledPair> pairs)
    : pairs_(std::move(pairs)) {
  double total = 0.0;
  for (const CoupledPair& pair : pairs_) total += pair.prob;
  if (std::abs(total - 1.0) > 1e-9) {
    throw contract_error("coupling probabilities do not sum to one");
  }
}

ExplicitCoupling ExplicitCoupling::independent(const EnumeratedSpace& space,
                                               const SourceSpec& source,
                                               const TargetSpec& target) {
  const SpaceSpec& spec = space.spec();
  source.validate(spec);
  target.validate(spec);

  const TokenPMF marginal = source.token_pmf(spec);
  std::vector<TokenId> support;
  for (std::size_t k = 0; k < marginal.size(); ++k) {
    if (marginal[k] > 0.0) support.push_back(static_cast<TokenId>(k));
  }
  std::uint64_t combos = 1;
  for (std::uint64_t i = 0; i < spec.positions; ++i) {
    if (combos > EnumeratedSpace::kDefaultMaxStates / support.size()) {
      throw resource_error("source support too large to enumerate");
    }
    combos *= support.size();
  }

  const JointPMF q = target.joint();
  std::map<std::pair<std::uint64_t, std::uint64_t>, double> mass;
  std::map<std::uint64_t, double> source_law;
  std::vector<std::size_t> digits(spec.positions, 0);
  for (std::uint64_t n = 0; n < combos; ++n) {
    Sequence x0(spec.positions, 0);
    double prob0 = 1.0;
    for (std::size_t i = 0; i < spec.positions; ++i) {
      x0[i] = support[digits[i]];
      prob0 *= marginal[x0[i]];
    }
    const std::uint64_t i0 = space.index_of(x0);
    source_law[i0] += prob0;
    for (const auto& [x1, prob1] : q.mass) {
      mass[{i0, space.index_of(x1)}] += prob0 * prob1;
    }
    for (std::size_t i = spec.positions; i-- > 0;) {
      if (++digits[i] < support.size()) break;
      digits[i] = 0;
    }
  }

  ExplicitCoupling coupling(sorted_pairs(mass));
  std::map<std::uint64_t, double> got0;
  std::map<std::uint64_t, double> got1;
  std::map<std::uint64_t, double> target_law;
  for (const auto& [x1, prob1] : q.mass) target_law[space.index_of(x1)] = prob1;
  for (const CoupledPair& pair : coupling.pairs_) {
    got0[pair.x0] += pair.prob;
    got1[pair.x1] += pair.prob;
  }
  check_marginal(got0, source_law, "source");
  check_marginal(got1, target_law, "target");
  return coupling;
}

ExplicitCoupling ExplicitCoupling::conditional_prefix(
    const EnumeratedSpace& space, const TargetSpec& target) {
  const SpaceSpec& spec = space.spec();
  if (!spec.has_mask) {
    throw config_error("prefix coupling needs a mask token");
  }
  target.validate(spec);
  const TokenId mask = spec.mask_token();
  const JointPMF q = target.joint();
  const double per_prefix = 1.0 / static_cast<double>(spec.positions + 1);

  std::map<std::pair<std::uint64_t, std::uint64_t>, double> mass;
  for (const auto& [x1, prob1] : q.mass) {
    const std::uint64_t i1 = space.index_of(x1);
    for (std::uint64_t n0 = 0; n0 <= spec.positions; ++n0) {
      Sequence x0 = x1;
      for (std::size_t i = n0; i < spec.positions; ++i) x0[i] = mask;
      mass[{space.index_of(x0), i1}] += prob1 * per_prefix;
    }
  }

  ExplicitCoupling coupling(sorted_pairs(mass));
  std::map<std::uint64_t, double> got1;
  std::map<std::uint64_t, double> target_law;
  for (const auto& [x1, prob1] : q.mass) target_law[space.index_of(x1)] = prob1;
  for (const CoupledPair& pair : coupling.pairs_) got1[pair.x1] += pair.prob;
  check_marginal(got1, target_law, "target");
  return coupling;
}

ExplicitCoupling ExplicitCoupling::of(const EnumeratedSpace& space,
                                      const CouplingSpec& coupling,
                                      const SourceSpec& source,
                                      const TargetSpec& target) {
  coupling.validate(space.spec(), source);
  switch (coupling.kind) {
    case CouplingSpec::Kind::independent:
      return independent(space, source, target);
    case CouplingSpec::Kind::conditional_prefix:
      return conditional_prefix(space, target);
  }
  throw config_error("unknown coupling kind");
}

DensePMF joint_to_dense(const EnumeratedSpace& space, const JointPMF& q) {
  DensePMF out(space.size(), 0.0);
  for (const auto& [s, prob] : q.mass) out[space.index_of(s)] += prob;
  return out;
}

JointPMF dense_to_joint(const EnumeratedSpace& space, const DensePMF& p,
                        double drop_below) {
  if (p.size() != space.size()) {
    throw contract_error("dense law does not match the state count");
  }
  JointPMF out;
  for (std::uint64_t n = 0; n < p.size(); ++n) {
    if (p[n] > drop_below) out[space.state(n)] = p[n];
  }
  return out;
}

double dense_tv(const DensePMF& a, const DensePMF& b) {
  if (a.size() != b.size()) {
    throw contract_error("dense laws have different state counts");
  }
  double sum = 0.0;
  for (std::size_t n = 0; n < a.size(); ++n) sum += std::abs(a[n] - b[n]);
  return 0.5 * sum;
}

DensePMF exact_marginal_dense(const EnumeratedSpace& space,
                              const ExplicitCoupling& coupling,
                              const ConditionalPath& path, double t) {
  const SpaceSpec& spec = space.spec();
  DensePMF out(space.size(), 0.0);
  std::vector<TokenPMF> kernels(spec.positions);
  for (const CoupledPair& pair : coupling.pairs()) {
    const Sequence& x0 = space.state(pair.x0);
    const Sequence& x1 = space.state(pair.x1);
    for (std::size_t i = 0; i < spec.positions; ++i) {
      kernels[i] = cond_path_token_pmf(path, spec, t, i, x0, x1);
    }
    fan_out_product(out, pair.prob, kernels);
  }
  return out;
}

JointPMF exact_marginal(const EnumeratedSpace& space,
                        const ExplicitCoupling& coupling,
                        const ConditionalPath& path, double t) {
  return dense_to_joint(space, exact_marginal_dense(space, coupling, path, t));
}

std::vector<std::pair<std::size_t, double>> exact_posterior(
    const EnumeratedSpace& space, const ExplicitCoupling& coupling,
    const ConditionalPath& path, const Sequence& z, double t) {
  const SpaceSpec& spec = space.spec();
  space.index_of(z);  // validates the state
  std::vector<std::pair<std::size_t, double>> posterior;
  posterior.reserve(coupling.pairs().size());
  double total = 0.0;
  for (std::size_t j = 0; j < coupling.pairs().size(); ++j) {
    const CoupledPair& pair = coupling.pairs()[j];
    const Sequence& x0 = space.state(pair.x0);
    const Sequence& x1 = space.state(pair.x1);
    double weight = pair.prob;
    for (std::size_t i = 0; i < spec.positions && weight > 0.0; ++i) {
      weight *= cond_path_token_pmf(path, spec, t, i, x0, x1)[z[i]];
    }
    posterior.emplace_back(j, weight);
    total += weight;
  }
  if (total <= 0.0) {
    throw unsupported_state_error(
        "state has zero probability under the path");
  }
  for (auto& [j, weight] : posterior) weight /= total;
  return posterior;
}

TokenPMF exact_factor_posterior(const EnumeratedSpace& space,
                                const ExplicitCoupling& coupling,
                                const ConditionalPath& path, std::size_t factor,
                                std::size_t i, const Sequence& z, double t) {
  const SpaceSpec& spec = space.spec();
  if (factor >= path.factor_count()) {
    throw contract_error("factor index out of range");
  }
  if (i >= spec.positions) {
    throw contract_error("position index out of range");
  }
  const auto posterior = exact_posterior(space, coupling, path, z, t);
  TokenPMF out(spec.alphabet_size());
  for (const auto& [j, weight] : posterior) {
    if (weight == 0.0) continue;
    const CoupledPair& pair = coupling.pairs()[j];
    const TokenPMF w = path.factor_pmf(factor, spec, i, space.state(pair.x0),
                                       space.state(pair.x1));
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += weight * w[k];
  }
  pmf_clamp_renormalize(out);
  return out;
}

OracleProvider::OracleProvider(const EnumeratedSpace& space,
                               const ExplicitCoupling& coupling,
                               const ConditionalPath& path)
    : space_(space), coupling_(coupling), path_(path) {
  const SpaceSpec& spec = space.spec();
  if (spec.has_mask && path.is_convex()) {
    const Sequence all_mask(spec.positions, spec.mask_token());
    const std::uint64_t mask_index = space.index_of(all_mask);
    time_independent_ = true;
    for (const CoupledPair& pair : coupling.pairs()) {
      if (pair.x0 != mask_index) {
        time_independent_ = false;
        break;
      }
    }
  }
}

TokenPMF OracleProvider::factor_posterior(std::size_t factor,
                                          std::size_t position,
                                          const Sequence& z, double t) const {
  return exact_factor_posterior(space_, coupling_, path_, factor, position, z,
                                t);
}

double discrete_divergence(const EnumeratedSpace& space, const DensePMF& p,
                           const VelocityField& field, double t,
                           const Sequence& x) {
  const SpaceSpec& spec = space.spec();
  if (p.size() != space.size()) {
    throw contract_error("dense law does not match the state count");
  }
  const std::uint32_t ab = spec.alphabet_size();
  const std::uint64_t here = space.index_of(x);
  double divergence = 0.0;
  Sequence neighbour = x;
  for (std::size_t i = 0; i < spec.positions; ++i) {
    if (p[here] > 0.0) {
      const RateVector out = field(i, x, t);
      if (out.rates.size() != ab) {
        throw contract_error("velocity field rate vector has the wrong size");
      }
      for (std::uint32_t a = 0; a < ab; ++a) {
        if (a == x[i]) continue;
        divergence += p[here] * out.rates[a];
      }
    }
    for (std::uint32_t a = 0; a < ab; ++a) {
      if (a == x[i]) continue;
      neighbour[i] = a;
      const std::uint64_t there = space.index_of(neighbour);
      if (p[there] > 0.0) {
        const RateVector in = field(i, neighbour, t);
        if (in.rates.size() != ab) {
          throw contract_error(
              "velocity field rate vector has the wrong size");
        }
        divergence -= p[there] * in.rates[x[i]];
      }
    }
    neighbour[i] = x[i];
  }
  return divergence;
}

ContinuityReport continuity_residual(const EnumeratedSpace& space,
                                     const ExplicitCoupling& coupling,
                                     const ConditionalPath& path,
                                     const VelocityField& field, double t,
                                     double fd_step) {
  if (fd_step <= 0.0 || t - fd_step < 0.0 || t + fd_step > 1.0) {
    throw contract_error("finite-difference stencil leaves [0, 1]");
  }
  const DensePMF p0 = exact_marginal_dense(space, coupling, path, t);
  const DensePMF plus = exact_marginal_dense(space, coupling, path, t + fd_step);
  const DensePMF minus =
      exact_marginal_dense(space, coupling, path, t - fd_step);
  ContinuityReport report;
  report.worst_state = space.state(0);
  for (std::uint64_t n = 0; n < space.size(); ++n) {
    const double pdot = (plus[n] - minus[n]) / (2.0 * fd_step);
    const double residual =
        std::abs(pdot + discrete_divergence(space, p0, field, t,
                                            space.state(n)));
    if (residual > report.max_residual) {
      report.max_residual = residual;
      report.worst_state = space.state(n);
    }
  }
  return report;
}

DensePMF exact_euler_pushforward(const EnumeratedSpace& space,
                                 const DensePMF& p, const VelocityField& field,
                                 double t, double h, Direction direction) {
  const SpaceSpec& spec = space.spec();
  if (p.size() != space.size()) {
    throw contract_error("dense law does not match the state count");
  }
  if (h < 0.0) throw contract_error("step size must be non-negative");
  const double sign = direction == Direction::forward ? 1.0 : -1.0;
  const std::uint32_t ab = spec.alphabet_size();
  DensePMF out(space.size(), 0.0);
  std::vector<TokenPMF> kernels(spec.positions);
  for (std::uint64_t n = 0; n < space.size(); ++n) {
    if (p[n] == 0.0) continue;
    const Sequence& x = space.state(n);
    for (std::size_t i = 0; i < spec.positions; ++i) {
      const RateVector rates = field(i, x, t);
      if (rates.rates.size() != ab) {
        throw contract_error("velocity field rate vector has the wrong size");
      }
      TokenPMF kernel(ab);
      for (std::uint32_t k = 0; k < ab; ++k) {
        kernel[k] = (k == x[i] ? 1.0 : 0.0) + sign * h * rates.rates[k];
      }
      try {
        pmf_clamp_renormalize(kernel);
      } catch (const contract_error&) {
        throw step_error("update kernel left the simplex; reduce the step");
      }
      kernels[i] = std::move(kernel);
    }
    fan_out_product(out, p[n], kernels);
  }
  return out;
}

}  // namespace dfm

#include "dfm/paths.hpp"

#include <string>

namespace dfm {
namespace {

void check_sequence(const SpaceSpec& space, const Sequence& s,
                    const char* what) {
  if (s.size() != space.positions)
    throw contract_error(std::string(what) + ": length " +
                         std::to_string(s.size()) + " does not match space");
  for (TokenId t : s.tokens) {
    if (!space.valid_token(t))
      throw contract_error(std::string(what) + ": token " + std::to_string(t) +
                           " outside alphabet");
  }
}

// Per-position variant so long sequences are not rescanned for every call.
void check_endpoint_at(const SpaceSpec& space, const Sequence& s,
                       std::size_t i, const char* what) {
  if (s.size() != space.positions)
    throw contract_error(std::string(what) + ": length " +
                         std::to_string(s.size()) + " does not match space");
  if (!space.valid_token(s[i]))
    throw contract_error(std::string(what) + ": token " +
                         std::to_string(s[i]) + " outside alphabet");
}

}  // namespace

SourceSpec SourceSpec::all_mask() { return SourceSpec{Kind::all_mask, false, {}}; }

SourceSpec SourceSpec::uniform(bool include_mask) {
  return SourceSpec{Kind::uniform, include_mask, {}};
}

SourceSpec SourceSpec::iid_custom(TokenPMF pmf) {
  return SourceSpec{Kind::iid_custom, false, std::move(pmf)};
}

void SourceSpec::validate(const SpaceSpec& space) const {
  space.validate();
  switch (kind) {
    case Kind::all_mask:
      if (!space.has_mask)
        throw config_error("all-mask source needs a mask token");
      return;
    case Kind::uniform:
      if (include_mask && !space.has_mask)
        throw config_error("source cannot include a mask the space lacks");
      return;
    case Kind::iid_custom:
      if (custom.size() != space.alphabet_size())
        throw config_error("custom source pmf must cover the alphabet");
      if (!pmf_validate(custom))
        throw config_error("custom source pmf does not validate");
      return;
  }
}

TokenPMF SourceSpec::token_pmf(const SpaceSpec& space) const {
  validate(space);
  const std::uint32_t n = space.alphabet_size();
  switch (kind) {
    case Kind::all_mask:
      return delta_pmf(space.mask_token(), n);
    case Kind::uniform: {
      TokenPMF pmf(n);
      const std::uint32_t support = include_mask ? n : space.d;
      for (std::uint32_t k = 0; k < support; ++k)
        pmf[k] = 1.0 / static_cast<double>(support);
      return pmf;
    }
    case Kind::iid_custom:
      return custom;
  }
  throw contract_error("unreachable source kind");
}

Sequence SourceSpec::sample(const SpaceSpec& space, RngStream& rng) const {
  const TokenPMF pmf = token_pmf(space);
  Sequence out(space.positions);
  for (std::uint64_t i = 0; i < space.positions; ++i)
    out[i] = pmf_sample(pmf, rng);
  return out;
}

TargetSpec TargetSpec::explicit_pmf(JointPMF q) {
  TargetSpec spec;
  spec.kind = Kind::explicit_pmf;
  spec.q = std::move(q);
  return spec;
}

TargetSpec TargetSpec::dataset(std::vector<Sequence> sequences) {
  TargetSpec spec;
  spec.kind = Kind::dataset;
  spec.data = std::move(sequences);
  return spec;
}

void TargetSpec::validate(const SpaceSpec& space) const {
  space.validate();
  if (kind == Kind::explicit_pmf) {
    joint_validate(q);
    for (const auto& [seq, p] : q.mass) {
      check_sequence(space, seq, "target sequence");
      if (space.has_mask) {
        for (TokenId t : seq.tokens) {
          if (t == space.mask_token())
            throw data_error("target sequences must not contain the mask");
        }
      }
    }
    return;
  }
  if (data.empty()) throw data_error("dataset target is empty");
  for (const auto& seq : data) {
    check_sequence(space, seq, "dataset sequence");
    if (space.has_mask) {
      for (TokenId t : seq.tokens) {
        if (t == space.mask_token())
          throw data_error("dataset sequences must not contain the mask");
      }
    }
  }
}

Sequence TargetSpec::sample(RngStream& rng) const {
  if (kind == Kind::explicit_pmf) return joint_sample(q, rng);
  return data[rng.next_below(data.size())];
}

JointPMF TargetSpec::joint() const {
  if (kind == Kind::explicit_pmf) return q;
  JointPMF freq;
  const double w = 1.0 / static_cast<double>(data.size());
  for (const auto& seq : data) freq[seq] += w;
  return freq;
}

void CouplingSpec::validate(const SpaceSpec& space,
                            const SourceSpec& source) const {
  source.validate(space);
  if (kind == Kind::conditional_prefix) {
    if (!space.has_mask)
      throw config_error("prefix coupling needs a mask token");
    if (source.kind != SourceSpec::Kind::all_mask)
      throw config_error("prefix coupling pairs with the all-mask source");
  }
}

EndpointPair coupling_sample(const CouplingSpec& coupling,
                             const SpaceSpec& space, const SourceSpec& source,
                             const TargetSpec& target, RngStream& rng) {
  coupling.validate(space, source);
  target.validate(space);
  EndpointPair pair;
  pair.x1 = target.sample(rng);
  if (coupling.kind == CouplingSpec::Kind::independent) {
    pair.x0 = source.sample(space, rng);
    return pair;
  }
  // Reveal a uniformly sized prefix of the data sequence; mask the rest.
  const std::uint64_t prefix = rng.next_below(space.positions + 1);
  pair.x0 = Sequence(space.positions, space.mask_token());
  for (std::uint64_t i = 0; i < prefix; ++i) pair.x0[i] = pair.x1[i];
  return pair;
}

ConditionalPath::ConditionalPath(MixtureScheduler scheduler,
                                 std::vector<FactorKind> factors,
                                 bool include_mask_in_uniform)
    : scheduler_(std::move(scheduler)),
      factors_(std::move(factors)),
      include_mask_in_uniform_(include_mask_in_uniform) {
  if (factors_.size() != scheduler_.components())
    throw config_error("path factors must match scheduler components");
  if (factors_.front() != FactorKind::target_delta ||
      factors_.back() != FactorKind::source_delta)
    throw config_error(
        "first path factor must be the target delta and the last the source "
        "delta");
}

ConditionalPath ConditionalPath::convex(ScalarScheduler kappa) {
  return ConditionalPath(MixtureScheduler::two_component(std::move(kappa)),
                         {FactorKind::target_delta, FactorKind::source_delta},
                         false);
}

ConditionalPath ConditionalPath::uniform_noise(ScalarScheduler base, double c,
                                               bool include_mask_in_uniform) {
  return ConditionalPath(
      MixtureScheduler::uniform_noise_triple(std::move(base), c),
      {FactorKind::target_delta, FactorKind::uniform,
       FactorKind::source_delta},
      include_mask_in_uniform);
}

ConditionalPath ConditionalPath::general(MixtureScheduler scheduler,
                                         std::vector<FactorKind> factors,
                                         bool include_mask_in_uniform) {
  return ConditionalPath(std::move(scheduler), std::move(factors),
                         include_mask_in_uniform);
}

bool ConditionalPath::is_convex() const {
  return factors_.size() == 2 &&
         scheduler_.kind() == MixtureScheduler::Kind::two_component;
}

TokenPMF ConditionalPath::uniform_pmf(const SpaceSpec& space) const {
  const std::uint32_t n = space.alphabet_size();
  TokenPMF pmf(n);
  const std::uint32_t support =
      (include_mask_in_uniform_ && space.has_mask) ? n : space.d;
  for (std::uint32_t k = 0; k < support; ++k)
    pmf[k] = 1.0 / static_cast<double>(support);
  return pmf;
}

TokenPMF ConditionalPath::factor_pmf(std::size_t j, const SpaceSpec& space,
                                     std::size_t i, const Sequence& x0,
                                     const Sequence& x1) const {
  if (i >= space.positions) throw contract_error("position out of range");
  check_endpoint_at(space, x0, i, "x0");
  check_endpoint_at(space, x1, i, "x1");
  switch (factors_.at(j)) {
    case FactorKind::target_delta:
      return delta_pmf(x1[i], space.alphabet_size());
    case FactorKind::uniform:
      return uniform_pmf(space);
    case FactorKind::source_delta:
      return delta_pmf(x0[i], space.alphabet_size());
  }
  throw contract_error("unreachable factor kind");
}

TokenPMF cond_path_token_pmf(const ConditionalPath& path,
                             const SpaceSpec& space, double t, std::size_t i,
                             const Sequence& x0, const Sequence& x1) {
  const auto weights = path.scheduler().eval(t, i);
  TokenPMF pmf(space.alphabet_size());
  for (std::size_t j = 0; j < path.factor_count(); ++j) {
    if (weights[j].kappa == 0.0) continue;
    const TokenPMF factor = path.factor_pmf(j, space, i, x0, x1);
    for (std::size_t k = 0; k < pmf.size(); ++k)
      pmf[k] += weights[j].kappa * factor[k];
  }
  pmf_clamp_renormalize(pmf);
  return pmf;
}

Sequence sample_xt(const ConditionalPath& path, const SpaceSpec& space,
                   double t, const Sequence& x0, const Sequence& x1,
                   RngStream& rng) {
  Sequence out(space.positions);
  for (std::uint64_t i = 0; i < space.positions; ++i) {
    const TokenPMF pmf = cond_path_token_pmf(path, space, t, i, x0, x1);
    out[i] = pmf_sample(pmf, rng);
  }
  return out;
}

}  // namespace dfm

#pragma once

#include <cstdint>
#include <vector>

#include "dfm/core.hpp"

namespace dfm {

// Mean over sequences of the Shannon entropy (natural log) of each sequence's
// own token frequencies; tokens a sequence does not contain contribute
// nothing.
double sequence_entropy(const std::vector<Sequence>& samples);

JointPMF empirical_joint(const std::vector<Sequence>& samples);

// Total variation between the sample frequencies and a reference law. Every
// sequence must have the reference's number of positions.
double tv_to_target(const std::vector<Sequence>& samples, const JointPMF& q);

struct NfeStats {
  std::uint64_t min = 0;
  std::uint64_t max = 0;
  double mean = 0.0;
  std::uint64_t total = 0;
};

NfeStats nfe_stats(const std::vector<std::uint64_t>& per_chain);

}  // namespace dfm

#include "dfm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "dfm/errors.hpp"

namespace dfm {

double sequence_entropy(const std::vector<Sequence>& samples) {
  if (samples.empty()) throw contract_error("entropy needs samples");
  double total = 0.0;
  std::map<TokenId, std::uint64_t> counts;
  for (const Sequence& s : samples) {
    if (s.size() == 0) throw contract_error("entropy needs non-empty sequences");
    counts.clear();
    for (std::size_t i = 0; i < s.size(); ++i) ++counts[s[i]];
    const double n = static_cast<double>(s.size());
    double h = 0.0;
    for (const auto& [token, c] : counts) {
      const double f = static_cast<double>(c) / n;
      h -= f * std::log(f);
    }
    total += h;
  }
  return std::max(total / static_cast<double>(samples.size()), 0.0);
}

JointPMF empirical_joint(const std::vector<Sequence>& samples) {
  if (samples.empty()) throw contract_error("empirical law needs samples");
  JointPMF law;
  const double weight = 1.0 / static_cast<double>(samples.size());
  for (const Sequence& s : samples) law[s] += weight;
  return law;
}

double tv_to_target(const std::vector<Sequence>& samples, const JointPMF& q) {
  if (q.empty()) throw contract_error("reference law is empty");
  const std::size_t positions = q.mass.begin()->first.size();
  for (const Sequence& s : samples) {
    if (s.size() != positions) {
      throw contract_error("sample and reference sequence lengths differ");
    }
  }
  return joint_tv(empirical_joint(samples), q);
}

NfeStats nfe_stats(const std::vector<std::uint64_t>& per_chain) {
  NfeStats stats;
  if (per_chain.empty()) return stats;
  stats.min = per_chain.front();
  stats.max = per_chain.front();
  for (std::uint64_t v : per_chain) {
    stats.min = std::min(stats.min, v);
    stats.max = std::max(stats.max, v);
    stats.total += v;
  }
  stats.mean =
      static_cast<double>(stats.total) / static_cast<double>(per_chain.size());
  return stats;
}

}  // namespace dfm

#include "dfm/core.hpp"

#include <cmath>
#include <string>

namespace dfm {

TokenId SpaceSpec::mask_token() const {
  if (!has_mask) throw config_error("space has no mask token");
  return d;
}

void SpaceSpec::validate() const {
  if (d < 2) throw config_error("space needs at least two data tokens");
  if (positions < 1) throw config_error("space needs at least one position");
}

TokenPMF delta_pmf(TokenId token, std::uint32_t alphabet_size) {
  if (token >= alphabet_size)
    throw contract_error("delta_pmf: token " + std::to_string(token) +
                         " outside alphabet of size " +
                         std::to_string(alphabet_size));
  TokenPMF pmf(alphabet_size);
  pmf[token] = 1.0;
  return pmf;
}

bool pmf_validate(const TokenPMF& pmf, double tol) {
  if (pmf.size() == 0) return false;
  double total = 0.0;
  for (double v : pmf.p) {
    if (!(v >= -tol)) return false;
    total += v;
  }
  return std::fabs(total - 1.0) <= tol;
}

void pmf_clamp_renormalize(TokenPMF& pmf, double tol) {
  double total = 0.0;
  for (double& v : pmf.p) {
    if (v < 0.0) {
      if (v < -tol)
        throw contract_error("pmf entry " + std::to_string(v) +
                             " below clamp tolerance");
      v = 0.0;
    }
    total += v;
  }
  if (total <= 0.0) throw contract_error("pmf has no mass left to normalize");
  for (double& v : pmf.p) v /= total;
}

TokenId pmf_sample(const TokenPMF& pmf, RngStream& rng) {
  if (!pmf_validate(pmf))
    throw contract_error("pmf_sample: distribution does not validate");
  double total = 0.0;
  for (double v : pmf.p) total += (v > 0.0 ? v : 0.0);
  const double u = rng.next_double() * total;
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t k = 0; k < pmf.size(); ++k) {
    if (pmf[k] <= 0.0) continue;
    acc += pmf[k];
    last_positive = k;
    if (u < acc) return static_cast<TokenId>(k);
  }
  return static_cast<TokenId>(last_positive);
}

double pmf_tv(const TokenPMF& a, const TokenPMF& b) {
  if (a.size() != b.size())
    throw contract_error("pmf_tv: size mismatch");
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) acc += std::fabs(a[k] - b[k]);
  return 0.5 * acc;
}

double JointPMF::at_or_zero(const Sequence& s) const {
  auto it = mass.find(s);
  return it == mass.end() ? 0.0 : it->second;
}

double JointPMF::total() const {
  double acc = 0.0;
  for (const auto& [seq, p] : mass) acc += p;
  return acc;
}

void joint_validate(const JointPMF& q, double tol) {
  if (q.empty()) throw contract_error("joint pmf has empty support");
  for (const auto& [seq, p] : q.mass) {
    if (!(p >= -tol))
      throw contract_error("joint pmf has a negative entry: " +
                           std::to_string(p));
  }
  const double total = q.total();
  if (std::fabs(total - 1.0) > tol)
    throw contract_error("joint pmf total " + std::to_string(total) +
                         " is not 1");
}

double joint_tv(const JointPMF& a, const JointPMF& b) {
  double acc = 0.0;
  for (const auto& [seq, p] : a.mass) acc += std::fabs(p - b.at_or_zero(seq));
  for (const auto& [seq, p] : b.mass) {
    if (a.mass.find(seq) == a.mass.end()) acc += std::fabs(p);
  }
  return 0.5 * acc;
}

Sequence joint_sample(const JointPMF& q, RngStream& rng) {
  if (q.empty()) throw contract_error("joint_sample: empty support");
  const double u = rng.next_double() * q.total();
  double acc = 0.0;
  const Sequence* last = nullptr;
  for (const auto& [seq, p] : q.mass) {
    if (p <= 0.0) continue;
    acc += p;
    last = &seq;
    if (u < acc) return seq;
  }
  if (last == nullptr) throw contract_error("joint_sample: no positive mass");
  return *last;
}

}  // namespace dfm

#pragma once

#include <compare>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <vector>

#include "dfm/errors.hpp"
#include "dfm/rng.hpp"

namespace dfm {

using TokenId = std::uint32_t;

// Token alphabet for one modelling problem: data tokens 0..d-1 plus an
// optional mask token whose id is d.
struct SpaceSpec {
  std::uint32_t d = 2;
  bool has_mask = true;
  std::uint64_t positions = 1;

  std::uint32_t alphabet_size() const { return d + (has_mask ? 1u : 0u); }
  TokenId mask_token() const;
  bool valid_token(TokenId t) const { return t < alphabet_size(); }
  void validate() const;

  bool operator==(const SpaceSpec&) const = default;
};

struct Sequence {
  std::vector<TokenId> tokens;

  Sequence() = default;
  explicit Sequence(std::size_t n, TokenId fill = 0) : tokens(n, fill) {}
  Sequence(std::initializer_list<TokenId> v) : tokens(v) {}

  std::size_t size() const { return tokens.size(); }
  TokenId& operator[](std::size_t i) { return tokens[i]; }
  TokenId operator[](std::size_t i) const { return tokens[i]; }

  auto operator<=>(const Sequence&) const = default;
};

// Distribution over the token alphabet at a single position.
struct TokenPMF {
  std::vector<double> p;

  TokenPMF() = default;
  explicit TokenPMF(std::size_t n) : p(n, 0.0) {}
  TokenPMF(std::initializer_list<double> v) : p(v) {}

  std::size_t size() const { return p.size(); }
  double& operator[](std::size_t i) { return p[i]; }
  double operator[](std::size_t i) const { return p[i]; }

  bool operator==(const TokenPMF&) const = default;
};

TokenPMF delta_pmf(TokenId token, std::uint32_t alphabet_size);

// True iff all entries are >= -tol and the total is within tol of 1.
bool pmf_validate(const TokenPMF& pmf, double tol = 1e-9);

// Clamps small negative entries (magnitude <= tol) to zero and renormalizes.
// Larger violations or a vanishing total are contract errors.
void pmf_clamp_renormalize(TokenPMF& pmf, double tol = 1e-9);

// Inverse-CDF draw consuming one uniform; the PMF must validate.
TokenId pmf_sample(const TokenPMF& pmf, RngStream& rng);

double pmf_tv(const TokenPMF& a, const TokenPMF& b);

// Joint distribution over whole sequences, sparse over its support. Ordered
// keys keep iteration, serialization, and accumulation deterministic.
struct JointPMF {
  std::map<Sequence, double> mass;

  double& operator[](const Sequence& s) { return mass[s]; }
  double at_or_zero(const Sequence& s) const;
  double total() const;
  bool empty() const { return mass.empty(); }
  std::size_t support_size() const { return mass.size(); }
};

void joint_validate(const JointPMF& q, double tol = 1e-9);
double joint_tv(const JointPMF& a, const JointPMF& b);
Sequence joint_sample(const JointPMF& q, RngStream& rng);

}  // namespace dfm

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include "dfm/metrics.hpp"
#include "dfm/rng.hpp"
#include "doctest.h"

using namespace dfm;

TEST_CASE("constant sequences carry zero entropy") {
  std::vector<Sequence> samples = {Sequence{1, 1, 1}, Sequence{0, 0, 0}};
  CHECK(sequence_entropy(samples) == 0.0);
}

TEST_CASE("a uniform cycle over k tokens scores log k") {
  std::vector<Sequence> samples = {Sequence{0, 1, 2, 0, 1, 2}};
  CHECK(sequence_entropy(samples) == doctest::Approx(std::log(3.0)).epsilon(1e-12));

  samples.push_back(Sequence{4, 4, 4, 4});
  CHECK(sequence_entropy(samples) ==
        doctest::Approx(0.5 * std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("entropy matches a direct recount") {
  RngStream rng(31, 7);
  std::vector<Sequence> samples;
  for (int n = 0; n < 200; ++n) {
    Sequence s(5);
    for (std::size_t i = 0; i < 5; ++i) {
      s[i] = static_cast<TokenId>(rng.next_below(4));
    }
    samples.push_back(s);
  }

  double expected = 0.0;
  for (const Sequence& s : samples) {
    std::map<TokenId, int> counts;
    for (std::size_t i = 0; i < s.size(); ++i) counts[s[i]] += 1;
    double h = 0.0;
    for (const auto& [token, c] : counts) {
      const double f = c / 5.0;
      if (c > 0) h -= f * std::log(f);
    }
    expected += h / 200.0;
  }
  CHECK(sequence_entropy(samples) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(sequence_entropy(samples) >= 0.0);

  CHECK_THROWS_AS(sequence_entropy({}), contract_error);
  CHECK_THROWS_AS(sequence_entropy({Sequence{}}), contract_error);
}

TEST_CASE("total variation to the target") {
  JointPMF q;
  q[Sequence{0}] = 0.3;
  q[Sequence{1}] = 0.7;

  std::vector<Sequence> matched;
  for (int n = 0; n < 3; ++n) matched.push_back(Sequence{0});
  for (int n = 0; n < 7; ++n) matched.push_back(Sequence{1});
  CHECK(tv_to_target(matched, q) == doctest::Approx(0.0).epsilon(1e-15));

  std::vector<Sequence> half = {Sequence{0}, Sequence{1}};
  CHECK(tv_to_target(half, q) == doctest::Approx(0.2).epsilon(1e-12));

  std::vector<Sequence> disjoint = {Sequence{2}, Sequence{2}};
  CHECK(tv_to_target(disjoint, q) == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(tv_to_target({Sequence{0, 1}}, q), contract_error);
  CHECK_THROWS_AS(tv_to_target({Sequence{0}}, JointPMF{}), contract_error);
}

TEST_CASE("empirical law sums sample weight") {
  std::vector<Sequence> samples = {Sequence{0, 1}, Sequence{0, 1}, Sequence{1, 0}};
  JointPMF law = empirical_joint(samples);
  CHECK(law.at_or_zero(Sequence{0, 1}) == doctest::Approx(2.0 / 3.0));
  CHECK(law.at_or_zero(Sequence{1, 0}) == doctest::Approx(1.0 / 3.0));
  CHECK(law.total() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("nfe summary statistics") {
  CHECK(nfe_stats({}).total == 0);

  NfeStats stats = nfe_stats({3, 1, 2, 2});
  CHECK(stats.min == 1);
  CHECK(stats.max == 3);
  CHECK(stats.total == 8);
  CHECK(stats.mean == doctest::Approx(2.0));
}

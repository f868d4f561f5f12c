#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <string>
#include <vector>

#include "dfm/verify.hpp"
#include "doctest.h"

using namespace dfm;

namespace {

struct Bench {
  SpaceSpec space{3, true, 2};
  SourceSpec source = SourceSpec::all_mask();
  TargetSpec target;
  CouplingSpec coupling;
  ConditionalPath path = ConditionalPath::convex(ScalarScheduler::linear());

  Bench() {
    JointPMF q;
    q[Sequence{0, 1}] = 0.35;
    q[Sequence{2, 0}] = 0.25;
    q[Sequence{1, 2}] = 0.2;
    q[Sequence{0, 0}] = 0.2;
    target = TargetSpec::explicit_pmf(q);
  }

  std::vector<CheckResult> run(const VerifyOptions& options) const {
    return run_checks(space, source, target, coupling, path, options);
  }
};

const CheckResult& find(const std::vector<CheckResult>& results,
                        const std::string& name) {
  const auto it =
      std::find_if(results.begin(), results.end(),
                   [&name](const CheckResult& r) { return r.name == name; });
  REQUIRE(it != results.end());
  return *it;
}

}  // namespace

TEST_CASE("the default suite passes on a small masked benchmark") {
  const Bench bench;
  const std::vector<CheckResult> results = bench.run({});
  CHECK(results.size() == default_check_names().size());
  for (const CheckResult& check : results) {
    INFO(check.name, " residual=", check.residual, " tol=", check.tolerance);
    CHECK(check.passed);
  }
  CHECK(find(results, "continuity_convex").residual <= 1e-6);
  CHECK(find(results, "marginalization").residual <= 1e-12);
  CHECK(find(results, "time_dependence_control").residual > 1e-3);
}

TEST_CASE("the default suite also passes under a cubic schedule") {
  Bench bench;
  bench.path = ConditionalPath::convex(ScalarScheduler::cubic_poly(0.0, 2.0));
  VerifyOptions options;
  options.checks = std::vector<std::string>{
      "continuity_convex", "continuity_uniform_noise", "one_step_order",
      "scheduler_remap"};
  for (const CheckResult& check : bench.run(options)) {
    INFO(check.name, " residual=", check.residual);
    CHECK(check.passed);
  }
}

TEST_CASE("a scaled-rate fault trips every time-derivative check") {
  const Bench bench;
  VerifyOptions options;
  options.checks = std::vector<std::string>{
      "continuity_convex", "continuity_uniform_noise", "one_step_order",
      "backward_order", "corrector_continuity"};
  options.kappa_dot_scale = 2.0;
  const std::vector<CheckResult> results = bench.run(options);
  CHECK(results.size() == 5);
  for (const CheckResult& check : results) {
    INFO(check.name, " residual=", check.residual);
    CHECK_FALSE(check.passed);
  }
}

TEST_CASE("scale-invariant identities are immune to the rate fault") {
  const Bench bench;
  VerifyOptions options;
  options.checks = std::vector<std::string>{
      "marginalization", "corrector_stationarity", "divergence_free"};
  options.kappa_dot_scale = 2.0;
  for (const CheckResult& check : bench.run(options)) {
    INFO(check.name, " residual=", check.residual);
    CHECK(check.passed);
  }
}

TEST_CASE("an empty check list yields an empty report") {
  const Bench bench;
  VerifyOptions options;
  options.checks = std::vector<std::string>{};
  CHECK(bench.run(options).empty());
}

TEST_CASE("unknown check names are rejected") {
  const Bench bench;
  VerifyOptions options;
  options.checks = std::vector<std::string>{"continuity_convex", "vibes"};
  CHECK_THROWS_AS(bench.run(options), config_error);
}

TEST_CASE("results come back in the order they were requested") {
  const Bench bench;
  VerifyOptions options;
  options.checks =
      std::vector<std::string>{"marginalization", "continuity_convex"};
  const std::vector<CheckResult> results = bench.run(options);
  REQUIRE(results.size() == 2);
  CHECK(results[0].name == "marginalization");
  CHECK(results[1].name == "continuity_convex");
}

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dfm/core.hpp"
#include "dfm/paths.hpp"

namespace dfm {

struct CheckResult {
  std::string name;
  bool passed = false;
  double residual = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

// When `checks` is absent the default suite runs; an explicitly empty list
// yields an empty report. kappa_dot_scale != 1 injects a velocity fault
// (every rate scaled, exactly a kappa-derivative perturbation) so the
// harness can prove its checks have teeth.
struct VerifyOptions {
  std::optional<std::vector<std::string>> checks;
  double kappa_dot_scale = 1.0;
};

const std::vector<std::string>& default_check_names();

std::vector<CheckResult> run_checks(const SpaceSpec& space,
                                    const SourceSpec& source,
                                    const TargetSpec& target,
                                    const CouplingSpec& coupling,
                                    const ConditionalPath& path,
                                    const VerifyOptions& options);

}  // namespace dfm

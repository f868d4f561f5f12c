#pragma once

#include <memory>
#include <string>
#include <vector>

#include "dfm/experiment.hpp"
#include "dfm/verify.hpp"
#include "json.hpp"

namespace dfm {

using Json = nlohmann::json;

// Configuration problem addressable by a dotted field path; the CLI maps
// these to exit code 2.
class schema_error : public error {
 public:
  schema_error(const std::string& field, const std::string& message)
      : error(field.empty() ? message : field + ": " + message),
        field_(field) {}

  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

Json space_to_json(const SpaceSpec& space);
SpaceSpec space_from_json(const Json& j, const std::string& at);

Json source_to_json(const SourceSpec& source);
SourceSpec source_from_json(const Json& j, const std::string& at);

Json target_to_json(const TargetSpec& target);
TargetSpec target_from_json(const Json& j, const std::string& at);

Json coupling_to_json(const CouplingSpec& coupling);
CouplingSpec coupling_from_json(const Json& j, const std::string& at);

Json scheduler_to_json(const ScalarScheduler& kappa);
ScalarScheduler scheduler_from_json(const Json& j, const std::string& at);

// Only the catalog paths (convex, uniform_noise) are expressible.
Json path_to_json(const ConditionalPath& path);
ConditionalPath path_from_json(const Json& j, const std::string& at);

Json sampler_to_json(const SamplerConfig& config);
SamplerConfig sampler_from_json(const Json& j, const std::string& at);

Json train_to_json(const TrainConfig& config);
TrainConfig train_from_json(const Json& j, const std::string& at);

Json estimator_to_json(const EstimatorConfig& config);
EstimatorConfig estimator_from_json(const Json& j, const std::string& at);

Json posterior_to_json(const PosteriorChoice& choice);
PosteriorChoice posterior_from_json(const Json& j, const std::string& at);

Json experiment_to_json(const ExperimentConfig& config);
ExperimentConfig experiment_from_json(const Json& j);

Json checkpoint_to_json(const TabularPosterior& model);
std::unique_ptr<TabularPosterior> checkpoint_from_json(const Json& j,
                                                       const std::string& at);

Json run_report_to_json(const ExperimentConfig& config, const RunResult& result);

struct ParsedRunReport {
  std::uint64_t seed = 0;
  std::uint64_t n_samples = 0;
  RunMetricValues metrics;
  std::optional<TrainReport> train_report;
};

ParsedRunReport run_report_from_json(const Json& j);

Json check_results_to_json(const std::vector<CheckResult>& results);

std::vector<SweepAxis> axes_from_json(const Json& j, const std::string& at);

// One samples.jsonl line; newline not included.
std::string sample_line(std::size_t chain, const Sequence& tokens,
                        std::uint64_t nfe);
std::vector<Sequence> read_samples_jsonl(const std::string& file);

// Dotted-path override of a scalar leaf; missing intermediate objects are
// created. The value is parsed as JSON when possible, else kept as a string.
void apply_override(Json& doc, const std::string& dotted,
                    const std::string& value);

Json parse_json_text(const std::string& text, const std::string& what);
Json load_json_file(const std::string& file, const std::string& at);
void write_text_file(const std::string& file, const std::string& text);
std::string render_json(const Json& j);

}  // namespace dfm

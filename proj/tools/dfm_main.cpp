#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dfm/serialize.hpp"

namespace {

using dfm::Json;

struct CommonArgs {
  std::string config_file;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("config", args.config_file, "Experiment config (JSON)")
      ->required();
  cmd->add_option("--set", args.overrides,
                  "Override a config leaf, dotted.path=value; the value is "
                  "parsed as JSON when possible");
}

Json load_config(const CommonArgs& args) {
  Json doc = dfm::load_json_file(args.config_file, "config");
  for (const std::string& assignment : args.overrides) {
    const std::size_t eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw dfm::schema_error("--set", "expected dotted.path=value, got '" +
                                           assignment + "'");
    }
    dfm::apply_override(doc, assignment.substr(0, eq),
                        assignment.substr(eq + 1));
  }
  if (const char* env_seed = std::getenv("DFM_SEED")) {
    const std::string text(env_seed);
    if (!text.empty()) {
      try {
        std::size_t used = 0;
        const unsigned long long seed = std::stoull(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
        doc["seed"] = static_cast<std::uint64_t>(seed);
      } catch (const std::exception&) {
        throw dfm::schema_error("DFM_SEED", "expected an unsigned integer, "
                                            "got '" +
                                                text + "'");
      }
    }
  }
  return doc;
}

std::vector<std::string> split_names(const std::string& csv) {
  std::vector<std::string> names;
  std::size_t begin = 0;
  while (begin <= csv.size()) {
    const std::size_t end = csv.find(',', begin);
    const std::string part =
        csv.substr(begin, end == std::string::npos ? end : end - begin);
    if (!part.empty()) names.push_back(part);
    if (end == std::string::npos) break;
    begin = end + 1;
  }
  return names;
}

int cmd_run(const CommonArgs& args) {
  const dfm::ExperimentConfig config =
      dfm::experiment_from_json(load_config(args));
  const dfm::BuiltPosterior posterior = dfm::build_posterior(config);
  const dfm::RunResult result = dfm::run_experiment(config, posterior);
  dfm::write_run_outputs(config, posterior, result);
  std::cout << dfm::render_json(dfm::run_report_to_json(config, result));
  return 0;
}

int cmd_verify(const CommonArgs& args, bool suite_given,
               const std::string& suite) {
  dfm::ExperimentConfig config = dfm::experiment_from_json(load_config(args));
  if (suite_given) config.verify.checks = split_names(suite);

  const std::vector<dfm::CheckResult> results =
      dfm::run_checks(config.space, config.source, config.target,
                      config.coupling, config.path, config.verify);

  bool all_passed = true;
  for (const dfm::CheckResult& check : results) {
    all_passed = all_passed && check.passed;
    std::printf("[%s] %-26s residual=%.3e tolerance=%.3e  %s\n",
                check.passed ? "PASS" : "FAIL", check.name.c_str(),
                check.residual, check.tolerance, check.detail.c_str());
  }
  std::printf("%zu/%zu checks passed\n",
              static_cast<std::size_t>(
                  std::count_if(results.begin(), results.end(),
                                [](const auto& c) { return c.passed; })),
              results.size());
  return all_passed ? 0 : 1;
}

int cmd_train(const CommonArgs& args) {
  const dfm::ExperimentConfig config =
      dfm::experiment_from_json(load_config(args));
  if (config.posterior.kind != dfm::PosteriorChoice::Kind::train_now) {
    throw dfm::config_error("train needs posterior.kind = train_now");
  }
  const dfm::BuiltPosterior posterior = dfm::build_posterior(config);

  namespace fs = std::filesystem;
  const fs::path dir(config.output_dir);
  fs::create_directories(dir);
  dfm::write_text_file(
      (dir / "checkpoint.json").string(),
      dfm::render_json(dfm::checkpoint_to_json(*posterior.table)));
  std::string curve = "step,loss\n";
  for (const auto& [step, loss] : posterior.train_report->loss_history) {
    curve += std::to_string(step) + "," + Json(loss).dump() + "\n";
  }
  dfm::write_text_file((dir / "loss_curve.csv").string(), curve);

  std::cout << dfm::render_json(
      Json{{"initial_loss", posterior.train_report->initial_loss},
           {"final_loss", posterior.train_report->final_loss},
           {"steps_run", posterior.train_report->steps_run},
           {"checkpoint", (dir / "checkpoint.json").string()}});
  return 0;
}

int cmd_sweep(const CommonArgs& args, const std::string& grid_file) {
  const dfm::ExperimentConfig config =
      dfm::experiment_from_json(load_config(args));
  const Json grid = dfm::load_json_file(grid_file, "grid");
  const std::vector<dfm::SweepAxis> axes = dfm::axes_from_json(grid, "grid");
  const std::vector<dfm::SweepRow> rows = dfm::run_sweep(config, axes);
  dfm::write_sweep_csv(config, axes, rows);

  std::size_t failed = 0;
  for (const dfm::SweepRow& row : rows) {
    if (!row.error.empty()) ++failed;
  }
  std::cout << rows.size() << " cells, " << failed << " failed, wrote "
            << (std::filesystem::path(config.output_dir) / "summary.csv")
                   .string()
            << "\n";
  return 0;
}

int cmd_metrics(const std::string& samples_file,
                const std::string& target_file) {
  const std::vector<dfm::Sequence> samples =
      dfm::read_samples_jsonl(samples_file);
  const Json doc = dfm::load_json_file(target_file, "target");
  if (!doc.is_object() || !doc.contains("space") || !doc.contains("target")) {
    throw dfm::schema_error("target",
                            "expected an object with space and target");
  }
  const dfm::SpaceSpec space = dfm::space_from_json(doc["space"], "space");
  const dfm::TargetSpec target = dfm::target_from_json(doc["target"], "target");
  target.validate(space);

  std::cout << dfm::render_json(
      Json{{"tv", dfm::tv_to_target(samples, target.joint())},
           {"entropy", dfm::sequence_entropy(samples)},
           {"n", samples.size()}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discrete-state flow sampling, training, and verification"};
  app.require_subcommand(1);

  CommonArgs run_args;
  CLI::App* run = app.add_subcommand("run", "Sample and report metrics");
  add_common(run, run_args);

  CommonArgs verify_args;
  std::string suite;
  CLI::App* verify =
      app.add_subcommand("verify", "Run exactness checks on the oracle space");
  add_common(verify, verify_args);
  CLI::Option* suite_opt = verify->add_option(
      "--suite", suite,
      "Comma-separated check names (empty string for an empty report); "
      "defaults to the full suite");

  CommonArgs train_args;
  CLI::App* train =
      app.add_subcommand("train", "Train a tabular posterior and save it");
  add_common(train, train_args);

  CommonArgs sweep_args;
  std::string grid_file;
  CLI::App* sweep = app.add_subcommand("sweep", "Grid of runs, one CSV row each");
  add_common(sweep, sweep_args);
  sweep->add_option("--grid", grid_file, "Grid spec (JSON)")->required();

  std::string samples_file;
  std::string target_file;
  CLI::App* metrics =
      app.add_subcommand("metrics", "Score an existing sample dump");
  metrics->add_option("samples", samples_file, "samples.jsonl")->required();
  metrics->add_option("--target", target_file, "Target law (JSON)")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(run_args);
    if (verify->parsed()) {
      return cmd_verify(verify_args, suite_opt->count() > 0, suite);
    }
    if (train->parsed()) return cmd_train(train_args);
    if (sweep->parsed()) return cmd_sweep(sweep_args, grid_file);
    if (metrics->parsed()) return cmd_metrics(samples_file, target_file);
  } catch (const dfm::schema_error& failure) {
    std::cerr << "config error: " << failure.what() << "\n";
    return 2;
  } catch (const dfm::config_error& failure) {
    std::cerr << "config error: " << failure.what() << "\n";
    return 2;
  } catch (const dfm::error& failure) {
    std::cerr << "error: " << failure.what() << "\n";
    return 1;
  } catch (const std::exception& failure) {
    std::cerr << "error: " << failure.what() << "\n";
    return 1;
  }
  return 0;
}

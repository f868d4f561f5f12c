#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>

#include "dfm/serialize.hpp"
#include "doctest.h"

using namespace dfm;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig config;
  config.space = SpaceSpec{2, true, 2};
  config.source = SourceSpec::all_mask();
  JointPMF q;
  q[Sequence{0, 1}] = 0.4;
  q[Sequence{1, 0}] = 0.6;
  config.target = TargetSpec::explicit_pmf(q);
  config.n_samples = 50;
  config.output_dir = "out";
  return config;
}

std::string field_of(const std::function<void()>& call) {
  try {
    call();
  } catch (const schema_error& failure) {
    return failure.field();
  }
  return "<no schema_error>";
}

}  // namespace

TEST_CASE("space, source, target, and coupling round-trip") {
  const SpaceSpec space{3, true, 4};
  CHECK(space_from_json(space_to_json(space), "space") == space);

  for (const SourceSpec& source :
       {SourceSpec::all_mask(), SourceSpec::uniform(true),
        SourceSpec::iid_custom(TokenPMF{0.25, 0.75, 0.0})}) {
    const SourceSpec back = source_from_json(source_to_json(source), "source");
    CHECK(back.kind == source.kind);
    CHECK(back.include_mask == source.include_mask);
    CHECK(back.custom.p == source.custom.p);
  }

  JointPMF q;
  q[Sequence{0, 1}] = 0.5;
  q[Sequence{2, 2}] = 0.5;
  const TargetSpec target = TargetSpec::explicit_pmf(q);
  const TargetSpec target_back =
      target_from_json(target_to_json(target), "target");
  CHECK(target_back.kind == TargetSpec::Kind::explicit_pmf);
  CHECK(joint_tv(target_back.q, q) == 0.0);

  const TargetSpec data =
      TargetSpec::dataset({Sequence{0, 0}, Sequence{1, 2}, Sequence{1, 2}});
  const TargetSpec data_back = target_from_json(target_to_json(data), "target");
  CHECK(data_back.kind == TargetSpec::Kind::dataset);
  CHECK(data_back.data == data.data);

  CouplingSpec prefix;
  prefix.kind = CouplingSpec::Kind::conditional_prefix;
  CHECK(coupling_from_json(coupling_to_json(prefix), "coupling").kind ==
        prefix.kind);
}

TEST_CASE("duplicate target states are rejected with the row path") {
  Json doc = Json::parse(R"({"kind":"explicit","pmf":[
    {"x":[0],"p":0.5},{"x":[0],"p":0.5}]})");
  CHECK(field_of([&] { target_from_json(doc, "target"); }) == "target.pmf[1]");
}

TEST_CASE("schedulers and paths round-trip") {
  for (const ScalarScheduler& kappa :
       {ScalarScheduler::linear(), ScalarScheduler::cosine(),
        ScalarScheduler::cubic_poly(0.5, 1.5)}) {
    const ScalarScheduler back =
        scheduler_from_json(scheduler_to_json(kappa), "kappa");
    CHECK(back.kind() == kappa.kind());
    CHECK(back.a() == kappa.a());
    CHECK(back.b() == kappa.b());
  }
  CHECK_THROWS_AS(
      scheduler_from_json(Json{{"kind", "quartic"}}, "kappa"), schema_error);

  const ConditionalPath convex =
      ConditionalPath::convex(ScalarScheduler::cubic_poly(0.0, 2.0));
  const ConditionalPath convex_back =
      path_from_json(path_to_json(convex), "path");
  CHECK(convex_back.is_convex());
  CHECK(convex_back.scheduler().base().kind() ==
        ScalarScheduler::Kind::cubic_poly);

  const ConditionalPath noisy =
      ConditionalPath::uniform_noise(ScalarScheduler::linear(), 0.3, true);
  const ConditionalPath noisy_back = path_from_json(path_to_json(noisy), "path");
  CHECK_FALSE(noisy_back.is_convex());
  CHECK(noisy_back.scheduler().c() == 0.3);
  CHECK(noisy_back.include_mask_in_uniform());
}

TEST_CASE("sampler configs round-trip with every optional block") {
  SamplerConfig config;
  config.direction = Direction::backward;
  config.n_steps = 64;
  config.adaptive = false;
  config.backward_kind = BackwardKind::simple;
  config.corrector = CorrectorSchedule{8.0, 1.5, 0.5};
  config.temperature = TemperatureSchedule{0.7, true};
  config.corrector_iterations = CorrectorIterationSpec{0.4, 3, 0.8};
  ConditioningSpec pins;
  pins.fixed[1] = 2;
  config.conditioning = pins;
  config.record_trajectory = true;

  const SamplerConfig back = sampler_from_json(sampler_to_json(config), "s");
  CHECK(back.direction == Direction::backward);
  CHECK(back.n_steps == 64);
  CHECK_FALSE(back.adaptive);
  CHECK(back.backward_kind == BackwardKind::simple);
  CHECK(back.corrector->alpha == 8.0);
  CHECK(back.corrector->b == 0.5);
  CHECK(back.temperature->tau == 0.7);
  CHECK(back.temperature->decay);
  CHECK(back.corrector_iterations->iterations == 3);
  CHECK(back.conditioning->fixed.at(1) == 2);
  CHECK(back.record_trajectory);

  CHECK(field_of([] {
          sampler_from_json(Json{{"direction", "sideways"}}, "sampler");
        }) == "sampler.direction");
}

TEST_CASE("train, estimator, and posterior choices round-trip") {
  TrainConfig train;
  train.steps = 1234;
  train.batch_size = 77;
  train.learning_rate = 0.125;
  train.time_dist.kind = TimeDistribution::Kind::power;
  train.time_dist.gamma = 2.5;
  train.seed = 9;
  const TrainConfig train_back = train_from_json(train_to_json(train), "t");
  CHECK(train_back.steps == 1234);
  CHECK(train_back.batch_size == 77);
  CHECK(train_back.time_dist.kind == TimeDistribution::Kind::power);
  CHECK(train_back.time_dist.gamma == 2.5);

  EstimatorConfig estimator;
  estimator.min_cell_count = 42;
  estimator.lambda = 0.2;
  const EstimatorConfig estimator_back =
      estimator_from_json(estimator_to_json(estimator), "e");
  CHECK(estimator_back.min_cell_count == 42);
  CHECK(estimator_back.lambda == 0.2);

  PosteriorChoice trained;
  trained.kind = PosteriorChoice::Kind::trained;
  trained.checkpoint = "model.json";
  const PosteriorChoice trained_back =
      posterior_from_json(posterior_to_json(trained), "p");
  CHECK(trained_back.kind == PosteriorChoice::Kind::trained);
  CHECK(trained_back.checkpoint == "model.json");

  PosteriorChoice train_now;
  train_now.kind = PosteriorChoice::Kind::train_now;
  train_now.train = train;
  train_now.time_bins = 4;
  const PosteriorChoice train_now_back =
      posterior_from_json(posterior_to_json(train_now), "p");
  CHECK(train_now_back.time_bins == 4);
  CHECK(train_now_back.train.steps == 1234);
}

TEST_CASE("experiment configs round-trip and reject unknown fields") {
  ExperimentConfig config = small_config();
  config.sampler.n_steps = 32;
  config.metrics = {"tv", "nfe"};
  config.seed = 11;
  config.workers = 2;
  config.verify.kappa_dot_scale = 2.0;

  const ExperimentConfig back = experiment_from_json(experiment_to_json(config));
  CHECK(back.space == config.space);
  CHECK(back.sampler.n_steps == 32);
  CHECK(back.metrics == config.metrics);
  CHECK(back.seed == 11);
  CHECK(back.workers == 2);
  CHECK(back.verify.kappa_dot_scale == 2.0);

  Json doc = experiment_to_json(config);
  doc["spacex"] = 1;
  CHECK(field_of([&] { experiment_from_json(doc); }) == "spacex");

  Json missing = experiment_to_json(config);
  missing.erase("target");
  CHECK(field_of([&] { experiment_from_json(missing); }) == "target");

  Json bad_leaf = experiment_to_json(config);
  bad_leaf["space"]["d"] = -3;
  CHECK(field_of([&] { experiment_from_json(bad_leaf); }) == "space.d");
}

TEST_CASE("validation failures surface as config errors") {
  ExperimentConfig config = small_config();
  config.metrics = {"perplexity"};
  CHECK_THROWS_AS(experiment_from_json(experiment_to_json(config)),
                  config_error);

  ExperimentConfig dataset_oracle = small_config();
  dataset_oracle.target = TargetSpec::dataset({Sequence{0, 1}});
  CHECK_THROWS_WITH_AS(
      experiment_from_json(experiment_to_json(dataset_oracle)),
      "the oracle posterior needs an explicit target distribution",
      config_error);

  ExperimentConfig zero = small_config();
  zero.n_samples = 0;
  CHECK_THROWS_AS(experiment_from_json(experiment_to_json(zero)),
                  config_error);
}

TEST_CASE("checkpoints round-trip cells, constants, and priors") {
  const SpaceSpec space{2, true, 2};
  TabularPosterior model(space, 2, 4);
  TabularPosterior::CellKey key{0, 1, 2, Sequence{0, 3}};
  model.mutable_cell(key) = {0.5, -0.25, 1.5};
  model.set_constant_factor(1, delta_pmf(2, 3));
  model.note_prior(0, 1, 2, 1);
  model.note_prior(0, 1, 2, 1);
  model.note_prior(0, 1, 2, 0);

  const Json doc = checkpoint_to_json(model);
  const auto loaded = checkpoint_from_json(doc, "checkpoint");
  CHECK(loaded->space() == space);
  CHECK(loaded->factor_count() == 2);
  CHECK(loaded->time_bins() == 4);
  CHECK(loaded->cells().size() == 1);
  CHECK(loaded->cells().at(key) == std::vector<double>{0.5, -0.25, 1.5});
  CHECK(loaded->is_constant(1));
  CHECK(loaded->priors().at({0, 1, 2}) ==
        std::vector<std::uint64_t>{1, 2, 0});

  const TokenPMF served = loaded->factor_posterior(0, 1, Sequence{0, 3}, 0.6);
  const TokenPMF original = model.factor_posterior(0, 1, Sequence{0, 3}, 0.6);
  CHECK(pmf_tv(served, original) == 0.0);

  Json wrong = doc;
  wrong["entries"][0]["logits"] = {0.0, 0.0};
  CHECK(field_of([&] { checkpoint_from_json(wrong, "checkpoint"); }) ==
        "checkpoint.entries[0].logits");
}

TEST_CASE("run reports round-trip through the reader") {
  ExperimentConfig config = small_config();
  config.seed = 3;
  RunResult result;
  result.metrics.tv = 0.0125;
  result.metrics.entropy = 0.7;
  result.metrics.nfe = NfeStats{1, 2, 1.5, 30};
  result.metrics.fallback_served = 4;
  TrainReport train;
  train.initial_loss = 2.0;
  train.final_loss = 0.5;
  train.steps_run = 100;
  result.train_report = train;

  const ParsedRunReport parsed =
      run_report_from_json(run_report_to_json(config, result));
  CHECK(parsed.seed == 3);
  CHECK(parsed.n_samples == config.n_samples);
  CHECK(parsed.metrics.tv == 0.0125);
  CHECK(parsed.metrics.entropy == 0.7);
  CHECK(parsed.metrics.nfe->total == 30);
  CHECK(parsed.metrics.fallback_served == 4);
  CHECK(parsed.train_report->final_loss == 0.5);
  CHECK_FALSE(parsed.metrics.tv_exact.has_value());
}

TEST_CASE("dotted overrides create objects and parse values") {
  Json doc = Json::object();
  apply_override(doc, "sampler.n_steps", "64");
  apply_override(doc, "output_dir", "runs/a");
  apply_override(doc, "sampler.adaptive", "false");
  CHECK(doc["sampler"]["n_steps"] == 64);
  CHECK(doc["output_dir"] == "runs/a");
  CHECK(doc["sampler"]["adaptive"] == false);

  doc["target"] = Json{{"pmf", Json::array({Json{{"p", 0.5}}})}};
  apply_override(doc, "target.pmf.0.p", "0.25");
  CHECK(doc["target"]["pmf"][0]["p"] == 0.25);

  CHECK_THROWS_AS(apply_override(doc, "target.pmf.7.p", "1"), schema_error);
  CHECK_THROWS_AS(apply_override(doc, "output_dir.deeper", "1"), schema_error);
}

TEST_CASE("sweep axes parse and reject junk") {
  const Json doc = Json::parse(
      R"({"axes":[{"key":"kappa.a","values":[0,1,2]},
                  {"key":"n_steps","values":[32,64]}]})");
  const std::vector<SweepAxis> axes = axes_from_json(doc, "grid");
  REQUIRE(axes.size() == 2);
  CHECK(axes[0].key == "kappa.a");
  CHECK(axes[0].values == std::vector<double>{0.0, 1.0, 2.0});
  CHECK(axes[1].values.size() == 2);

  CHECK_THROWS_AS(axes_from_json(Json{{"axes", Json::array()}}, "grid"),
                  schema_error);
  CHECK_THROWS_AS(
      axes_from_json(
          Json{{"axes", Json::array({Json{{"key", "kappa.a"},
                                          {"values", Json::array()}}})}},
          "grid"),
      schema_error);
}

TEST_CASE("sample dumps round-trip through the jsonl reader") {
  namespace fs = std::filesystem;
  const fs::path file = fs::temp_directory_path() / "dfm_samples_test.jsonl";
  std::string text;
  text += sample_line(0, Sequence{1, 2}, 3) + "\n";
  text += sample_line(1, Sequence{0, 0}, 2) + "\n";
  write_text_file(file.string(), text);

  const std::vector<Sequence> samples = read_samples_jsonl(file.string());
  REQUIRE(samples.size() == 2);
  CHECK(samples[0] == Sequence{1, 2});
  CHECK(samples[1] == Sequence{0, 0});

  write_text_file(file.string(), "not json\n");
  CHECK_THROWS_AS(read_samples_jsonl(file.string()), data_error);
  fs::remove(file);

  CHECK_THROWS_AS(read_samples_jsonl("/nonexistent/samples.jsonl"), data_error);
  CHECK_THROWS_AS(load_json_file("/nonexistent/config.json", "config"),
                  schema_error);
}

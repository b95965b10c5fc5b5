#include <filesystem>
#include <set>

#include "doctest.h"
#include "ltfl/error.hpp"
#include "ltfl/experiments.hpp"
#include "ltfl/io.hpp"
#include "ltfl/scenario.hpp"

using namespace ltfl;

namespace {

std::string field_of(const Json& j) {
  try {
    scenario_from_json(j);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "<accepted>";
}

}  // namespace

TEST_CASE("an empty document resolves to valid defaults") {
  const ScenarioConfig cfg = scenario_from_json(Json::object());
  cfg.validate();
  CHECK(cfg.ticket_rates == std::vector<double>{0.3, 0.5, 0.7});
  CHECK(cfg.attack.alpha == 0.05);
  CHECK(cfg.attack.size == 4);
  CHECK(cfg.attack.corner == Corner::kLowerLeft);
  CHECK(cfg.train.momentum == 0.9);
  CHECK(cfg.early_bird.window == 5);
  CHECK(cfg.early_bird.epsilon == 0.1);
  CHECK(cfg.federation.tau == 3.0);
  CHECK(cfg.architecture().num_classes() == 10);
}

TEST_CASE("errors name the offending field path") {
  CHECK(field_of({{"modle", Json::object()}}) == "modle");
  CHECK(field_of({{"model", {{"kind", "rnn"}}}}) == "model.kind");
  CHECK(field_of({{"train", {{"lr_schedule", Json::array()}}}}) == "train.lr_schedule");
  CHECK(field_of({{"train", {{"batch_size", "big"}}}}) == "train.batch_size");
  CHECK(field_of({{"federation", {{"poisoned", {0, 12}}}}}).starts_with("federation.poisoned"));
  CHECK(field_of({{"federation", {{"search", {{"momentum", 1.5}}}}}}) == "federation.search.momentum");
  CHECK(field_of({{"attack", {{"alpha", 2.0}}}}) == "attack.alpha");
  CHECK(field_of({{"attack", {{"corner", "middle"}}}}) == "attack.corner");
  CHECK(field_of({{"ticket", {{"rates", {0.3, 1.0}}}}}).starts_with("ticket.rates"));
  CHECK(field_of({{"train", {{"epochs", 2.5}}}}) == "train.epochs");
  CHECK(field_of({{"model", {{"hidden", {16, -4}}}}}) == "model.hidden");
  CHECK(field_of({{"seeds", {{"warp", 1}}}}) == "seeds.warp");
}

TEST_CASE("load_scenario reports the path") {
  const auto missing = std::filesystem::temp_directory_path() / "ltfl-no-such-config.json";
  CHECK_THROWS_WITH_AS(load_scenario(missing), doctest::Contains(missing.c_str()), ConfigError);
  const auto bad = std::filesystem::temp_directory_path() / "ltfl-bad-config.json";
  write_text(bad, "{ \"seed\": ");
  CHECK_THROWS_WITH_AS(load_scenario(bad), doctest::Contains(bad.c_str()), ConfigError);
  write_text(bad, R"({"train": {"epochs": -1}})");
  try {
    load_scenario(bad);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("train.epochs") != std::string::npos);
  }
}

TEST_CASE("stage seeds are distinct, derived from the master seed, and pinnable") {
  ScenarioConfig cfg = scenario_from_json({{"seed", 5}});
  std::set<std::uint64_t> seen;
  for (int s = 0; s <= static_cast<int>(Stage::kFineTune); ++s) seen.insert(cfg.stage_seed(static_cast<Stage>(s)));
  CHECK(seen.size() == static_cast<std::size_t>(Stage::kFineTune) + 1);
  const std::uint64_t init5 = cfg.stage_seed(Stage::kInit);
  cfg.seed = 6;
  CHECK(cfg.stage_seed(Stage::kInit) != init5);
  const ScenarioConfig pinned = scenario_from_json({{"seed", 6}, {"seeds", {{"init", 123}}}});
  CHECK(pinned.stage_seed(Stage::kInit) == 123);
  CHECK(pinned.stage_seed(Stage::kTraining) == cfg.stage_seed(Stage::kTraining));
}

TEST_CASE("config hash: covers results, ignores output location and scheduling") {
  const ScenarioConfig a = scenario_from_json({{"seed", 1}});
  CHECK(config_hash(a).size() == 16);
  CHECK(config_hash(a) == config_hash(scenario_from_json({{"seed", 1}, {"output", "elsewhere"}})));
  CHECK(config_hash(a) == config_hash(scenario_from_json({{"seed", 1}, {"federation", {{"parallel", false}}}})));
  CHECK(config_hash(a) != config_hash(scenario_from_json({{"seed", 2}})));
  CHECK(config_hash(a) != config_hash(scenario_from_json({{"seed", 1}, {"attack", {{"alpha", 0.1}}}})));
  // The resolved document parses back to the same scenario.
  CHECK(config_hash(scenario_from_json(to_json(a))) == config_hash(a));
}

TEST_CASE("workbench: datasets are disjoint draws and the ASR set excludes the target") {
  const ScenarioConfig cfg = scenario_from_json(
      {{"data", {{"classes", 4}, {"train_per_class", 10}, {"test_per_class", 5}, {"validation_per_class", 3}}},
       {"model", {{"hidden", {8}}}}});
  const Workbench wb = prepare(cfg);
  CHECK(wb.train.size() == 40);
  CHECK(wb.test.size() == 20);
  CHECK(wb.validation.size() == 12);
  CHECK(wb.asr_set.size() == 15);
  CHECK(wb.train.pixels != wb.validation.pixels);
  CHECK(wb.validation.split == Split::kServerValidation);
  CHECK(wb.provenance().config_hash == config_hash(cfg));
}

TEST_CASE("detection summary precision and recall") {
  const DetectionSummary exact = summarize_detection(3, {true, true, true, false, false}, {2, 0, 1});
  CHECK(exact.exact());
  CHECK(exact.precision == 1.0);
  CHECK(exact.recall == 1.0);
  const DetectionSummary partial = summarize_detection(1, {true, false, false, true}, {0, 1});
  CHECK(partial.flagged == std::vector<std::size_t>{0, 3});
  CHECK(partial.precision == 0.5);
  CHECK(partial.recall == 0.5);
  CHECK_FALSE(partial.exact());
  const DetectionSummary quiet = summarize_detection(1, {false, false, false}, {});
  CHECK(quiet.precision == 1.0);
  CHECK(quiet.recall == 1.0);
}

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ltfl/data.hpp"
#include "ltfl/federation.hpp"
#include "ltfl/nn.hpp"
#include "ltfl/tickets.hpp"

namespace ltfl {

/// Named stochastic stages. Each one gets its own seed, derived from the master
/// seed unless the scenario pins it under "seeds".
enum class Stage {
  kTrainData,
  kTestData,
  kValidationData,
  kInit,
  kTraining,
  kPartition,
  kSearch,
  kTrigger,
  kPoison,
  kClients,
  kFineTune,
};

struct DataSection {
  std::size_t classes = 10;
  std::size_t train_per_class = 200;
  std::size_t test_per_class = 50;
  std::size_t validation_per_class = 100;
  ImageShape shape;
  GeneratorOptions generator;
};

struct ModelSection {
  std::string kind = "mlp";  // "mlp" or "cnn"
  std::vector<std::size_t> conv_channels;
  std::vector<std::size_t> hidden{128, 64};
};

struct AttackSection {
  TriggerKind trigger = TriggerKind::kWhiteSquare;
  std::size_t size = 4;
  Corner corner = Corner::kLowerLeft;
  int target_label = 0;
  double alpha = 0.05;
};

struct OverlapSection {
  std::vector<double> rates{0.3, 0.5, 0.7};
  std::vector<double> benign_rates{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  double heatmap_rate = 0.5;
  /// Prunable-layer indices drawn in the heatmap; empty means all.
  std::vector<std::size_t> heatmap_layers;
};

struct SweepSection {
  std::vector<double> alphas{0.0, 0.01, 0.05, 0.1};
  double rate = 0.5;
};

struct FederationSection {
  std::size_t clients = 10;
  std::vector<std::size_t> poisoned{0, 1, 2};
  std::size_t rounds = 8;
  double rate = 0.7;
  bool defense = true;
  double tau = 3.0;
  std::size_t detect_from_round = 1;
  SearchOrigin search_origin = SearchOrigin::kInitial;
  TrainConfig search;
  TrainConfig local;
  bool parallel = true;
  /// When set, `federate` exits 1 unless the last detection flags exactly the poisoned clients.
  bool assert_detection = false;
};

struct ScenarioConfig {
  std::string name = "scenario";
  std::uint64_t seed = 1;
  std::string output = "out";
  DataSection data;
  ModelSection model;
  TrainConfig train;
  EarlyBirdConfig early_bird;
  AttackSection attack;
  std::vector<double> ticket_rates{0.3, 0.5, 0.7};
  OverlapSection overlap;
  SweepSection sweep;
  TrainConfig fine_tune;
  FederationSection federation;
  std::map<std::string, std::uint64_t> pinned_seeds;

  /// Seed for a stage: the pinned value if present, else derived from `seed`.
  std::uint64_t stage_seed(Stage stage) const;

  Architecture architecture() const;
  FederationConfig federation_config() const;

  /// Throws ConfigError naming the offending field path.
  void validate() const;
};

std::string_view to_string(Stage stage);

/// Parses and validates. Unknown keys are rejected so typos surface as errors.
ScenarioConfig scenario_from_json(const nlohmann::json& j);
/// Missing or unreadable file -> ConfigError whose field is the path.
ScenarioConfig load_scenario(const std::filesystem::path& path);

/// Fully resolved form (every default filled in); what the config hash covers.
nlohmann::json to_json(const ScenarioConfig& cfg);
/// 16 hex digits of FNV-1a over the canonical resolved JSON, excluding `output`.
std::string config_hash(const ScenarioConfig& cfg);

}  // namespace ltfl

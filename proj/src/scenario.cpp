#include "ltfl/scenario.hpp"

#include <cstdio>
#include <algorithm>
#include <set>
#include <type_traits>

#include "ltfl/error.hpp"
#include "ltfl/io.hpp"
#include "ltfl/rng.hpp"

namespace ltfl {

namespace {

using nlohmann::json;

constexpr Stage kAllStages[] = {Stage::kTrainData, Stage::kTestData, Stage::kValidationData, Stage::kInit,
                                Stage::kTraining,  Stage::kPartition, Stage::kSearch,        Stage::kTrigger,
                                Stage::kPoison,    Stage::kClients,   Stage::kFineTune};

/// Walks one JSON object, remembering which keys were read so leftovers can be reported.
template <typename T>
struct is_count : std::bool_constant<std::is_unsigned_v<T> && !std::is_same_v<T, bool>> {};
template <typename T>
struct is_count<std::vector<T>> : is_count<T> {};

bool whole(const json& v) {
  if (v.is_array()) return std::all_of(v.begin(), v.end(), [](const json& e) { return whole(e); });
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    // nlohmann happily converts -1 or 2.5 into a size_t; counts must be whole and non-negative.
    if constexpr (is_count<T>::value) {
      if (!whole(j_.at(key))) throw ConfigError(at(key), "expected a non-negative integer");
    }
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(at(key), "wrong type");
    }
  }

  Reader child(const std::string& key) {
    seen_.insert(key);
    return Reader(j_.at(key), at(key));
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(at(key), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

TrainConfig read_train(Reader r, TrainConfig base) {
  if (r.has("lr_schedule")) {
    const json& s = r.raw("lr_schedule");
    if (!s.is_array() || s.empty()) throw ConfigError(r.at("lr_schedule"), "expected a non-empty list of [epoch, lr]");
    base.lr_schedule.clear();
    for (std::size_t i = 0; i < s.size(); ++i) {
      const std::string where = r.at("lr_schedule") + "[" + std::to_string(i) + "]";
      if (!s[i].is_array() || s[i].size() != 2 || !s[i][0].is_number_unsigned() || !s[i][1].is_number()) {
        throw ConfigError(where, "expected [epoch, lr]");
      }
      base.lr_schedule.emplace_back(s[i][0].get<std::size_t>(), s[i][1].get<double>());
    }
  }
  r.read("momentum", base.momentum);
  r.read("batch_size", base.batch_size);
  r.read("epochs", base.epochs);
  r.read("l1_gamma", base.l1_gamma);
  r.read("weight_decay", base.weight_decay);
  r.finish();
  try {
    base.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(r.at(e.field().substr(e.field().rfind('.') + 1)), e.message());
  }
  return base;
}

json train_json(const TrainConfig& t) {
  json sched = json::array();
  for (auto [e, lr] : t.lr_schedule) sched.push_back({e, lr});
  return {{"lr_schedule", sched},   {"momentum", t.momentum},      {"batch_size", t.batch_size},
          {"epochs", t.epochs},     {"l1_gamma", t.l1_gamma},      {"weight_decay", t.weight_decay}};
}

void check_rate(double p, const std::string& where) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError(where, "pruning rate must be in [0, 1)");
}

template <typename Enum, typename Parse>
Enum read_enum(Reader& r, const std::string& key, Enum fallback, Parse parse) {
  std::string name;
  r.read(key, name);
  if (name.empty()) return fallback;
  try {
    return parse(name);
  } catch (const ConfigError& e) {
    throw ConfigError(r.at(key), e.message());
  }
}

}  // namespace

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::kTrainData: return "train_data";
    case Stage::kTestData: return "test_data";
    case Stage::kValidationData: return "validation_data";
    case Stage::kInit: return "init";
    case Stage::kTraining: return "training";
    case Stage::kPartition: return "partition";
    case Stage::kSearch: return "search";
    case Stage::kTrigger: return "trigger";
    case Stage::kPoison: return "poison";
    case Stage::kClients: return "clients";
    case Stage::kFineTune: return "fine_tune";
  }
  return "?";
}

std::uint64_t ScenarioConfig::stage_seed(Stage stage) const {
  const auto it = pinned_seeds.find(std::string(to_string(stage)));
  if (it != pinned_seeds.end()) return it->second;
  return derive_seed(seed, static_cast<std::uint64_t>(stage) + 1);
}

Architecture ScenarioConfig::architecture() const {
  if (model.kind == "cnn") return Architecture::small_cnn(data.shape, model.conv_channels, model.hidden, data.classes);
  return Architecture::mlp(data.shape.size(), model.hidden, data.classes);
}

FederationConfig ScenarioConfig::federation_config() const {
  FederationConfig fc;
  fc.rate = federation.rate;
  fc.defense = federation.defense;
  fc.tau = federation.tau;
  fc.detect_from_round = federation.detect_from_round;
  fc.parallel = federation.parallel;
  fc.client.origin = federation.search_origin;
  fc.client.early_bird = early_bird;
  fc.client.search = federation.search;
  fc.client.search.seed = stage_seed(Stage::kSearch);
  fc.client.local = federation.local;
  fc.fine_tune = fine_tune;
  fc.fine_tune.seed = stage_seed(Stage::kFineTune);
  return fc;
}

void ScenarioConfig::validate() const {
  if (data.classes < 2) throw ConfigError("data.classes", "need at least 2 classes");
  if (data.train_per_class == 0) throw ConfigError("data.train_per_class", "must be positive");
  if (data.test_per_class == 0) throw ConfigError("data.test_per_class", "must be positive");
  if (data.validation_per_class == 0) throw ConfigError("data.validation_per_class", "must be positive");
  if (data.shape.channels == 0) throw ConfigError("data.channels", "must be positive");
  if (data.shape.height < 8 || data.shape.width < 8) throw ConfigError("data.height", "images must be at least 8x8");
  if (data.generator.noise < 0.0 || data.generator.noise > 1.0) throw ConfigError("data.noise", "must be in [0, 1]");
  if (data.generator.jitter < 0.0) throw ConfigError("data.jitter", "must be non-negative");

  if (model.kind != "mlp" && model.kind != "cnn") throw ConfigError("model.kind", "expected 'mlp' or 'cnn'");
  if (model.kind == "cnn" && model.conv_channels.empty()) throw ConfigError("model.conv_channels", "cnn needs at least one conv layer");
  if (model.kind == "mlp" && !model.conv_channels.empty()) throw ConfigError("model.conv_channels", "only valid for cnn");
  if (model.conv_channels.size() > 3) throw ConfigError("model.conv_channels", "at most 3 conv layers");
  if (model.hidden.empty() && model.conv_channels.empty()) throw ConfigError("model.hidden", "need at least one prunable layer");
  for (std::size_t i = 0; i < model.hidden.size(); ++i)
    if (model.hidden[i] == 0) throw ConfigError("model.hidden[" + std::to_string(i) + "]", "must be positive");
  for (std::size_t i = 0; i < model.conv_channels.size(); ++i)
    if (model.conv_channels[i] == 0) throw ConfigError("model.conv_channels[" + std::to_string(i) + "]", "must be positive");

  if (early_bird.window < 2) throw ConfigError("early_bird.window", "must be at least 2");
  if (!(early_bird.epsilon > 0.0 && early_bird.epsilon <= 1.0)) throw ConfigError("early_bird.epsilon", "must be in (0, 1]");

  if (attack.size == 0 || attack.size > std::min(data.shape.height, data.shape.width))
    throw ConfigError("attack.size", "trigger must fit inside the image");
  if (attack.target_label < 0 || static_cast<std::size_t>(attack.target_label) >= data.classes)
    throw ConfigError("attack.target_label", "not a valid class");
  if (!(attack.alpha >= 0.0 && attack.alpha <= 1.0)) throw ConfigError("attack.alpha", "must be in [0, 1]");

  if (ticket_rates.empty()) throw ConfigError("ticket.rates", "must not be empty");
  for (std::size_t i = 0; i < ticket_rates.size(); ++i) check_rate(ticket_rates[i], "ticket.rates[" + std::to_string(i) + "]");
  for (std::size_t i = 0; i < overlap.rates.size(); ++i) check_rate(overlap.rates[i], "overlap.rates[" + std::to_string(i) + "]");
  for (std::size_t i = 0; i < overlap.benign_rates.size(); ++i)
    check_rate(overlap.benign_rates[i], "overlap.benign_rates[" + std::to_string(i) + "]");
  check_rate(overlap.heatmap_rate, "overlap.heatmap_rate");
  const std::size_t prunable_layers = model.conv_channels.size() + model.hidden.size();
  for (std::size_t i = 0; i < overlap.heatmap_layers.size(); ++i)
    if (overlap.heatmap_layers[i] >= prunable_layers)
      throw ConfigError("overlap.heatmap_layers[" + std::to_string(i) + "]", "no such prunable layer");
  for (std::size_t i = 0; i < sweep.alphas.size(); ++i)
    if (!(sweep.alphas[i] >= 0.0 && sweep.alphas[i] <= 1.0))
      throw ConfigError("sweep.alphas[" + std::to_string(i) + "]", "must be in [0, 1]");
  check_rate(sweep.rate, "sweep.rate");

  const auto& f = federation;
  if (f.clients == 0) throw ConfigError("federation.clients", "must be positive");
  if (f.clients > data.classes * data.train_per_class) throw ConfigError("federation.clients", "more clients than samples");
  std::set<std::size_t> seen;
  for (std::size_t i = 0; i < f.poisoned.size(); ++i) {
    const std::string where = "federation.poisoned[" + std::to_string(i) + "]";
    if (f.poisoned[i] >= f.clients) throw ConfigError(where, "client id " + std::to_string(f.poisoned[i]) + " out of range");
    if (!seen.insert(f.poisoned[i]).second) throw ConfigError(where, "duplicate client id");
  }
  if (f.rounds == 0) throw ConfigError("federation.rounds", "must be positive");
  check_rate(f.rate, "federation.rate");
  if (!(f.tau > 0.0)) throw ConfigError("federation.tau", "must be positive");
  if (f.detect_from_round == 0) throw ConfigError("federation.detect_from_round", "rounds are 1-based");

  for (const auto& [name, value] : pinned_seeds) {
    (void)value;
    bool known = false;
    for (Stage s : kAllStages) known = known || name == to_string(s);
    if (!known) throw ConfigError("seeds." + name, "unknown stage");
  }
  architecture().validate();
}

namespace {

ScenarioConfig defaults() {
  ScenarioConfig cfg;
  cfg.train.lr_schedule = {{0, 0.02}, {20, 0.002}};
  cfg.train.batch_size = 32;
  cfg.train.epochs = 30;
  cfg.train.l1_gamma = 1e-3;
  cfg.fine_tune.lr_schedule = {{0, 0.01}};
  cfg.fine_tune.batch_size = 32;
  cfg.fine_tune.epochs = 20;
  cfg.fine_tune.l1_gamma = 1e-3;
  cfg.fine_tune.weight_decay = 0.03;
  cfg.federation.search.lr_schedule = {{0, 0.02}};
  cfg.federation.search.batch_size = 16;
  cfg.federation.search.epochs = 20;
  cfg.federation.search.l1_gamma = 1e-3;
  cfg.federation.local = cfg.federation.search;
  cfg.federation.local.epochs = 5;
  return cfg;
}

}  // namespace

ScenarioConfig scenario_from_json(const json& j) {
  ScenarioConfig cfg = defaults();
  Reader root(j, "");
  root.read("name", cfg.name);
  root.read("seed", cfg.seed);
  root.read("output", cfg.output);

  if (root.has("data")) {
    Reader r = root.child("data");
    r.read("classes", cfg.data.classes);
    r.read("train_per_class", cfg.data.train_per_class);
    r.read("test_per_class", cfg.data.test_per_class);
    r.read("validation_per_class", cfg.data.validation_per_class);
    r.read("channels", cfg.data.shape.channels);
    r.read("height", cfg.data.shape.height);
    r.read("width", cfg.data.shape.width);
    r.read("noise", cfg.data.generator.noise);
    r.read("jitter", cfg.data.generator.jitter);
    r.finish();
  }
  if (root.has("model")) {
    Reader r = root.child("model");
    r.read("kind", cfg.model.kind);
    r.read("conv_channels", cfg.model.conv_channels);
    r.read("hidden", cfg.model.hidden);
    r.finish();
  }
  if (root.has("train")) cfg.train = read_train(root.child("train"), cfg.train);
  if (root.has("early_bird")) {
    Reader r = root.child("early_bird");
    r.read("enabled", cfg.early_bird.enabled);
    r.read("window", cfg.early_bird.window);
    r.read("epsilon", cfg.early_bird.epsilon);
    r.finish();
  }
  if (root.has("attack")) {
    Reader r = root.child("attack");
    cfg.attack.trigger = read_enum(r, "trigger", cfg.attack.trigger, trigger_kind_from_string);
    cfg.attack.corner = read_enum(r, "corner", cfg.attack.corner, corner_from_string);
    r.read("size", cfg.attack.size);
    r.read("target_label", cfg.attack.target_label);
    r.read("alpha", cfg.attack.alpha);
    r.finish();
  }
  if (root.has("ticket")) {
    Reader r = root.child("ticket");
    r.read("rates", cfg.ticket_rates);
    r.finish();
  }
  if (root.has("overlap")) {
    Reader r = root.child("overlap");
    r.read("rates", cfg.overlap.rates);
    r.read("benign_rates", cfg.overlap.benign_rates);
    r.read("heatmap_rate", cfg.overlap.heatmap_rate);
    r.read("heatmap_layers", cfg.overlap.heatmap_layers);
    r.finish();
  }
  if (root.has("sweep")) {
    Reader r = root.child("sweep");
    r.read("alphas", cfg.sweep.alphas);
    r.read("rate", cfg.sweep.rate);
    r.finish();
  }
  if (root.has("fine_tune")) cfg.fine_tune = read_train(root.child("fine_tune"), cfg.fine_tune);
  if (root.has("federation")) {
    Reader r = root.child("federation");
    auto& f = cfg.federation;
    r.read("clients", f.clients);
    r.read("poisoned", f.poisoned);
    r.read("rounds", f.rounds);
    r.read("rate", f.rate);
    r.read("defense", f.defense);
    r.read("tau", f.tau);
    r.read("detect_from_round", f.detect_from_round);
    f.search_origin = read_enum(r, "search_origin", f.search_origin, search_origin_from_string);
    if (r.has("search")) f.search = read_train(r.child("search"), f.search);
    if (r.has("local")) f.local = read_train(r.child("local"), f.local);
    r.read("parallel", f.parallel);
    r.read("assert_detection", f.assert_detection);
    r.finish();
  }
  if (root.has("seeds")) {
    Reader r = root.child("seeds");
    for (const auto& [key, value] : j.at("seeds").items()) {
      std::uint64_t s = 0;
      r.read(key, s);
      cfg.pinned_seeds[key] = s;
    }
    r.finish();
  }
  root.finish();
  cfg.validate();
  return cfg;
}

ScenarioConfig load_scenario(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError(path.string(), "config file not found");
  const std::string text = read_text(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string(), std::string("invalid JSON: ") + e.what());
  }
  try {
    return scenario_from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.field(), e.message());
  }
}

json to_json(const ScenarioConfig& cfg) {
  json seeds = json::object();
  for (Stage s : kAllStages) seeds[std::string(to_string(s))] = cfg.stage_seed(s);
  const auto& f = cfg.federation;
  return {
      {"name", cfg.name},
      {"seed", cfg.seed},
      {"output", cfg.output},
      {"data",
       {{"classes", cfg.data.classes},
        {"train_per_class", cfg.data.train_per_class},
        {"test_per_class", cfg.data.test_per_class},
        {"validation_per_class", cfg.data.validation_per_class},
        {"channels", cfg.data.shape.channels},
        {"height", cfg.data.shape.height},
        {"width", cfg.data.shape.width},
        {"noise", cfg.data.generator.noise},
        {"jitter", cfg.data.generator.jitter}}},
      {"model", {{"kind", cfg.model.kind}, {"conv_channels", cfg.model.conv_channels}, {"hidden", cfg.model.hidden}}},
      {"train", train_json(cfg.train)},
      {"early_bird",
       {{"enabled", cfg.early_bird.enabled}, {"window", cfg.early_bird.window}, {"epsilon", cfg.early_bird.epsilon}}},
      {"attack",
       {{"trigger", std::string(to_string(cfg.attack.trigger))},
        {"size", cfg.attack.size},
        {"corner", std::string(to_string(cfg.attack.corner))},
        {"target_label", cfg.attack.target_label},
        {"alpha", cfg.attack.alpha}}},
      {"ticket", {{"rates", cfg.ticket_rates}}},
      {"overlap",
       {{"rates", cfg.overlap.rates},
        {"benign_rates", cfg.overlap.benign_rates},
        {"heatmap_rate", cfg.overlap.heatmap_rate},
        {"heatmap_layers", cfg.overlap.heatmap_layers}}},
      {"sweep", {{"alphas", cfg.sweep.alphas}, {"rate", cfg.sweep.rate}}},
      {"fine_tune", train_json(cfg.fine_tune)},
      {"federation",
       {{"clients", f.clients},
        {"poisoned", f.poisoned},
        {"rounds", f.rounds},
        {"rate", f.rate},
        {"defense", f.defense},
        {"tau", f.tau},
        {"detect_from_round", f.detect_from_round},
        {"search_origin", to_string(f.search_origin)},
        {"search", train_json(f.search)},
        {"local", train_json(f.local)},
        {"parallel", f.parallel},
        {"assert_detection", f.assert_detection}}},
      {"seeds", seeds},
  };
}

std::string config_hash(const ScenarioConfig& cfg) {
  json j = to_json(cfg);
  j.erase("output");
  // `parallel` changes scheduling only, never results. `defense` selects one of
  // the two arms of the same scenario; outputs keep the arm in their path.
  j["federation"].erase("parallel");
  j["federation"].erase("defense");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace ltfl

// ltfl: command-line front end for the lottery-ticket federated backdoor simulator.
//
//   ltfl generate-data --config scenarios/ticket.json --out out/data
//   ltfl ticket        --config scenarios/ticket.json --seed 3
//   ltfl federate      --config scenarios/federation.json --defense off
//   ltfl overlap | sweep --config ...
//   ltfl verify [--seed N]
//   ltfl report --out out/ticket
//
// Exit codes: 0 success, 1 an experiment assertion failed (or the run itself
// failed), 2 configuration / usage error.

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>

#include "CLI11.hpp"
#include "ltfl/error.hpp"
#include "ltfl/experiments.hpp"
#include "ltfl/io.hpp"
#include "ltfl/scenario.hpp"
#include "ltfl/selfcheck.hpp"

namespace fs = std::filesystem;
using ltfl::Json;

namespace {

constexpr int kOk = 0;
constexpr int kAssertionFailed = 1;
constexpr int kConfigError = 2;

/// Thrown for a failed experiment assertion; maps to exit code 1.
struct AssertionFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string defense;
};

/// Single-instance guard for an output directory.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".ltfl.lock") {
    fs::create_directories(dir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      if (errno == EEXIST) {
        throw ltfl::ConfigError(path_.string(),
                                "output directory is in use by another run (delete the lock file if that run died)");
      }
      throw ltfl::ConfigError(path_.string(), std::strerror(errno));
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    if (::write(fd_, pid.data(), pid.size()) < 0) {
      // The lock is held either way; the pid is informational.
    }
  }
  ~DirLock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

ltfl::ScenarioConfig resolve(const Options& opt) {
  if (opt.config.empty()) throw ltfl::ConfigError("--config", "a scenario file is required");
  ltfl::ScenarioConfig cfg = ltfl::load_scenario(opt.config);
  if (opt.seed) cfg.seed = *opt.seed;
  if (!opt.out.empty()) cfg.output = opt.out;
  if (!opt.defense.empty()) cfg.federation.defense = opt.defense == "on";
  cfg.validate();
  return cfg;
}

/// Reads <out>/manifest.json if present. A directory holds one scenario, so a
/// manifest written under a different config hash is refused up front.
std::optional<Json> existing_manifest(const ltfl::ScenarioConfig& cfg) {
  const fs::path path = fs::path(cfg.output) / "manifest.json";
  if (!fs::exists(path)) return std::nullopt;
  Json manifest = Json::parse(ltfl::read_text(path));
  const std::string found = manifest.value("config_hash", std::string("?"));
  if (found != ltfl::config_hash(cfg)) {
    throw ltfl::ConfigError(cfg.output, "directory already holds results for config " + found + "; use a fresh --out");
  }
  return manifest;
}

/// Output directory guard: takes the lock, then checks the manifest.
struct OutputDir {
  explicit OutputDir(const ltfl::ScenarioConfig& cfg) : lock(cfg.output) { existing_manifest(cfg); }
  DirLock lock;
};

/// The resolved scenario minus its output path, so that a run into any fresh
/// directory produces the same manifest bytes.
Json portable_config(const ltfl::ScenarioConfig& cfg) {
  Json j = ltfl::to_json(cfg);
  j.erase("output");
  return j;
}

/// Records this command's artifacts in <out>/manifest.json.
void update_manifest(const ltfl::ScenarioConfig& cfg, const std::string& command, std::vector<std::string> files) {
  const fs::path path = fs::path(cfg.output) / "manifest.json";
  Json manifest;
  if (auto found = existing_manifest(cfg)) {
    manifest = std::move(*found);
  } else {
    manifest = Json{{"version", ltfl::kFormatVersion},
                    {"kind", "scenario-output"},
                    {"seed", cfg.seed},
                    {"config_hash", ltfl::config_hash(cfg)},
                    {"config", portable_config(cfg)},
                    {"commands", Json::object()}};
  }
  std::sort(files.begin(), files.end());
  manifest["commands"][command] = Json{{"files", files}};
  ltfl::write_text(path, manifest.dump(1) + "\n");
}

std::string rate_tag(double p) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "p%02d", static_cast<int>(p * 100 + 0.5));
  return buf;
}

void log(const std::string& line) { std::cerr << "[ltfl] " << line << "\n"; }

// ---- subcommands ----------------------------------------------------------

int cmd_generate_data(const Options& opt) {
  const auto cfg = resolve(opt);
  OutputDir guard(cfg);
  const ltfl::Workbench wb = ltfl::prepare(cfg);
  const auto prov = wb.provenance();
  const fs::path dir = fs::path(cfg.output) / "data";
  std::vector<std::string> files;
  auto save = [&](const std::string& name, const ltfl::Dataset& d, const std::optional<ltfl::PoisonSpec>& poison) {
    ltfl::save_dataset(dir / name, d, prov, poison);
    for (const char* f : {"manifest.json", "pixels.f64", "labels.i32", "labels.csv"}) files.push_back("data/" + name + "/" + f);
  };
  save("train", wb.train, std::nullopt);
  save("test", wb.test, std::nullopt);
  save("validation", wb.validation, std::nullopt);
  if (cfg.attack.alpha > 0) {
    const auto spec = wb.poison(cfg.attack.alpha);
    save("train-poisoned", ltfl::poison_dataset(wb.train, spec), spec);
  }
  update_manifest(cfg, "generate-data", files);
  log("wrote " + std::to_string(files.size()) + " files to " + dir.string());
  return kOk;
}

int cmd_ticket(const Options& opt) {
  const auto cfg = resolve(opt);
  OutputDir guard(cfg);
  const ltfl::Workbench wb = ltfl::prepare(cfg);
  const auto prov = wb.provenance();
  const fs::path out = cfg.output;
  log("drawing benign, repeated benign and backdoor tickets");
  const ltfl::TicketReport report = ltfl::run_ticket_experiment(wb);

  std::vector<std::string> files{"metrics.csv", "similarity_table.csv"};
  for (const auto& row : report.rows) {
    const std::string tag = rate_tag(row.rate);
    for (auto [name, mask] : {std::pair{"benign", &row.benign}, std::pair{"benign-repeat", &row.benign_repeat},
                              std::pair{"backdoor", &row.backdoor}}) {
      const std::string file = "masks/" + std::string(name) + "-" + tag + ".json";
      ltfl::save_mask(out / file, *mask, prov);
      files.push_back(file);
    }
    std::fprintf(stdout, "p=%.2f  similarity %.2f (repeat %.2f)  benign cda %.2f | backdoor cda %.2f asr %.2f | "
                 "fine-tuned cda %.2f asr %.2f\n",
                 row.rate, row.similarity, row.repeat_similarity, row.benign_eval.cda, row.backdoor_eval.cda,
                 *row.backdoor_eval.asr, row.backdoor_finetuned.cda, *row.backdoor_finetuned.asr);
  }
  ltfl::write_text(out / "metrics.csv", ltfl::metrics_csv(report.metrics(), prov));
  const std::string setting = cfg.model.kind + "/synthetic-" + std::to_string(cfg.data.classes);
  ltfl::write_text(out / "similarity_table.csv", ltfl::similarity_table_csv(report.similarity_rows(setting), prov));
  update_manifest(cfg, "ticket", files);
  return kOk;
}

int cmd_federate(const Options& opt) {
  const auto cfg = resolve(opt);
  OutputDir guard(cfg);
  const ltfl::Workbench wb = ltfl::prepare(cfg);
  const auto prov = wb.provenance();
  const std::string arm = std::string("defense-") + (cfg.federation.defense ? "on" : "off");
  const fs::path out = fs::path(cfg.output) / arm;
  log(std::string("running ") + std::to_string(cfg.federation.rounds) + " rounds, defense " +
      (cfg.federation.defense ? "on" : "off"));
  const ltfl::FederationReport report = ltfl::run_federation(wb);

  std::vector<ltfl::MetricsRow> metrics;
  const std::string scenario = "federated-" + arm;
  for (const auto& r : report.records) {
    metrics.push_back({scenario + "-round-" + std::to_string(r.round), cfg.federation.rate, r.cda, r.asr});
    std::string flags;
    for (bool f : r.flags) flags += f ? '1' : '0';
    std::fprintf(stdout, "round %zu  cda %.2f  asr %.2f  flags %s\n", r.round, r.cda, r.asr.value_or(0.0),
                 r.detection_ran ? flags.c_str() : "-");
  }
  const auto& d = report.detection;
  const Json detection{{"version", ltfl::kFormatVersion},
                       {"provenance", {{"seed", prov.seed}, {"config_hash", prov.config_hash}}},
                       {"defense", cfg.federation.defense},
                       {"round", d.round},
                       {"flagged", d.flagged},
                       {"poisoned", d.poisoned},
                       {"precision", d.precision},
                       {"recall", d.recall},
                       {"exact", d.exact()},
                       {"final_cda", report.final_cda},
                       {"final_asr", report.final_asr ? Json(*report.final_asr) : Json(nullptr)}};
  ltfl::write_text(out / "rounds.jsonl", ltfl::round_log_jsonl(report.records, prov));
  ltfl::write_text(out / "similarity.csv", ltfl::similarity_matrix_csv(report.final_similarity, prov));
  ltfl::write_text(out / "metrics.csv", ltfl::metrics_csv(metrics, prov));
  ltfl::write_text(out / "detection.json", detection.dump(1) + "\n");
  update_manifest(cfg, "federate-" + arm,
                  {arm + "/rounds.jsonl", arm + "/similarity.csv", arm + "/metrics.csv", arm + "/detection.json"});

  std::string flagged;
  for (std::size_t i : d.flagged) flagged += (flagged.empty() ? "" : ",") + std::to_string(i);
  std::fprintf(stdout, "detection: flagged = {%s}  precision %.2f  recall %.2f\n", flagged.c_str(), d.precision,
               d.recall);
  if (cfg.federation.assert_detection && cfg.federation.defense && !d.exact()) {
    throw AssertionFailed("detection did not flag exactly the poisoned clients");
  }
  return kOk;
}

int cmd_overlap(const Options& opt) {
  const auto cfg = resolve(opt);
  OutputDir guard(cfg);
  const ltfl::Workbench wb = ltfl::prepare(cfg);
  const auto prov = wb.provenance();
  const fs::path out = cfg.output;
  const ltfl::OverlapReport report = ltfl::run_overlap_experiment(wb);
  for (const auto& c : report.curves) std::fprintf(stdout, "p=%.2f  spearman %.4f\n", c.rate, c.spearman);
  ltfl::write_text(out / "overlap.csv", ltfl::overlap_csv(report.rows(), prov));
  char title[96];
  std::snprintf(title, sizeof title, "Retained units, benign vs. backdoor ticket at p = %.2f", report.heatmap_rate);
  ltfl::write_text(out / "heatmap.svg", ltfl::heatmap_svg(report.heatmap, title, prov));
  update_manifest(cfg, "overlap", {"overlap.csv", "heatmap.svg"});
  return kOk;
}

int cmd_sweep(const Options& opt) {
  const auto cfg = resolve(opt);
  OutputDir guard(cfg);
  const ltfl::Workbench wb = ltfl::prepare(cfg);
  const auto rows = ltfl::intensity_sweep(wb, cfg.sweep.alphas);
  for (const auto& r : rows)
    std::fprintf(stdout, "alpha=%.3f  cda %.2f  asr %.2f  similarity %.2f\n", r.alpha, r.cda, r.asr, r.similarity);
  ltfl::write_text(fs::path(cfg.output) / "sweep.csv", ltfl::sweep_csv(rows, wb.provenance()));
  update_manifest(cfg, "sweep", {"sweep.csv"});
  return kOk;
}

int cmd_verify(const Options& opt) {
  const std::uint64_t seed = opt.seed.value_or(1);
  bool ok = true;
  Json summary = Json::array();
  for (const auto& c : ltfl::run_selfcheck(seed)) {
    std::fprintf(stdout, "%s %s %s\n", c.passed ? "PASS" : "FAIL", c.name.c_str(), c.detail.c_str());
    summary.push_back({{"check", c.name}, {"passed", c.passed}, {"detail", c.detail}});
    ok = ok && c.passed;
  }
  std::fprintf(stdout, "%s\n", Json{{"seed", seed}, {"passed", ok}, {"checks", summary}}.dump().c_str());
  if (!ok) throw AssertionFailed("self-check failed");
  return kOk;
}

int cmd_report(const Options& opt) {
  fs::path dir = opt.out;
  if (dir.empty() && !opt.config.empty()) dir = resolve(opt).output;
  if (dir.empty()) throw ltfl::ConfigError("--out", "give the output directory to summarize");
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw ltfl::ConfigError(manifest_path.string(), "no manifest; nothing to report");
  const Json manifest = Json::parse(ltfl::read_text(manifest_path));

  std::string md = "# Report: " + manifest["config"].value("name", std::string("scenario")) + "\n\n";
  md += "seed " + std::to_string(manifest["seed"].get<std::uint64_t>()) + ", config " +
        manifest["config_hash"].get<std::string>() + "\n";
  auto table = [&](const std::string& file) {
    if (!fs::exists(dir / file)) return;
    const ltfl::CsvTable t = ltfl::parse_csv(ltfl::read_text(dir / file));
    md += "\n## " + file + "\n\n|";
    for (const auto& h : t.header) md += " " + h + " |";
    md += "\n|";
    for (std::size_t i = 0; i < t.header.size(); ++i) md += "---|";
    md += "\n";
    for (const auto& row : t.rows) {
      md += "|";
      for (const auto& c : row) md += " " + c + " |";
      md += "\n";
    }
  };
  for (const char* f : {"metrics.csv", "similarity_table.csv", "overlap.csv", "sweep.csv"}) table(f);
  for (const char* arm : {"defense-on", "defense-off"}) {
    const fs::path sub = dir / arm;
    if (!fs::exists(sub / "detection.json")) continue;
    table(std::string(arm) + "/metrics.csv");
    table(std::string(arm) + "/similarity.csv");
    const Json d = Json::parse(ltfl::read_text(sub / "detection.json"));
    md += "\n## " + std::string(arm) + " detection\n\nround " + d["round"].dump() + ": flagged " +
          d["flagged"].dump() + ", poisoned " + d["poisoned"].dump() + ", precision " +
          ltfl::fmt4(d["precision"].get<double>()) + ", recall " + ltfl::fmt4(d["recall"].get<double>()) +
          ", final CDA " + ltfl::fmt4(d["final_cda"].get<double>()) + ", final ASR " +
          (d["final_asr"].is_null() ? std::string("n/a") : ltfl::fmt4(d["final_asr"].get<double>())) + "\n";
  }
  ltfl::write_text(dir / "report.md", md);
  std::fputs(md.c_str(), stdout);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lottery-ticket federated learning backdoor simulator"};
  app.require_subcommand(1);
  Options opt;

  struct Entry {
    const char* name;
    const char* help;
    int (*run)(const Options&);
    bool needs_config;
  };
  const Entry entries[] = {
      {"generate-data", "Write the scenario's train/test/validation sets (and poisoned train set)", cmd_generate_data, true},
      {"ticket", "Benign vs. backdoor tickets: masks, similarity table, CDA/ASR", cmd_ticket, true},
      {"federate", "Run the federated rounds with optional detection + fine-tune defense", cmd_federate, true},
      {"overlap", "Key-neuron overlap curves and the retention heatmap", cmd_overlap, true},
      {"sweep", "Backdoor intensity sweep over the configured alphas", cmd_sweep, true},
      {"verify", "Built-in checks: gradients, aggregation oracle, mask algebra, determinism", cmd_verify, false},
      {"report", "Summarize an output directory as markdown", cmd_report, false},
  };
  std::map<CLI::App*, const Entry*> commands;
  for (const auto& e : entries) {
    CLI::App* sub = app.add_subcommand(e.name, e.help);
    auto* config = sub->add_option("--config", opt.config, "Scenario file (JSON)");
    if (e.needs_config) config->required();
    sub->add_option("--seed", opt.seed, "Override the master seed");
    sub->add_option("--out", opt.out, "Output directory (overrides the scenario's)");
    sub->add_option("--defense", opt.defense, "Defense toggle for federate")->check(CLI::IsMember({"on", "off"}));
    commands[sub] = &e;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    for (const auto& [sub, entry] : commands) {
      if (sub->parsed()) return entry->run(opt);
    }
  } catch (const ltfl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const AssertionFailed& e) {
    std::cerr << "assertion failed: " << e.what() << "\n";
    return kAssertionFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kAssertionFailed;
  }
  return kConfigError;
}

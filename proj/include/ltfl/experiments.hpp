#pragma once

// Scenario-level experiments. Each function takes a resolved ScenarioConfig and
// returns plain result structs; the CLI serializes them and the acceptance
// suite checks them.

#include <optional>
#include <string>
#include <vector>

#include "ltfl/data.hpp"
#include "ltfl/federation.hpp"
#include "ltfl/io.hpp"
#include "ltfl/metrics.hpp"
#include "ltfl/nn.hpp"
#include "ltfl/scenario.hpp"
#include "ltfl/tickets.hpp"

namespace ltfl {

/// Everything drawn from the scenario seeds before any training happens.
struct Workbench {
  ScenarioConfig cfg;
  Dataset train;
  Dataset test;
  Dataset validation;
  TriggerPattern trigger;
  Dataset asr_set;
  Architecture arch;
  ModelParams init;
  TrainConfig train_config;  // cfg.train with its stage seed

  PoisonSpec poison(double alpha) const;
  Provenance provenance() const;
};

Workbench prepare(const ScenarioConfig& cfg);

/// Benign, repeated-benign, and backdoor tickets at each rate (0 first, then the
/// configured rates), each retrained from the shared initialization, plus the
/// server-side fine-tune of both.
struct TicketRow {
  double rate = 0.0;
  PruneMask benign;
  PruneMask benign_repeat;
  PruneMask backdoor;
  std::size_t benign_epoch = 0;
  std::size_t backdoor_epoch = 0;
  double repeat_similarity = 0.0;
  double similarity = 0.0;
  EvalReport benign_eval;
  EvalReport backdoor_eval;
  EvalReport backdoor_finetuned;
  EvalReport benign_finetuned;
};

struct TicketReport {
  std::string attack;  // e.g. "benign-backdoor(white)"
  std::vector<TicketRow> rows;
  std::vector<MetricsRow> metrics() const;
  std::vector<SimilarityRow> similarity_rows(const std::string& setting) const;
};

TicketReport run_ticket_experiment(const Workbench& wb);

struct OverlapCurve {
  double rate = 0.0;  // backdoor ticket rate p
  std::vector<std::pair<double, double>> points;
  double spearman = 0.0;
};

struct OverlapReport {
  std::vector<OverlapCurve> curves;
  std::vector<HeatmapLayer> heatmap;
  double heatmap_rate = 0.0;
  std::vector<OverlapRow> rows() const;
};

/// Backdoor tickets at each overlap rate against a densely trained benign model.
OverlapReport run_overlap_experiment(const Workbench& wb);

/// One full draw + retrain per alpha with shared seeds.
std::vector<SweepRow> intensity_sweep(const Workbench& wb, const std::vector<double>& alphas);

struct DetectionSummary {
  std::size_t round = 0;  // 0 when detection never ran
  std::vector<std::size_t> flagged;
  std::vector<std::size_t> poisoned;
  double precision = 0.0;
  double recall = 0.0;
  bool exact() const { return flagged == poisoned; }
};

/// Precision of an empty flag set is 1 when nothing is poisoned, else 0; recall likewise.
DetectionSummary summarize_detection(std::size_t round, const std::vector<bool>& flags,
                                     const std::vector<std::size_t>& poisoned);

struct FederationReport {
  std::vector<RoundRecord> records;
  DetectionSummary detection;  // from the last round in which detection ran
  double final_cda = 0.0;
  std::optional<double> final_asr;
  std::vector<std::vector<double>> final_similarity;
};

/// Builds clients from an IID split (poisoned ids get their own poison seed) and runs the rounds.
FederationReport run_federation(const Workbench& wb);

}  // namespace ltfl

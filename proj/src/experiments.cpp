#include "ltfl/experiments.hpp"

#include <algorithm>

#include "ltfl/error.hpp"
#include "ltfl/rng.hpp"

namespace ltfl {

PoisonSpec Workbench::poison(double alpha) const {
  return PoisonSpec{trigger, cfg.attack.target_label, alpha, cfg.stage_seed(Stage::kPoison)};
}

Provenance Workbench::provenance() const { return Provenance{cfg.seed, config_hash(cfg)}; }

Workbench prepare(const ScenarioConfig& cfg) {
  cfg.validate();
  Workbench wb;
  wb.cfg = cfg;
  const auto& d = cfg.data;
  wb.train = generate_dataset(d.classes, d.train_per_class, d.shape, cfg.stage_seed(Stage::kTrainData), d.generator,
                              Split::kTrain);
  wb.test = generate_dataset(d.classes, d.test_per_class, d.shape, cfg.stage_seed(Stage::kTestData), d.generator,
                             Split::kTest);
  wb.validation = generate_dataset(d.classes, d.validation_per_class, d.shape, cfg.stage_seed(Stage::kValidationData),
                                   d.generator, Split::kServerValidation);
  wb.trigger = make_trigger(cfg.attack.trigger, cfg.attack.size, cfg.attack.corner, d.shape,
                            cfg.stage_seed(Stage::kTrigger));
  wb.asr_set = make_asr_testset(wb.test, wb.trigger, cfg.attack.target_label);
  wb.arch = cfg.architecture();
  wb.init = init_model(wb.arch, cfg.stage_seed(Stage::kInit));
  wb.train_config = cfg.train;
  wb.train_config.seed = cfg.stage_seed(Stage::kTraining);
  return wb;
}

namespace {

std::vector<double> with_dense_rate(const std::vector<double>& rates) {
  std::vector<double> out{0.0};
  for (double p : rates)
    if (p != 0.0) out.push_back(p);
  return out;
}

TrainConfig fine_tune_config(const Workbench& wb) {
  TrainConfig ft = wb.cfg.fine_tune;
  ft.seed = wb.cfg.stage_seed(Stage::kFineTune);
  return ft;
}

std::string attack_label(const Workbench& wb) {
  return "benign-backdoor(" + std::string(to_string(wb.cfg.attack.trigger)) + ")";
}

}  // namespace

TicketReport run_ticket_experiment(const Workbench& wb) {
  const auto& cfg = wb.cfg;
  const std::vector<double> rates = with_dense_rate(cfg.ticket_rates);
  const Dataset poisoned = poison_dataset(wb.train, wb.poison(cfg.attack.alpha));
  const int target = cfg.attack.target_label;

  const auto benign = draw_tickets(wb.init, wb.train, wb.train_config, rates, cfg.early_bird);
  const auto repeat = draw_tickets(wb.init, wb.train, wb.train_config, rates, cfg.early_bird);
  const auto backdoor = draw_tickets(wb.init, poisoned, wb.train_config, rates, cfg.early_bird);
  const TrainConfig ft = fine_tune_config(wb);

  TicketReport report;
  report.attack = attack_label(wb);
  for (std::size_t i = 0; i < rates.size(); ++i) {
    TicketRow row;
    row.rate = rates[i];
    row.benign = benign[i].mask;
    row.benign_repeat = repeat[i].mask;
    row.backdoor = backdoor[i].mask;
    row.benign_epoch = benign[i].epoch_drawn;
    row.backdoor_epoch = backdoor[i].epoch_drawn;
    row.repeat_similarity = mask_similarity(row.benign, row.benign_repeat);
    row.similarity = mask_similarity(row.benign, row.backdoor);

    // Tickets are retrained from the shared initialization on the data they were drawn from.
    const ModelParams benign_model = train(wb.init, row.benign, wb.train, wb.train_config).model;
    const ModelParams backdoor_model = train(wb.init, row.backdoor, poisoned, wb.train_config).model;
    row.benign_eval = evaluate(benign_model, row.benign, wb.test, &wb.asr_set, target, row.rate, "benign");
    row.backdoor_eval = evaluate(backdoor_model, row.backdoor, wb.test, &wb.asr_set, target, row.rate, "backdoor");

    const ModelParams repaired = fine_tune(backdoor_model, row.backdoor, wb.validation, ft);
    const ModelParams benign_ft = fine_tune(benign_model, row.benign, wb.validation, ft);
    row.backdoor_finetuned =
        evaluate(repaired, row.backdoor, wb.test, &wb.asr_set, target, row.rate, "backdoor+finetune");
    row.benign_finetuned = evaluate(benign_ft, row.benign, wb.test, &wb.asr_set, target, row.rate, "benign+finetune");
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::vector<MetricsRow> TicketReport::metrics() const {
  std::vector<MetricsRow> out;
  for (EvalReport TicketRow::*pick : {&TicketRow::benign_eval, &TicketRow::backdoor_eval,
                                      &TicketRow::backdoor_finetuned, &TicketRow::benign_finetuned}) {
    for (const auto& row : rows) {
      const EvalReport& e = row.*pick;
      out.push_back({e.scenario, e.rate, e.cda, e.asr});
    }
  }
  return out;
}

std::vector<SimilarityRow> TicketReport::similarity_rows(const std::string& setting) const {
  std::vector<SimilarityRow> out;
  std::vector<SimilarityCell> cells;
  for (const auto& row : rows) {
    if (row.rate == 0.0) continue;
    out.push_back({setting, "benign-benign", row.rate, row.repeat_similarity, 100.0 - row.repeat_similarity});
    cells.push_back({setting, attack, row.rate, row.similarity});
  }
  for (auto& r : similarity_table(cells)) out.push_back(std::move(r));
  return out;
}

OverlapReport run_overlap_experiment(const Workbench& wb) {
  const auto& cfg = wb.cfg;
  const Dataset poisoned = poison_dataset(wb.train, wb.poison(cfg.attack.alpha));
  const auto backdoor = draw_tickets(wb.init, poisoned, wb.train_config, cfg.overlap.rates, cfg.early_bird);
  const ModelParams benign = train(wb.init, PruneMask::full(wb.arch), wb.train, wb.train_config).model;

  OverlapReport report;
  for (std::size_t i = 0; i < cfg.overlap.rates.size(); ++i) {
    OverlapCurve curve;
    curve.rate = cfg.overlap.rates[i];
    curve.points = overlap_curve(benign, backdoor[i].mask, cfg.overlap.benign_rates);
    std::vector<double> x, y;
    for (auto [p, o] : curve.points) {
      x.push_back(p);
      y.push_back(o);
    }
    curve.spearman = x.size() >= 2 ? spearman(x, y) : 0.0;
    report.curves.push_back(std::move(curve));
  }

  report.heatmap_rate = cfg.overlap.heatmap_rate;
  const double rates[] = {cfg.overlap.heatmap_rate};
  const PruneMask backdoor_mask = draw_tickets(wb.init, poisoned, wb.train_config, rates, cfg.early_bird).front().mask;
  const PruneMask benign_mask = extract_mask(benign, cfg.overlap.heatmap_rate);
  std::vector<std::size_t> layers = cfg.overlap.heatmap_layers;
  if (layers.empty()) {
    for (std::size_t l = 0; l < benign_mask.layers.size(); ++l) layers.push_back(l);
  }
  report.heatmap = overlap_heatmap(benign_mask, backdoor_mask, layers);
  return report;
}

std::vector<OverlapRow> OverlapReport::rows() const {
  std::vector<OverlapRow> out;
  for (const auto& c : curves)
    for (auto [p, o] : c.points) out.push_back({c.rate, p, o});
  return out;
}

std::vector<SweepRow> intensity_sweep(const Workbench& wb, const std::vector<double>& alphas) {
  const auto& cfg = wb.cfg;
  const double rates[] = {cfg.sweep.rate};
  const PruneMask benign = draw_tickets(wb.init, wb.train, wb.train_config, rates, cfg.early_bird).front().mask;
  std::vector<SweepRow> out;
  for (double alpha : alphas) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("sweep.alphas", "alpha must be in [0, 1]");
    const Dataset data = poison_dataset(wb.train, wb.poison(alpha));
    const PruneMask mask = draw_tickets(wb.init, data, wb.train_config, rates, cfg.early_bird).front().mask;
    const ModelParams model = train(wb.init, mask, data, wb.train_config).model;
    out.push_back({alpha, cda(model, mask, wb.test), asr(model, mask, wb.asr_set, cfg.attack.target_label),
                   mask_similarity(benign, mask)});
  }
  return out;
}

DetectionSummary summarize_detection(std::size_t round, const std::vector<bool>& flags,
                                     const std::vector<std::size_t>& poisoned) {
  DetectionSummary s;
  s.round = round;
  s.poisoned = poisoned;
  std::sort(s.poisoned.begin(), s.poisoned.end());
  for (std::size_t i = 0; i < flags.size(); ++i)
    if (flags[i]) s.flagged.push_back(i);
  std::size_t hits = 0;
  for (std::size_t i : s.flagged) hits += std::binary_search(s.poisoned.begin(), s.poisoned.end(), i) ? 1 : 0;
  s.precision = s.flagged.empty() ? (s.poisoned.empty() ? 1.0 : 0.0) : static_cast<double>(hits) / static_cast<double>(s.flagged.size());
  s.recall = s.poisoned.empty() ? 1.0 : static_cast<double>(hits) / static_cast<double>(s.poisoned.size());
  return s;
}

FederationReport run_federation(const Workbench& wb) {
  const auto& cfg = wb.cfg;
  const auto& f = cfg.federation;
  const auto parts = partition_iid(wb.train, f.clients, cfg.stage_seed(Stage::kPartition));

  std::vector<ClientState> clients(f.clients);
  for (std::size_t i = 0; i < f.clients; ++i) {
    clients[i].id = i;
    clients[i].seed = derive_seed(cfg.stage_seed(Stage::kClients), i);
    clients[i].data = parts[i];
  }
  for (std::size_t id : f.poisoned) {
    PoisonSpec spec = wb.poison(cfg.attack.alpha);
    spec.seed = derive_seed(cfg.stage_seed(Stage::kPoison), id);
    clients[id].poison = spec;
    clients[id].data = poison_dataset(parts[id], spec);
  }

  ServerState server;
  server.global = wb.init;
  server.validation = wb.validation;
  server.test = wb.test;
  server.asr_set = wb.asr_set;
  server.target_label = cfg.attack.target_label;

  FederationReport report;
  report.records = run_rounds(server, clients, f.rounds, cfg.federation_config());
  const RoundRecord& last = report.records.back();
  report.final_cda = last.cda;
  report.final_asr = last.asr;
  report.final_similarity = last.similarity;
  report.detection = summarize_detection(0, std::vector<bool>(f.clients, false), f.poisoned);
  for (auto it = report.records.rbegin(); it != report.records.rend(); ++it) {
    if (it->detection_ran) {
      report.detection = summarize_detection(it->round, it->flags, f.poisoned);
      break;
    }
  }
  return report;
}

}  // namespace ltfl

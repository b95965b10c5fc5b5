#include "ltfl/tickets.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "ltfl/error.hpp"

namespace ltfl {

PruneMask extract_mask(const ModelParams& model, double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("pruning_rate", "must be in [0, 1)");
  const std::vector<std::size_t> scale_layers = model.arch.scale_layer_indices();
  if (scale_layers.empty()) throw ConfigError("architecture", "no prunable units");

  PruneMask mask = PruneMask::full(model.arch);
  mask.rate = rate;
  const std::size_t total = mask.total_units();
  const auto drop = static_cast<std::size_t>(std::floor(rate * static_cast<double>(total) + 1e-9));
  if (drop == 0) return mask;
  if (total - drop < scale_layers.size()) {
    throw LayerCollapseError("pruning " + std::to_string(drop) + " of " + std::to_string(total) +
                             " units would leave a prunable layer empty");
  }

  struct Unit {
    double magnitude;
    std::size_t layer;
    std::size_t index;
  };
  std::vector<Unit> units;
  units.reserve(total);
  for (std::size_t s = 0; s < scale_layers.size(); ++s) {
    const auto& gamma = model.layers[scale_layers[s]].gamma;
    for (std::size_t u = 0; u < gamma.size(); ++u) units.push_back({std::abs(gamma[u]), s, u});
  }
  std::sort(units.begin(), units.end(), [](const Unit& a, const Unit& b) {
    return std::tie(a.magnitude, a.layer, a.index) < std::tie(b.magnitude, b.layer, b.index);
  });

  std::vector<std::size_t> remaining;
  for (const auto& l : mask.layers) remaining.push_back(l.size());
  std::size_t dropped = 0;
  for (const Unit& u : units) {
    if (dropped == drop) break;
    if (remaining[u.layer] == 1) continue;
    mask.layers[u.layer][u.index] = 0;
    --remaining[u.layer];
    ++dropped;
  }
  return mask;
}

std::size_t hamming_distance(const PruneMask& a, const PruneMask& b) {
  if (!a.same_shape(b)) throw DimensionError("mask shapes differ", a.total_units(), b.total_units());
  std::size_t d = 0;
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    for (std::size_t u = 0; u < a.layers[l].size(); ++u) d += (a.layers[l][u] != 0) != (b.layers[l][u] != 0);
  }
  return d;
}

double mask_similarity(const PruneMask& a, const PruneMask& b) {
  const std::size_t d = hamming_distance(a, b);
  const std::size_t total = a.total_units();
  if (total == 0) throw DimensionError("empty mask");
  return 100.0 * (1.0 - static_cast<double>(d) / static_cast<double>(total));
}

std::vector<std::vector<double>> similarity_matrix(std::span<const PruneMask> masks) {
  const std::size_t k = masks.size();
  std::vector<std::vector<double>> m(k, std::vector<double>(k, 100.0));
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) m[i][j] = m[j][i] = mask_similarity(masks[i], masks[j]);
  }
  return m;
}

EarlyBirdStatus eb_step(MaskWindow& window, PruneMask mask, double epsilon) {
  if (!window.masks.empty() && !window.masks.front().same_shape(mask)) {
    throw DimensionError("mask shape differs from window");
  }
  window.masks.push_back(std::move(mask));
  while (window.masks.size() > window.capacity) window.masks.pop_front();

  EarlyBirdStatus status;
  const double total = static_cast<double>(window.masks.back().total_units());
  for (std::size_t i = 0; i < window.masks.size(); ++i) {
    for (std::size_t j = i + 1; j < window.masks.size(); ++j) {
      const double d = static_cast<double>(hamming_distance(window.masks[i], window.masks[j])) / total;
      status.max_distance = std::max(status.max_distance, d);
    }
  }
  status.converged = window.full() && status.max_distance < epsilon;
  return status;
}

std::vector<TicketDraw> draw_tickets(const ModelParams& init, const Dataset& data, const TrainConfig& config,
                                     std::span<const double> rates, const EarlyBirdConfig& eb) {
  config.validate();
  for (double r : rates) {
    if (!(r >= 0.0 && r < 1.0)) throw ConfigError("pruning_rate", "must be in [0, 1)");
  }
  if (data.feature_size() != init.arch.input_size) {
    throw DimensionError("dataset feature size", init.arch.input_size, data.feature_size());
  }
  const PruneMask dense = PruneMask::full(init.arch);
  ModelParams model = init;
  model.reset_momentum();

  std::vector<TicketDraw> draws(rates.size());
  std::vector<bool> done(rates.size(), false);
  std::vector<MaskWindow> windows(rates.size(), MaskWindow{eb.window, {}});
  std::size_t pending = rates.size();
  for (std::size_t epoch = 0; epoch < config.epochs && pending > 0; ++epoch) {
    train_epoch(model, dense, data, config, epoch);
    if (!eb.enabled) continue;
    for (std::size_t r = 0; r < rates.size(); ++r) {
      if (done[r]) continue;
      PruneMask mask = extract_mask(model, rates[r]);
      if (eb_step(windows[r], mask, eb.epsilon).converged) {
        draws[r] = {std::move(mask), epoch + 1, model};
        done[r] = true;
        --pending;
      }
    }
  }
  for (std::size_t r = 0; r < rates.size(); ++r) {
    if (!done[r]) draws[r] = {extract_mask(model, rates[r]), config.epochs, model};
  }
  return draws;
}

TicketDraw draw_ticket(const ModelParams& init, const Dataset& data, const TrainConfig& config, double rate,
                       const EarlyBirdConfig& eb) {
  const double rates[] = {rate};
  return std::move(draw_tickets(init, data, config, rates, eb).front());
}

double neuron_overlap(const PruneMask& benign, const PruneMask& backdoor) {
  if (!benign.same_shape(backdoor)) throw DimensionError("mask shapes differ", benign.total_units(), backdoor.total_units());
  std::size_t kept = 0, shared = 0;
  for (std::size_t l = 0; l < benign.layers.size(); ++l) {
    for (std::size_t u = 0; u < benign.layers[l].size(); ++u) {
      if (!benign.layers[l][u]) continue;
      ++kept;
      if (backdoor.layers[l][u]) ++shared;
    }
  }
  if (kept == 0) throw UndefinedOverlapError("benign mask retains no units");
  return 100.0 * static_cast<double>(shared) / static_cast<double>(kept);
}

std::string_view to_string(Retention r) {
  switch (r) {
    case Retention::kBoth:
      return "both";
    case Retention::kBenignOnly:
      return "benign-only";
    case Retention::kBackdoorOnly:
      return "backdoor-only";
    case Retention::kNeither:
      return "neither";
  }
  return "neither";
}

std::size_t HeatmapLayer::count(Retention r) const {
  return static_cast<std::size_t>(std::count(cells.begin(), cells.end(), r));
}

std::vector<HeatmapLayer> overlap_heatmap(const PruneMask& benign, const PruneMask& backdoor,
                                          std::span<const std::size_t> layers) {
  if (!benign.same_shape(backdoor)) throw DimensionError("mask shapes differ", benign.total_units(), backdoor.total_units());
  std::vector<HeatmapLayer> out;
  for (std::size_t l : layers) {
    if (l >= benign.layers.size()) throw DimensionError("heatmap layer index out of range", benign.layers.size(), l);
    HeatmapLayer hl{l, {}};
    for (std::size_t u = 0; u < benign.layers[l].size(); ++u) {
      const bool a = benign.layers[l][u] != 0, b = backdoor.layers[l][u] != 0;
      hl.cells.push_back(a && b ? Retention::kBoth : a ? Retention::kBenignOnly : b ? Retention::kBackdoorOnly : Retention::kNeither);
    }
    out.push_back(std::move(hl));
  }
  return out;
}

}  // namespace ltfl

#pragma once

#include <cstddef>
#include <deque>
#include <span>
#include <string_view>
#include <vector>

#include "ltfl/dataset.hpp"
#include "ltfl/nn.hpp"

namespace ltfl {

/// Global |gamma| channel pruning. Units are ranked by |gamma| across all
/// prunable layers (ties by layer, then unit index) and the lowest
/// floor(rate * U) are dropped, skipping any unit that is the last one left
/// in its layer. Throws LayerCollapseError when fewer units would remain than
/// there are prunable layers.
PruneMask extract_mask(const ModelParams& model, double rate);

/// Number of positions at which the masks disagree.
std::size_t hamming_distance(const PruneMask& a, const PruneMask& b);

/// 100 * (1 - hamming / total units).
double mask_similarity(const PruneMask& a, const PruneMask& b);

/// k x k similarity matrix over client masks.
std::vector<std::vector<double>> similarity_matrix(std::span<const PruneMask> masks);

/// Last `capacity` per-epoch masks for Early-Bird convergence.
struct MaskWindow {
  std::size_t capacity = 5;
  std::deque<PruneMask> masks;

  bool full() const { return masks.size() >= capacity; }
};

struct EarlyBirdStatus {
  bool converged = false;
  /// Max pairwise normalized Hamming distance within the window (0 if < 2 masks).
  double max_distance = 0.0;
};

/// Pushes `mask` (evicting the oldest when full). Converged when the window is
/// full and every pairwise normalized distance is below `epsilon`.
EarlyBirdStatus eb_step(MaskWindow& window, PruneMask mask, double epsilon);

struct EarlyBirdConfig {
  bool enabled = true;
  std::size_t window = 5;
  double epsilon = 0.1;
};

struct TicketDraw {
  PruneMask mask;
  /// Number of training epochs completed when the mask was taken.
  std::size_t epoch_drawn = 0;
  /// Dense model at the time of drawing.
  ModelParams model;
};

/// Trains `init` densely on `data`, drawing one ticket per rate. With Early-Bird
/// enabled each rate stops at its own convergence epoch; training ends when
/// every rate has converged or `config.epochs` is reached.
std::vector<TicketDraw> draw_tickets(const ModelParams& init, const Dataset& data, const TrainConfig& config,
                                     std::span<const double> rates, const EarlyBirdConfig& eb);

TicketDraw draw_ticket(const ModelParams& init, const Dataset& data, const TrainConfig& config, double rate,
                       const EarlyBirdConfig& eb);

/// 100 * |retained(benign) & retained(backdoor)| / |retained(benign)|.
double neuron_overlap(const PruneMask& benign, const PruneMask& backdoor);

enum class Retention { kBoth, kBenignOnly, kBackdoorOnly, kNeither };

std::string_view to_string(Retention r);

struct HeatmapLayer {
  std::size_t layer = 0;  // prunable-layer index
  std::vector<Retention> cells;

  std::size_t count(Retention r) const;
};

/// Per-unit retention category for each requested prunable layer.
std::vector<HeatmapLayer> overlap_heatmap(const PruneMask& benign, const PruneMask& backdoor,
                                          std::span<const std::size_t> layers);

}  // namespace ltfl

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ltfl/data.hpp"
#include "ltfl/nn.hpp"

namespace ltfl {

/// Percentage of clean samples predicted as their true label.
double cda(const ModelParams& model, const PruneMask& mask, const Dataset& clean);

/// Percentage of triggered samples predicted as `target`. Throws ConfigError on an empty set.
double asr(const ModelParams& model, const PruneMask& mask, const Dataset& asr_set, int target);

struct EvalReport {
  std::string scenario;
  double rate = 0.0;
  double cda = 0.0;
  std::optional<double> asr;
  std::vector<double> per_class_accuracy;
  std::size_t clean_samples = 0;
  std::size_t asr_samples = 0;
};

EvalReport evaluate(const ModelParams& model, const PruneMask& mask, const Dataset& clean,
                    const Dataset* asr_set, int target, double rate, std::string scenario);

/// One benign-vs-backdoor comparison feeding the similarity table.
struct SimilarityCell {
  std::string setting;  // e.g. "mlp/synthetic-10"
  std::string compare;  // e.g. "benign-backdoor(white)"
  double rate = 0.0;
  double similarity = 0.0;
};

struct SimilarityRow {
  std::string setting;
  std::string compare;
  double rate = 0.0;
  double similarity = 0.0;
  /// 100 - similarity for comparison rows; 100 - mean(similarity) for the per-setting average rows.
  double decrease = 0.0;
};

/// Comparison rows in input order, then one "avg-decrease" row per (setting, rate).
std::vector<SimilarityRow> similarity_table(std::span<const SimilarityCell> cells);

/// Full-scale reference magnitudes (VGG16 / ResNet18 on CIFAR-10/100) kept for
/// side-by-side reporting; not reproduced by the synthetic task.
std::vector<SimilarityCell> reference_similarity_cells();

/// (benign rate, overlap %) for each benign rate, against a fixed backdoor mask.
std::vector<std::pair<double, double>> overlap_curve(const ModelParams& benign_model, const PruneMask& backdoor_mask,
                                                     std::span<const double> benign_rates);

/// Spearman rank correlation (average ranks for ties).
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace ltfl

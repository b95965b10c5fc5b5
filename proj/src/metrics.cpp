#include "ltfl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "ltfl/error.hpp"
#include "ltfl/tickets.hpp"

namespace ltfl {

double cda(const ModelParams& model, const PruneMask& mask, const Dataset& clean) {
  if (clean.empty()) throw ConfigError("cda", "empty test set");
  const std::vector<int> pred = predict(model, mask, clean);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == clean.labels[i];
  return 100.0 * static_cast<double>(correct) / static_cast<double>(clean.size());
}

double asr(const ModelParams& model, const PruneMask& mask, const Dataset& asr_set, int target) {
  if (asr_set.empty()) throw ConfigError("asr", "empty ASR set");
  const std::vector<int> pred = predict(model, mask, asr_set);
  const auto hits = std::count(pred.begin(), pred.end(), target);
  return 100.0 * static_cast<double>(hits) / static_cast<double>(asr_set.size());
}

EvalReport evaluate(const ModelParams& model, const PruneMask& mask, const Dataset& clean,
                    const Dataset* asr_set, int target, double rate, std::string scenario) {
  EvalReport r;
  r.scenario = std::move(scenario);
  r.rate = rate;
  if (clean.empty()) throw ConfigError("cda", "empty test set");
  const std::vector<int> pred = predict(model, mask, clean);
  std::vector<std::size_t> hit(clean.num_classes, 0), seen(clean.num_classes, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto y = static_cast<std::size_t>(clean.labels[i]);
    ++seen[y];
    if (pred[i] == clean.labels[i]) {
      ++hit[y];
      ++correct;
    }
  }
  r.cda = 100.0 * static_cast<double>(correct) / static_cast<double>(clean.size());
  r.clean_samples = clean.size();
  for (std::size_t c = 0; c < clean.num_classes; ++c) {
    r.per_class_accuracy.push_back(seen[c] ? 100.0 * static_cast<double>(hit[c]) / static_cast<double>(seen[c]) : 0.0);
  }
  if (asr_set) {
    r.asr = asr(model, mask, *asr_set, target);
    r.asr_samples = asr_set->size();
  }
  return r;
}

std::vector<SimilarityRow> similarity_table(std::span<const SimilarityCell> cells) {
  std::vector<SimilarityRow> rows;
  std::vector<std::pair<std::string, double>> keys;
  std::map<std::pair<std::string, double>, std::vector<double>> groups;
  for (const auto& c : cells) {
    rows.push_back({c.setting, c.compare, c.rate, c.similarity, 100.0 - c.similarity});
    const auto key = std::make_pair(c.setting, c.rate);
    if (!groups.contains(key)) keys.push_back(key);
    groups[key].push_back(c.similarity);
  }
  for (const auto& key : keys) {
    const auto& sims = groups[key];
    const double mean = std::accumulate(sims.begin(), sims.end(), 0.0) / static_cast<double>(sims.size());
    rows.push_back({key.first, "avg-decrease", key.second, mean, 100.0 - mean});
  }
  return rows;
}

std::vector<SimilarityCell> reference_similarity_cells() {
  struct Ref {
    const char* setting;
    double white[3];
    double random[3];
  };
  static constexpr Ref kRefs[] = {
      {"vgg16/cifar-10", {67.09, 71.12, 77.37}, {67.52, 72.40, 77.98}},
      {"vgg16/cifar-100", {66.62, 75.80, 74.29}, {66.52, 76.52, 77.32}},
      {"resnet18/cifar-10", {67.42, 58.75, 58.25}, {66.54, 59.96, 62.13}},
      {"resnet18/cifar-100", {79.67, 78.04, 75.46}, {79.17, 78.20, 75.08}},
  };
  static constexpr double kRates[] = {0.3, 0.5, 0.7};
  std::vector<SimilarityCell> cells;
  for (const auto& r : kRefs) {
    for (int i = 0; i < 3; ++i) cells.push_back({r.setting, "benign-backdoor(white)", kRates[i], r.white[i]});
    for (int i = 0; i < 3; ++i) cells.push_back({r.setting, "benign-backdoor(random)", kRates[i], r.random[i]});
  }
  return cells;
}

std::vector<std::pair<double, double>> overlap_curve(const ModelParams& benign_model, const PruneMask& backdoor_mask,
                                                     std::span<const double> benign_rates) {
  std::vector<std::pair<double, double>> curve;
  for (double p : benign_rates) {
    curve.emplace_back(p, neuron_overlap(extract_mask(benign_model, p), backdoor_mask));
  }
  return curve;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t t = i; t <= j; ++t) rank[idx[t]] = r;
    i = j + 1;
  }
  return rank;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("spearman lengths", x.size(), y.size());
  if (x.size() < 2) return 0.0;
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace ltfl

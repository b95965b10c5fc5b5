#include "ltfl/dataset.hpp"

#include <string>

#include "ltfl/error.hpp"

namespace ltfl {

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain:
      return "train";
    case Split::kTest:
      return "test";
    case Split::kServerValidation:
      return "server-validation";
  }
  return "train";
}

Split split_from_string(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "test") return Split::kTest;
  if (name == "server-validation") return Split::kServerValidation;
  throw ConfigError("split", "unknown split '" + std::string(name) + "'");
}

void Dataset::push_back(std::span<const double> image, int label) {
  if (image.size() != feature_size()) throw DimensionError("image size", feature_size(), image.size());
  pixels.insert(pixels.end(), image.begin(), image.end());
  labels.push_back(label);
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.shape = shape;
  out.num_classes = num_classes;
  out.split = split;
  out.pixels.reserve(indices.size() * feature_size());
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= size()) throw DimensionError("subset index out of range", size(), i);
    out.push_back(image(i), labels[i]);
  }
  return out;
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(num_classes, 0);
  for (int y : labels) ++counts.at(static_cast<std::size_t>(y));
  return counts;
}

}  // namespace ltfl

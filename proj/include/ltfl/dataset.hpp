#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace ltfl {

enum class Split { kTrain, kTest, kServerValidation };

std::string_view to_string(Split split);
Split split_from_string(std::string_view name);

/// Channel-major (C x H x W) image geometry.
struct ImageShape {
  std::size_t channels = 1;
  std::size_t height = 16;
  std::size_t width = 16;

  std::size_t size() const { return channels * height * width; }
  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

/// Labeled images stored contiguously: image i occupies
/// pixels[i * shape.size(), (i + 1) * shape.size()).
struct Dataset {
  ImageShape shape;
  std::size_t num_classes = 0;
  Split split = Split::kTrain;
  std::vector<double> pixels;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::size_t feature_size() const { return shape.size(); }

  std::span<const double> image(std::size_t i) const {
    return {pixels.data() + i * feature_size(), feature_size()};
  }
  std::span<double> image(std::size_t i) { return {pixels.data() + i * feature_size(), feature_size()}; }

  void push_back(std::span<const double> image, int label);
  /// Samples at the given indices, in the given order.
  Dataset subset(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> class_counts() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

}  // namespace ltfl

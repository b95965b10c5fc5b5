#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "ltfl/dataset.hpp"
#include "ltfl/tensor.hpp"

namespace ltfl {

/// Rendering knobs for the synthetic image task.
struct GeneratorOptions {
  /// Background pixels are uniform in [0, noise].
  double noise = 0.3;
  /// Max translation of the class pattern, in pixels.
  double jitter = 1.0;
};

/// Balanced synthetic classification set. Class c is an oriented bar through
/// the image center at angle pi * c / num_classes; samples differ by
/// translation, angle jitter, intensity, and background noise. Samples are
/// interleaved by class so any prefix is balanced within +-1.
Dataset generate_dataset(std::size_t num_classes, std::size_t samples_per_class, const ImageShape& shape,
                         std::uint64_t seed, const GeneratorOptions& options = {}, Split split = Split::kTrain);

/// Seeded random split into `parts` subsets whose sizes differ by at most one.
std::vector<Dataset> partition_iid(const Dataset& data, std::size_t parts, std::uint64_t seed);

enum class TriggerKind { kWhiteSquare, kRandomSquare };
enum class Corner { kLowerLeft, kLowerRight, kUpperLeft, kUpperRight };

std::string_view to_string(TriggerKind kind);
std::string_view to_string(Corner corner);
TriggerKind trigger_kind_from_string(std::string_view name);
Corner corner_from_string(std::string_view name);

/// Full-image pattern; a pixel value of exactly 0 means "leave the image pixel alone".
struct TriggerPattern {
  Tensor pixels;  // [C, H, W]
  TriggerKind kind = TriggerKind::kWhiteSquare;
  std::size_t size = 0;
  Corner corner = Corner::kLowerLeft;

  std::size_t valid_pixel_count() const;
  friend bool operator==(const TriggerPattern&, const TriggerPattern&) = default;
};

/// White squares are 1.0; random squares are uniform in (0, 1] per pixel and channel.
TriggerPattern make_trigger(TriggerKind kind, std::size_t size, Corner corner, const ImageShape& shape,
                            std::uint64_t seed);

/// An all-zero (fully invalid) trigger.
TriggerPattern empty_trigger(const ImageShape& shape);

/// out = image where trigger == 0, trigger elsewhere.
std::vector<double> apply_trigger(std::span<const double> image, const TriggerPattern& trigger);

struct PoisonSpec {
  TriggerPattern trigger;
  int target_label = 0;
  double alpha = 0.05;
  std::uint64_t seed = 0;

  friend bool operator==(const PoisonSpec&, const PoisonSpec&) = default;
};

/// ceil(alpha * n), guarding against representation error in alpha * n.
std::size_t poison_count(std::size_t n, double alpha);

/// Sorted indices chosen for poisoning, uniform without replacement.
std::vector<std::size_t> poisoned_indices(std::size_t n, double alpha, std::uint64_t seed);

/// Replaces a seeded ceil(alpha * N) subset with triggered, target-labelled copies.
Dataset poison_dataset(const Dataset& data, const PoisonSpec& spec);

/// Triggered copies of every test sample whose original label differs from
/// `target`, all labelled `target`.
Dataset make_asr_testset(const Dataset& clean, const TriggerPattern& trigger, int target);

}  // namespace ltfl

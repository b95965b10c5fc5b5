#include "ltfl/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "ltfl/error.hpp"
#include "ltfl/rng.hpp"

namespace ltfl {

namespace {

double segment_distance(double py, double px, double ay, double ax, double by, double bx) {
  const double dy = by - ay, dx = bx - ax;
  const double len2 = dy * dy + dx * dx;
  double t = len2 > 0.0 ? ((py - ay) * dy + (px - ax) * dx) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double qy = ay + t * dy - py, qx = ax + t * dx - px;
  return std::sqrt(qy * qy + qx * qx);
}

void render_sample(std::span<double> image, const ImageShape& shape, std::size_t cls, std::size_t num_classes,
                   Rng& rng, const GeneratorOptions& opt) {
  const double h = static_cast<double>(shape.height), w = static_cast<double>(shape.width);
  const double spacing = std::numbers::pi / static_cast<double>(num_classes);
  const double angle = spacing * static_cast<double>(cls) + rng.uniform(-0.2, 0.2) * spacing;
  const double half = 0.28 * std::min(h, w);
  const double cy = (h - 1.0) / 2.0 + rng.uniform(-opt.jitter, opt.jitter);
  const double cx = (w - 1.0) / 2.0 + rng.uniform(-opt.jitter, opt.jitter);
  const double ay = cy - half * std::sin(angle), ax = cx - half * std::cos(angle);
  const double by = cy + half * std::sin(angle), bx = cx + half * std::cos(angle);
  const double intensity = rng.uniform(0.7, 1.0);
  for (std::size_t c = 0; c < shape.channels; ++c) {
    for (std::size_t y = 0; y < shape.height; ++y) {
      for (std::size_t x = 0; x < shape.width; ++x) {
        const double d = segment_distance(static_cast<double>(y), static_cast<double>(x), ay, ax, by, bx);
        const double stroke = intensity * std::clamp(1.5 - d, 0.0, 1.0);
        const double bg = rng.uniform() * opt.noise;
        image[(c * shape.height + y) * shape.width + x] = std::max(stroke, bg);
      }
    }
  }
}

}  // namespace

Dataset generate_dataset(std::size_t num_classes, std::size_t samples_per_class, const ImageShape& shape,
                         std::uint64_t seed, const GeneratorOptions& options, Split split) {
  if (num_classes < 2) throw ConfigError("dataset.num_classes", "need at least 2 classes");
  if (samples_per_class == 0) throw ConfigError("dataset.samples_per_class", "must be positive");
  if (shape.channels == 0) throw ConfigError("dataset.channels", "must be positive");
  if (shape.height < 8 || shape.width < 8) {
    throw ConfigError("dataset.image", "images smaller than 8x8 cannot hold the class patterns");
  }
  if (!(options.noise >= 0.0 && options.noise <= 1.0)) throw ConfigError("dataset.noise", "must be in [0, 1]");

  Dataset data;
  data.shape = shape;
  data.num_classes = num_classes;
  data.split = split;
  data.pixels.resize(num_classes * samples_per_class * shape.size());
  data.labels.reserve(num_classes * samples_per_class);
  Rng rng(derive_seed(seed, 0xda7a));
  std::size_t i = 0;
  for (std::size_t s = 0; s < samples_per_class; ++s) {
    for (std::size_t c = 0; c < num_classes; ++c, ++i) {
      data.labels.push_back(static_cast<int>(c));
      render_sample(data.image(i), shape, c, num_classes, rng, options);
    }
  }
  return data;
}

std::vector<Dataset> partition_iid(const Dataset& data, std::size_t parts, std::uint64_t seed) {
  if (parts == 0) throw ConfigError("partition.parts", "must be positive");
  Rng rng(derive_seed(seed, 0x9a27));
  const std::vector<std::size_t> order = rng.permutation(data.size());
  std::vector<std::vector<std::size_t>> buckets(parts);
  for (std::size_t i = 0; i < order.size(); ++i) buckets[i % parts].push_back(order[i]);
  std::vector<Dataset> out;
  out.reserve(parts);
  for (auto& b : buckets) {
    std::sort(b.begin(), b.end());
    out.push_back(data.subset(b));
  }
  return out;
}

std::string_view to_string(TriggerKind kind) {
  return kind == TriggerKind::kWhiteSquare ? "white-square" : "random-square";
}

std::string_view to_string(Corner corner) {
  switch (corner) {
    case Corner::kLowerLeft:
      return "lower-left";
    case Corner::kLowerRight:
      return "lower-right";
    case Corner::kUpperLeft:
      return "upper-left";
    case Corner::kUpperRight:
      return "upper-right";
  }
  return "lower-left";
}

TriggerKind trigger_kind_from_string(std::string_view name) {
  if (name == "white-square" || name == "white") return TriggerKind::kWhiteSquare;
  if (name == "random-square" || name == "random") return TriggerKind::kRandomSquare;
  throw ConfigError("trigger.kind", "unknown trigger kind '" + std::string(name) + "'");
}

Corner corner_from_string(std::string_view name) {
  if (name == "lower-left") return Corner::kLowerLeft;
  if (name == "lower-right") return Corner::kLowerRight;
  if (name == "upper-left") return Corner::kUpperLeft;
  if (name == "upper-right") return Corner::kUpperRight;
  throw ConfigError("trigger.corner", "unknown corner '" + std::string(name) + "'");
}

std::size_t TriggerPattern::valid_pixel_count() const {
  return static_cast<std::size_t>(std::count_if(pixels.data.begin(), pixels.data.end(), [](double v) { return v != 0.0; }));
}

TriggerPattern make_trigger(TriggerKind kind, std::size_t size, Corner corner, const ImageShape& shape,
                            std::uint64_t seed) {
  if (size == 0 || size > shape.height || size > shape.width) {
    throw ConfigError("trigger.size", "square size must be in [1, image size]");
  }
  TriggerPattern t;
  t.kind = kind;
  t.size = size;
  t.corner = corner;
  t.pixels = Tensor({shape.channels, shape.height, shape.width});
  const bool bottom = corner == Corner::kLowerLeft || corner == Corner::kLowerRight;
  const bool right = corner == Corner::kLowerRight || corner == Corner::kUpperRight;
  const std::size_t y0 = bottom ? shape.height - size : 0;
  const std::size_t x0 = right ? shape.width - size : 0;
  Rng rng(derive_seed(seed, 0x7e1a));
  for (std::size_t c = 0; c < shape.channels; ++c) {
    for (std::size_t y = y0; y < y0 + size; ++y) {
      for (std::size_t x = x0; x < x0 + size; ++x) {
        t.pixels.at({c, y, x}) = kind == TriggerKind::kWhiteSquare ? 1.0 : rng.uniform_open_zero();
      }
    }
  }
  return t;
}

TriggerPattern empty_trigger(const ImageShape& shape) {
  TriggerPattern t;
  t.pixels = Tensor({shape.channels, shape.height, shape.width});
  return t;
}

std::vector<double> apply_trigger(std::span<const double> image, const TriggerPattern& trigger) {
  if (image.size() != trigger.pixels.size()) {
    throw DimensionError("trigger / image size", trigger.pixels.size(), image.size());
  }
  std::vector<double> out(image.begin(), image.end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double k = trigger.pixels.data[i];
    if (k != 0.0) out[i] = k;
  }
  return out;
}

std::size_t poison_count(std::size_t n, double alpha) {
  const double raw = alpha * static_cast<double>(n);
  return std::min(n, static_cast<std::size_t>(std::ceil(raw - 1e-9)));
}

std::vector<std::size_t> poisoned_indices(std::size_t n, double alpha, std::uint64_t seed) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("poison.alpha", "must be in [0, 1]");
  const std::size_t k = poison_count(n, alpha);
  Rng rng(derive_seed(seed, 0xbad));
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  // Partial Fisher-Yates: the first k slots are a uniform k-subset.
  for (std::size_t i = 0; i < k; ++i) std::swap(perm[i], perm[i + rng.below(n - i)]);
  perm.resize(k);
  std::sort(perm.begin(), perm.end());
  return perm;
}

Dataset poison_dataset(const Dataset& data, const PoisonSpec& spec) {
  if (data.split != Split::kTrain) throw ConfigError("poison", "only training splits can be poisoned");
  if (spec.target_label < 0 || static_cast<std::size_t>(spec.target_label) >= data.num_classes) {
    throw ConfigError("poison.target_label", "not a valid class");
  }
  if (spec.trigger.pixels.size() != data.feature_size()) {
    throw DimensionError("trigger / image size", data.feature_size(), spec.trigger.pixels.size());
  }
  Dataset out = data;
  for (std::size_t i : poisoned_indices(data.size(), spec.alpha, spec.seed)) {
    const std::vector<double> triggered = apply_trigger(data.image(i), spec.trigger);
    std::copy(triggered.begin(), triggered.end(), out.image(i).begin());
    out.labels[i] = spec.target_label;
  }
  return out;
}

Dataset make_asr_testset(const Dataset& clean, const TriggerPattern& trigger, int target) {
  if (clean.empty()) throw ConfigError("asr", "empty test set");
  Dataset out;
  out.shape = clean.shape;
  out.num_classes = clean.num_classes;
  out.split = clean.split;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    if (clean.labels[i] == target) continue;
    out.push_back(apply_trigger(clean.image(i), trigger), target);
  }
  return out;
}

}  // namespace ltfl

#pragma once

#include <cstdint>
#include <vector>

#include "ltfl/data.hpp"
#include "ltfl/nn.hpp"
#include "ltfl/rng.hpp"

namespace testing {

/// A random mask that keeps at least one unit per layer.
inline ltfl::PruneMask random_mask(const ltfl::Architecture& arch, ltfl::Rng& rng, double keep = 0.6) {
  ltfl::PruneMask m = ltfl::PruneMask::full(arch);
  for (auto& layer : m.layers) {
    for (auto& bit : layer) bit = rng.uniform() < keep ? 1 : 0;
    layer[rng.below(layer.size())] = 1;
  }
  return m;
}

/// Random MLP (most of the time) or small CNN with at most a few dozen units.
inline ltfl::Architecture random_architecture(ltfl::Rng& rng) {
  const std::size_t classes = 2 + rng.below(3);
  if (rng.below(3) == 0) {
    const ltfl::ImageShape shape{1 + rng.below(2), 5, 4};
    const std::size_t conv[] = {1 + rng.below(3)};
    const std::size_t hidden[] = {2 + rng.below(3)};
    return ltfl::Architecture::small_cnn(shape, conv, hidden, classes);
  }
  std::vector<std::size_t> hidden(1 + rng.below(2));
  for (auto& h : hidden) h = 2 + rng.below(5);
  return ltfl::Architecture::mlp(2 + rng.below(5), hidden, classes);
}

inline std::vector<std::vector<double>> random_inputs(ltfl::Rng& rng, std::size_t n, std::size_t width) {
  std::vector<std::vector<double>> xs(n, std::vector<double>(width));
  for (auto& x : xs)
    for (auto& v : x) v = rng.uniform(-1.0, 1.0);
  return xs;
}

inline ltfl::Tensor as_batch(const std::vector<std::vector<double>>& xs) {
  ltfl::Tensor t({xs.size(), xs.front().size()});
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (std::size_t j = 0; j < xs[i].size(); ++j) t.data[i * xs[i].size() + j] = xs[i][j];
  return t;
}

/// Two well-separated clusters in the plane, as a 1x1x2 "image" dataset.
inline ltfl::Dataset two_clusters(std::size_t per_class, std::uint64_t seed) {
  ltfl::Rng rng(seed);
  ltfl::Dataset d;
  d.shape = {1, 1, 2};
  d.num_classes = 2;
  for (std::size_t i = 0; i < per_class; ++i) {
    for (int c = 0; c < 2; ++c) {
      const double sign = c == 0 ? -1.0 : 1.0;
      const double p[2] = {sign * rng.uniform(0.2, 1.0), rng.uniform(-1.0, 1.0)};
      d.push_back(p, c);
    }
  }
  return d;
}

}  // namespace testing

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "ltfl/dataset.hpp"
#include "ltfl/tensor.hpp"

namespace ltfl {

enum class LayerKind { kDense, kConv2d, kUnitScale, kRelu, kSoftmaxOutput };

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);

/// One layer of a feed-forward network.
///
/// Dense / softmax-output: `in` and `out` are feature counts.
/// Conv2d: `in` / `out` are channel counts over a `height` x `width` map, square
/// `kernel` (odd), stride 1, zero "same" padding.
/// Unit-scale: per-unit multiplicative scale (gamma) over `out` units; when it
/// follows a conv layer a unit is a whole channel.
struct LayerSpec {
  LayerKind kind = LayerKind::kDense;
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t kernel = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  bool prunable = false;

  static LayerSpec dense(std::size_t in, std::size_t out, bool prunable = false);
  static LayerSpec conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                          std::size_t height, std::size_t width, bool prunable = false);
  static LayerSpec unit_scale(std::size_t units);
  static LayerSpec relu();
  static LayerSpec softmax_output(std::size_t in, std::size_t classes);

  bool has_weights() const {
    return kind == LayerKind::kDense || kind == LayerKind::kConv2d || kind == LayerKind::kSoftmaxOutput;
  }
  std::size_t weight_count() const;
  std::size_t bias_count() const { return has_weights() ? out : 0; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Layer stack plus input width. Each prunable dense/conv layer is followed
/// directly by a unit-scale layer; the last layer is softmax-output.
struct Architecture {
  std::size_t input_size = 0;
  std::vector<LayerSpec> layers;

  /// Throws DimensionError / ConfigError on an inconsistent stack.
  void validate() const;

  std::size_t num_classes() const;
  /// Width of each unit-scale layer, in layer order.
  std::vector<std::size_t> prunable_widths() const;
  std::size_t total_prunable_units() const;
  /// Layer indices of the unit-scale layers, in order.
  std::vector<std::size_t> scale_layer_indices() const;

  /// input -> [dense(h) -> scale -> relu]* -> softmax-output.
  static Architecture mlp(std::size_t input_size, std::span<const std::size_t> hidden, std::size_t classes);
  /// [conv3x3(c) -> scale -> relu]* -> [dense(h) -> scale -> relu]* -> softmax-output.
  static Architecture small_cnn(const ImageShape& image, std::span<const std::size_t> conv_channels,
                                std::span<const std::size_t> hidden, std::size_t classes);

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

/// Retain (1) / drop (0) per prunable unit, one vector per unit-scale layer.
struct PruneMask {
  std::vector<std::vector<std::uint8_t>> layers;
  double rate = 0.0;

  static PruneMask full(const Architecture& arch);

  std::size_t total_units() const;
  std::size_t retained_units() const;
  /// Flattened across layers in layer order.
  std::vector<std::uint8_t> flat() const;
  bool same_shape(const PruneMask& other) const;

  friend bool operator==(const PruneMask&, const PruneMask&) = default;
};

struct LayerParams {
  std::vector<double> weight;
  std::vector<double> bias;
  std::vector<double> gamma;

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

/// Trainable state of one network: weights, biases, unit scales, and SGD momentum buffers.
struct ModelParams {
  Architecture arch;
  std::uint64_t seed = 0;
  std::vector<LayerParams> layers;
  std::vector<LayerParams> momentum;

  /// Zero momentum buffers shaped like `layers`.
  void reset_momentum();
  std::size_t parameter_count() const;

  /// Visits every trainable scalar as (layer, field, index, value&). field: 0 weight, 1 bias, 2 gamma.
  template <typename Fn>
  void for_each_scalar(Fn&& fn) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      for (std::size_t i = 0; i < layers[l].weight.size(); ++i) fn(l, 0, i, layers[l].weight[i]);
      for (std::size_t i = 0; i < layers[l].bias.size(); ++i) fn(l, 1, i, layers[l].bias[i]);
      for (std::size_t i = 0; i < layers[l].gamma.size(); ++i) fn(l, 2, i, layers[l].gamma[i]);
    }
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Same shape as ModelParams::layers.
using GradientSet = std::vector<LayerParams>;

struct TrainConfig {
  /// (first epoch, learning rate); epochs strictly increasing from 0.
  std::vector<std::pair<std::size_t, double>> lr_schedule{{0, 0.1}};
  double momentum = 0.9;
  std::size_t batch_size = 32;
  std::size_t epochs = 30;
  /// L1 penalty on unit scales (network-slimming sparsity).
  double l1_gamma = 0.0;
  /// Coupled L2 decay added to every gradient (g += weight_decay * theta).
  double weight_decay = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  double learning_rate(std::size_t epoch) const;
};

/// Fresh parameters: weights and biases uniform in +-1/sqrt(fan_in), gamma = 0.5.
ModelParams init_model(const Architecture& arch, std::uint64_t seed);

/// Throws DimensionError unless the mask has one vector per unit-scale layer of matching width.
void check_mask(const Architecture& arch, const PruneMask& mask);

/// Zeroes every coordinate owned by a dropped unit (its weight row / kernel,
/// bias, and scale) in both parameters and momentum.
void apply_mask(ModelParams& model, const PruneMask& mask);

/// 0/1 per scalar, shaped like ModelParams::layers: 0 exactly where `mask` drops the owning unit.
std::vector<LayerParams> coordinate_mask(const Architecture& arch, const PruneMask& mask);

/// Logits, one row per batch element. `batch` is [N, ...] with row size == input_size.
Tensor forward(const ModelParams& model, const PruneMask& mask, const Tensor& batch);
Tensor forward(const ModelParams& model, const Tensor& batch);

/// Mean softmax cross-entropy over the batch.
double cross_entropy(const Tensor& logits, std::span<const int> labels);

struct LossAndGradients {
  double loss = 0.0;  // data loss only, without the L1 term
  GradientSet grads;
};

/// Gradients of mean cross-entropy (+ l1 * sum |gamma| over retained units).
LossAndGradients backward(const ModelParams& model, const PruneMask& mask, const Tensor& batch,
                          std::span<const int> labels, double l1_gamma = 0.0);

/// v <- momentum * v + g; theta <- theta - lr(epoch) * v.
void sgd_step(ModelParams& model, const GradientSet& grads, const TrainConfig& config, std::size_t epoch);

/// Runs one epoch of minibatch SGD; minibatch order derives from (config.seed, epoch).
/// Returns mean batch loss. Throws TrainingDivergedError.
double train_epoch(ModelParams& model, const PruneMask& mask, const Dataset& data, const TrainConfig& config,
                   std::size_t epoch);

struct TrainResult {
  ModelParams model;
  std::vector<double> loss_history;
};

/// `config.epochs` epochs of train_epoch. Momentum of dropped coordinates is zeroed first
/// so they stay untouched.
TrainResult train(ModelParams model, const PruneMask& mask, const Dataset& data, const TrainConfig& config);

/// Predicted class per row (lowest index on ties).
std::vector<int> predict(const ModelParams& model, const PruneMask& mask, const Dataset& data);

/// Packs images [first, first + count) into an [count, feature] tensor.
Tensor batch_of(const Dataset& data, std::span<const std::size_t> indices);
Tensor batch_of(const Dataset& data);

}  // namespace ltfl

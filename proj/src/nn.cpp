#include "ltfl/nn.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>

#include "ltfl/error.hpp"
#include "ltfl/rng.hpp"

namespace ltfl {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;
using ConstVecMap = Eigen::Map<const Vec>;

// For each layer, the mask slot (index among unit-scale layers) that governs
// it, or -1. A prunable dense/conv layer shares the slot of the scale layer
// that follows it.
std::vector<int> mask_slots(const Architecture& arch) {
  std::vector<int> slots(arch.layers.size(), -1);
  int next = 0;
  for (std::size_t l = 0; l < arch.layers.size(); ++l) {
    if (arch.layers[l].kind == LayerKind::kUnitScale) {
      slots[l] = next;
      if (l > 0) slots[l - 1] = next;
      ++next;
    }
  }
  return slots;
}

// Spatial positions per unit of a unit-scale layer (1 after dense, H*W after conv).
std::size_t unit_stride(const Architecture& arch, std::size_t scale_layer) {
  const LayerSpec& prev = arch.layers.at(scale_layer - 1);
  return prev.kind == LayerKind::kConv2d ? prev.height * prev.width : 1;
}

Mat to_matrix(const Tensor& batch, std::size_t input_size) {
  if (batch.rank() < 1) throw DimensionError("batch must have a leading batch dimension");
  if (batch.row_size() != input_size) throw DimensionError("batch row size", input_size, batch.row_size());
  return ConstMatMap(batch.data.data(), static_cast<Eigen::Index>(batch.dim(0)),
                     static_cast<Eigen::Index>(input_size));
}

// Image rows of one sample (C x H x W) unfolded into (C*k*k) x (H*W) patches.
Mat im2col(const double* image, const LayerSpec& spec) {
  const std::size_t k = spec.kernel;
  const long pad = static_cast<long>(k / 2);
  const std::size_t h = spec.height, w = spec.width;
  Mat cols = Mat::Zero(static_cast<Eigen::Index>(spec.in * k * k), static_cast<Eigen::Index>(h * w));
  for (std::size_t c = 0; c < spec.in; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const std::size_t r = (c * k + ky) * k + kx;
        for (std::size_t y = 0; y < h; ++y) {
          const long iy = static_cast<long>(y + ky) - pad;
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t x = 0; x < w; ++x) {
            const long ix = static_cast<long>(x + kx) - pad;
            if (ix < 0 || ix >= static_cast<long>(w)) continue;
            cols(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(y * w + x)) =
                image[(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
  return cols;
}

void col2im_add(const Mat& cols, const LayerSpec& spec, double* image) {
  const std::size_t k = spec.kernel;
  const long pad = static_cast<long>(k / 2);
  const std::size_t h = spec.height, w = spec.width;
  for (std::size_t c = 0; c < spec.in; ++c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const std::size_t r = (c * k + ky) * k + kx;
        for (std::size_t y = 0; y < h; ++y) {
          const long iy = static_cast<long>(y + ky) - pad;
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t x = 0; x < w; ++x) {
            const long ix = static_cast<long>(x + kx) - pad;
            if (ix < 0 || ix >= static_cast<long>(w)) continue;
            image[(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] +=
                cols(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(y * w + x));
          }
        }
      }
    }
  }
}

double unit_factor(const LayerParams& p, const PruneMask& mask, int slot, std::size_t u) {
  return mask.layers[static_cast<std::size_t>(slot)][u] ? p.gamma[u] : 0.0;
}

// Forward pass; when `inputs` is non-null it receives the input of every layer.
Mat run_forward(const ModelParams& model, const PruneMask& mask, Mat x, std::vector<Mat>* inputs) {
  const Architecture& arch = model.arch;
  const std::vector<int> slots = mask_slots(arch);
  const auto n = x.rows();
  for (std::size_t l = 0; l < arch.layers.size(); ++l) {
    const LayerSpec& spec = arch.layers[l];
    const LayerParams& p = model.layers[l];
    if (inputs) inputs->push_back(x);
    switch (spec.kind) {
      case LayerKind::kDense:
      case LayerKind::kSoftmaxOutput: {
        ConstMatMap w(p.weight.data(), static_cast<Eigen::Index>(spec.out), static_cast<Eigen::Index>(spec.in));
        ConstVecMap b(p.bias.data(), static_cast<Eigen::Index>(spec.out));
        Mat z = x * w.transpose();
        z.rowwise() += b.transpose();
        x = std::move(z);
        break;
      }
      case LayerKind::kConv2d: {
        const auto patch = static_cast<Eigen::Index>(spec.in * spec.kernel * spec.kernel);
        const auto hw = static_cast<Eigen::Index>(spec.height * spec.width);
        ConstMatMap w(p.weight.data(), static_cast<Eigen::Index>(spec.out), patch);
        ConstVecMap b(p.bias.data(), static_cast<Eigen::Index>(spec.out));
        Mat z(n, static_cast<Eigen::Index>(spec.out) * hw);
        for (Eigen::Index i = 0; i < n; ++i) {
          const Mat cols = im2col(x.row(i).data(), spec);
          Mat zi = w * cols;
          zi.colwise() += b;
          z.row(i) = Eigen::Map<const Eigen::RowVectorXd>(zi.data(), zi.size());
        }
        x = std::move(z);
        break;
      }
      case LayerKind::kUnitScale: {
        const std::size_t stride = unit_stride(arch, l);
        for (std::size_t u = 0; u < spec.out; ++u) {
          auto block = x.middleCols(static_cast<Eigen::Index>(u * stride), static_cast<Eigen::Index>(stride));
          if (!mask.layers[static_cast<std::size_t>(slots[l])][u]) {
            block.setZero();
          } else {
            block *= p.gamma[u];
          }
        }
        break;
      }
      case LayerKind::kRelu:
        x = x.cwiseMax(0.0);
        break;
    }
  }
  return x;
}

Tensor to_tensor(const Mat& m) {
  Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  MatMap(t.data.data(), m.rows(), m.cols()) = m;
  return t;
}

GradientSet zero_like(const std::vector<LayerParams>& layers) {
  GradientSet g(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    g[l].weight.assign(layers[l].weight.size(), 0.0);
    g[l].bias.assign(layers[l].bias.size(), 0.0);
    g[l].gamma.assign(layers[l].gamma.size(), 0.0);
  }
  return g;
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kDense:
      return "dense";
    case LayerKind::kConv2d:
      return "conv2d";
    case LayerKind::kUnitScale:
      return "unit-scale";
    case LayerKind::kRelu:
      return "relu";
    case LayerKind::kSoftmaxOutput:
      return "softmax-output";
  }
  return "dense";
}

LayerKind layer_kind_from_string(std::string_view name) {
  if (name == "dense") return LayerKind::kDense;
  if (name == "conv2d") return LayerKind::kConv2d;
  if (name == "unit-scale") return LayerKind::kUnitScale;
  if (name == "relu") return LayerKind::kRelu;
  if (name == "softmax-output") return LayerKind::kSoftmaxOutput;
  throw ConfigError("kind", "unknown layer kind '" + std::string(name) + "'");
}

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out, bool prunable) {
  return {LayerKind::kDense, in, out, 0, 0, 0, prunable};
}

LayerSpec LayerSpec::conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                            std::size_t height, std::size_t width, bool prunable) {
  return {LayerKind::kConv2d, in_channels, out_channels, kernel, height, width, prunable};
}

LayerSpec LayerSpec::unit_scale(std::size_t units) { return {LayerKind::kUnitScale, units, units, 0, 0, 0, false}; }

LayerSpec LayerSpec::relu() { return {LayerKind::kRelu, 0, 0, 0, 0, 0, false}; }

LayerSpec LayerSpec::softmax_output(std::size_t in, std::size_t classes) {
  return {LayerKind::kSoftmaxOutput, in, classes, 0, 0, 0, false};
}

std::size_t LayerSpec::weight_count() const {
  switch (kind) {
    case LayerKind::kDense:
    case LayerKind::kSoftmaxOutput:
      return in * out;
    case LayerKind::kConv2d:
      return out * in * kernel * kernel;
    default:
      return 0;
  }
}

void Architecture::validate() const {
  if (input_size == 0) throw ConfigError("architecture.input_size", "must be positive");
  if (layers.empty()) throw ConfigError("architecture.layers", "no layers");
  if (layers.back().kind != LayerKind::kSoftmaxOutput) {
    throw ConfigError("architecture.layers", "last layer must be softmax-output");
  }
  std::size_t width = input_size;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerSpec& s = layers[l];
    const std::string where = "architecture.layers[" + std::to_string(l) + "]";
    const bool last = l + 1 == layers.size();
    switch (s.kind) {
      case LayerKind::kDense:
      case LayerKind::kSoftmaxOutput:
        if (s.in != width) throw DimensionError(where + " input width", width, s.in);
        if (s.out == 0) throw ConfigError(where, "zero output width");
        width = s.out;
        break;
      case LayerKind::kConv2d:
        if (s.kernel == 0 || s.kernel % 2 == 0) throw ConfigError(where, "conv kernel must be odd");
        if (s.in * s.height * s.width != width) {
          throw DimensionError(where + " input width", width, s.in * s.height * s.width);
        }
        if (s.out == 0) throw ConfigError(where, "zero output channels");
        width = s.out * s.height * s.width;
        break;
      case LayerKind::kUnitScale: {
        if (l == 0) throw ConfigError(where, "unit-scale must follow a prunable layer");
        const LayerSpec& prev = layers[l - 1];
        if (!prev.prunable) throw ConfigError(where, "unit-scale must follow a prunable layer");
        if (s.out != prev.out) throw DimensionError(where + " units", prev.out, s.out);
        break;
      }
      case LayerKind::kRelu:
        break;
    }
    if (s.kind == LayerKind::kSoftmaxOutput && !last) throw ConfigError(where, "softmax-output must be last");
    if (s.kind == LayerKind::kSoftmaxOutput && s.prunable) throw ConfigError(where, "output layer is never prunable");
    if (s.prunable) {
      if (s.kind != LayerKind::kDense && s.kind != LayerKind::kConv2d) {
        throw ConfigError(where, "only dense and conv2d layers can be prunable");
      }
      if (last || layers[l + 1].kind != LayerKind::kUnitScale) {
        throw ConfigError(where, "prunable layer must be followed by unit-scale");
      }
    }
  }
}

std::size_t Architecture::num_classes() const { return layers.empty() ? 0 : layers.back().out; }

std::vector<std::size_t> Architecture::prunable_widths() const {
  std::vector<std::size_t> widths;
  for (const auto& s : layers) {
    if (s.kind == LayerKind::kUnitScale) widths.push_back(s.out);
  }
  return widths;
}

std::size_t Architecture::total_prunable_units() const {
  std::size_t total = 0;
  for (std::size_t w : prunable_widths()) total += w;
  return total;
}

std::vector<std::size_t> Architecture::scale_layer_indices() const {
  std::vector<std::size_t> idx;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].kind == LayerKind::kUnitScale) idx.push_back(l);
  }
  return idx;
}

Architecture Architecture::mlp(std::size_t input_size, std::span<const std::size_t> hidden, std::size_t classes) {
  Architecture arch;
  arch.input_size = input_size;
  std::size_t width = input_size;
  for (std::size_t h : hidden) {
    arch.layers.push_back(LayerSpec::dense(width, h, true));
    arch.layers.push_back(LayerSpec::unit_scale(h));
    arch.layers.push_back(LayerSpec::relu());
    width = h;
  }
  arch.layers.push_back(LayerSpec::softmax_output(width, classes));
  return arch;
}

Architecture Architecture::small_cnn(const ImageShape& image, std::span<const std::size_t> conv_channels,
                                     std::span<const std::size_t> hidden, std::size_t classes) {
  Architecture arch;
  arch.input_size = image.size();
  std::size_t channels = image.channels;
  for (std::size_t c : conv_channels) {
    arch.layers.push_back(LayerSpec::conv2d(channels, c, 3, image.height, image.width, true));
    arch.layers.push_back(LayerSpec::unit_scale(c));
    arch.layers.push_back(LayerSpec::relu());
    channels = c;
  }
  std::size_t width = channels * image.height * image.width;
  for (std::size_t h : hidden) {
    arch.layers.push_back(LayerSpec::dense(width, h, true));
    arch.layers.push_back(LayerSpec::unit_scale(h));
    arch.layers.push_back(LayerSpec::relu());
    width = h;
  }
  arch.layers.push_back(LayerSpec::softmax_output(width, classes));
  return arch;
}

PruneMask PruneMask::full(const Architecture& arch) {
  PruneMask m;
  for (std::size_t w : arch.prunable_widths()) m.layers.emplace_back(w, std::uint8_t{1});
  return m;
}

std::size_t PruneMask::total_units() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.size();
  return n;
}

std::size_t PruneMask::retained_units() const {
  std::size_t n = 0;
  for (const auto& l : layers) {
    for (auto b : l) n += b ? 1 : 0;
  }
  return n;
}

std::vector<std::uint8_t> PruneMask::flat() const {
  std::vector<std::uint8_t> out;
  out.reserve(total_units());
  for (const auto& l : layers) {
    for (auto b : l) out.push_back(b ? 1 : 0);
  }
  return out;
}

bool PruneMask::same_shape(const PruneMask& other) const {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].size() != other.layers[i].size()) return false;
  }
  return true;
}

void ModelParams::reset_momentum() {
  momentum = zero_like(layers);
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size() + l.gamma.size();
  return n;
}

void TrainConfig::validate() const {
  if (lr_schedule.empty()) throw ConfigError("train.lr_schedule", "empty schedule");
  if (lr_schedule.front().first != 0) throw ConfigError("train.lr_schedule", "must start at epoch 0");
  for (std::size_t i = 0; i < lr_schedule.size(); ++i) {
    if (!(lr_schedule[i].second > 0.0)) throw ConfigError("train.lr_schedule", "rates must be positive");
    if (i > 0 && lr_schedule[i].first <= lr_schedule[i - 1].first) {
      throw ConfigError("train.lr_schedule", "epochs must be strictly increasing");
    }
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum", "must be in [0, 1)");
  if (batch_size == 0) throw ConfigError("train.batch_size", "must be positive");
  if (!(l1_gamma >= 0.0)) throw ConfigError("train.l1_gamma", "must be nonnegative");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay", "must be nonnegative");
}

double TrainConfig::learning_rate(std::size_t epoch) const {
  double rate = lr_schedule.front().second;
  for (const auto& [start, lr] : lr_schedule) {
    if (start <= epoch) rate = lr;
  }
  return rate;
}

ModelParams init_model(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  ModelParams model;
  model.arch = arch;
  model.seed = seed;
  model.layers.resize(arch.layers.size());
  Rng rng(derive_seed(seed, 0x1417));
  for (std::size_t l = 0; l < arch.layers.size(); ++l) {
    const LayerSpec& s = arch.layers[l];
    LayerParams& p = model.layers[l];
    if (s.has_weights()) {
      const std::size_t fan_in = s.weight_count() / s.out;
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      p.weight.resize(s.weight_count());
      for (double& w : p.weight) w = rng.uniform(-bound, bound);
      p.bias.resize(s.out);
      for (double& b : p.bias) b = rng.uniform(-bound, bound);
    } else if (s.kind == LayerKind::kUnitScale) {
      p.gamma.assign(s.out, 0.5);
    }
  }
  model.reset_momentum();
  return model;
}

void check_mask(const Architecture& arch, const PruneMask& mask) {
  const auto widths = arch.prunable_widths();
  if (mask.layers.size() != widths.size()) throw DimensionError("mask layer count", widths.size(), mask.layers.size());
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (mask.layers[i].size() != widths[i]) {
      throw DimensionError("mask width of prunable layer " + std::to_string(i), widths[i], mask.layers[i].size());
    }
  }
}

void apply_mask(ModelParams& model, const PruneMask& mask) {
  const std::vector<LayerParams> keep = coordinate_mask(model.arch, mask);
  if (model.momentum.size() != model.layers.size()) model.reset_momentum();
  auto zero = [](std::vector<double>& v, const std::vector<double>& k) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (k[i] == 0.0) v[i] = 0.0;
    }
  };
  for (std::size_t l = 0; l < keep.size(); ++l) {
    for (LayerParams* p : {&model.layers[l], &model.momentum[l]}) {
      zero(p->weight, keep[l].weight);
      zero(p->bias, keep[l].bias);
      zero(p->gamma, keep[l].gamma);
    }
  }
}

std::vector<LayerParams> coordinate_mask(const Architecture& arch, const PruneMask& mask) {
  check_mask(arch, mask);
  std::vector<LayerParams> out(arch.layers.size());
  const std::vector<int> slots = mask_slots(arch);
  for (std::size_t l = 0; l < arch.layers.size(); ++l) {
    const LayerSpec& s = arch.layers[l];
    LayerParams& p = out[l];
    p.weight.assign(s.weight_count(), 1.0);
    p.bias.assign(s.bias_count(), 1.0);
    if (s.kind == LayerKind::kUnitScale) p.gamma.assign(s.out, 1.0);
    if (slots[l] < 0) continue;
    const auto& keep = mask.layers[static_cast<std::size_t>(slots[l])];
    for (std::size_t u = 0; u < s.out; ++u) {
      if (keep[u]) continue;
      if (s.kind == LayerKind::kUnitScale) {
        p.gamma[u] = 0.0;
      } else {
        const std::size_t row = s.weight_count() / s.out;
        std::fill_n(p.weight.begin() + static_cast<std::ptrdiff_t>(u * row), row, 0.0);
        p.bias[u] = 0.0;
      }
    }
  }
  return out;
}

Tensor forward(const ModelParams& model, const PruneMask& mask, const Tensor& batch) {
  check_mask(model.arch, mask);
  return to_tensor(run_forward(model, mask, to_matrix(batch, model.arch.input_size), nullptr));
}

Tensor forward(const ModelParams& model, const Tensor& batch) {
  return forward(model, PruneMask::full(model.arch), batch);
}

double cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const std::size_t n = logits.dim(0);
  const std::size_t c = logits.row_size();
  if (labels.size() != n) throw DimensionError("label count", n, labels.size());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = logits.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double z : row) sum += std::exp(z - mx);
    const auto y = static_cast<std::size_t>(labels[i]);
    if (labels[i] < 0 || y >= c) throw DimensionError("label out of range", c, y);
    total += mx + std::log(sum) - row[y];
  }
  return total / static_cast<double>(n);
}

LossAndGradients backward(const ModelParams& model, const PruneMask& mask, const Tensor& batch,
                          std::span<const int> labels, double l1_gamma) {
  const Architecture& arch = model.arch;
  check_mask(arch, mask);
  const std::size_t n = batch.dim(0);
  if (labels.size() != n) throw DimensionError("label count", n, labels.size());
  if (n == 0) throw DimensionError("empty batch");

  std::vector<Mat> inputs;
  inputs.reserve(arch.layers.size());
  const Mat logits = run_forward(model, mask, to_matrix(batch, arch.input_size), &inputs);
  const auto classes = static_cast<std::size_t>(logits.cols());

  LossAndGradients out;
  out.grads = zero_like(model.layers);

  // d(mean CE)/d(logits) = (softmax - onehot) / n
  Mat g(logits.rows(), logits.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    if (labels[i] < 0 || y >= classes) throw DimensionError("label out of range", classes, y);
    const auto row = logits.row(static_cast<Eigen::Index>(i));
    const double mx = row.maxCoeff();
    const Eigen::RowVectorXd e = (row.array() - mx).exp();
    const double sum = e.sum();
    total += mx + std::log(sum) - row(static_cast<Eigen::Index>(y));
    g.row(static_cast<Eigen::Index>(i)) = e / sum;
    g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(y)) -= 1.0;
  }
  out.loss = total / static_cast<double>(n);
  g /= static_cast<double>(n);

  const std::vector<int> slots = mask_slots(arch);
  for (std::size_t l = arch.layers.size(); l-- > 0;) {
    const LayerSpec& spec = arch.layers[l];
    const LayerParams& p = model.layers[l];
    LayerParams& dp = out.grads[l];
    const Mat& x = inputs[l];
    const bool need_input_grad = l > 0;
    switch (spec.kind) {
      case LayerKind::kDense:
      case LayerKind::kSoftmaxOutput: {
        const auto rows = static_cast<Eigen::Index>(spec.out), cols = static_cast<Eigen::Index>(spec.in);
        ConstMatMap w(p.weight.data(), rows, cols);
        MatMap(dp.weight.data(), rows, cols) = g.transpose() * x;
        Eigen::Map<Vec>(dp.bias.data(), rows) = g.colwise().sum().transpose();
        if (need_input_grad) g = g * w;
        break;
      }
      case LayerKind::kConv2d: {
        const auto patch = static_cast<Eigen::Index>(spec.in * spec.kernel * spec.kernel);
        const auto hw = static_cast<Eigen::Index>(spec.height * spec.width);
        const auto out_ch = static_cast<Eigen::Index>(spec.out);
        ConstMatMap w(p.weight.data(), out_ch, patch);
        MatMap dw(dp.weight.data(), out_ch, patch);
        Eigen::Map<Vec> db(dp.bias.data(), out_ch);
        Mat dx = need_input_grad ? Mat::Zero(x.rows(), x.cols()) : Mat();
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
          const Mat cols = im2col(x.row(i).data(), spec);
          const Mat dz = Eigen::Map<const Mat>(g.row(i).data(), out_ch, hw);
          dw += dz * cols.transpose();
          db += dz.rowwise().sum();
          if (need_input_grad) {
            const Mat dcols = w.transpose() * dz;
            col2im_add(dcols, spec, dx.row(i).data());
          }
        }
        if (need_input_grad) g = std::move(dx);
        break;
      }
      case LayerKind::kUnitScale: {
        const std::size_t stride = unit_stride(arch, l);
        const auto& keep = mask.layers[static_cast<std::size_t>(slots[l])];
        for (std::size_t u = 0; u < spec.out; ++u) {
          const auto c0 = static_cast<Eigen::Index>(u * stride);
          const auto width = static_cast<Eigen::Index>(stride);
          auto gb = g.middleCols(c0, width);
          if (!keep[u]) {
            gb.setZero();
            continue;
          }
          dp.gamma[u] = gb.cwiseProduct(x.middleCols(c0, width)).sum();
          if (l1_gamma > 0.0 && p.gamma[u] != 0.0) dp.gamma[u] += l1_gamma * (p.gamma[u] > 0.0 ? 1.0 : -1.0);
          gb *= unit_factor(p, mask, slots[l], u);
        }
        break;
      }
      case LayerKind::kRelu:
        g = g.cwiseProduct((x.array() > 0.0).cast<double>().matrix());
        break;
    }
  }
  return out;
}

void sgd_step(ModelParams& model, const GradientSet& grads, const TrainConfig& config, std::size_t epoch) {
  if (grads.size() != model.layers.size()) throw DimensionError("gradient layer count", model.layers.size(), grads.size());
  if (model.momentum.size() != model.layers.size()) model.reset_momentum();
  const double lr = config.learning_rate(epoch);
  const double mu = config.momentum;
  const double wd = config.weight_decay;
  auto step = [&](std::vector<double>& theta, std::vector<double>& v, const std::vector<double>& g) {
    if (g.size() != theta.size()) throw DimensionError("gradient size", theta.size(), g.size());
    for (std::size_t i = 0; i < theta.size(); ++i) {
      v[i] = mu * v[i] + g[i] + wd * theta[i];
      theta[i] -= lr * v[i];
    }
  };
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    step(model.layers[l].weight, model.momentum[l].weight, grads[l].weight);
    step(model.layers[l].bias, model.momentum[l].bias, grads[l].bias);
    step(model.layers[l].gamma, model.momentum[l].gamma, grads[l].gamma);
  }
}

Tensor batch_of(const Dataset& data, std::span<const std::size_t> indices) {
  const std::size_t f = data.feature_size();
  Tensor t({indices.size(), f});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto img = data.image(indices[r]);
    std::copy(img.begin(), img.end(), t.data.begin() + static_cast<std::ptrdiff_t>(r * f));
  }
  return t;
}

Tensor batch_of(const Dataset& data) { return Tensor({data.size(), data.feature_size()}, data.pixels); }

double train_epoch(ModelParams& model, const PruneMask& mask, const Dataset& data, const TrainConfig& config,
                   std::size_t epoch) {
  if (data.empty()) throw DimensionError("training set is empty");
  Rng rng(derive_seed(config.seed, epoch));
  const std::vector<std::size_t> order = rng.permutation(data.size());
  double total = 0.0;
  std::vector<int> labels;
  for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
    const std::size_t count = std::min(config.batch_size, order.size() - start);
    const std::span<const std::size_t> idx(order.data() + start, count);
    labels.resize(count);
    for (std::size_t i = 0; i < count; ++i) labels[i] = data.labels[idx[i]];
    LossAndGradients lg = backward(model, mask, batch_of(data, idx), labels, config.l1_gamma);
    if (!std::isfinite(lg.loss)) throw TrainingDivergedError(epoch);
    sgd_step(model, lg.grads, config, epoch);
    total += lg.loss * static_cast<double>(count);
  }
  return total / static_cast<double>(data.size());
}

TrainResult train(ModelParams model, const PruneMask& mask, const Dataset& data, const TrainConfig& config) {
  config.validate();
  check_mask(model.arch, mask);
  if (data.empty()) throw DimensionError("training set is empty");
  if (data.feature_size() != model.arch.input_size) {
    throw DimensionError("dataset feature size", model.arch.input_size, data.feature_size());
  }
  if (model.momentum.size() != model.layers.size()) model.reset_momentum();
  // Dropped coordinates get zero gradient; clearing their momentum keeps them fixed.
  ModelParams scratch = model;
  apply_mask(scratch, mask);
  model.momentum = std::move(scratch.momentum);

  TrainResult result;
  result.loss_history.reserve(config.epochs);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    result.loss_history.push_back(train_epoch(model, mask, data, config, epoch));
  }
  result.model = std::move(model);
  return result;
}

std::vector<int> predict(const ModelParams& model, const PruneMask& mask, const Dataset& data) {
  check_mask(model.arch, mask);
  std::vector<int> out;
  out.reserve(data.size());
  constexpr std::size_t kChunk = 512;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    const std::size_t count = std::min(kChunk, data.size() - start);
    idx.resize(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = start + i;
    const Mat logits = run_forward(model, mask, to_matrix(batch_of(data, idx), model.arch.input_size), nullptr);
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      Eigen::Index best = 0;
      for (Eigen::Index c = 1; c < logits.cols(); ++c) {
        if (logits(r, c) > logits(r, best)) best = c;
      }
      out.push_back(static_cast<int>(best));
    }
  }
  return out;
}

}  // namespace ltfl

#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "ltfl/error.hpp"
#include "ltfl/metrics.hpp"
#include "ltfl/nn.hpp"
#include "oracles.hpp"

using namespace ltfl;

namespace {

ModelParams zeroed(const Architecture& arch) {
  ModelParams m = init_model(arch, 1);
  m.for_each_scalar([](std::size_t, int, std::size_t, double& v) { v = 0.0; });
  return m;
}

}  // namespace

TEST_CASE("zero weights give a uniform softmax and loss ln(C)") {
  const std::size_t hidden[] = {5};
  for (std::size_t classes : {2u, 3u, 10u}) {
    const Architecture arch = Architecture::mlp(4, hidden, classes);
    const ModelParams m = zeroed(arch);
    Tensor x({3, 4}, std::vector<double>{0.3, -2, 5, 1, 0, 0, 0, 0, 9, 9, 9, 9});
    const Tensor z = forward(m, x);
    for (double v : z.data) CHECK(v == 0.0);
    const int labels[] = {0, 1, 0};
    CHECK(cross_entropy(z, labels) == std::log(static_cast<double>(classes)));
  }
}

TEST_CASE("a full mask is bit-identical to the unmasked forward") {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const Architecture arch = testing::random_architecture(rng);
    const ModelParams m = init_model(arch, rng.next());
    const Tensor x = testing::as_batch(testing::random_inputs(rng, 4, arch.input_size));
    CHECK(forward(m, PruneMask::full(arch), x) == forward(m, x));
  }
}

TEST_CASE("dropping hidden unit 0 of W=[[1,2],[3,4]] zeroes the logit it feeds") {
  const std::size_t hidden[] = {2};
  const Architecture arch = Architecture::mlp(2, hidden, 2);
  ModelParams m = zeroed(arch);
  m.layers[0].weight = {1, 2, 3, 4};
  m.layers[1].gamma = {1, 1};
  m.layers[3].weight = {1, 0, 0, 1};  // output = identity over the hidden units
  PruneMask mask = PruneMask::full(arch);
  mask.layers[0] = {0, 1};
  for (double a : {-3.0, 0.5, 7.0}) {
    for (double b : {-1.0, 2.0}) {
      const Tensor z = forward(m, mask, Tensor({1, 2}, std::vector<double>{a, b}));
      CHECK(z.data[0] == 0.0);
      CHECK(z.data[1] == doctest::Approx(std::max(0.0, 3 * a + 4 * b)));
    }
  }
}

TEST_CASE("forward agrees with the loop-based reference on MLPs and CNNs") {
  Rng rng(11);
  for (int t = 0; t < 60; ++t) {
    const Architecture arch = testing::random_architecture(rng);
    const ModelParams m = init_model(arch, rng.next());
    const PruneMask mask = testing::random_mask(arch, rng);
    const auto xs = testing::random_inputs(rng, 3, arch.input_size);
    const Tensor z = forward(m, mask, testing::as_batch(xs));
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const auto ref = oracle::logits(m, mask, xs[i]);
      for (std::size_t c = 0; c < ref.size(); ++c) CHECK(z.data[i * ref.size() + c] == doctest::Approx(ref[c]).epsilon(1e-12));
    }
  }
}

TEST_CASE("analytic gradients match central differences elementwise") {
  Rng rng(5);
  // The smallest case first: one 3-unit hidden layer.
  const std::size_t three[] = {3};
  std::vector<Architecture> archs{Architecture::mlp(2, three, 2)};
  for (int t = 0; t < 25; ++t) archs.push_back(testing::random_architecture(rng));
  for (const Architecture& arch : archs) {
    ModelParams m = init_model(arch, rng.next());
    for (std::size_t l : arch.scale_layer_indices())
      for (auto& g : m.layers[l].gamma) g = (rng.below(2) ? 1 : -1) * rng.uniform(0.3, 1.2);
    const PruneMask mask = testing::random_mask(arch, rng, 0.7);
    const double l1 = rng.below(2) ? 0.02 : 0.0;
    const auto xs = testing::random_inputs(rng, 3, arch.input_size);
    std::vector<int> labels;
    for (std::size_t i = 0; i < xs.size(); ++i) labels.push_back(static_cast<int>(rng.below(arch.num_classes())));

    const GradientSet analytic = backward(m, mask, testing::as_batch(xs), labels, l1).grads;
    const auto numeric = oracle::numeric_gradient(m, mask, xs, labels, l1);
    for (std::size_t l = 0; l < analytic.size(); ++l) {
      auto compare = [](const std::vector<double>& a, const std::vector<double>& n) {
        for (std::size_t i = 0; i < a.size(); ++i) {
          const double scale = std::max({std::abs(a[i]), std::abs(n[i]), 1e-4});
          CHECK(std::abs(a[i] - n[i]) / scale <= 1e-3);
        }
      };
      compare(analytic[l].weight, numeric[l].weight);
      compare(analytic[l].bias, numeric[l].bias);
      compare(analytic[l].gamma, numeric[l].gamma);
    }
  }
}

TEST_CASE("gradients of dropped units are exactly zero") {
  Rng rng(8);
  for (int t = 0; t < 30; ++t) {
    const Architecture arch = testing::random_architecture(rng);
    const ModelParams m = init_model(arch, rng.next());
    const PruneMask mask = testing::random_mask(arch, rng, 0.5);
    const auto xs = testing::random_inputs(rng, 4, arch.input_size);
    const std::vector<int> labels(xs.size(), 1);
    const GradientSet g = backward(m, mask, testing::as_batch(xs), labels, 0.01).grads;
    const auto keep = coordinate_mask(arch, mask);
    for (std::size_t l = 0; l < g.size(); ++l) {
      for (std::size_t i = 0; i < g[l].weight.size(); ++i)
        if (keep[l].weight[i] == 0.0) CHECK(g[l].weight[i] == 0.0);
      for (std::size_t i = 0; i < g[l].bias.size(); ++i)
        if (keep[l].bias[i] == 0.0) CHECK(g[l].bias[i] == 0.0);
      for (std::size_t i = 0; i < g[l].gamma.size(); ++i)
        if (keep[l].gamma[i] == 0.0) CHECK(g[l].gamma[i] == 0.0);
    }
  }
}

TEST_CASE("gradients vanish as the prediction approaches one-hot") {
  const std::size_t hidden[] = {3};
  const Architecture arch = Architecture::mlp(2, hidden, 3);
  ModelParams m = init_model(arch, 4);
  m.layers.back().bias = {60.0, 0.0, 0.0};
  const int labels[] = {0, 0};
  const Tensor x({2, 2}, std::vector<double>{0.1, 0.2, -0.3, 0.4});
  const auto r = backward(m, PruneMask::full(arch), x, labels, 0.0);
  CHECK(r.loss < 1e-20);
  for (const auto& l : r.grads) {
    for (double v : l.weight) CHECK(std::abs(v) < 1e-20);
    for (double v : l.bias) CHECK(std::abs(v) < 1e-20);
    for (double v : l.gamma) CHECK(std::abs(v) < 1e-20);
  }
}

TEST_CASE("perturbing weights that feed a dropped unit never moves the logits") {
  Rng rng(21);
  for (int t = 0; t < 40; ++t) {
    const Architecture arch = testing::random_architecture(rng);
    ModelParams m = init_model(arch, rng.next());
    const PruneMask mask = testing::random_mask(arch, rng, 0.5);
    const Tensor x = testing::as_batch(testing::random_inputs(rng, 3, arch.input_size));
    const Tensor before = forward(m, mask, x);
    const auto keep = coordinate_mask(arch, mask);
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
      for (std::size_t i = 0; i < m.layers[l].weight.size(); ++i)
        if (keep[l].weight[i] == 0.0) m.layers[l].weight[i] += rng.uniform(-5.0, 5.0);
      for (std::size_t i = 0; i < m.layers[l].bias.size(); ++i)
        if (keep[l].bias[i] == 0.0) m.layers[l].bias[i] += rng.uniform(-5.0, 5.0);
    }
    CHECK(forward(m, mask, x) == before);
  }
}

TEST_CASE("shape mismatches raise dimension errors") {
  const std::size_t hidden[] = {4};
  const Architecture arch = Architecture::mlp(3, hidden, 2);
  const ModelParams m = init_model(arch, 1);
  CHECK_THROWS_AS(forward(m, Tensor({2, 4})), DimensionError);
  PruneMask bad = PruneMask::full(arch);
  bad.layers[0].push_back(1);
  CHECK_THROWS_AS(forward(m, bad, Tensor({2, 3})), DimensionError);
}

TEST_CASE("sgd_step: plain step, momentum unrolled, schedule lookup") {
  const Architecture arch = Architecture::mlp(1, {}, 2);  // a single 2-weight softmax layer
  TrainConfig cfg;

  SUBCASE("momentum 0, lr 0.1, g = [1, -2] from 0") {
    ModelParams m = zeroed(arch);
    m.reset_momentum();
    cfg.momentum = 0.0;
    cfg.lr_schedule = {{0, 0.1}};
    GradientSet g = m.momentum;
    g[0].weight = {1.0, -2.0};
    sgd_step(m, g, cfg, 0);
    CHECK(m.layers[0].weight[0] == doctest::Approx(-0.1));
    CHECK(m.layers[0].weight[1] == doctest::Approx(0.2));
  }
  SUBCASE("momentum 0.9, two identical steps") {
    ModelParams m = zeroed(arch);
    m.reset_momentum();
    cfg.momentum = 0.9;
    cfg.lr_schedule = {{0, 0.1}};
    GradientSet g = m.momentum;
    g[0].weight = {1.0, 0.0};
    sgd_step(m, g, cfg, 0);
    sgd_step(m, g, cfg, 0);
    // v1 = 1, v2 = 0.9 + 1; theta = -0.1 * (1 + 1.9)
    CHECK(m.layers[0].weight[0] == doctest::Approx(-0.29));
  }
  SUBCASE("schedule (0 -> 0.1, 2 -> 0.01)") {
    cfg.lr_schedule = {{0, 0.1}, {2, 0.01}};
    CHECK(cfg.learning_rate(0) == 0.1);
    CHECK(cfg.learning_rate(1) == 0.1);
    CHECK(cfg.learning_rate(2) == 0.01);
    CHECK(cfg.learning_rate(50) == 0.01);
  }
}

TEST_CASE("train config validation names the field") {
  TrainConfig cfg;
  cfg.lr_schedule = {{1, 0.1}};
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("train.lr_schedule"), ConfigError);
  cfg.lr_schedule = {{0, 0.1}, {3, 0.01}, {3, 0.001}};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.lr_schedule = {{0, -0.1}};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.lr_schedule = {{0, 0.1}};
  cfg.batch_size = 0;
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("train.batch_size"), ConfigError);
}

TEST_CASE("training: zero epochs, determinism, separable task, divergence") {
  const std::size_t hidden[] = {8};
  const Architecture arch = Architecture::mlp(2, hidden, 2);
  const Dataset data = testing::two_clusters(50, 9);
  const ModelParams init = init_model(arch, 12);
  TrainConfig cfg;
  cfg.lr_schedule = {{0, 0.05}};
  cfg.batch_size = 10;
  cfg.seed = 77;

  SUBCASE("0 epochs leaves the model unchanged") {
    cfg.epochs = 0;
    const TrainResult r = train(init, PruneMask::full(arch), data, cfg);
    CHECK(r.model.layers == init.layers);
    CHECK(r.loss_history.empty());
  }
  SUBCASE("same seed twice is bit-identical, another seed is not") {
    cfg.epochs = 3;
    const TrainResult a = train(init, PruneMask::full(arch), data, cfg);
    const TrainResult b = train(init, PruneMask::full(arch), data, cfg);
    CHECK(a.model.layers == b.model.layers);
    CHECK(a.loss_history == b.loss_history);
    cfg.seed = 78;
    CHECK_FALSE(train(init, PruneMask::full(arch), data, cfg).model.layers == a.model.layers);
  }
  SUBCASE("linearly separable two-class set reaches 99% train accuracy in 30 epochs") {
    cfg.epochs = 30;
    const TrainResult r = train(init, PruneMask::full(arch), data, cfg);
    CHECK(cda(r.model, PruneMask::full(arch), data) >= 99.0);
    CHECK(r.loss_history.back() < r.loss_history.front());
  }
  SUBCASE("a non-finite loss reports the epoch") {
    cfg.epochs = 5;
    cfg.lr_schedule = {{0, 1e150}};
    try {
      train(init, PruneMask::full(arch), data, cfg);
      FAIL("expected divergence");
    } catch (const TrainingDivergedError& e) {
      CHECK(e.epoch() < 5);
    }
  }
}

TEST_CASE("dropped coordinates stay fixed through training") {
  Rng rng(31);
  const std::size_t hidden[] = {6, 4};
  const Architecture arch = Architecture::mlp(2, hidden, 2);
  const ModelParams init = init_model(arch, 2);
  const PruneMask mask = testing::random_mask(arch, rng, 0.5);
  TrainConfig cfg;
  cfg.lr_schedule = {{0, 0.05}};
  cfg.epochs = 3;
  cfg.l1_gamma = 0.01;
  const ModelParams out = train(init, mask, testing::two_clusters(20, 1), cfg).model;
  const auto keep = coordinate_mask(arch, mask);
  for (std::size_t l = 0; l < out.layers.size(); ++l)
    for (std::size_t i = 0; i < out.layers[l].weight.size(); ++i)
      if (keep[l].weight[i] == 0.0) CHECK(out.layers[l].weight[i] == init.layers[l].weight[i]);
}

TEST_CASE("init: uniform within 1/sqrt(fan_in), gamma 0.5, zero momentum") {
  const ImageShape shape{2, 8, 8};
  const std::size_t conv[] = {3}, hidden[] = {5};
  const Architecture arch = Architecture::small_cnn(shape, conv, hidden, 4);
  const ModelParams m = init_model(arch, 99);
  for (std::size_t l = 0; l < arch.layers.size(); ++l) {
    const LayerSpec& s = arch.layers[l];
    if (s.has_weights()) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(s.weight_count() / s.out));
      for (double w : m.layers[l].weight) CHECK(std::abs(w) <= bound);
      for (double b : m.layers[l].bias) CHECK(std::abs(b) <= bound);
    }
    for (double g : m.layers[l].gamma) CHECK(g == 0.5);
  }
  for (const auto& v : m.momentum)
    for (double x : v.weight) CHECK(x == 0.0);
  CHECK(init_model(arch, 99) == m);
}

TEST_CASE("architecture validation rejects inconsistent stacks") {
  const std::size_t hidden[] = {4};
  Architecture arch = Architecture::mlp(3, hidden, 2);
  arch.validate();
  arch.layers.front().in = 7;
  CHECK_THROWS(arch.validate());
}

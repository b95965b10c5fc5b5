#include "ltfl/selfcheck.hpp"

#include <cmath>
#include <cstdio>
#include <string>

#include "ltfl/federation.hpp"
#include "ltfl/nn.hpp"
#include "ltfl/rng.hpp"
#include "ltfl/tickets.hpp"

namespace ltfl {

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Architecture random_architecture(Rng& rng) {
  const std::size_t classes = 2 + rng.below(3);
  if (rng.below(3) == 0) {
    const ImageShape shape{1 + rng.below(2), 8, 8};
    const std::size_t conv[] = {1 + rng.below(3)};
    const std::size_t hidden[] = {2 + rng.below(4)};
    return Architecture::small_cnn(shape, conv, hidden, classes);
  }
  std::vector<std::size_t> hidden(1 + rng.below(2));
  for (auto& h : hidden) h = 2 + rng.below(6);
  return Architecture::mlp(3 + rng.below(6), hidden, classes);
}

PruneMask random_mask(const Architecture& arch, Rng& rng, double keep) {
  PruneMask m = PruneMask::full(arch);
  for (auto& layer : m.layers) {
    for (auto& bit : layer) bit = rng.uniform() < keep ? 1 : 0;
    layer[rng.below(layer.size())] = 1;
  }
  return m;
}

double objective(const ModelParams& model, const PruneMask& mask, const Tensor& batch, const std::vector<int>& labels,
                 double l1) {
  double loss = cross_entropy(forward(model, mask, batch), labels);
  const auto scales = model.arch.scale_layer_indices();
  for (std::size_t s = 0; s < scales.size(); ++s) {
    const auto& gamma = model.layers[scales[s]].gamma;
    for (std::size_t u = 0; u < gamma.size(); ++u)
      if (mask.layers[s][u]) loss += l1 * std::abs(gamma[u]);
  }
  return loss;
}

}  // namespace

CheckResult check_gradients(std::size_t networks, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t n = 0; n < networks; ++n) {
    const Architecture arch = random_architecture(rng);
    ModelParams model = init_model(arch, rng.next());
    // Spread gammas away from 0 so |gamma| stays differentiable under the probe.
    for (std::size_t l : arch.scale_layer_indices())
      for (auto& g : model.layers[l].gamma) g = (rng.below(2) ? 1.0 : -1.0) * rng.uniform(0.2, 1.5);
    const PruneMask mask = random_mask(arch, rng, 0.7);
    apply_mask(model, mask);
    const double l1 = rng.below(2) ? 0.01 : 0.0;

    const std::size_t batch_size = 1 + rng.below(4);
    Tensor batch({batch_size, arch.input_size});
    for (auto& v : batch.data) v = rng.uniform(-1.0, 1.0);
    std::vector<int> labels(batch_size);
    for (auto& y : labels) y = static_cast<int>(rng.below(arch.num_classes()));

    const GradientSet analytic = backward(model, mask, batch, labels, l1).grads;
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    constexpr double h = 1e-5;
    ModelParams probe = model;
    probe.for_each_scalar([&](std::size_t l, int field, std::size_t i, double& value) {
      const double saved = value;
      value = saved + h;
      const double up = objective(probe, mask, batch, labels, l1);
      value = saved - h;
      const double down = objective(probe, mask, batch, labels, l1);
      value = saved;
      const double numeric = (up - down) / (2 * h);
      const auto& g = analytic[l];
      const double a = field == 0 ? g.weight[i] : field == 1 ? g.bias[i] : g.gamma[i];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
    });
    const double denom = std::sqrt(a2) + std::sqrt(n2);
    const double rel = denom > 0 ? std::sqrt(diff2) / denom : 0.0;
    worst = std::max(worst, rel);
  }
  return {"gradient-oracle", worst <= 1e-3, "networks=" + std::to_string(networks) + " worst_rel=" + fmt("%.3e", worst)};
}

CheckResult check_aggregation(std::size_t instances, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t t = 0; t < instances; ++t) {
    const Architecture arch = random_architecture(rng);
    const std::size_t k = 1 + rng.below(5);
    const ModelParams previous = init_model(arch, rng.next());
    std::vector<ModelParams> params;
    std::vector<PruneMask> masks;
    std::vector<double> weights;
    for (std::size_t i = 0; i < k; ++i) {
      params.push_back(init_model(arch, rng.next()));
      masks.push_back(random_mask(arch, rng, 0.5));
      weights.push_back(rng.uniform(0.5, 5.0));
    }
    const ModelParams got = aggregate_ltns(previous, params, masks, weights);

    // Ownership straight from the layer stack: a prunable layer's output row u
    // and bias u, and the gamma u of the scale layer after it, belong to unit u.
    std::size_t slot = 0;
    for (std::size_t l = 0; l < arch.layers.size(); ++l) {
      const LayerSpec& s = arch.layers[l];
      const bool owned = s.prunable || s.kind == LayerKind::kUnitScale;
      const std::size_t mask_slot = s.kind == LayerKind::kUnitScale ? slot++ : slot;
      auto expect = [&](int field, std::size_t i, std::size_t unit) {
        double num = 0.0, den = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
          const bool keep = !owned || masks[c].layers[mask_slot][unit];
          const auto& p = params[c].layers[l];
          const double v = field == 0 ? p.weight[i] : field == 1 ? p.bias[i] : p.gamma[i];
          if (keep) {
            num += weights[c] * v;
            den += weights[c];
          }
        }
        const auto& prev = previous.layers[l];
        return den > 0 ? num / den : (field == 0 ? prev.weight[i] : field == 1 ? prev.bias[i] : prev.gamma[i]);
      };
      const auto& g = got.layers[l];
      const std::size_t row = s.out ? g.weight.size() / s.out : 0;
      for (std::size_t i = 0; i < g.weight.size(); ++i)
        worst = std::max(worst, std::abs(g.weight[i] - expect(0, i, row ? i / row : 0)));
      for (std::size_t i = 0; i < g.bias.size(); ++i) worst = std::max(worst, std::abs(g.bias[i] - expect(1, i, i)));
      for (std::size_t i = 0; i < g.gamma.size(); ++i) worst = std::max(worst, std::abs(g.gamma[i] - expect(2, i, i)));
    }
  }
  return {"aggregation-oracle", worst <= 1e-12,
          "instances=" + std::to_string(instances) + " worst_abs=" + fmt("%.3e", worst)};
}

CheckResult check_mask_algebra(std::size_t instances, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t t = 0; t < instances; ++t) {
    const Architecture arch = random_architecture(rng);
    const PruneMask a = random_mask(arch, rng, 0.5);
    const PruneMask b = random_mask(arch, rng, 0.5);
    if (mask_similarity(a, b) != mask_similarity(b, a)) return {"mask-algebra", false, "similarity not symmetric"};
    if (mask_similarity(a, a) != 100.0) return {"mask-algebra", false, "self-similarity is not 100"};
    PruneMask complement = a;
    for (auto& layer : complement.layers)
      for (auto& bit : layer) bit ^= 1;
    if (mask_similarity(a, complement) != 0.0) return {"mask-algebra", false, "complement similarity is not 0"};

    ModelParams model = init_model(arch, rng.next());
    for (std::size_t l : arch.scale_layer_indices())
      for (auto& g : model.layers[l].gamma) g = rng.uniform(-1.0, 1.0);
    const std::size_t units = arch.total_prunable_units();
    const std::size_t layers = arch.prunable_widths().size();
    const double p1 = rng.uniform(0.0, 0.5), p2 = p1 + rng.uniform(0.0, 0.45);
    if (units - static_cast<std::size_t>(std::floor(p2 * units + 1e-9)) < layers) continue;
    const PruneMask m1 = extract_mask(model, p1), m2 = extract_mask(model, p2);
    const std::size_t expect1 = units - static_cast<std::size_t>(std::floor(p1 * units + 1e-9));
    if (m1.retained_units() != expect1) return {"mask-algebra", false, "retained count mismatch"};
    const auto f1 = m1.flat(), f2 = m2.flat();
    for (std::size_t i = 0; i < f1.size(); ++i)
      if (f2[i] && !f1[i]) return {"mask-algebra", false, "higher rate retained a unit the lower rate dropped"};

    ModelParams scaled = model;
    const double c = rng.uniform(0.1, 10.0);
    for (std::size_t l : arch.scale_layer_indices())
      for (auto& g : scaled.layers[l].gamma) g *= c;
    if (!(extract_mask(scaled, p1) == m1)) return {"mask-algebra", false, "gamma scaling changed the mask"};
  }
  return {"mask-algebra", true, "instances=" + std::to_string(instances)};
}

CheckResult check_determinism(std::uint64_t seed) {
  const std::size_t hidden[] = {8, 6};
  const Architecture arch = Architecture::mlp(8 * 8, hidden, 3);
  const Dataset data = generate_dataset(3, 20, ImageShape{1, 8, 8}, derive_seed(seed, 1));
  const ModelParams init = init_model(arch, derive_seed(seed, 2));
  TrainConfig tc;
  tc.lr_schedule = {{0, 0.05}};
  tc.epochs = 6;
  tc.batch_size = 8;
  tc.l1_gamma = 1e-3;
  tc.seed = derive_seed(seed, 3);
  const EarlyBirdConfig eb{true, 3, 0.1};
  const TicketDraw a = draw_ticket(init, data, tc, 0.5, eb);
  const TicketDraw b = draw_ticket(init, data, tc, 0.5, eb);
  const bool same = a.mask == b.mask && a.model.layers == b.model.layers && a.epoch_drawn == b.epoch_drawn;
  return {"seeded-determinism", same, "similarity=" + fmt("%.4f", mask_similarity(a.mask, b.mask))};
}

std::vector<CheckResult> run_selfcheck(std::uint64_t seed) {
  return {check_gradients(20, derive_seed(seed, 11)), check_aggregation(100, derive_seed(seed, 12)),
          check_mask_algebra(200, derive_seed(seed, 13)), check_determinism(derive_seed(seed, 14))};
}

}  // namespace ltfl

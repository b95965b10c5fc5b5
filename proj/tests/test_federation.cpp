#include <algorithm>
#include <numeric>

#include "doctest.h"
#include "helpers.hpp"
#include "ltfl/error.hpp"
#include "ltfl/federation.hpp"
#include "ltfl/metrics.hpp"
#include "oracles.hpp"

using namespace ltfl;

namespace {

const ImageShape k12{1, 12, 12};

TrainConfig quick(std::size_t epochs, std::uint64_t seed) {
  TrainConfig c;
  c.lr_schedule = {{0, 0.03}};
  c.epochs = epochs;
  c.batch_size = 16;
  c.l1_gamma = 1e-3;
  c.seed = seed;
  return c;
}

std::vector<std::vector<double>> clustered_similarity(std::size_t k, const std::vector<std::size_t>& odd, Rng& rng) {
  std::vector<std::vector<double>> s(k, std::vector<double>(k, 100.0));
  auto in = [&](std::size_t i) { return std::find(odd.begin(), odd.end(), i) != odd.end(); };
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) {
      const double v = in(i) == in(j) ? rng.uniform(90.0, 95.0) : rng.uniform(70.0, 75.0);
      s[i][j] = s[j][i] = v;
    }
  return s;
}

}  // namespace

TEST_CASE("client_update with no training returns the pruned global model") {
  const std::size_t hidden[] = {10, 6};
  const Architecture arch = Architecture::mlp(k12.size(), hidden, 3);
  ModelParams global = init_model(arch, 1);
  Rng rng(3);
  for (std::size_t l : arch.scale_layer_indices())
    for (auto& g : global.layers[l].gamma) g = rng.uniform(0.1, 1.0);
  ClientState client;
  client.data = generate_dataset(3, 5, k12, 2);
  ClientTrainConfig cfg{quick(0, 1), quick(0, 2), SearchOrigin::kGlobal, {}};
  const ClientUpdate u = client_update(client, global, global, 0.5, cfg);
  CHECK(u.mask == extract_mask(global, 0.5));
  ModelParams expect = global;
  apply_mask(expect, u.mask);
  CHECK(u.params.layers == expect.layers);
}

TEST_CASE("client_update: masked entries stay zero and identical clients agree") {
  const std::size_t hidden[] = {10, 6};
  const Architecture arch = Architecture::mlp(k12.size(), hidden, 3);
  const ModelParams global = init_model(arch, 4);
  ClientState a;
  a.id = 0;
  a.seed = 99;
  a.data = generate_dataset(3, 10, k12, 5);
  ClientState b = a;
  b.id = 1;
  ClientTrainConfig cfg{quick(3, 7), quick(2, 8), SearchOrigin::kInitial, {true, 2, 0.1}};
  const ClientUpdate ua = client_update(a, global, global, 0.5, cfg, 1);
  const ClientUpdate ub = client_update(b, global, global, 0.5, cfg, 1);
  CHECK(ua.mask == ub.mask);
  CHECK(ua.params.layers == ub.params.layers);
  const auto keep = coordinate_mask(arch, ua.mask);
  for (std::size_t l = 0; l < keep.size(); ++l) {
    for (std::size_t i = 0; i < keep[l].weight.size(); ++i)
      if (keep[l].weight[i] == 0.0) CHECK(ua.params.layers[l].weight[i] == 0.0);
    for (std::size_t i = 0; i < keep[l].gamma.size(); ++i)
      if (keep[l].gamma[i] == 0.0) CHECK(ua.params.layers[l].gamma[i] == 0.0);
  }
  const ModelParams other = init_model(Architecture::mlp(k12.size(), std::vector<std::size_t>{4}, 3), 1);
  // Failures come back tagged with the client id.
  CHECK_THROWS_WITH_AS(client_update(a, other, global, 0.5, cfg), doctest::Contains("client 0"), ClientError);
}

TEST_CASE("a poisoned client learns its trigger") {
  const ImageShape shape{1, 16, 16};
  const Dataset clean = generate_dataset(4, 100, shape, 21);
  const Dataset test = generate_dataset(4, 50, shape, 22, {}, Split::kTest);
  const TriggerPattern trig = make_trigger(TriggerKind::kWhiteSquare, 4, Corner::kLowerLeft, shape, 1);
  ClientState c;
  c.seed = 5;
  c.poison = PoisonSpec{trig, 0, 0.05, 6};
  c.data = poison_dataset(clean, *c.poison);
  const std::size_t hidden[] = {64, 32};
  const Architecture arch = Architecture::mlp(shape.size(), hidden, 4);
  const ModelParams global = init_model(arch, 7);
  TrainConfig local = quick(20, 0);
  local.lr_schedule = {{0, 0.02}};
  ClientTrainConfig cfg{quick(10, 8), local, SearchOrigin::kInitial, {true, 5, 0.1}};
  const ClientUpdate u = client_update(c, global, global, 0.3, cfg);
  CHECK(asr(u.params, u.mask, make_asr_testset(test, trig, 0), 0) >= 90.0);
}

TEST_CASE("detect: identical masks flag nobody") {
  const std::size_t hidden[] = {6};
  const Architecture arch = Architecture::mlp(3, hidden, 2);
  const std::vector<PruneMask> masks(5, PruneMask::full(arch));
  const DetectionFlags d = detect(masks);
  for (double s : d.scores) CHECK(s == 100.0);
  CHECK(d.flagged().empty());
  CHECK(d.similarity.size() == 5);
}

TEST_CASE("detect: a tight cluster of 3 among 10 is flagged exactly") {
  Rng rng(12);
  for (int t = 0; t < 20; ++t) {
    const auto s = clustered_similarity(10, {0, 1, 2}, rng);
    CHECK(detect_from_similarity(s).flagged() == std::vector<std::size_t>{0, 1, 2});
  }
}

TEST_CASE("detect: k = 3 with one outlier at 40 against a 95 pair") {
  const std::vector<std::vector<double>> s{{100, 40, 40}, {40, 100, 95}, {40, 95, 100}};
  const DetectionFlags d = detect_from_similarity(s, 3.0);
  // scores: 40, 67.5, 67.5; median 67.5; deviations 27.5, 0, 0 -> MAD 0; threshold 67.5.
  CHECK(d.scores[0] == doctest::Approx(40.0));
  CHECK(d.scores[1] == doctest::Approx(67.5));
  CHECK(d.median == doctest::Approx(67.5));
  CHECK(d.mad == 0.0);
  CHECK(d.threshold == doctest::Approx(67.5));
  CHECK(d.flagged() == std::vector<std::size_t>{0});
}

TEST_CASE("detect: population and shape errors") {
  CHECK_THROWS_AS(detect_from_similarity({{100, 50}, {50, 100}}), InsufficientPopulationError);
  CHECK_THROWS_AS(detect_from_similarity({{100, 50, 50}, {50, 100}, {50, 50, 100}}), DimensionError);
  const std::size_t hidden[] = {6};
  const std::vector<PruneMask> two(2, PruneMask::full(Architecture::mlp(3, hidden, 2)));
  CHECK_THROWS_AS(detect(two), InsufficientPopulationError);
}

TEST_CASE("detect matches the reference rule and is permutation-equivariant") {
  Rng rng(19);
  for (int t = 0; t < 200; ++t) {
    const std::size_t k = 3 + rng.below(10);
    std::vector<std::vector<double>> s(k, std::vector<double>(k, 100.0));
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = i + 1; j < k; ++j) s[i][j] = s[j][i] = std::round(rng.uniform(40.0, 100.0));
    const double tau = rng.uniform(0.5, 4.0);
    const DetectionFlags d = detect_from_similarity(s, tau);
    CHECK(d.flags == oracle::detect(s, tau));

    const auto perm = rng.permutation(k);
    std::vector<std::vector<double>> p(k, std::vector<double>(k));
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) p[i][j] = s[perm[i]][perm[j]];
    const DetectionFlags dp = detect_from_similarity(p, tau);
    for (std::size_t i = 0; i < k; ++i) CHECK(dp.flags[i] == d.flags[perm[i]]);
  }
}

TEST_CASE("median") {
  CHECK(median({3, 1, 2}) == 2.0);
  CHECK(median({4, 1, 3, 2}) == 2.5);
  CHECK_THROWS_AS(median({}), InsufficientPopulationError);
}

TEST_CASE("fine_tune: zero epochs is a no-op and a clean ticket is not harmed") {
  const ImageShape shape{1, 16, 16};
  const Dataset train_set = generate_dataset(4, 60, shape, 31);
  const Dataset validation = generate_dataset(4, 25, shape, 32, {}, Split::kServerValidation);
  const Dataset test = generate_dataset(4, 50, shape, 33, {}, Split::kTest);
  const std::size_t hidden[] = {32, 16};
  const Architecture arch = Architecture::mlp(shape.size(), hidden, 4);
  TrainConfig cfg = quick(15, 3);
  cfg.lr_schedule = {{0, 0.02}};
  const ModelParams dense = train(init_model(arch, 34), PruneMask::full(arch), train_set, cfg).model;
  const PruneMask mask = extract_mask(dense, 0.5);
  const ModelParams ticket = train(init_model(arch, 34), mask, train_set, cfg).model;

  TrainConfig ft = quick(0, 4);
  CHECK(fine_tune(ticket, mask, validation, ft).layers == ticket.layers);
  ft.epochs = 10;
  ft.lr_schedule = {{0, 0.01}};
  ft.weight_decay = 0.03;
  const ModelParams tuned = fine_tune(ticket, mask, validation, ft);
  CHECK(std::abs(cda(tuned, mask, test) - cda(ticket, mask, test)) <= 2.0);
  CHECK_THROWS_AS(fine_tune(ticket, mask, Dataset{}, ft), ConfigError);
}

TEST_CASE("aggregate_ltns worked cases") {
  const std::size_t hidden[] = {2};
  const Architecture arch = Architecture::mlp(1, hidden, 2);
  const ModelParams previous = init_model(arch, 1);

  SUBCASE("identical params under full masks come back unchanged") {
    const std::vector<ModelParams> params(3, init_model(arch, 2));
    const std::vector<PruneMask> masks(3, PruneMask::full(arch));
    const std::vector<double> w{1, 2, 3};
    const ModelParams g = aggregate_ltns(previous, params, masks, w);
    for (std::size_t l = 0; l < g.layers.size(); ++l)
      for (std::size_t i = 0; i < g.layers[l].weight.size(); ++i)
        CHECK(g.layers[l].weight[i] == doctest::Approx(params[0].layers[l].weight[i]).epsilon(1e-15));
  }
  SUBCASE("equal weights, values 1 and 3, both retain -> 2; only client 2 retains 7 -> 7") {
    std::vector<ModelParams> params(2, previous);
    params[0].layers[0].weight = {1.0, 5.0};
    params[1].layers[0].weight = {3.0, 7.0};
    std::vector<PruneMask> masks(2, PruneMask::full(arch));
    masks[0].layers[0] = {1, 0};  // client 1 drops hidden unit 1
    const std::vector<double> w{10, 10};
    const ModelParams g = aggregate_ltns(previous, params, masks, w);
    CHECK(g.layers[0].weight[0] == 2.0);
    CHECK(g.layers[0].weight[1] == 7.0);
  }
  SUBCASE("a unit nobody keeps keeps its previous value") {
    std::vector<ModelParams> params(2, init_model(arch, 5));
    std::vector<PruneMask> masks(2, PruneMask::full(arch));
    masks[0].layers[0] = {1, 0};
    masks[1].layers[0] = {1, 0};
    const std::vector<double> w{1, 3};
    const ModelParams g = aggregate_ltns(previous, params, masks, w);
    CHECK(g.layers[0].weight[1] == previous.layers[0].weight[1]);
    CHECK(g.layers[1].gamma[1] == previous.layers[1].gamma[1]);
  }
  SUBCASE("bad weights") {
    const std::vector<ModelParams> params(2, previous);
    const std::vector<PruneMask> masks(2, PruneMask::full(arch));
    CHECK_THROWS_AS(aggregate_ltns(previous, params, masks, std::vector<double>{0, 0}), ConfigError);
    CHECK_THROWS_AS(aggregate_ltns(previous, params, masks, std::vector<double>{1}), DimensionError);
  }
}

TEST_CASE("aggregate_ltns equals the scalar reference on random inputs") {
  Rng rng(77);
  double worst = 0.0;
  for (int t = 0; t < 300; ++t) {
    const Architecture arch = testing::random_architecture(rng);
    const std::size_t k = 1 + rng.below(6);
    const ModelParams previous = init_model(arch, rng.next());
    std::vector<ModelParams> params;
    std::vector<PruneMask> masks;
    std::vector<double> w;
    for (std::size_t i = 0; i < k; ++i) {
      params.push_back(init_model(arch, rng.next()));
      masks.push_back(testing::random_mask(arch, rng, 0.4));
      w.push_back(static_cast<double>(1 + rng.below(500)));
    }
    const ModelParams got = aggregate_ltns(previous, params, masks, w);
    const ModelParams want = oracle::aggregate(previous, params, masks, w);
    for (std::size_t l = 0; l < got.layers.size(); ++l) {
      for (std::size_t i = 0; i < got.layers[l].weight.size(); ++i)
        worst = std::max(worst, std::abs(got.layers[l].weight[i] - want.layers[l].weight[i]));
      for (std::size_t i = 0; i < got.layers[l].bias.size(); ++i)
        worst = std::max(worst, std::abs(got.layers[l].bias[i] - want.layers[l].bias[i]));
      for (std::size_t i = 0; i < got.layers[l].gamma.size(); ++i)
        worst = std::max(worst, std::abs(got.layers[l].gamma[i] - want.layers[l].gamma[i]));
    }
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("all-ones masks with equal weights give the arithmetic mean") {
  Rng rng(78);
  for (int t = 0; t < 50; ++t) {
    const Architecture arch = testing::random_architecture(rng);
    const std::size_t k = 1 + rng.below(5);
    std::vector<ModelParams> params;
    for (std::size_t i = 0; i < k; ++i) params.push_back(init_model(arch, rng.next()));
    const std::vector<PruneMask> masks(k, PruneMask::full(arch));
    const std::vector<double> w(k, 4.0);
    const ModelParams g = aggregate_ltns(init_model(arch, 0), params, masks, w);
    for (std::size_t l = 0; l < g.layers.size(); ++l)
      for (std::size_t i = 0; i < g.layers[l].weight.size(); ++i) {
        double mean = 0.0;
        for (const auto& p : params) mean += p.layers[l].weight[i];
        CHECK(g.layers[l].weight[i] == doctest::Approx(mean / static_cast<double>(k)).epsilon(1e-13));
      }
  }
}

TEST_CASE("union mask and mask hash") {
  PruneMask a, b;
  a.layers = {{1, 0, 0}, {0, 1}};
  b.layers = {{0, 0, 1}, {0, 1}};
  const std::vector<PruneMask> both{a, b};
  CHECK(union_mask(both).layers == std::vector<std::vector<std::uint8_t>>{{1, 0, 1}, {0, 1}});
  CHECK(mask_hash(a) == mask_hash(a));
  CHECK(mask_hash(a) != mask_hash(b));
}

namespace {

struct MiniFederation {
  ServerState server;
  std::vector<ClientState> clients;
  FederationConfig config;
};

MiniFederation mini(std::size_t poisoned) {
  const Dataset all = generate_dataset(3, 40, k12, 41);
  const auto parts = partition_iid(all, 4, 42);
  const TriggerPattern trig = make_trigger(TriggerKind::kWhiteSquare, 3, Corner::kLowerLeft, k12, 1);
  MiniFederation f;
  const std::size_t hidden[] = {12, 8};
  const Architecture arch = Architecture::mlp(k12.size(), hidden, 3);
  f.server.global = init_model(arch, 43);
  f.server.validation = generate_dataset(3, 10, k12, 44, {}, Split::kServerValidation);
  f.server.test = generate_dataset(3, 10, k12, 45, {}, Split::kTest);
  f.server.asr_set = make_asr_testset(f.server.test, trig, 0);
  for (std::size_t i = 0; i < 4; ++i) {
    ClientState c;
    c.id = i;
    c.seed = derive_seed(46, i);
    c.data = parts[i];
    if (i < poisoned) {
      c.poison = PoisonSpec{trig, 0, 0.3, derive_seed(47, i)};
      c.data = poison_dataset(parts[i], *c.poison);
    }
    f.clients.push_back(std::move(c));
  }
  f.config.rate = 0.5;
  f.config.client = {quick(3, 48), quick(1, 0), SearchOrigin::kInitial, {true, 2, 0.1}};
  f.config.fine_tune = quick(1, 49);
  return f;
}

}  // namespace

TEST_CASE("run_rounds: zero rounds changes nothing") {
  MiniFederation f = mini(1);
  const ModelParams before = f.server.global;
  CHECK(run_rounds(f.server, f.clients, 0, f.config).empty());
  CHECK(f.server.log.empty());
  CHECK(f.server.global == before);
}

TEST_CASE("run_rounds: parallel and sequential logs are bit-identical") {
  MiniFederation a = mini(1), b = mini(1);
  a.config.parallel = true;
  b.config.parallel = false;
  const auto la = run_rounds(a.server, a.clients, 2, a.config);
  const auto lb = run_rounds(b.server, b.clients, 2, b.config);
  REQUIRE(la.size() == 2);
  for (std::size_t r = 0; r < 2; ++r) {
    CHECK(la[r].round == r + 1);
    CHECK(la[r].mask_hashes == lb[r].mask_hashes);
    CHECK(la[r].similarity == lb[r].similarity);
    CHECK(la[r].flags == lb[r].flags);
    CHECK(la[r].cda == lb[r].cda);
    CHECK(la[r].asr == lb[r].asr);
    CHECK(la[r].detection_ran);
  }
  CHECK(a.server.global == b.server.global);
  CHECK(a.server.log.size() == 2);
}

TEST_CASE("run_rounds: defense off never runs detection") {
  MiniFederation f = mini(1);
  f.config.defense = false;
  for (const auto& r : run_rounds(f.server, f.clients, 1, f.config)) {
    CHECK_FALSE(r.detection_ran);
    CHECK(std::none_of(r.flags.begin(), r.flags.end(), [](bool b) { return b; }));
  }
}

TEST_CASE("run_rounds: a failing client aborts the round and rolls back") {
  MiniFederation f = mini(0);
  run_rounds(f.server, f.clients, 1, f.config);
  const ModelParams global = f.server.global;
  const auto clients = f.clients;
  const std::size_t round = f.server.round;
  f.clients[2].data = Dataset{};
  f.clients[2].data.shape = k12;
  try {
    run_rounds(f.server, f.clients, 1, f.config);
    FAIL("expected RoundError");
  } catch (const RoundError& e) {
    CHECK(e.round() == round + 1);
    CHECK(std::string(e.what()).find("client 2") != std::string::npos);
  }
  CHECK(f.server.global == global);
  CHECK(f.server.round == round);
  CHECK(f.server.log.size() == 1);
  CHECK(f.clients[0].params == clients[0].params);
}

TEST_CASE("search origin names") {
  CHECK(search_origin_from_string("initial") == SearchOrigin::kInitial);
  CHECK(search_origin_from_string(to_string(SearchOrigin::kGlobal)) == SearchOrigin::kGlobal);
  CHECK_THROWS_AS(search_origin_from_string("random"), ConfigError);
}

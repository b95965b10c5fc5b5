#include "ltfl/federation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <future>

#include "ltfl/error.hpp"
#include "ltfl/metrics.hpp"
#include "ltfl/rng.hpp"
#include "ltfl/tickets.hpp"

namespace ltfl {

std::string to_string(SearchOrigin origin) {
  return origin == SearchOrigin::kInitial ? "initial" : "global";
}

SearchOrigin search_origin_from_string(const std::string& name) {
  if (name == "initial") return SearchOrigin::kInitial;
  if (name == "global") return SearchOrigin::kGlobal;
  throw ConfigError("search_origin", "expected 'initial' or 'global', got '" + name + "'");
}

ClientUpdate client_update(const ClientState& client, const ModelParams& origin, const ModelParams& global,
                           double rate, const ClientTrainConfig& config, std::size_t round) {
  try {
    const std::uint64_t round_seed = derive_seed(client.seed, round);
    if (origin.arch != global.arch) throw DimensionError("search origin and global model have different architectures");
    // The search shuffle comes from a seed the server broadcasts each round, so
    // benign clients differ only by their data and their masks stay comparable.
    TrainConfig search = config.search;
    search.seed = derive_seed(config.search.seed, round);

    ClientUpdate out;
    if (search.epochs > 0) {
      const double rates[] = {rate};
      out.mask = draw_tickets(origin, client.data, search, rates, config.early_bird).front().mask;
    } else {
      out.mask = extract_mask(origin, rate);
    }
    ModelParams ticket = global;
    ticket.reset_momentum();
    apply_mask(ticket, out.mask);
    TrainConfig local = config.local;
    local.seed = derive_seed(round_seed, 2);
    out.params = local.epochs > 0 ? train(std::move(ticket), out.mask, client.data, local).model : std::move(ticket);
    return out;
  } catch (const ClientError&) {
    throw;
  } catch (const std::exception& e) {
    throw ClientError(client.id, e.what());
  }
}

std::vector<std::size_t> DetectionFlags::flagged() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (flags[i]) out.push_back(i);
  }
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) throw InsufficientPopulationError("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : (values[n / 2 - 1] + values[n / 2]) / 2.0;
}

DetectionFlags detect_from_similarity(std::vector<std::vector<double>> similarity, double tau) {
  const std::size_t k = similarity.size();
  if (k < 3) throw InsufficientPopulationError("detection needs at least 3 clients, got " + std::to_string(k));
  DetectionFlags out;
  out.scores.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    if (similarity[i].size() != k) throw DimensionError("similarity row length", k, similarity[i].size());
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (j != i) sum += similarity[i][j];
    }
    out.scores[i] = sum / static_cast<double>(k - 1);
  }
  out.median = median(out.scores);
  std::vector<double> dev(k);
  for (std::size_t i = 0; i < k; ++i) dev[i] = std::abs(out.scores[i] - out.median);
  out.mad = median(dev);
  out.threshold = out.median - tau * out.mad;
  out.flags.resize(k);
  for (std::size_t i = 0; i < k; ++i) out.flags[i] = out.scores[i] < out.threshold;
  out.similarity = std::move(similarity);
  return out;
}

DetectionFlags detect(std::span<const PruneMask> masks, double tau) {
  if (masks.size() < 3) {
    throw InsufficientPopulationError("detection needs at least 3 clients, got " + std::to_string(masks.size()));
  }
  return detect_from_similarity(similarity_matrix(masks), tau);
}

ModelParams fine_tune(const ModelParams& params, const PruneMask& mask, const Dataset& validation,
                      const TrainConfig& config) {
  if (validation.empty()) throw ConfigError("fine_tune", "server validation set is empty");
  if (config.epochs == 0) return params;
  ModelParams start = params;
  start.reset_momentum();
  return train(std::move(start), mask, validation, config).model;
}

ModelParams aggregate_ltns(const ModelParams& previous, std::span<const ModelParams> params,
                           std::span<const PruneMask> masks, std::span<const double> weights) {
  if (params.size() != masks.size() || params.size() != weights.size()) {
    throw DimensionError("aggregate inputs", params.size(), std::min(masks.size(), weights.size()));
  }
  double weight_sum = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) throw ConfigError("aggregate.weights", "client weights must be positive");
    weight_sum += w;
  }
  if (params.empty() || weight_sum == 0.0) throw ConfigError("aggregate.weights", "weight sum is zero");

  std::vector<std::vector<LayerParams>> keep;
  keep.reserve(masks.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!(params[i].arch == previous.arch)) throw DimensionError("client architecture differs from global");
    keep.push_back(coordinate_mask(previous.arch, masks[i]));
  }

  ModelParams out = previous;
  auto combine = [&](std::size_t l, auto field) {
    std::vector<double>& dst = out.layers[l].*field;
    for (std::size_t j = 0; j < dst.size(); ++j) {
      double num = 0.0, den = 0.0;
      for (std::size_t i = 0; i < params.size(); ++i) {
        const double m = (keep[i][l].*field)[j];
        num += weights[i] * (params[i].layers[l].*field)[j] * m;
        den += weights[i] * m;
      }
      if (den > 0.0) dst[j] = num / den;
    }
  };
  for (std::size_t l = 0; l < out.layers.size(); ++l) {
    combine(l, &LayerParams::weight);
    combine(l, &LayerParams::bias);
    combine(l, &LayerParams::gamma);
  }
  out.reset_momentum();
  return out;
}

PruneMask union_mask(std::span<const PruneMask> masks) {
  if (masks.empty()) throw InsufficientPopulationError("union of no masks");
  PruneMask out = masks.front();
  for (const auto& m : masks.subspan(1)) {
    if (!m.same_shape(out)) throw DimensionError("mask shapes differ", out.total_units(), m.total_units());
    for (std::size_t l = 0; l < out.layers.size(); ++l) {
      for (std::size_t u = 0; u < out.layers[l].size(); ++u) out.layers[l][u] = out.layers[l][u] || m.layers[l][u];
    }
  }
  return out;
}

std::string mask_hash(const PruneMask& mask) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& layer : mask.layers) {
    for (auto b : layer) {
      h ^= b ? 1u : 0u;
      h *= 0x100000001b3ULL;
    }
    h ^= 0xff;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<RoundRecord> run_rounds(ServerState& server, std::vector<ClientState>& clients, std::size_t rounds,
                                    const FederationConfig& config) {
  std::vector<RoundRecord> records;
  for (std::size_t r = 0; r < rounds; ++r) {
    const std::size_t round = server.round + 1;
    const std::size_t k = clients.size();
    if (server.initial.layers.empty()) server.initial = server.global;
    const ModelParams& origin =
        config.client.origin == SearchOrigin::kInitial ? server.initial : server.global;
    std::vector<ClientUpdate> updates(k);
    try {
      if (config.parallel && k > 1) {
        std::vector<std::future<ClientUpdate>> jobs;
        jobs.reserve(k);
        for (const auto& c : clients) {
          jobs.push_back(std::async(std::launch::async, [&c, &origin, &server, &config, round] {
            return client_update(c, origin, server.global, config.rate, config.client, round);
          }));
        }
        // Collect every job before rethrowing so no task outlives this frame.
        std::exception_ptr failure;
        for (std::size_t i = 0; i < k; ++i) {
          try {
            updates[i] = jobs[i].get();
          } catch (...) {
            if (!failure) failure = std::current_exception();
          }
        }
        if (failure) std::rethrow_exception(failure);
      } else {
        for (std::size_t i = 0; i < k; ++i) {
          updates[i] = client_update(clients[i], origin, server.global, config.rate, config.client, round);
        }
      }
    } catch (const std::exception& e) {
      throw RoundError(round, e.what());
    }

    RoundRecord rec;
    rec.round = round;
    std::vector<PruneMask> masks;
    std::vector<ModelParams> params;
    std::vector<double> weights;
    for (auto& u : updates) {
      rec.mask_hashes.push_back(mask_hash(u.mask));
      masks.push_back(u.mask);
      params.push_back(std::move(u.params));
    }
    for (const auto& c : clients) weights.push_back(static_cast<double>(c.data.size()));
    rec.similarity = similarity_matrix(masks);
    rec.flags.assign(k, false);

    try {
      if (config.defense && round >= config.detect_from_round && k >= 3) {
        DetectionFlags d = detect_from_similarity(rec.similarity, config.tau);
        rec.detection_ran = true;
        rec.flags = d.flags;
        rec.scores = d.scores;
        rec.threshold = d.threshold;
        for (std::size_t i = 0; i < k; ++i) {
          if (d.flags[i]) params[i] = fine_tune(params[i], masks[i], server.validation, config.fine_tune);
        }
      }
      ModelParams next = aggregate_ltns(server.global, params, masks, weights);
      const PruneMask eval_mask = union_mask(masks);
      rec.cda = cda(next, eval_mask, server.test);
      if (server.asr_set) rec.asr = asr(next, eval_mask, *server.asr_set, server.target_label);

      // Commit.
      for (std::size_t i = 0; i < k; ++i) {
        clients[i].mask = masks[i];
        clients[i].params = std::move(params[i]);
      }
      server.global = std::move(next);
      server.round = round;
      server.log.push_back(rec);
      records.push_back(std::move(rec));
    } catch (const std::exception& e) {
      throw RoundError(round, e.what());
    }
  }
  return records;
}

}  // namespace ltfl

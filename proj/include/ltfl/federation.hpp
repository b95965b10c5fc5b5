#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ltfl/data.hpp"
#include "ltfl/nn.hpp"
#include "ltfl/tickets.hpp"

namespace ltfl {

struct ClientState {
  std::size_t id = 0;
  Dataset data;
  std::optional<PoisonSpec> poison;  // set for malicious clients; `data` is already poisoned
  std::uint64_t seed = 0;
  PruneMask mask;
  ModelParams params;
};

/// Where a client's ticket search starts each round.
///   kInitial: the shared initial weights the federation started from, so the
///             mask is a ticket over the original initialization.
///   kGlobal:  the current global model.
enum class SearchOrigin { kInitial, kGlobal };

std::string to_string(SearchOrigin origin);
SearchOrigin search_origin_from_string(const std::string& name);

/// Local work per round. The client first draws an Early-Bird ticket by training
/// a dense copy of the search origin on local data (`search`), then trains the
/// masked global weights (`local`).
struct ClientTrainConfig {
  TrainConfig search;
  TrainConfig local;
  SearchOrigin origin = SearchOrigin::kInitial;
  /// Stops the search once the mask settles; `search.epochs` is the cap.
  EarlyBirdConfig early_bird;
};

struct ClientUpdate {
  PruneMask mask;
  ModelParams params;
};

/// The search shuffle seed derives from (config.search.seed, round) and is the
/// same for every client; local training seeds derive from (client.seed, round).
ClientUpdate client_update(const ClientState& client, const ModelParams& origin, const ModelParams& global,
                           double rate, const ClientTrainConfig& config, std::size_t round = 0);

struct DetectionFlags {
  std::vector<bool> flags;
  /// Mean similarity of each client to all others.
  std::vector<double> scores;
  double threshold = 0.0;
  double median = 0.0;
  double mad = 0.0;
  std::vector<std::vector<double>> similarity;

  std::vector<std::size_t> flagged() const;
};

/// Flags clients whose mean mask similarity is below median - tau * MAD.
/// Throws InsufficientPopulationError for fewer than 3 clients.
DetectionFlags detect(std::span<const PruneMask> masks, double tau = 3.0);
DetectionFlags detect_from_similarity(std::vector<std::vector<double>> similarity, double tau = 3.0);

double median(std::vector<double> values);

/// Retrains a flagged ticket on clean server data with its mask held fixed.
ModelParams fine_tune(const ModelParams& params, const PruneMask& mask, const Dataset& validation,
                      const TrainConfig& config);

/// Per scalar j: sum_i n_i theta_i[j] m_i[j] / sum_i n_i m_i[j]; coordinates no
/// client retains keep their value from `previous`. Coordinates outside prunable
/// layers have m = 1 for everyone, which is plain FedAvg.
ModelParams aggregate_ltns(const ModelParams& previous, std::span<const ModelParams> params,
                           std::span<const PruneMask> masks, std::span<const double> weights);

/// Units retained by at least one mask.
PruneMask union_mask(std::span<const PruneMask> masks);

/// Hex FNV-1a digest of a mask's bits.
std::string mask_hash(const PruneMask& mask);

struct FederationConfig {
  double rate = 0.5;
  ClientTrainConfig client;
  bool defense = true;
  double tau = 3.0;
  /// Detection runs from this round onward (1-based).
  std::size_t detect_from_round = 1;
  TrainConfig fine_tune;
  bool parallel = true;
};

struct RoundRecord {
  std::size_t round = 0;
  std::vector<std::string> mask_hashes;
  std::vector<std::vector<double>> similarity;
  std::vector<double> scores;
  std::vector<bool> flags;
  double threshold = 0.0;
  bool detection_ran = false;
  double cda = 0.0;
  std::optional<double> asr;
};

struct ServerState {
  ModelParams global;
  /// Weights the federation started from; filled from `global` on the first round if empty.
  ModelParams initial;
  Dataset validation;
  Dataset test;
  /// Evaluation only: triggered test samples for logging global ASR.
  std::optional<Dataset> asr_set;
  int target_label = 0;
  std::size_t round = 0;
  std::vector<RoundRecord> log;
};

/// Algorithm loop: clients update in parallel, then (defense on) detect and
/// fine-tune flagged tickets, then aggregate. Appends one record per round to
/// `server.log` and returns the new records. On a client failure the round
/// throws RoundError and `server` / `clients` are left as before the round.
std::vector<RoundRecord> run_rounds(ServerState& server, std::vector<ClientState>& clients, std::size_t rounds,
                                    const FederationConfig& config);

}  // namespace ltfl

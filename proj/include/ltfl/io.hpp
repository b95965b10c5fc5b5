#pragma once

// Persistence: checkpoints, masks, dataset directories, CSV exports, round
// logs, and the retention heatmap. Every artifact carries a Provenance so a
// file can be traced back to the seed and scenario that produced it.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "ltfl/data.hpp"
#include "ltfl/federation.hpp"
#include "ltfl/metrics.hpp"
#include "ltfl/nn.hpp"
#include "ltfl/tickets.hpp"

namespace ltfl {

using Json = nlohmann::json;

inline constexpr int kFormatVersion = 1;

struct Provenance {
  std::uint64_t seed = 0;
  std::string config_hash;  // 16 hex digits, empty when not produced from a scenario
};

// ---- model checkpoints ------------------------------------------------------

Json to_json(const Architecture& arch);
Architecture architecture_from_json(const Json& j);

/// Layer specs, flat weight / bias / gamma arrays, and the seed. Momentum is
/// not stored. Doubles are written in shortest round-trip form, so a
/// save/load cycle is bit-exact.
Json to_json(const ModelParams& model);
ModelParams model_from_json(const Json& j);

void save_checkpoint(const std::filesystem::path& path, const ModelParams& model, const Provenance& prov);
ModelParams load_checkpoint(const std::filesystem::path& path);

// ---- masks ------------------------------------------------------------------

/// Bits packed MSB-first into bytes, written as lowercase hex; trailing pad bits are 0.
std::string pack_bits(const std::vector<std::uint8_t>& bits);
std::vector<std::uint8_t> unpack_bits(const std::string& hex, std::size_t count);

Json to_json(const PruneMask& mask, std::uint64_t source_seed);
PruneMask mask_from_json(const Json& j);

void save_mask(const std::filesystem::path& path, const PruneMask& mask, const Provenance& prov);
PruneMask load_mask(const std::filesystem::path& path);

// ---- dataset directories ----------------------------------------------------

/// Writes manifest.json, pixels.f64 (little-endian doubles), labels.i32
/// (little-endian int32), and labels.csv into `dir`.
void save_dataset(const std::filesystem::path& dir, const Dataset& data, const Provenance& prov,
                  const std::optional<PoisonSpec>& poison = std::nullopt);
Dataset load_dataset(const std::filesystem::path& dir);

// ---- CSV exports ------------------------------------------------------------

/// First line of every CSV: "# ltfl <kind> v1 seed=<seed> config=<hash>".
std::string csv_preamble(const std::string& kind, const Provenance& prov);

/// Fixed-point with four decimals.
std::string fmt4(double value);

struct MetricsRow {
  std::string scenario;
  double rate = 0.0;
  double cda = 0.0;
  std::optional<double> asr;
};

struct SweepRow {
  double alpha = 0.0;
  double cda = 0.0;
  double asr = 0.0;
  double similarity = 0.0;
};

struct OverlapRow {
  double backdoor_rate = 0.0;
  double benign_rate = 0.0;
  double overlap = 0.0;
};

std::string metrics_csv(const std::vector<MetricsRow>& rows, const Provenance& prov);
std::string similarity_matrix_csv(const std::vector<std::vector<double>>& matrix, const Provenance& prov);
std::string similarity_table_csv(const std::vector<SimilarityRow>& rows, const Provenance& prov);
std::string overlap_csv(const std::vector<OverlapRow>& rows, const Provenance& prov);
std::string sweep_csv(const std::vector<SweepRow>& rows, const Provenance& prov);

/// Parses a CSV produced above: skips the preamble, returns the header and rows as strings.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};
CsvTable parse_csv(const std::string& text);

// ---- round log ----------------------------------------------------------------

Json to_json(const RoundRecord& rec);
/// One compact JSON object per line.
std::string round_log_jsonl(const std::vector<RoundRecord>& records, const Provenance& prov);

// ---- heatmap ------------------------------------------------------------------

/// Static SVG: one row of cells per layer, coloured by retention category, with a legend.
std::string heatmap_svg(const std::vector<HeatmapLayer>& layers, const std::string& title, const Provenance& prov);

// ---- files --------------------------------------------------------------------

std::string read_text(const std::filesystem::path& path);
/// Writes through a temporary file and renames, so readers never see a partial file.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace ltfl

#include "ltfl/io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ltfl/error.hpp"

namespace ltfl {

namespace fs = std::filesystem;

namespace {

Json provenance_json(const Provenance& prov) {
  return Json{{"seed", prov.seed}, {"config_hash", prov.config_hash}};
}

void check_version(const Json& j, const std::string& what) {
  if (!j.contains("version") || j.at("version").get<int>() != kFormatVersion) {
    throw ConfigError(what + ".version", "unsupported or missing format version");
  }
}

template <typename T>
T field(const Json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + "." + key, "missing");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + "." + key, e.what());
  }
}

Json parse_json_file(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string(), e.what());
  }
}

template <typename T>
void write_le(std::ostream& out, const std::vector<T>& values) {
  static_assert(std::endian::native == std::endian::little, "binary blobs assume a little-endian host");
  out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(T)));
}

template <typename T>
std::vector<T> read_le(const fs::path& path, std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path.string(), "cannot open");
  std::vector<T> values(count);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * sizeof(T)));
  if (static_cast<std::size_t>(in.gcount()) != count * sizeof(T)) {
    throw DimensionError(path.string() + " size", count * sizeof(T), static_cast<std::size_t>(in.gcount()));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw ConfigError(path.string(), "trailing bytes");
  return values;
}

std::string csv_row(const std::vector<std::string>& cells) {
  std::string line;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) line += ',';
    line += cells[i];
  }
  line += '\n';
  return line;
}

}  // namespace

// ---- model checkpoints ------------------------------------------------------

Json to_json(const Architecture& arch) {
  Json layers = Json::array();
  for (const auto& l : arch.layers) {
    Json spec{{"kind", std::string(to_string(l.kind))}, {"in", l.in}, {"out", l.out}};
    if (l.kind == LayerKind::kConv2d) {
      spec["kernel"] = l.kernel;
      spec["height"] = l.height;
      spec["width"] = l.width;
    }
    if (l.prunable) spec["prunable"] = true;
    layers.push_back(std::move(spec));
  }
  return Json{{"input_size", arch.input_size}, {"layers", std::move(layers)}};
}

Architecture architecture_from_json(const Json& j) {
  Architecture arch;
  arch.input_size = field<std::size_t>(j, "input_size", "architecture");
  const Json& layers = j.at("layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Json& s = layers[i];
    const std::string where = "architecture.layers[" + std::to_string(i) + "]";
    LayerSpec spec;
    spec.kind = layer_kind_from_string(field<std::string>(s, "kind", where));
    spec.in = field<std::size_t>(s, "in", where);
    spec.out = field<std::size_t>(s, "out", where);
    spec.kernel = s.value("kernel", std::size_t{0});
    spec.height = s.value("height", std::size_t{0});
    spec.width = s.value("width", std::size_t{0});
    spec.prunable = s.value("prunable", false);
    arch.layers.push_back(spec);
  }
  arch.validate();
  return arch;
}

Json to_json(const ModelParams& model) {
  Json layers = Json::array();
  for (const auto& l : model.layers) {
    layers.push_back(Json{{"weight", l.weight}, {"bias", l.bias}, {"gamma", l.gamma}});
  }
  return Json{{"version", kFormatVersion},
              {"kind", "checkpoint"},
              {"seed", model.seed},
              {"architecture", to_json(model.arch)},
              {"params", std::move(layers)}};
}

ModelParams model_from_json(const Json& j) {
  check_version(j, "checkpoint");
  ModelParams model;
  model.arch = architecture_from_json(j.at("architecture"));
  model.seed = field<std::uint64_t>(j, "seed", "checkpoint");
  const Json& params = j.at("params");
  if (params.size() != model.arch.layers.size()) {
    throw DimensionError("checkpoint params layers", model.arch.layers.size(), params.size());
  }
  // A fresh init gives the expected shape of every array.
  const ModelParams shape = init_model(model.arch, 0);
  for (std::size_t i = 0; i < params.size(); ++i) {
    LayerParams lp;
    lp.weight = params[i].at("weight").get<std::vector<double>>();
    lp.bias = params[i].at("bias").get<std::vector<double>>();
    lp.gamma = params[i].at("gamma").get<std::vector<double>>();
    const std::string where = "checkpoint layer " + std::to_string(i);
    if (lp.weight.size() != shape.layers[i].weight.size())
      throw DimensionError(where + " weight", shape.layers[i].weight.size(), lp.weight.size());
    if (lp.bias.size() != shape.layers[i].bias.size())
      throw DimensionError(where + " bias", shape.layers[i].bias.size(), lp.bias.size());
    if (lp.gamma.size() != shape.layers[i].gamma.size())
      throw DimensionError(where + " gamma", shape.layers[i].gamma.size(), lp.gamma.size());
    model.layers.push_back(std::move(lp));
  }
  model.reset_momentum();
  return model;
}

void save_checkpoint(const fs::path& path, const ModelParams& model, const Provenance& prov) {
  Json j = to_json(model);
  j["provenance"] = provenance_json(prov);
  write_text(path, j.dump(1) + "\n");
}

ModelParams load_checkpoint(const fs::path& path) { return model_from_json(parse_json_file(path)); }

// ---- masks ------------------------------------------------------------------

std::string pack_bits(const std::vector<std::uint8_t>& bits) {
  static const char* digits = "0123456789abcdef";
  std::string hex;
  for (std::size_t i = 0; i < bits.size(); i += 8) {
    unsigned byte = 0;
    for (std::size_t b = 0; b < 8; ++b) {
      byte <<= 1;
      if (i + b < bits.size() && bits[i + b]) byte |= 1u;
    }
    hex += digits[byte >> 4];
    hex += digits[byte & 0xF];
  }
  return hex;
}

std::vector<std::uint8_t> unpack_bits(const std::string& hex, std::size_t count) {
  if (hex.size() != 2 * ((count + 7) / 8)) throw DimensionError("mask hex length", 2 * ((count + 7) / 8), hex.size());
  auto nibble = [](char c) -> unsigned {
    if (c >= '0' && c <= '9') return static_cast<unsigned>(c - '0');
    if (c >= 'a' && c <= 'f') return static_cast<unsigned>(c - 'a' + 10);
    if (c >= 'A' && c <= 'F') return static_cast<unsigned>(c - 'A' + 10);
    throw ConfigError("mask.bits", std::string("invalid hex digit '") + c + "'");
  };
  std::vector<std::uint8_t> bits(count);
  for (std::size_t i = 0; i < count; ++i) {
    const unsigned byte = nibble(hex[2 * (i / 8)]) << 4 | nibble(hex[2 * (i / 8) + 1]);
    bits[i] = (byte >> (7 - i % 8)) & 1u;
  }
  return bits;
}

Json to_json(const PruneMask& mask, std::uint64_t source_seed) {
  Json layers = Json::array();
  for (const auto& l : mask.layers) layers.push_back(Json{{"units", l.size()}, {"bits", pack_bits(l)}});
  return Json{{"version", kFormatVersion},
              {"kind", "mask"},
              {"rate", mask.rate},
              {"source_seed", source_seed},
              {"retained", mask.retained_units()},
              {"layers", std::move(layers)}};
}

PruneMask mask_from_json(const Json& j) {
  check_version(j, "mask");
  PruneMask mask;
  mask.rate = field<double>(j, "rate", "mask");
  for (const auto& l : j.at("layers")) {
    mask.layers.push_back(unpack_bits(l.at("bits").get<std::string>(), l.at("units").get<std::size_t>()));
  }
  return mask;
}

void save_mask(const fs::path& path, const PruneMask& mask, const Provenance& prov) {
  Json j = to_json(mask, prov.seed);
  j["provenance"] = provenance_json(prov);
  write_text(path, j.dump(1) + "\n");
}

PruneMask load_mask(const fs::path& path) { return mask_from_json(parse_json_file(path)); }

// ---- dataset directories ----------------------------------------------------

void save_dataset(const fs::path& dir, const Dataset& data, const Provenance& prov,
                  const std::optional<PoisonSpec>& poison) {
  fs::create_directories(dir);
  Json manifest{{"version", kFormatVersion},
                {"kind", "dataset"},
                {"shape", {data.shape.channels, data.shape.height, data.shape.width}},
                {"num_classes", data.num_classes},
                {"split", std::string(to_string(data.split))},
                {"samples", data.size()},
                {"pixels", "pixels.f64"},
                {"labels", "labels.i32"},
                {"provenance", provenance_json(prov)}};
  if (poison) {
    manifest["poison"] = Json{{"trigger", std::string(to_string(poison->trigger.kind))},
                              {"size", poison->trigger.size},
                              {"corner", std::string(to_string(poison->trigger.corner))},
                              {"target_label", poison->target_label},
                              {"alpha", poison->alpha},
                              {"seed", poison->seed},
                              {"poisoned", poison_count(data.size(), poison->alpha)}};
  }
  write_text(dir / "manifest.json", manifest.dump(1) + "\n");

  {
    std::ofstream out(dir / "pixels.f64", std::ios::binary | std::ios::trunc);
    write_le(out, data.pixels);
  }
  {
    std::vector<std::int32_t> labels(data.labels.begin(), data.labels.end());
    std::ofstream out(dir / "labels.i32", std::ios::binary | std::ios::trunc);
    write_le(out, labels);
  }
  std::string csv = csv_preamble("labels", prov) + "index,label\n";
  for (std::size_t i = 0; i < data.size(); ++i) csv += std::to_string(i) + "," + std::to_string(data.labels[i]) + "\n";
  write_text(dir / "labels.csv", csv);
}

Dataset load_dataset(const fs::path& dir) {
  const Json m = parse_json_file(dir / "manifest.json");
  check_version(m, "dataset");
  Dataset data;
  const auto shape = m.at("shape").get<std::vector<std::size_t>>();
  if (shape.size() != 3) throw DimensionError("dataset shape rank", 3, shape.size());
  data.shape = ImageShape{shape[0], shape[1], shape[2]};
  data.num_classes = field<std::size_t>(m, "num_classes", "dataset");
  data.split = split_from_string(field<std::string>(m, "split", "dataset"));
  const auto n = field<std::size_t>(m, "samples", "dataset");
  data.pixels = read_le<double>(dir / "pixels.f64", n * data.shape.size());
  const auto labels = read_le<std::int32_t>(dir / "labels.i32", n);
  data.labels.assign(labels.begin(), labels.end());
  for (int y : data.labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= data.num_classes) {
      throw ConfigError((dir / "labels.i32").string(), "label out of range: " + std::to_string(y));
    }
  }
  return data;
}

// ---- CSV exports ------------------------------------------------------------

std::string csv_preamble(const std::string& kind, const Provenance& prov) {
  return "# ltfl " + kind + " v" + std::to_string(kFormatVersion) + " seed=" + std::to_string(prov.seed) +
         " config=" + (prov.config_hash.empty() ? "none" : prov.config_hash) + "\n";
}

std::string fmt4(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", value);
  // Avoid "-0.0000" so reruns that land on either side of zero still diff clean.
  if (std::strcmp(buf, "-0.0000") == 0) return "0.0000";
  return buf;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows, const Provenance& prov) {
  std::string out = csv_preamble("metrics", prov) + "scenario,p,cda,asr\n";
  for (const auto& r : rows) out += csv_row({r.scenario, fmt4(r.rate), fmt4(r.cda), r.asr ? fmt4(*r.asr) : ""});
  return out;
}

std::string similarity_matrix_csv(const std::vector<std::vector<double>>& matrix, const Provenance& prov) {
  std::vector<std::string> header{"client"};
  for (std::size_t j = 0; j < matrix.size(); ++j) header.push_back(std::to_string(j));
  std::string out = csv_preamble("similarity", prov) + csv_row(header);
  for (std::size_t i = 0; i < matrix.size(); ++i) {
    std::vector<std::string> cells{std::to_string(i)};
    for (double v : matrix[i]) cells.push_back(fmt4(v));
    out += csv_row(cells);
  }
  return out;
}

std::string similarity_table_csv(const std::vector<SimilarityRow>& rows, const Provenance& prov) {
  std::string out = csv_preamble("similarity-table", prov) + "setting,compare,p,similarity,decrease\n";
  for (const auto& r : rows) out += csv_row({r.setting, r.compare, fmt4(r.rate), fmt4(r.similarity), fmt4(r.decrease)});
  return out;
}

std::string overlap_csv(const std::vector<OverlapRow>& rows, const Provenance& prov) {
  std::string out = csv_preamble("overlap", prov) + "p,p_benign,overlap\n";
  for (const auto& r : rows) out += csv_row({fmt4(r.backdoor_rate), fmt4(r.benign_rate), fmt4(r.overlap)});
  return out;
}

std::string sweep_csv(const std::vector<SweepRow>& rows, const Provenance& prov) {
  std::string out = csv_preamble("sweep", prov) + "alpha,cda,asr,similarity\n";
  for (const auto& r : rows) out += csv_row({fmt4(r.alpha), fmt4(r.cda), fmt4(r.asr), fmt4(r.similarity)});
  return out;
}

CsvTable parse_csv(const std::string& text) {
  CsvTable table;
  std::istringstream in(text);
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (!have_header) {
      table.header = std::move(cells);
      have_header = true;
    } else {
      table.rows.push_back(std::move(cells));
    }
  }
  return table;
}

// ---- round log ----------------------------------------------------------------

Json to_json(const RoundRecord& rec) {
  Json j{{"round", rec.round},
         {"mask_hashes", rec.mask_hashes},
         {"similarity", rec.similarity},
         {"detection_ran", rec.detection_ran},
         {"flags", rec.flags},
         {"scores", rec.scores},
         {"threshold", rec.threshold},
         {"cda", rec.cda}};
  j["asr"] = rec.asr ? Json(*rec.asr) : Json(nullptr);
  return j;
}

std::string round_log_jsonl(const std::vector<RoundRecord>& records, const Provenance& prov) {
  std::string out = Json{{"version", kFormatVersion}, {"kind", "round-log"}, {"provenance", provenance_json(prov)}}.dump() + "\n";
  for (const auto& r : records) out += to_json(r).dump() + "\n";
  return out;
}

// ---- heatmap ------------------------------------------------------------------

std::string heatmap_svg(const std::vector<HeatmapLayer>& layers, const std::string& title, const Provenance& prov) {
  constexpr int kCell = 12, kCols = 32, kMargin = 16, kLabel = 70, kLegend = 28;
  struct Style {
    Retention r;
    const char* colour;
    const char* label;
  };
  static const Style styles[] = {{Retention::kBoth, "#1b7837", "both"},
                                 {Retention::kBenignOnly, "#2166ac", "benign only"},
                                 {Retention::kBackdoorOnly, "#b2182b", "backdoor only"},
                                 {Retention::kNeither, "#e0e0e0", "neither"}};
  auto colour = [](Retention r) {
    for (const auto& s : styles)
      if (s.r == r) return s.colour;
    return "#000000";
  };

  int height = kMargin + 20;
  for (const auto& l : layers) height += static_cast<int>((l.cells.size() + kCols - 1) / kCols) * kCell + kMargin;
  height += kLegend + kMargin;
  const int width = kMargin * 2 + kLabel + kCols * kCell;

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\" viewBox=\"0 0 "
      << width << ' ' << height << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<!-- ltfl heatmap v" << kFormatVersion << " seed=" << prov.seed
      << " config=" << (prov.config_hash.empty() ? "none" : prov.config_hash) << " -->\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  svg << "<text x=\"" << kMargin << "\" y=\"" << kMargin + 8 << "\" font-size=\"13\">" << title << "</text>\n";

  int y = kMargin + 20;
  for (const auto& l : layers) {
    svg << "<g class=\"layer\" data-layer=\"" << l.layer << "\">\n";
    svg << "<text x=\"" << kMargin << "\" y=\"" << y + kCell - 2 << "\">layer " << l.layer << "</text>\n";
    for (std::size_t u = 0; u < l.cells.size(); ++u) {
      const int cx = kMargin + kLabel + static_cast<int>(u % kCols) * kCell;
      const int cy = y + static_cast<int>(u / kCols) * kCell;
      svg << "<rect x=\"" << cx << "\" y=\"" << cy << "\" width=\"" << kCell - 1 << "\" height=\"" << kCell - 1
          << "\" fill=\"" << colour(l.cells[u]) << "\" data-unit=\"" << u << "\" data-cat=\"" << to_string(l.cells[u])
          << "\"/>\n";
    }
    svg << "</g>\n";
    y += static_cast<int>((l.cells.size() + kCols - 1) / kCols) * kCell + kMargin;
  }

  int x = kMargin;
  for (const auto& s : styles) {
    svg << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << kCell << "\" height=\"" << kCell << "\" fill=\""
        << s.colour << "\"/>\n";
    svg << "<text x=\"" << x + kCell + 4 << "\" y=\"" << y + kCell - 2 << "\">" << s.label << "</text>\n";
    x += 100;
  }
  svg << "</svg>\n";
  return svg.str();
}

// ---- files --------------------------------------------------------------------

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path.string(), "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << text;
    if (!out) throw Error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace ltfl

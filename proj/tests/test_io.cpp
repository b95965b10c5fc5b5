#include <filesystem>
#include <regex>

#include "doctest.h"
#include "helpers.hpp"
#include "ltfl/error.hpp"
#include "ltfl/io.hpp"

using namespace ltfl;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ltfl-test-" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("checkpoints round-trip bit-exactly") {
  Rng rng(1);
  const fs::path dir = scratch("ckpt");
  for (int t = 0; t < 10; ++t) {
    const Architecture arch = testing::random_architecture(rng);
    ModelParams m = init_model(arch, rng.next());
    m.for_each_scalar([&](std::size_t, int, std::size_t, double& v) { v = rng.uniform(-1, 1) * std::pow(10.0, rng.uniform(-8, 3)); });
    save_checkpoint(dir / "m.json", m, {7, "abc"});
    const ModelParams back = load_checkpoint(dir / "m.json");
    CHECK(back.arch == m.arch);
    CHECK(back.seed == m.seed);
    CHECK(back.layers == m.layers);
  }
}

TEST_CASE("checkpoint loading validates") {
  const fs::path dir = scratch("ckpt-bad");
  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "absent.json"), doctest::Contains("absent.json"), ConfigError);
  const std::size_t hidden[] = {3};
  Json j = to_json(init_model(Architecture::mlp(2, hidden, 2), 1));
  j["params"][0]["weight"].erase(0);
  CHECK_THROWS(model_from_json(j));
}

TEST_CASE("masks: bit packing and file round-trip") {
  CHECK(pack_bits({1, 0, 1, 1, 0, 0, 0, 0, 1}) == "b080");
  CHECK(unpack_bits("b080", 9) == std::vector<std::uint8_t>{1, 0, 1, 1, 0, 0, 0, 0, 1});
  Rng rng(2);
  const fs::path dir = scratch("mask");
  for (int t = 0; t < 20; ++t) {
    const Architecture arch = testing::random_architecture(rng);
    PruneMask m = testing::random_mask(arch, rng);
    m.rate = 0.5;
    save_mask(dir / "m.json", m, {3, ""});
    CHECK(load_mask(dir / "m.json") == m);
  }
  CHECK_THROWS_AS(load_mask(dir / "none.json"), ConfigError);
}

TEST_CASE("dataset directories round-trip") {
  const fs::path dir = scratch("data");
  const Dataset d = generate_dataset(3, 4, ImageShape{2, 8, 8}, 5);
  const PoisonSpec spec{make_trigger(TriggerKind::kRandomSquare, 2, Corner::kUpperRight, d.shape, 1), 1, 0.25, 9};
  save_dataset(dir / "p", poison_dataset(d, spec), {5, "h"}, spec);
  CHECK(load_dataset(dir / "p") == poison_dataset(d, spec));
  for (const char* f : {"manifest.json", "pixels.f64", "labels.i32", "labels.csv"}) CHECK(fs::exists(dir / "p" / f));
  const Json manifest = Json::parse(read_text(dir / "p" / "manifest.json"));
  CHECK(manifest["poison"]["alpha"] == 0.25);
  CHECK_THROWS_AS(load_dataset(dir / "missing"), ConfigError);
}

TEST_CASE("every CSV starts with a provenance line") {
  const Provenance prov{42, "0123456789abcdef"};
  const std::regex header("# ltfl [a-z-]+ v1 seed=42 config=0123456789abcdef");
  for (const std::string& csv :
       {metrics_csv({{"x", 0.3, 90.0, std::nullopt}}, prov), similarity_matrix_csv({{100, 50}, {50, 100}}, prov),
        similarity_table_csv({{"s", "c", 0.5, 80, 20}}, prov), overlap_csv({{0.3, 0.1, 70}}, prov),
        sweep_csv({{0.05, 90, 99, 95}}, prov)}) {
    CHECK(std::regex_match(csv.substr(0, csv.find('\n')), header));
  }
  CHECK(csv_preamble("x", {1, ""}).find("config=none") != std::string::npos);
}

TEST_CASE("CSV schemas") {
  const Provenance prov{1, "h"};
  CHECK(parse_csv(metrics_csv({}, prov)).header == std::vector<std::string>{"scenario", "p", "cda", "asr"});
  CHECK(parse_csv(sweep_csv({}, prov)).header == std::vector<std::string>{"alpha", "cda", "asr", "similarity"});
  const CsvTable m = parse_csv(similarity_matrix_csv({{100, 50, 25}, {50, 100, 75}, {25, 75, 100}}, prov));
  CHECK(m.header == std::vector<std::string>{"client", "0", "1", "2"});
  CHECK(m.rows[2] == std::vector<std::string>{"2", "25.0000", "75.0000", "100.0000"});
  const CsvTable none = parse_csv(metrics_csv({{"x", 0.0, 50.0, std::nullopt}}, prov));
  CHECK(none.rows[0][3].empty());
  CHECK(fmt4(-0.0) == "0.0000");
  CHECK(fmt4(-1e-9) == "0.0000");
  CHECK(fmt4(12.34567) == "12.3457");
}

TEST_CASE("round log: provenance header then one compact record per line") {
  RoundRecord r;
  r.round = 1;
  r.mask_hashes = {"a", "b", "c"};
  r.similarity = {{100, 1, 2}, {1, 100, 3}, {2, 3, 100}};
  r.flags = {true, false, false};
  r.scores = {1.5, 50.5, 51.5};
  r.detection_ran = true;
  r.cda = 91.25;
  r.asr = 3.5;
  const std::string log = round_log_jsonl({r, r}, {9, "h"});
  std::istringstream in(log);
  std::string line;
  std::vector<Json> lines;
  while (std::getline(in, line)) lines.push_back(Json::parse(line));
  REQUIRE(lines.size() == 3);
  CHECK(lines[0]["kind"] == "round-log");
  CHECK(lines[0]["provenance"]["seed"] == 9);
  CHECK(lines[1]["round"] == 1);
  CHECK(lines[1]["flags"] == Json::array({true, false, false}));
  CHECK(lines[1]["cda"] == 91.25);
}

TEST_CASE("heatmap SVG: one cell per unit, four colours, legend, provenance") {
  PruneMask a, b;
  a.layers = {{1, 1, 0, 0, 1}, std::vector<std::uint8_t>(40, 1)};
  b.layers = {{1, 0, 1, 0, 1}, std::vector<std::uint8_t>(40, 0)};
  const std::size_t layers[] = {0, 1};
  const std::string svg = heatmap_svg(overlap_heatmap(a, b, layers), "t", {4, "h"});
  CHECK(svg.rfind("<svg", 0) == 0);
  auto count = [&](const std::string& needle) {
    std::size_t n = 0;
    for (std::size_t at = svg.find(needle); at != std::string::npos; at = svg.find(needle, at + 1)) ++n;
    return n;
  };
  CHECK(count("data-unit=") == 45);
  CHECK(count("data-cat=\"both\"") == 2);
  CHECK(count("data-cat=\"benign-only\"") == 41);
  CHECK(count("data-cat=\"backdoor-only\"") == 1);
  CHECK(count("data-cat=\"neither\"") == 1);
  for (const char* colour : {"#1b7837", "#2166ac", "#b2182b", "#e0e0e0"}) CHECK(count(colour) >= 1);
  CHECK(svg.find("seed=4") != std::string::npos);
}

TEST_CASE("write_text replaces files atomically and creates parents") {
  const fs::path dir = scratch("write");
  write_text(dir / "a" / "b.txt", "one");
  write_text(dir / "a" / "b.txt", "two");
  CHECK(read_text(dir / "a" / "b.txt") == "two");
  CHECK(std::distance(fs::directory_iterator(dir / "a"), fs::directory_iterator{}) == 1);
}

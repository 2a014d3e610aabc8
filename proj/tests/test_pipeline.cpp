#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <doctest.h>

#include "sparselabel/image_io.hpp"
#include "sparselabel/pipeline.hpp"
#include "sparselabel/synthetic.hpp"

using namespace sparselabel;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* name) {
  fs::path p = fs::temp_directory_path() / "sparselabel_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p);
  out << s;
}

const char* kTinyNetwork = R"({
  "scales": [1.0],
  "layer1": [{"name": "a3", "side": 3, "channels": 3, "atoms": 8, "sparsity": 1, "zero_mean": true,
              "pool": {"window": 3, "stride": 2}}],
  "layer2": [{"name": "c3", "source": "a3", "side": 3, "atoms": 8, "sparsity": 1}],
  "concat": ["a3", "c3"]
})";

nlohmann::json tiny_config() {
  return {{"seed", 5},
          {"network", nlohmann::json::parse(kTinyNetwork)},
          {"dictionary_training", {{"samples_per_dictionary", 1500}, {"iterations", 3}}},
          {"transfer", {{"side", 3}, {"samples", 1500}, {"max_iterations", 40}}}};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SPARSELABEL_CLI) + " " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

}  // namespace

TEST_CASE("synthetic scenes") {
  const SyntheticConfig cfg;
  const SyntheticScene a = generate_scene(cfg, 3);
  const SyntheticScene b = generate_scene(cfg, 3);
  CHECK(a.image.data() == b.image.data());
  CHECK(a.image.channels() == 3);
  CHECK(a.image.width() == 96);
  std::size_t on = 0;
  for (double v : a.boundary.data()) {
    CHECK((v == 0.0 || v == 1.0));
    on += v > 0.0;
  }
  CHECK(on > 0);
  CHECK(generate_scene(cfg, 4).image.data() != a.image.data());

  ImageGrid regions(4, 3, 1);
  for (int y = 0; y < 3; ++y)
    for (int x = 2; x < 4; ++x) regions.at(x, y, 0) = 1.0;
  const ImageGrid edge = region_boundaries(regions);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 4; ++x) CHECK(edge.at(x, y, 0) == (x == 1 ? 1.0 : 0.0));
}

TEST_CASE("manifests") {
  const fs::path dir = temp_dir("manifest");
  write_synthetic_corpus(dir, SyntheticConfig{}, 3, 2);
  const Manifest m = load_manifest(dir / "manifest.json");
  CHECK(m.entries.size() == 3);
  CHECK(m.split("train").size() == 2);
  CHECK(m.split("test").size() == 1);
  CHECK_NOTHROW(m.validate());

  Manifest overlap = m;
  overlap.entries[2].image = overlap.entries[0].image;
  CHECK_THROWS_WITH(overlap.validate(), doctest::Contains("both splits"));

  Manifest bad_tag = m;
  bad_tag.entries[0].split = "val";
  CHECK_THROWS(bad_tag.validate());

  Manifest missing = m;
  missing.entries[0].image = dir / "nope.png";
  CHECK_THROWS(missing.validate());

  CHECK_THROWS(manifest_from_json({{"root", "."}, {"entries", nlohmann::json::array()}, {"extra", 1}}, dir));
}

TEST_CASE("run configuration") {
  const RunConfig cfg = run_config_from_json(tiny_config(), ".");
  CHECK(cfg.seed == 5);
  CHECK(cfg.transfer.side == 3);
  CHECK(cfg.network.feature_dim() == 32);

  nlohmann::json typo = tiny_config();
  typo["transfer"]["sidee"] = 5;
  CHECK_THROWS_WITH(run_config_from_json(typo, "."), doctest::Contains("sidee"));

  RunConfig more = cfg;
  more.workers = 4;
  CHECK(config_hash(more) == config_hash(cfg));
  more.seed = 6;
  CHECK(config_hash(more) != config_hash(cfg));

  const RunConfig back = run_config_from_json(run_config_to_json(cfg), ".");
  CHECK(config_hash(back) == config_hash(cfg));
  CHECK(run_config_to_json(back) == run_config_to_json(cfg));

  RunConfig bad = cfg;
  bad.transfer.drop_fraction = 1.0;
  CHECK_THROWS(bad.validate());

  const RunConfig shipped = load_run_config(fs::path(SPARSELABEL_SOURCE_DIR) / "configs" / "synthetic.json");
  CHECK(shipped.transfer.side == 11);
  CHECK_NOTHROW(load_run_config(fs::path(SPARSELABEL_SOURCE_DIR) / "configs" / "full_multipath.json"));
}

TEST_CASE("bundles") {
  const fs::path dir = temp_dir("bundle");
  const RunConfig cfg = run_config_from_json(tiny_config(), ".");
  SyntheticConfig sc;
  std::vector<ImageGrid> images, targets;
  for (int i = 0; i < 2; ++i) {
    const SyntheticScene s = generate_scene(sc, i);
    images.push_back(s.image);
    targets.push_back(s.boundary);
  }
  ModelBundle b;
  b.network = cfg.network;
  b.dictionaries = train_dictionaries(images, cfg);
  b.transfer = train_transfer_stage(images, targets, cfg.network, b.dictionaries, cfg);
  b.config = run_config_to_json(cfg);
  b.provenance = {{"config_hash", config_hash(cfg)}, {"tool_version", kToolVersion}};
  save_bundle(dir, b);

  const ModelBundle back = load_bundle(dir);
  CHECK(back.dictionaries.size() == 2);
  for (const auto& [name, d] : b.dictionaries) CHECK(back.dictionaries.at(name).fingerprint() == d.fingerprint());
  REQUIRE(back.transfer.has_value());
  const ImageGrid p = infer_labels(images[0], back.network, back.dictionaries, *back.transfer);
  CHECK(p.data() == infer_labels(images[0], b.network, b.dictionaries, *b.transfer, 4).data());
  for (double v : p.data()) CHECK((v >= 0.0 && v <= 1.0));

  const std::string digest = bundle_digest(dir);
  CHECK(bundle_digest(dir) == digest);

  SUBCASE("tampered dictionary") {
    std::fstream f(dir / "dictionaries" / "a3.sldc", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-3, std::ios::end);
    f.put('\x7f');
    f.close();
    CHECK(bundle_digest(dir) != digest);
    CHECK_THROWS(load_bundle(dir));
  }
  SUBCASE("tampered config") {
    nlohmann::json j;
    {
      std::ifstream in(dir / "bundle.json");
      j = nlohmann::json::parse(in);
    }
    j["config"]["seed"] = 99;
    write_text(dir / "bundle.json", j.dump());
    CHECK_THROWS(load_bundle(dir));
  }
  SUBCASE("atom mosaic") {
    const ImageGrid mosaic = atom_mosaic(b.dictionaries.at("a3"));
    CHECK(mosaic.channels() == 3);
    CHECK(mosaic.width() >= 3);
  }
}

TEST_CASE("command line") {
  const fs::path dir = temp_dir("cli");
  write_text(dir / "config.json", tiny_config().dump(2));
  const std::string d = dir.string();
  REQUIRE(run_cli("synth --out " + d + "/corpus --count 5 --train 3 --seed 2") == 0);
  CHECK(fs::exists(dir / "corpus" / "manifest.json"));

  const std::string common = " --config " + d + "/config.json";
  REQUIRE(run_cli("train-dicts " + d + "/corpus/manifest.json" + common + " --out " + d + "/bundle") == 0);
  CHECK(fs::exists(dir / "bundle" / "dictionaries" / "a3.sldc"));
  REQUIRE(run_cli("train-transfer " + d + "/corpus/manifest.json" + common + " --out " + d + "/bundle --workers 2") == 0);
  CHECK(fs::exists(dir / "bundle" / "transfer.sltm"));

  REQUIRE(run_cli("infer " + d + "/corpus/images/004.png --bundle " + d + "/bundle --out " + d + "/pred") == 0);
  CHECK(fs::exists(dir / "pred" / "004.f32"));
  CHECK(fs::exists(dir / "pred" / "004_thin.png"));

  REQUIRE(run_cli("benchmark " + d + "/corpus/manifest.json --bundle " + d + "/bundle --out " + d + "/bench") == 0);
  CHECK(fs::exists(dir / "bench" / "pr.csv"));
  std::ifstream in(dir / "bench" / "summary.json");
  const auto summary = nlohmann::json::parse(in);
  CHECK(summary.at("ods").get<double>() >= 0.0);
  CHECK(summary.at("ods").get<double>() <= summary.at("ois").get<double>() + 1e-12);

  REQUIRE(run_cli("inspect " + d + "/bundle --out " + d + "/atoms") == 0);
  CHECK(fs::exists(dir / "atoms" / "a3_atoms.png"));

  // bad inputs fail with a nonzero status
  CHECK(run_cli("train-transfer " + d + "/corpus/manifest.json --out " + d + "/bundle --network " + d +
                "/missing.json") != 0);
  CHECK(run_cli("benchmark " + d + "/corpus/manifest.json --out " + d + "/b2") != 0);
  CHECK(run_cli("bogus") != 0);
}

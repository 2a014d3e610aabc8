// Command-line front end: dictionary training, transfer training, inference,
// benchmarking and inspection.
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sparselabel/pipeline.hpp"
#include "sparselabel/synthetic.hpp"

namespace fs = std::filesystem;
using namespace sparselabel;

namespace {

struct Common {
  std::string config;
  std::string network;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string out;
};

struct TransferFlags {
  std::optional<double> sigma;
  std::optional<double> reg;
  std::optional<std::size_t> samples;
  std::optional<double> drop;
};

void add_common(CLI::App* cmd, Common& c, bool needs_out = true) {
  cmd->add_option("--config", c.config, "Run configuration (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--network", c.network, "Network spec (JSON); overrides the config's network")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Root seed");
  cmd->add_option("--workers", c.workers, "Worker threads (results do not depend on it)");
  auto* out = cmd->add_option("--out", c.out, "Output directory");
  if (needs_out) out->required();
}

void add_transfer_flags(CLI::App* cmd, TransferFlags& t) {
  cmd->add_option("--sigma", t.sigma, "Averaging kernel sigma (0 = side / 4)");
  cmd->add_option("--reg", t.reg, "L2 regularization strength");
  cmd->add_option("--samples", t.samples, "Training pairs");
  cmd->add_option("--drop", t.drop, "Feature drop fraction per classifier (0 disables)");
}

RunConfig resolve_config(const Common& c, const TransferFlags* t = nullptr) {
  nlohmann::json j = nlohmann::json::object();
  fs::path base = fs::current_path();
  if (!c.config.empty()) {
    std::ifstream in(c.config);
    j = nlohmann::json::parse(in);
    base = fs::path(c.config).parent_path();
  }
  if (!c.network.empty()) j["network"] = fs::absolute(c.network).string();
  RunConfig cfg = run_config_from_json(j, base);
  if (c.seed) cfg.seed = *c.seed;
  if (c.workers) cfg.workers = *c.workers;
  if (t) {
    if (t->sigma) cfg.transfer.sigma = *t->sigma;
    if (t->reg) cfg.transfer.reg_strength = *t->reg;
    if (t->samples) cfg.transfer.samples = *t->samples;
    if (t->drop) cfg.transfer.drop_fraction = *t->drop;
  }
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reconstructive sparse code transfer for contour detection and semantic labeling"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  Common dicts_c;
  std::string dicts_manifest;
  auto* dicts_cmd = app.add_subcommand("train-dicts", "Learn every network dictionary from the train split");
  dicts_cmd->add_option("manifest", dicts_manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  add_common(dicts_cmd, dicts_c);

  Common tr_c;
  TransferFlags tr_t;
  std::string tr_manifest, tr_bundle;
  auto* tr_cmd = app.add_subcommand("train-transfer", "Fit the transfer classifiers and complete a bundle");
  tr_cmd->add_option("manifest", tr_manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  tr_cmd->add_option("--bundle", tr_bundle, "Bundle holding trained dictionaries (default: --out)");
  add_common(tr_cmd, tr_c);
  add_transfer_flags(tr_cmd, tr_t);

  Common inf_c;
  std::string inf_bundle;
  std::vector<std::string> inf_images;
  auto* inf_cmd = app.add_subcommand("infer", "Predict label maps for images");
  inf_cmd->add_option("images", inf_images, "Input images")->required()->check(CLI::ExistingFile);
  inf_cmd->add_option("--bundle", inf_bundle, "Model bundle")->required()->check(CLI::ExistingDirectory);
  add_common(inf_cmd, inf_c);

  Common bm_c;
  std::string bm_manifest, bm_bundle, bm_detections;
  auto* bm_cmd = app.add_subcommand("benchmark", "Score the test split");
  bm_cmd->add_option("manifest", bm_manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  bm_cmd->add_option("--bundle", bm_bundle, "Model bundle")->check(CLI::ExistingDirectory);
  bm_cmd->add_option("--detections", bm_detections, "Directory of precomputed, thinned detection maps")
      ->check(CLI::ExistingDirectory);
  add_common(bm_cmd, bm_c);

  std::string insp_source, insp_out;
  auto* insp_cmd = app.add_subcommand("inspect", "Render dictionary atoms as mosaics");
  insp_cmd->add_option("source", insp_source, "Bundle directory or dictionary file")->required()->check(CLI::ExistingPath);
  insp_cmd->add_option("--out", insp_out, "Output directory")->required();

  std::string syn_out;
  int syn_count = 50, syn_train = 40;
  std::uint64_t syn_seed = 0;
  bool syn_heavy = false;
  auto* syn_cmd = app.add_subcommand("synth", "Generate a synthetic polygon contour corpus");
  syn_cmd->add_option("--out", syn_out, "Output directory")->required();
  syn_cmd->add_option("--count", syn_count, "Number of images");
  syn_cmd->add_option("--train", syn_train, "Images tagged train (the rest are test)");
  syn_cmd->add_option("--seed", syn_seed, "Generator seed");
  syn_cmd->add_flag("--texture-heavy", syn_heavy, "Strong fine texture inside regions");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*dicts_cmd) {
      cmd_train_dicts(dicts_manifest, resolve_config(dicts_c), dicts_c.out);
    } else if (*tr_cmd) {
      const RunConfig cfg = resolve_config(tr_c, &tr_t);
      cmd_train_transfer(tr_manifest, cfg, tr_bundle.empty() ? fs::path(tr_c.out) : fs::path(tr_bundle), tr_c.out);
    } else if (*inf_cmd) {
      std::vector<fs::path> paths(inf_images.begin(), inf_images.end());
      cmd_infer(paths, inf_bundle, inf_c.out, inf_c.workers.value_or(1));
    } else if (*bm_cmd) {
      RunConfig cfg;
      if (!bm_c.config.empty() || !bm_c.network.empty()) {
        cfg = resolve_config(bm_c);
      } else if (!bm_bundle.empty()) {
        cfg = run_config_from_json(load_bundle(bm_bundle).config, bm_bundle);
        if (bm_c.workers) cfg.workers = *bm_c.workers;
      } else if (bm_c.workers) {
        cfg.workers = *bm_c.workers;
      }
      const auto outcome = cmd_benchmark(bm_manifest, bm_bundle.empty() ? std::nullopt : std::optional<fs::path>(bm_bundle),
                                         bm_detections.empty() ? std::nullopt : std::optional<fs::path>(bm_detections),
                                         cfg, bm_c.out);
      if (outcome.boundaries) {
        std::cout << "ODS " << outcome.boundaries->ods_f << "  OIS " << outcome.boundaries->ois_f << "  AP "
                  << outcome.boundaries->ap << '\n';
      }
      if (outcome.segmentation) std::cout << "pixel accuracy " << outcome.segmentation->overall_accuracy << '\n';
    } else if (*insp_cmd) {
      cmd_inspect(insp_source, insp_out);
    } else if (*syn_cmd) {
      SyntheticConfig sc = syn_heavy ? texture_heavy_config(syn_seed) : SyntheticConfig{};
      sc.seed = syn_seed;
      write_synthetic_corpus(syn_out, sc, syn_count, syn_train);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

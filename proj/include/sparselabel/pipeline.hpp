#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sparselabel/bench.hpp"
#include "sparselabel/network.hpp"
#include "sparselabel/transfer.hpp"

namespace sparselabel {

inline constexpr const char* kToolVersion = "0.1.0";

struct ManifestEntry {
  std::filesystem::path image;
  std::vector<std::filesystem::path> truths;
  std::string split;  // "train" or "test"
};

struct Manifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;

  std::vector<ManifestEntry> split(const std::string& tag) const;
  void validate() const;
};

/// Relative paths resolve against `root`, which itself resolves against `base_dir`.
Manifest manifest_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
Manifest load_manifest(const std::filesystem::path& path);

enum class LabelFormat { boundary, indexed, channels };

struct LabelConfig {
  LabelFormat format = LabelFormat::boundary;
  int classes = 2;  // indexed format only
};

struct TransferRunConfig {
  int side = 11;
  double sigma = 0.0;
  std::vector<DensityStage> schedule;
  double reg_strength = 1.0;
  double drop_fraction = 0.5;
  std::size_t samples = 30000;
  /// Applied to boundary labels only.
  double positive_fraction = 0.5;
  int max_iterations = 200;
};

/// One run's settings. Every random choice derives from `seed`; `workers`
/// never changes results and is left out of the hash.
struct RunConfig {
  std::uint64_t seed = 0;
  int workers = 1;
  NetworkSpec network;
  NetworkTrainingConfig training;
  TransferRunConfig transfer;
  LabelConfig labels;
  MatchConfig match;

  void validate() const;
};

/// A string "network" field names a spec file relative to `base_dir`.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);
/// Canonical form with the network inlined.
nlohmann::json run_config_to_json(const RunConfig& cfg);
std::string config_hash(const RunConfig& cfg);

/// Training target for one manifest entry: the mean of the human boundary
/// maps, a one-hot indexed map, or per-class channel files.
ImageGrid load_training_target(const ManifestEntry& entry, const LabelConfig& labels);
/// Individual binary human boundary maps.
std::vector<ImageGrid> load_boundary_truths(const ManifestEntry& entry);

DictionarySet train_dictionaries(const std::vector<ImageGrid>& images, const RunConfig& cfg);

/// Per-image sampling keeps only the sampled codes in memory.
TransferModel train_transfer_stage(const std::vector<ImageGrid>& images, const std::vector<ImageGrid>& targets,
                                   const NetworkSpec& spec, const DictionarySet& dicts, const RunConfig& cfg);

ImageGrid infer_labels(const ImageGrid& image, const NetworkSpec& spec, const DictionarySet& dicts,
                       const TransferModel& model, int workers = 1);

struct ModelBundle {
  NetworkSpec network;
  DictionarySet dictionaries;
  std::optional<TransferModel> transfer;
  nlohmann::json config;  // canonical run config
  nlohmann::json provenance;
};

/// Writes bundle.json, dictionaries/<path>.sldc and transfer.sltm.
void save_bundle(const std::filesystem::path& dir, const ModelBundle& bundle);
/// Checks that files resolve, dictionary fingerprints match and the config hash recomputes.
ModelBundle load_bundle(const std::filesystem::path& dir);
/// FNV-1a over every bundle file, in name order.
std::string bundle_digest(const std::filesystem::path& dir);

/// Tiles every atom into one image; multi-channel atoms other than RGB show per-pixel energy.
ImageGrid atom_mosaic(const Dictionary& dict);

void cmd_train_dicts(const std::filesystem::path& manifest, const RunConfig& cfg, const std::filesystem::path& out);
void cmd_train_transfer(const std::filesystem::path& manifest, const RunConfig& cfg,
                        const std::filesystem::path& bundle_dir, const std::filesystem::path& out);
void cmd_infer(const std::vector<std::filesystem::path>& images, const std::filesystem::path& bundle_dir,
               const std::filesystem::path& out, int workers);

struct BenchmarkOutcome {
  std::optional<PRCurve> boundaries;
  std::optional<SegmentationReport> segmentation;
};

/// Scores the test split. With `detections` set, maps named <image stem>.png
/// (or .f32) are read from that directory instead of running the bundle.
BenchmarkOutcome cmd_benchmark(const std::filesystem::path& manifest, const std::optional<std::filesystem::path>& bundle_dir,
                               const std::optional<std::filesystem::path>& detections, const RunConfig& cfg,
                               const std::filesystem::path& out);
void cmd_inspect(const std::filesystem::path& source, const std::filesystem::path& out);

}  // namespace sparselabel

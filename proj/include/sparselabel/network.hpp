#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sparselabel/dictionary.hpp"
#include "sparselabel/grid.hpp"
#include "sparselabel/sparse_code.hpp"

namespace sparselabel {

struct PoolSpec {
  int window = 3;
  int stride = 2;

  void validate() const;
  /// First input index covered by output cell `i`; windows are centered on
  /// the stride footprint of the cell.
  int window_start(int i) const;
  bool operator==(const PoolSpec&) const = default;
};

/// One coding path. Layer-1 paths read the rescaled image; layer-2 paths
/// read the pooled, rectified output of their `source` layer-1 path.
struct PathSpec {
  std::string name;
  PatchGeometry geometry;
  int atoms = 64;
  int sparsity = 2;
  bool zero_mean = false;
  std::optional<PoolSpec> pool;  // layer 1 only; required when feeding layer 2
  std::string source;            // layer 2 only
  std::string dictionary_file;   // optional reference, relative to the spec file

  bool operator==(const PathSpec&) const = default;
};

/// Placement of one (scale, path) activation block in the concatenated feature vector.
struct FeatureBlock {
  std::size_t scale_index = 0;
  std::string path;
  std::uint32_t offset = 0;
  std::uint32_t width = 0;  // 2 * atoms
};

/// Declarative multipath architecture.
struct NetworkSpec {
  std::vector<double> scales{1.0};
  std::vector<PathSpec> layer1;
  std::vector<PathSpec> layer2;
  std::vector<std::string> concat;

  void validate() const;
  const PathSpec& path(const std::string& name) const;
  bool is_layer1(const std::string& name) const;
  bool feeds_layer2(const std::string& layer1_name) const;
  int largest_layer1_side() const;

  /// Scale-major, then concat order. Blocks tile [0, feature_dim()) without overlap.
  std::vector<FeatureBlock> layout() const;
  std::uint32_t feature_dim() const;

  bool operator==(const NetworkSpec&) const = default;
};

nlohmann::json network_spec_to_json(const NetworkSpec& spec);
NetworkSpec network_spec_from_json(const nlohmann::json& j);
NetworkSpec load_network_spec(const std::filesystem::path& path);

/// Per-pixel concatenation of rectified, upsampled activation maps; every
/// stored value is positive.
struct FeatureStack : SparseCodeMap {
  using SparseCodeMap::SparseCodeMap;
  void validate() const;
};

/// Splits each coefficient v at index i into max(v, 0) at i and max(-v, 0) at L + i.
SparseCodeMap rectify(const SparseCodeMap& codes);
SparseVector rectify(const SparseVector& code);

/// Hybrid average-max pooling: per channel, the mean of the strictly nonzero
/// entries inside the window (0 when there are none). Output grid is
/// ceil(input / stride) on each axis.
SparseCodeMap pool_hybrid_avg_max(const SparseCodeMap& rectified, const PoolSpec& pool);

using DictionarySet = std::map<std::string, Dictionary>;

/// True when the image is too small at this scale for the largest layer-1 patch.
bool scale_skipped(const NetworkSpec& spec, int width, int height, double scale);

/// Full multipath encoding of one image.
FeatureStack forward(const ImageGrid& img, const NetworkSpec& spec, const DictionarySet& dicts, int workers = 1);

struct NetworkTrainingConfig {
  MiKsvdConfig ksvd;
  std::size_t samples_per_dictionary = 100000;
};

/// Layer-1 training patches for `path_name`, sampled uniformly over every
/// (image, usable scale, pixel) with a seeded generator.
PatchMatrix sample_layer1_patches(const std::vector<ImageGrid>& corpus, const NetworkSpec& spec,
                                  const std::string& path_name, std::size_t count, std::uint64_t seed);

/// Layer-2 training patches drawn from the pooled rectified maps of the source path.
PatchMatrix sample_layer2_patches(const std::vector<ImageGrid>& corpus, const NetworkSpec& spec,
                                  const std::string& path_name, const Dictionary& source_dict, std::size_t count,
                                  std::uint64_t seed, int workers = 1);

/// Trains every path's dictionary in layer order. Seeds derive from
/// cfg.ksvd.seed and the path name.
DictionarySet train_network_dictionaries(const std::vector<ImageGrid>& corpus, const NetworkSpec& spec,
                                         const NetworkTrainingConfig& cfg);

/// Copy of `spec` keeping only the layer-1 paths among the concat sources.
NetworkSpec layer1_only(const NetworkSpec& spec);

}  // namespace sparselabel

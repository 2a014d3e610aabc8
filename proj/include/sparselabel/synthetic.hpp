#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "sparselabel/grid.hpp"

namespace sparselabel {

/// Random textured polygon scenes with exact region boundaries.
struct SyntheticConfig {
  int width = 96;
  int height = 96;
  int min_polygons = 3;
  int max_polygons = 6;
  double min_radius = 12.0;
  double max_radius = 32.0;
  int supersample = 4;
  /// Sinusoidal fill amplitude and spatial period range (pixels).
  double texture_amplitude = 0.08;
  double min_period = 6.0;
  double max_period = 14.0;
  /// Minimum colour distance between a polygon and the background.
  double min_contrast = 0.25;
  std::uint64_t seed = 0;

  void validate() const;
};

/// The texture-heavy variant: strong, fine texture close to the region contrast.
SyntheticConfig texture_heavy_config(std::uint64_t seed);

struct SyntheticScene {
  ImageGrid image;     // 3 channels, anti-aliased
  ImageGrid regions;   // 1 channel, region id at each pixel center
  ImageGrid boundary;  // 1 channel, thinned {0, 1}
};

SyntheticScene generate_scene(const SyntheticConfig& cfg, std::uint64_t index);

/// One-pixel boundary of a region-id map: pixels that differ from their right
/// or lower neighbour, thinned.
ImageGrid region_boundaries(const ImageGrid& regions);

/// Writes images/, truths/ and manifest.json (first `train_count` scenes tagged train).
void write_synthetic_corpus(const std::filesystem::path& dir, const SyntheticConfig& cfg, int count, int train_count);

}  // namespace sparselabel

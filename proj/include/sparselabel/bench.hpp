#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include <json.hpp>

#include "sparselabel/grid.hpp"

namespace sparselabel {

struct MatchConfig {
  double max_dist = 0.0075;  // fraction of the image diagonal
  int threshold_count = 51;

  void validate() const;
  double radius_pixels(int width, int height) const;
};

/// Evenly spaced thresholds over [0, 1]; a pixel is detected when its value exceeds the threshold.
std::vector<double> benchmark_thresholds(int count);

/// Orientation-aware non-maximum suppression followed by thinning to
/// one-pixel curves. Surviving pixels keep their strength.
ImageGrid nms_thin(const ImageGrid& edge_map);

/// Zhang-Suen thinning of the nonzero support; strengths are preserved.
ImageGrid thin(const ImageGrid& map);

struct MatchResult {
  std::vector<bool> detection_matched;  // per pixel, row-major
  std::size_t detections = 0;
  std::size_t matched_detections = 0;
  std::size_t truth_pixels = 0;
  std::size_t matched_truth = 0;
};

/// Greedy one-to-one correspondence in order of (squared distance, detection
/// index, truth index) within `radius` pixels. Both maps are treated as binary (> 0).
MatchResult match_boundaries(const ImageGrid& detected, const ImageGrid& truth, double radius);

struct BoundaryCounts {
  std::size_t detections = 0;
  std::size_t correct_detections = 0;  // matched in at least one human map
  std::size_t truth_pixels = 0;        // summed over human maps
  std::size_t matched_truth = 0;
};

struct BoundaryImage {
  ImageGrid detection;  // thinned, single channel, [0, 1]
  std::vector<ImageGrid> truths;
};

/// Per-threshold counts for one image.
std::vector<BoundaryCounts> boundary_counts(const BoundaryImage& image, const MatchConfig& cfg);

struct PRCurve {
  std::vector<double> thresholds;
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<double> f_measure;
  double ods_f = 0.0;
  double ods_threshold = 0.0;
  double ois_f = 0.0;
  double ap = 0.0;
};

double f_measure(double precision, double recall);

/// Area under the interpolated precision-recall curve.
double average_precision(const std::vector<double>& precision, const std::vector<double>& recall);

PRCurve evaluate_boundaries(const std::vector<BoundaryImage>& images, const MatchConfig& cfg, int workers = 1);

struct SegmentationReport {
  int classes = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [truth][predicted]
  std::vector<double> per_class_accuracy;
  double overall_accuracy = 0.0;
  std::size_t pixels = 0;

  void add(const ImageGrid& pred, const ImageGrid& truth);
  void finalize();
};

/// Pixels whose truth has no active channel are ignored.
SegmentationReport evaluate_segmentation(const ImageGrid& pred, const ImageGrid& truth);

void write_pr_csv(const std::filesystem::path& path, const PRCurve& curve);
nlohmann::json pr_summary_json(const PRCurve& curve);
ImageGrid render_pr_plot(const PRCurve& curve, int size = 320);

}  // namespace sparselabel

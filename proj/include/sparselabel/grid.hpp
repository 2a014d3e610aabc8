#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace sparselabel {

/// Dense multi-channel 2-D signal: an image, a label map or an activation map.
///
/// Values are stored row-major with channels interleaved, i.e. the value of
/// channel `c` at pixel `(x, y)` lives at `((y * width) + x) * channels + c`.
class ImageGrid {
 public:
  ImageGrid() = default;
  ImageGrid(int width, int height, int channels, double fill = 0.0);

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }
  bool empty() const { return data_.empty(); }

  double& at(int x, int y, int c) { return data_[index(x, y, c)]; }
  double at(int x, int y, int c) const { return data_[index(x, y, c)]; }

  /// Clamp-to-border read.
  double at_clamped(int x, int y, int c) const;

  std::span<double> pixel(int x, int y) { return {data_.data() + index(x, y, 0), static_cast<std::size_t>(channels_)}; }
  std::span<const double> pixel(int x, int y) const {
    return {data_.data() + index(x, y, 0), static_cast<std::size_t>(channels_)};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }
  bool same_shape(const ImageGrid& other) const {
    return width_ == other.width_ && height_ == other.height_ && channels_ == other.channels_;
  }

  /// Single channel copy.
  ImageGrid channel(int c) const;

 private:
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

/// Square m x m x c patch shape; m is odd so every patch has a center pixel.
struct PatchGeometry {
  int side = 1;
  int channels = 1;

  int radius() const { return side / 2; }
  int dim() const { return side * side * channels; }
  void validate() const;

  bool operator==(const PatchGeometry&) const = default;
};

struct PatchOrigin {
  std::uint32_t image = 0;
  int x = 0;
  int y = 0;
};

/// Patches stored column-wise. Within a column the layout is
/// `((dy * side) + dx) * channels + c` with `dy, dx` in `[0, side)`.
struct PatchMatrix {
  PatchGeometry geometry;
  Eigen::MatrixXd columns;
  std::vector<PatchOrigin> origins;

  std::size_t count() const { return static_cast<std::size_t>(columns.cols()); }
  void validate() const;
};

/// Copies the window centered at (x, y) into `out` (length geom.dim()).
/// Positions outside the image replicate the nearest border pixel.
void extract_patch_into(const ImageGrid& img, int x, int y, const PatchGeometry& geom, std::span<double> out);

Eigen::VectorXd extract_patch(const ImageGrid& img, int x, int y, const PatchGeometry& geom);

/// Adds `weight * patch` onto the window centered at (x, y). Out-of-bounds
/// positions are folded onto the border pixel they replicate, which makes this
/// the exact adjoint of extract_patch.
void insert_patch(ImageGrid& img, int x, int y, const PatchGeometry& geom, std::span<const double> patch,
                  double weight = 1.0);

struct CenteredPatch {
  Eigen::VectorXd values;
  std::vector<double> means;
};

/// Subtracts the per-channel mean. Means at rounding level are reported as
/// exactly zero, so the operation is idempotent.
CenteredPatch zero_mean_patch(std::span<const double> patch, const PatchGeometry& geom);

/// In-place variant used on hot paths.
void zero_mean_patch_inplace(std::span<double> patch, int channels);

Eigen::VectorXd add_patch_means(std::span<const double> centered, const PatchGeometry& geom,
                                std::span<const double> means);

/// Every pixel's patch as one column, in row-major pixel order.
PatchMatrix extract_all_patches(const ImageGrid& img, const PatchGeometry& geom, bool zero_mean);

/// Bilinear resampling by `factor` in (0, 1]. Output side = round(side * factor).
ImageGrid rescale(const ImageGrid& img, double factor);

/// Nearest-neighbour replication: target pixel x reads source floor(x * w / target_w).
ImageGrid upsample_nearest(const ImageGrid& grid, int target_width, int target_height);

/// Source index used by upsample_nearest along one axis.
inline int nearest_source_index(int target, int source_extent, int target_extent) {
  return static_cast<int>(static_cast<std::int64_t>(target) * source_extent / target_extent);
}

}  // namespace sparselabel

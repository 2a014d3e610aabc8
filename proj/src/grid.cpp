#include "sparselabel/grid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace sparselabel {

ImageGrid::ImageGrid(int width, int height, int channels, double fill)
    : width_(width), height_(height), channels_(channels) {
  if (width < 0 || height < 0 || channels < 0) {
    throw std::invalid_argument("ImageGrid: negative dimension");
  }
  data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
}

double ImageGrid::at_clamped(int x, int y, int c) const {
  x = std::clamp(x, 0, width_ - 1);
  y = std::clamp(y, 0, height_ - 1);
  return data_[index(x, y, c)];
}

ImageGrid ImageGrid::channel(int c) const {
  ImageGrid out(width_, height_, 1);
  for (std::size_t p = 0; p < pixel_count(); ++p) {
    out.data_[p] = data_[p * channels_ + c];
  }
  return out;
}

void PatchGeometry::validate() const {
  if (side < 1 || side % 2 == 0) {
    throw std::invalid_argument("patch side must be odd and >= 1, got " + std::to_string(side));
  }
  if (channels < 1) {
    throw std::invalid_argument("patch channel count must be >= 1");
  }
}

void PatchMatrix::validate() const {
  geometry.validate();
  if (columns.rows() != geometry.dim()) {
    throw std::invalid_argument("patch matrix row count does not match geometry");
  }
  if (!origins.empty() && origins.size() != count()) {
    throw std::invalid_argument("patch origin count does not match column count");
  }
}

void extract_patch_into(const ImageGrid& img, int x, int y, const PatchGeometry& geom, std::span<double> out) {
  if (geom.channels != img.channels()) {
    throw std::invalid_argument("patch geometry channel count does not match image");
  }
  if (!img.contains(x, y)) {
    throw std::out_of_range("center out of bounds");
  }
  const int r = geom.radius();
  const int c = geom.channels;
  std::size_t k = 0;
  for (int dy = -r; dy <= r; ++dy) {
    const int yy = std::clamp(y + dy, 0, img.height() - 1);
    for (int dx = -r; dx <= r; ++dx) {
      const int xx = std::clamp(x + dx, 0, img.width() - 1);
      const auto px = img.pixel(xx, yy);
      for (int ch = 0; ch < c; ++ch) out[k++] = px[ch];
    }
  }
}

Eigen::VectorXd extract_patch(const ImageGrid& img, int x, int y, const PatchGeometry& geom) {
  geom.validate();
  Eigen::VectorXd v(geom.dim());
  extract_patch_into(img, x, y, geom, {v.data(), static_cast<std::size_t>(v.size())});
  return v;
}

void insert_patch(ImageGrid& img, int x, int y, const PatchGeometry& geom, std::span<const double> patch,
                  double weight) {
  if (geom.channels != img.channels()) {
    throw std::invalid_argument("patch geometry channel count does not match image");
  }
  if (!img.contains(x, y)) {
    throw std::out_of_range("center out of bounds");
  }
  if (patch.size() != static_cast<std::size_t>(geom.dim())) {
    throw std::invalid_argument("patch length does not match geometry");
  }
  const int r = geom.radius();
  std::size_t k = 0;
  for (int dy = -r; dy <= r; ++dy) {
    const int yy = std::clamp(y + dy, 0, img.height() - 1);
    for (int dx = -r; dx <= r; ++dx) {
      const int xx = std::clamp(x + dx, 0, img.width() - 1);
      auto px = img.pixel(xx, yy);
      for (int ch = 0; ch < geom.channels; ++ch) px[ch] += weight * patch[k++];
    }
  }
}

void zero_mean_patch_inplace(std::span<double> patch, int channels) {
  const std::size_t n = patch.size() / channels;
  for (int ch = 0; ch < channels; ++ch) {
    double sum = 0.0;
    double peak = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = patch[i * channels + ch];
      sum += v;
      peak = std::max(peak, std::abs(v));
    }
    const double mean = sum / static_cast<double>(n);
    // Means at the rounding level of an already centered patch are treated as zero.
    if (std::abs(mean) <= static_cast<double>(n) * std::numeric_limits<double>::epsilon() * peak) continue;
    for (std::size_t i = 0; i < n; ++i) patch[i * channels + ch] -= mean;
  }
}

CenteredPatch zero_mean_patch(std::span<const double> patch, const PatchGeometry& geom) {
  geom.validate();
  if (patch.size() != static_cast<std::size_t>(geom.dim())) {
    throw std::invalid_argument("patch length does not match geometry");
  }
  const int c = geom.channels;
  const std::size_t n = patch.size() / c;
  CenteredPatch out;
  out.values = Eigen::Map<const Eigen::VectorXd>(patch.data(), static_cast<Eigen::Index>(patch.size()));
  out.means.assign(c, 0.0);
  for (int ch = 0; ch < c; ++ch) {
    double sum = 0.0;
    double peak = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      sum += patch[i * c + ch];
      peak = std::max(peak, std::abs(patch[i * c + ch]));
    }
    const double mean = sum / static_cast<double>(n);
    if (std::abs(mean) <= static_cast<double>(n) * std::numeric_limits<double>::epsilon() * peak) continue;
    out.means[ch] = mean;
    for (std::size_t i = 0; i < n; ++i) out.values[static_cast<Eigen::Index>(i * c + ch)] -= mean;
  }
  return out;
}

Eigen::VectorXd add_patch_means(std::span<const double> centered, const PatchGeometry& geom,
                                std::span<const double> means) {
  if (means.size() != static_cast<std::size_t>(geom.channels) ||
      centered.size() != static_cast<std::size_t>(geom.dim())) {
    throw std::invalid_argument("add_patch_means: shape mismatch");
  }
  Eigen::VectorXd out(geom.dim());
  for (std::size_t i = 0; i < centered.size(); ++i) out[static_cast<Eigen::Index>(i)] = centered[i] + means[i % geom.channels];
  return out;
}

PatchMatrix extract_all_patches(const ImageGrid& img, const PatchGeometry& geom, bool zero_mean) {
  geom.validate();
  PatchMatrix pm;
  pm.geometry = geom;
  pm.columns.resize(geom.dim(), static_cast<Eigen::Index>(img.pixel_count()));
  pm.origins.reserve(img.pixel_count());
  Eigen::Index col = 0;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x, ++col) {
      std::span<double> out(pm.columns.col(col).data(), static_cast<std::size_t>(geom.dim()));
      extract_patch_into(img, x, y, geom, out);
      if (zero_mean) zero_mean_patch_inplace(out, geom.channels);
      pm.origins.push_back({0, x, y});
    }
  }
  return pm;
}

ImageGrid rescale(const ImageGrid& img, double factor) {
  if (!(factor > 0.0) || factor > 1.0) {
    throw std::invalid_argument("rescale factor must be in (0, 1]");
  }
  if (factor == 1.0) return img;
  const int ow = static_cast<int>(std::lround(img.width() * factor));
  const int oh = static_cast<int>(std::lround(img.height() * factor));
  if (ow < 1 || oh < 1) {
    throw std::invalid_argument("rescale output would be empty");
  }
  const double sx = static_cast<double>(img.width()) / ow;
  const double sy = static_cast<double>(img.height()) / oh;
  ImageGrid out(ow, oh, img.channels());
  for (int y = 0; y < oh; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height() - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, img.height() - 1);
    const double wy = fy - y0;
    for (int x = 0; x < ow; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width() - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, img.width() - 1);
      const double wx = fx - x0;
      for (int c = 0; c < img.channels(); ++c) {
        const double top = std::lerp(img.at(x0, y0, c), img.at(x1, y0, c), wx);
        const double bottom = std::lerp(img.at(x0, y1, c), img.at(x1, y1, c), wx);
        out.at(x, y, c) = std::lerp(top, bottom, wy);
      }
    }
  }
  return out;
}

ImageGrid upsample_nearest(const ImageGrid& grid, int target_width, int target_height) {
  if (target_width < grid.width() || target_height < grid.height()) {
    throw std::invalid_argument("upsample target smaller than source");
  }
  ImageGrid out(target_width, target_height, grid.channels());
  for (int y = 0; y < target_height; ++y) {
    const int sy = nearest_source_index(y, grid.height(), target_height);
    for (int x = 0; x < target_width; ++x) {
      const int sx = nearest_source_index(x, grid.width(), target_width);
      std::copy_n(grid.pixel(sx, sy).begin(), grid.channels(), out.pixel(x, y).begin());
    }
  }
  return out;
}

}  // namespace sparselabel

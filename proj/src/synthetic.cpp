#include "sparselabel/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include <json.hpp>

#include "sparselabel/bench.hpp"
#include "sparselabel/image_io.hpp"
#include "sparselabel/rng.hpp"

namespace sparselabel {

namespace {

struct Region {
  std::vector<std::pair<double, double>> polygon;  // empty for the background
  double color[3] = {0, 0, 0};
  double amplitude = 0.0;
  double kx = 0.0, ky = 0.0, phase = 0.0;

  double shade(double x, double y, int c) const { return color[c] + amplitude * std::sin(kx * x + ky * y + phase); }
};

bool inside(const std::vector<std::pair<double, double>>& poly, double x, double y) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto [xi, yi] = poly[i];
    const auto [xj, yj] = poly[j];
    if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) in = !in;
  }
  return in;
}

double range(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform_unit(rng); }

double color_distance(const double* a, const double* b) {
  return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
}

void random_texture(Region& r, Rng& rng, const SyntheticConfig& cfg) {
  r.amplitude = cfg.texture_amplitude * range(rng, 0.5, 1.0);
  const double period = range(rng, cfg.min_period, cfg.max_period);
  const double theta = range(rng, 0.0, std::numbers::pi);
  r.kx = 2.0 * std::numbers::pi * std::cos(theta) / period;
  r.ky = 2.0 * std::numbers::pi * std::sin(theta) / period;
  r.phase = range(rng, 0.0, 2.0 * std::numbers::pi);
}

// Region index of the top-most region containing (x, y).
int region_at(const std::vector<Region>& regions, double x, double y) {
  for (std::size_t k = regions.size(); k-- > 1;) {
    if (inside(regions[k].polygon, x, y)) return static_cast<int>(k);
  }
  return 0;
}

}  // namespace

void SyntheticConfig::validate() const {
  if (width < 8 || height < 8) throw std::invalid_argument("synthetic images must be at least 8x8");
  if (min_polygons < 1 || max_polygons < min_polygons) throw std::invalid_argument("bad polygon count range");
  if (!(min_radius > 0.0) || max_radius < min_radius) throw std::invalid_argument("bad polygon radius range");
  if (supersample < 1) throw std::invalid_argument("supersample must be >= 1");
  if (!(min_period > 0.0) || max_period < min_period) throw std::invalid_argument("bad texture period range");
}

SyntheticConfig texture_heavy_config(std::uint64_t seed) {
  SyntheticConfig cfg;
  cfg.texture_amplitude = 0.22;
  cfg.min_period = 3.0;
  cfg.max_period = 5.0;
  cfg.min_contrast = 0.35;
  cfg.seed = seed;
  return cfg;
}

SyntheticScene generate_scene(const SyntheticConfig& cfg, std::uint64_t index) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, "synthetic/scene", index));
  std::vector<Region> regions(1);
  for (double& c : regions[0].color) c = range(rng, 0.15, 0.85);
  random_texture(regions[0], rng, cfg);

  const int count = cfg.min_polygons + static_cast<int>(uniform_index(rng, cfg.max_polygons - cfg.min_polygons + 1));
  for (int p = 0; p < count; ++p) {
    Region r;
    const double cx = range(rng, 0.1 * cfg.width, 0.9 * cfg.width);
    const double cy = range(rng, 0.1 * cfg.height, 0.9 * cfg.height);
    const double radius = range(rng, cfg.min_radius, cfg.max_radius);
    const int vertices = 3 + static_cast<int>(uniform_index(rng, 5));
    std::vector<double> angles(vertices);
    for (double& a : angles) a = range(rng, 0.0, 2.0 * std::numbers::pi);
    std::sort(angles.begin(), angles.end());
    for (double a : angles) {
      const double rr = radius * range(rng, 0.6, 1.0);
      r.polygon.emplace_back(cx + rr * std::cos(a), cy + rr * std::sin(a));
    }
    // Rejection-sample a colour that stands apart from every earlier region.
    for (int attempt = 0; attempt < 64; ++attempt) {
      for (double& c : r.color) c = range(rng, 0.1, 0.9);
      bool ok = true;
      for (const auto& q : regions) ok = ok && color_distance(r.color, q.color) >= cfg.min_contrast;
      if (ok) break;
    }
    random_texture(r, rng, cfg);
    regions.push_back(std::move(r));
  }

  SyntheticScene scene;
  scene.image = ImageGrid(cfg.width, cfg.height, 3);
  scene.regions = ImageGrid(cfg.width, cfg.height, 1);
  const int s = cfg.supersample;
  for (int y = 0; y < cfg.height; ++y) {
    for (int x = 0; x < cfg.width; ++x) {
      double acc[3] = {0, 0, 0};
      for (int sy = 0; sy < s; ++sy) {
        for (int sx = 0; sx < s; ++sx) {
          const double px = x + (sx + 0.5) / s, py = y + (sy + 0.5) / s;
          const Region& r = regions[region_at(regions, px, py)];
          for (int c = 0; c < 3; ++c) acc[c] += r.shade(px, py, c);
        }
      }
      for (int c = 0; c < 3; ++c) scene.image.at(x, y, c) = std::clamp(acc[c] / (s * s), 0.0, 1.0);
      scene.regions.at(x, y, 0) = region_at(regions, x + 0.5, y + 0.5);
    }
  }
  scene.boundary = region_boundaries(scene.regions);
  return scene;
}

ImageGrid region_boundaries(const ImageGrid& regions) {
  if (regions.channels() != 1) throw std::invalid_argument("region map must be single-channel");
  ImageGrid b(regions.width(), regions.height(), 1);
  for (int y = 0; y < regions.height(); ++y) {
    for (int x = 0; x < regions.width(); ++x) {
      const double v = regions.at(x, y, 0);
      const bool right = x + 1 < regions.width() && regions.at(x + 1, y, 0) != v;
      const bool down = y + 1 < regions.height() && regions.at(x, y + 1, 0) != v;
      if (right || down) b.at(x, y, 0) = 1.0;
    }
  }
  return thin(b);
}

void write_synthetic_corpus(const std::filesystem::path& dir, const SyntheticConfig& cfg, int count, int train_count) {
  if (count < 1 || train_count < 0 || train_count > count) throw std::invalid_argument("bad synthetic corpus split");
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "truths");
  nlohmann::json manifest;
  manifest["root"] = ".";
  manifest["entries"] = nlohmann::json::array();
  for (int i = 0; i < count; ++i) {
    const SyntheticScene scene = generate_scene(cfg, static_cast<std::uint64_t>(i));
    char name[32];
    std::snprintf(name, sizeof name, "%03d.png", i);
    write_png(dir / "images" / name, scene.image);
    write_png(dir / "truths" / name, scene.boundary);
    manifest["entries"].push_back({{"image", std::string("images/") + name},
                                   {"truths", {std::string("truths/") + name}},
                                   {"split", i < train_count ? "train" : "test"}});
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

}  // namespace sparselabel

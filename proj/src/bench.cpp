#include "sparselabel/bench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <tuple>

#include "sparselabel/parallel.hpp"

namespace sparselabel {

namespace {

ImageGrid gaussian_smooth(const ImageGrid& img, double sigma) {
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * r + 1);
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) sum += k[i + r] = std::exp(-(i * i) / (2.0 * sigma * sigma));
  for (double& v : k) v /= sum;
  ImageGrid tmp(img.width(), img.height(), 1), out(img.width(), img.height(), 1);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * img.at_clamped(x + i, y, 0);
      tmp.at(x, y, 0) = s;
    }
  }
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * tmp.at_clamped(x, y + i, 0);
      out.at(x, y, 0) = s;
    }
  }
  return out;
}

// Central differences, one-sided at the border.
void gradient(const ImageGrid& img, ImageGrid& gx, ImageGrid& gy) {
  const int w = img.width(), h = img.height();
  gx = ImageGrid(w, h, 1);
  gy = ImageGrid(w, h, 1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int x0 = std::max(0, x - 1), x1 = std::min(w - 1, x + 1);
      const int y0 = std::max(0, y - 1), y1 = std::min(h - 1, y + 1);
      gx.at(x, y, 0) = x1 > x0 ? (img.at(x1, y, 0) - img.at(x0, y, 0)) / (x1 - x0) : 0.0;
      gy.at(x, y, 0) = y1 > y0 ? (img.at(x, y1, 0) - img.at(x, y0, 0)) / (y1 - y0) : 0.0;
    }
  }
}

double interp(const ImageGrid& img, double x, double y) {
  x = std::clamp(x, 0.0, img.width() - 1.0);
  y = std::clamp(y, 0.0, img.height() - 1.0);
  const int x0 = static_cast<int>(x), y0 = static_cast<int>(y);
  const int x1 = std::min(x0 + 1, img.width() - 1), y1 = std::min(y0 + 1, img.height() - 1);
  const double fx = x - x0, fy = y - y0;
  return (1 - fy) * ((1 - fx) * img.at(x0, y0, 0) + fx * img.at(x1, y0, 0)) +
         fy * ((1 - fx) * img.at(x0, y1, 0) + fx * img.at(x1, y1, 0));
}

double sign(double v) { return (v > 0.0) - (v < 0.0); }

struct Offset {
  int dx, dy, d2;
};

std::vector<std::vector<Offset>> disc_groups(double radius) {
  const int r = static_cast<int>(std::floor(radius));
  std::vector<Offset> all;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      const int d2 = dx * dx + dy * dy;
      if (d2 <= radius * radius) all.push_back({dx, dy, d2});
    }
  }
  std::sort(all.begin(), all.end(), [](const Offset& a, const Offset& b) {
    return std::tie(a.d2, a.dy, a.dx) < std::tie(b.d2, b.dy, b.dx);
  });
  std::vector<std::vector<Offset>> groups;
  for (const auto& o : all) {
    if (groups.empty() || groups.back().front().d2 != o.d2) groups.emplace_back();
    groups.back().push_back(o);
  }
  return groups;
}

void check_single(const ImageGrid& g, const char* what) {
  if (g.channels() != 1) throw std::invalid_argument(std::string(what) + " must be single-channel");
}

}  // namespace

void MatchConfig::validate() const {
  if (!(max_dist > 0.0)) throw std::invalid_argument("max_dist must be positive");
  if (threshold_count < 2) throw std::invalid_argument("threshold_count must be >= 2");
}

double MatchConfig::radius_pixels(int width, int height) const { return max_dist * std::hypot(width, height); }

std::vector<double> benchmark_thresholds(int count) {
  std::vector<double> t(count);
  for (int i = 0; i < count; ++i) t[i] = static_cast<double>(i) / (count - 1);
  return t;
}

ImageGrid thin(const ImageGrid& map) {
  check_single(map, "thinning input");
  const int w = map.width(), h = map.height();
  std::vector<std::uint8_t> on(map.pixel_count());
  for (std::size_t i = 0; i < on.size(); ++i) on[i] = map.data()[i] > 0.0;
  auto px = [&](int x, int y) -> int { return (x >= 0 && y >= 0 && x < w && y < h) ? on[y * w + x] : 0; };
  std::vector<std::size_t> remove;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int pass = 0; pass < 2; ++pass) {
      remove.clear();
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          if (!on[y * w + x]) continue;
          // Neighbours p2..p9 clockwise from north.
          const int p[8] = {px(x, y - 1), px(x + 1, y - 1), px(x + 1, y), px(x + 1, y + 1),
                            px(x, y + 1), px(x - 1, y + 1), px(x - 1, y), px(x - 1, y - 1)};
          int b = 0, a = 0;
          for (int i = 0; i < 8; ++i) {
            b += p[i];
            a += (!p[i] && p[(i + 1) % 8]);
          }
          if (b < 2 || b > 6 || a != 1) continue;
          if (pass == 0 && (p[0] * p[2] * p[4] != 0 || p[2] * p[4] * p[6] != 0)) continue;
          if (pass == 1 && (p[0] * p[2] * p[6] != 0 || p[0] * p[4] * p[6] != 0)) continue;
          remove.push_back(static_cast<std::size_t>(y) * w + x);
        }
      }
      for (auto i : remove) on[i] = 0;
      changed = changed || !remove.empty();
    }
  }
  ImageGrid out(w, h, 1);
  for (std::size_t i = 0; i < on.size(); ++i) out.data()[i] = on[i] ? map.data()[i] : 0.0;
  return out;
}

ImageGrid nms_thin(const ImageGrid& edge_map) {
  check_single(edge_map, "nms input");
  const int w = edge_map.width(), h = edge_map.height();
  ImageGrid gx, gy, gxx, gxy, gyx, gyy;
  gradient(gaussian_smooth(edge_map, 2.0), gx, gy);
  gradient(gx, gxx, gxy);
  gradient(gy, gyx, gyy);
  ImageGrid out(w, h, 1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double e = edge_map.at(x, y, 0);
      if (e <= 0.0) continue;
      double o = std::atan(gyy.at(x, y, 0) * sign(-gxy.at(x, y, 0)) / (gxx.at(x, y, 0) + 1e-5));
      o = std::fmod(o + std::numbers::pi, std::numbers::pi);
      const double c = std::cos(o), s = std::sin(o);
      if (e < interp(edge_map, x + c, y + s) || e < interp(edge_map, x - c, y - s)) continue;
      out.at(x, y, 0) = e;
    }
  }
  return thin(out);
}

MatchResult match_boundaries(const ImageGrid& detected, const ImageGrid& truth, double radius) {
  check_single(detected, "detection map");
  check_single(truth, "truth map");
  if (detected.width() != truth.width() || detected.height() != truth.height()) {
    throw std::invalid_argument("detection and truth dimensions differ");
  }
  const int w = truth.width(), h = truth.height();
  MatchResult r;
  r.detection_matched.assign(truth.pixel_count(), false);
  std::vector<bool> truth_used(truth.pixel_count(), false);
  std::vector<std::size_t> dets;
  for (std::size_t i = 0; i < detected.pixel_count(); ++i) {
    if (detected.data()[i] > 0.0) dets.push_back(i);
    if (truth.data()[i] > 0.0) ++r.truth_pixels;
  }
  r.detections = dets.size();
  for (const auto& group : disc_groups(radius)) {
    for (std::size_t d : dets) {
      if (r.detection_matched[d]) continue;
      const int x = static_cast<int>(d % w), y = static_cast<int>(d / w);
      for (const auto& o : group) {
        const int tx = x + o.dx, ty = y + o.dy;
        if (tx < 0 || ty < 0 || tx >= w || ty >= h) continue;
        const std::size_t t = static_cast<std::size_t>(ty) * w + tx;
        if (truth.data()[t] <= 0.0 || truth_used[t]) continue;
        truth_used[t] = true;
        r.detection_matched[d] = true;
        ++r.matched_detections;
        ++r.matched_truth;
        break;
      }
    }
  }
  return r;
}

std::vector<BoundaryCounts> boundary_counts(const BoundaryImage& image, const MatchConfig& cfg) {
  cfg.validate();
  check_single(image.detection, "detection map");
  const int w = image.detection.width(), h = image.detection.height();
  const double radius = cfg.radius_pixels(w, h);
  const auto thresholds = benchmark_thresholds(cfg.threshold_count);
  std::vector<BoundaryCounts> out(thresholds.size());
  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    ImageGrid binary(w, h, 1);
    for (std::size_t i = 0; i < binary.pixel_count(); ++i) {
      binary.data()[i] = image.detection.data()[i] > thresholds[t] ? 1.0 : 0.0;
    }
    std::vector<bool> correct(binary.pixel_count(), false);
    BoundaryCounts& c = out[t];
    for (const auto& truth : image.truths) {
      const MatchResult m = match_boundaries(binary, truth, radius);
      c.detections = m.detections;
      c.truth_pixels += m.truth_pixels;
      c.matched_truth += m.matched_truth;
      for (std::size_t i = 0; i < correct.size(); ++i) correct[i] = correct[i] || m.detection_matched[i];
    }
    if (image.truths.empty()) {
      for (double v : binary.data()) c.detections += v > 0.0;
    }
    c.correct_detections = static_cast<std::size_t>(std::count(correct.begin(), correct.end(), true));
  }
  return out;
}

double f_measure(double precision, double recall) {
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

double average_precision(const std::vector<double>& precision, const std::vector<double>& recall) {
  std::vector<std::pair<double, double>> pts;
  for (std::size_t i = 0; i < precision.size(); ++i) pts.emplace_back(recall[i], precision[i]);
  std::sort(pts.begin(), pts.end());
  // Interpolated precision: best precision at any recall at least as large.
  std::vector<double> interp(pts.size());
  double best = 0.0;
  for (std::size_t i = pts.size(); i-- > 0;) interp[i] = best = std::max(best, pts[i].second);
  double ap = 0.0, prev = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    ap += (pts[i].first - prev) * interp[i];
    prev = pts[i].first;
  }
  return ap;
}

PRCurve evaluate_boundaries(const std::vector<BoundaryImage>& images, const MatchConfig& cfg, int workers) {
  cfg.validate();
  if (images.empty()) throw std::invalid_argument("no images to evaluate");
  for (const auto& img : images) {
    for (const auto& t : img.truths) {
      if (t.width() != img.detection.width() || t.height() != img.detection.height()) {
        throw std::invalid_argument("detection and truth dimensions differ");
      }
    }
  }
  std::vector<std::vector<BoundaryCounts>> per_image(images.size());
  parallel_for(images.size(), workers, [&](std::size_t i) { per_image[i] = boundary_counts(images[i], cfg); });

  PRCurve curve;
  curve.thresholds = benchmark_thresholds(cfg.threshold_count);
  const std::size_t nt = curve.thresholds.size();
  auto pr = [](const BoundaryCounts& c) {
    const double p = c.detections ? static_cast<double>(c.correct_detections) / c.detections : 0.0;
    const double r = c.truth_pixels ? static_cast<double>(c.matched_truth) / c.truth_pixels : 0.0;
    return std::pair{p, r};
  };
  for (std::size_t t = 0; t < nt; ++t) {
    BoundaryCounts total;
    for (const auto& img : per_image) {
      total.detections += img[t].detections;
      total.correct_detections += img[t].correct_detections;
      total.truth_pixels += img[t].truth_pixels;
      total.matched_truth += img[t].matched_truth;
    }
    const auto [p, r] = pr(total);
    curve.precision.push_back(p);
    curve.recall.push_back(r);
    curve.f_measure.push_back(f_measure(p, r));
    if (curve.f_measure.back() > curve.ods_f) {
      curve.ods_f = curve.f_measure.back();
      curve.ods_threshold = curve.thresholds[t];
    }
  }
  double ois = 0.0;
  for (const auto& img : per_image) {
    double best = 0.0;
    for (std::size_t t = 0; t < nt; ++t) {
      const auto [p, r] = pr(img[t]);
      best = std::max(best, f_measure(p, r));
    }
    ois += best;
  }
  curve.ois_f = ois / static_cast<double>(images.size());
  curve.ap = average_precision(curve.precision, curve.recall);
  return curve;
}

void SegmentationReport::add(const ImageGrid& pred, const ImageGrid& truth) {
  if (pred.width() != truth.width() || pred.height() != truth.height() || pred.channels() != truth.channels()) {
    throw std::invalid_argument("prediction and truth grids are misaligned");
  }
  if (classes == 0) {
    classes = truth.channels();
    confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  } else if (classes != truth.channels()) {
    throw std::invalid_argument("class count changed between images");
  }
  for (int y = 0; y < truth.height(); ++y) {
    for (int x = 0; x < truth.width(); ++x) {
      const auto t = truth.pixel(x, y);
      const auto p = pred.pixel(x, y);
      const auto ti = std::max_element(t.begin(), t.end());
      if (*ti <= 0.0) continue;
      const auto pi = std::max_element(p.begin(), p.end());
      ++confusion[ti - t.begin()][pi - p.begin()];
    }
  }
}

void SegmentationReport::finalize() {
  per_class_accuracy.assign(classes, 0.0);
  std::size_t correct = 0;
  pixels = 0;
  for (int c = 0; c < classes; ++c) {
    std::size_t row = 0;
    for (auto v : confusion[c]) row += v;
    pixels += row;
    correct += confusion[c][c];
    per_class_accuracy[c] = row ? static_cast<double>(confusion[c][c]) / row : 0.0;
  }
  overall_accuracy = pixels ? static_cast<double>(correct) / pixels : 0.0;
}

SegmentationReport evaluate_segmentation(const ImageGrid& pred, const ImageGrid& truth) {
  SegmentationReport r;
  r.add(pred, truth);
  r.finalize();
  return r;
}

void write_pr_csv(const std::filesystem::path& path, const PRCurve& curve) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(10);
  out << "threshold,precision,recall,f\n";
  for (std::size_t i = 0; i < curve.thresholds.size(); ++i) {
    out << curve.thresholds[i] << ',' << curve.precision[i] << ',' << curve.recall[i] << ',' << curve.f_measure[i]
        << '\n';
  }
}

nlohmann::json pr_summary_json(const PRCurve& curve) {
  return {{"ods", curve.ods_f}, {"ods_threshold", curve.ods_threshold}, {"ois", curve.ois_f}, {"ap", curve.ap}};
}

ImageGrid render_pr_plot(const PRCurve& curve, int size) {
  ImageGrid img(size, size, 3, 1.0);
  const int margin = size / 10;
  const int span = size - 2 * margin;
  auto to_px = [&](double r, double p) {
    return std::pair{margin + static_cast<int>(std::lround(r * span)),
                     size - 1 - margin - static_cast<int>(std::lround(p * span))};
  };
  auto dot = [&](int x, int y, double r, double g, double b) {
    if (!img.contains(x, y)) return;
    img.at(x, y, 0) = r;
    img.at(x, y, 1) = g;
    img.at(x, y, 2) = b;
  };
  auto line = [&](double r0, double p0, double r1, double p1, double r, double g, double b) {
    const auto [x0, y0] = to_px(r0, p0);
    const auto [x1, y1] = to_px(r1, p1);
    const int n = std::max({std::abs(x1 - x0), std::abs(y1 - y0), 1});
    for (int i = 0; i <= n; ++i) {
      dot(x0 + (x1 - x0) * i / n, y0 + (y1 - y0) * i / n, r, g, b);
    }
  };
  // Iso-F contours.
  for (int k = 1; k <= 9; ++k) {
    const double f = k / 10.0;
    for (int i = 0; i <= 4 * span; ++i) {
      const double r = static_cast<double>(i) / (4 * span);
      if (2 * r - f <= 0.0) continue;
      const double p = f * r / (2 * r - f);
      if (p > 1.0) continue;
      const auto [x, y] = to_px(r, p);
      dot(x, y, 0.8, 0.9, 0.8);
    }
  }
  line(0, 0, 1, 0, 0, 0, 0);
  line(0, 0, 0, 1, 0, 0, 0);
  line(1, 0, 1, 1, 0.6, 0.6, 0.6);
  line(0, 1, 1, 1, 0.6, 0.6, 0.6);
  std::vector<std::pair<double, double>> pts;
  for (std::size_t i = 0; i < curve.recall.size(); ++i) {
    if (curve.recall[i] > 0.0 || curve.precision[i] > 0.0) pts.emplace_back(curve.recall[i], curve.precision[i]);
  }
  std::sort(pts.begin(), pts.end());
  for (std::size_t i = 1; i < pts.size(); ++i) {
    line(pts[i - 1].first, pts[i - 1].second, pts[i].first, pts[i].second, 0.85, 0.1, 0.1);
  }
  for (std::size_t i = 0; i < curve.f_measure.size(); ++i) {
    if (curve.f_measure[i] == curve.ods_f && curve.ods_f > 0.0) {
      const auto [x, y] = to_px(curve.recall[i], curve.precision[i]);
      for (int dy = -2; dy <= 2; ++dy) {
        for (int dx = -2; dx <= 2; ++dx) dot(x + dx, y + dy, 0.1, 0.2, 0.85);
      }
      break;
    }
  }
  return img;
}

}  // namespace sparselabel

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include <doctest.h>

#include "sparselabel/bench.hpp"
#include "sparselabel/rng.hpp"

using namespace sparselabel;
namespace fs = std::filesystem;

namespace {

ImageGrid random_map(int w, int h, std::uint64_t seed, double density) {
  Rng rng(seed);
  ImageGrid m(w, h, 1);
  for (double& v : m.data()) v = uniform_unit(rng) < density ? uniform_unit(rng) : 0.0;
  return m;
}

ImageGrid binary(const ImageGrid& m) {
  ImageGrid b = m;
  for (double& v : b.data()) v = v > 0.0 ? 1.0 : 0.0;
  return b;
}

}  // namespace

TEST_CASE("nms and thinning") {
  SUBCASE("all zero") {
    const ImageGrid z(9, 7, 1);
    CHECK(nms_thin(z).data() == z.data());
  }
  SUBCASE("a thin line is unchanged") {
    ImageGrid m(11, 11, 1);
    for (int y = 0; y < 11; ++y) m.at(5, y, 0) = 0.9;
    CHECK(nms_thin(m).data() == m.data());
  }
  SUBCASE("a 3-wide ridge keeps its crest") {
    ImageGrid m(15, 15, 1);
    const double profile[] = {0.4, 0.8, 0.5};
    for (int y = 0; y < 15; ++y)
      for (int i = 0; i < 3; ++i) m.at(6 + i, y, 0) = profile[i];
    const ImageGrid t = nms_thin(m);
    for (int y = 2; y < 13; ++y) {
      int crest = 0;
      for (int x = 1; x < 15; ++x)
        if (m.at(x, y, 0) > m.at(crest, y, 0)) crest = x;
      for (int x = 0; x < 15; ++x) CHECK(t.at(x, y, 0) == (x == crest ? m.at(x, y, 0) : 0.0));
    }
  }
  SUBCASE("multi-channel input") { CHECK_THROWS(nms_thin(ImageGrid(4, 4, 2))); }
}

TEST_CASE("greedy matching") {
  SUBCASE("identical maps") {
    const ImageGrid t = binary(random_map(20, 16, 1, 0.1));
    const MatchResult r = match_boundaries(t, t, 1.0);
    CHECK(r.matched_detections == r.detections);
    CHECK(r.matched_truth == r.truth_pixels);
  }
  SUBCASE("hand-enumerated 5x5 instance") {
    ImageGrid truth(5, 5, 1), det(5, 5, 1);
    truth.at(1, 1, 0) = truth.at(3, 1, 0) = truth.at(2, 3, 0) = 1.0;
    det.at(2, 1, 0) = det.at(1, 2, 0) = det.at(3, 3, 0) = det.at(4, 4, 0) = 1.0;
    // squared distance 1: (2,1)-(1,1), (2,1)-(3,1), (1,2)-(1,1), (3,3)-(2,3); 2: (1,2)-(2,3).
    // (2,1) takes (1,1); (3,3) takes (2,3); (1,2) and (4,4) stay unmatched.
    const MatchResult r = match_boundaries(det, truth, 1.5);
    CHECK(r.detections == 4);
    CHECK(r.truth_pixels == 3);
    CHECK(r.matched_detections == 2);
    CHECK(r.matched_truth == 2);
    CHECK(r.detection_matched[1 * 5 + 2]);
    CHECK(r.detection_matched[3 * 5 + 3]);
    CHECK(!r.detection_matched[2 * 5 + 1]);
    CHECK(!r.detection_matched[4 * 5 + 4]);
  }
  SUBCASE("matched counts agree") {
    for (std::uint64_t s = 0; s < 10; ++s) {
      const MatchResult r = match_boundaries(random_map(24, 24, s, 0.15), random_map(24, 24, 100 + s, 0.1), 2.0);
      CHECK(r.matched_detections == r.matched_truth);
    }
  }
}

TEST_CASE("boundary evaluation") {
  std::vector<BoundaryImage> images;
  for (std::uint64_t s = 0; s < 3; ++s) {
    ImageGrid t(40, 40, 1);
    for (int i = 0; i < 40; ++i) t.at(10 + static_cast<int>(s), i, 0) = t.at(i, 25, 0) = 1.0;
    images.push_back({t, {t}});
  }
  SUBCASE("identical detection") {
    const PRCurve c = evaluate_boundaries(images, MatchConfig{});
    CHECK(c.precision[0] == 1.0);
    CHECK(c.recall[0] == 1.0);
    CHECK(c.f_measure[0] == 1.0);
    CHECK(c.ods_f == 1.0);
    CHECK(c.ois_f == 1.0);
    CHECK(c.ap == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("a one-pixel shift inside the tolerance") {
    for (auto& im : images) {
      // shifted across the contours; a shift along a run would strand its ends under greedy matching
      ImageGrid t(40, 40, 1), shifted(40, 40, 1);
      for (int i = 0; i < 40; ++i) t.at(8, i, 0) = t.at(21, i, 0) = t.at(30, i, 0) = 1.0;
      for (int y = 0; y < 40; ++y)
        for (int x = 1; x < 40; ++x) shifted.at(x, y, 0) = t.at(x - 1, y, 0);
      im = {shifted, {t}};
    }
    MatchConfig cfg;
    cfg.max_dist = 2.0 / std::hypot(40.0, 40.0);
    CHECK(evaluate_boundaries(images, cfg).ods_f == 1.0);
  }
  SUBCASE("random detectors") {
    std::vector<BoundaryImage> noisy;
    for (std::uint64_t s = 0; s < 4; ++s) {
      noisy.push_back({random_map(30, 30, s, 0.2), {binary(random_map(30, 30, 50 + s, 0.1)), binary(random_map(30, 30, 80 + s, 0.1))}});
    }
    MatchConfig cfg;
    cfg.max_dist = 0.05;
    const PRCurve c = evaluate_boundaries(noisy, cfg);
    CHECK(c.ods_f <= c.ois_f + 1e-12);
    for (std::size_t i = 1; i < c.recall.size(); ++i) CHECK(c.recall[i] <= c.recall[i - 1]);
    const PRCurve again = evaluate_boundaries(noisy, cfg, 4);
    CHECK(again.f_measure == c.f_measure);
    CHECK(again.ap == c.ap);

    // detections at a higher threshold are a subset of those at a lower one
    const auto counts = boundary_counts(noisy[0], cfg);
    for (std::size_t i = 1; i < counts.size(); ++i) {
      CHECK(counts[i].detections <= counts[i - 1].detections);
      CHECK(counts[i].truth_pixels == counts[i - 1].truth_pixels);
    }
  }
  SUBCASE("dimension mismatch") {
    images[0].truths[0] = ImageGrid(39, 40, 1);
    CHECK_THROWS(evaluate_boundaries(images, MatchConfig{}));
  }
}

TEST_CASE("average precision") {
  CHECK(average_precision({1.0, 1.0}, {0.0, 1.0}) == 1.0);
  // interpolation lifts the dip at recall 0.5
  CHECK(average_precision({0.5, 0.25, 0.75}, {0.25, 0.5, 0.75}) == doctest::Approx(0.75 * 0.75).epsilon(1e-14));
  CHECK(f_measure(0.0, 0.0) == 0.0);
  CHECK(f_measure(0.5, 1.0) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("segmentation accuracy") {
  SUBCASE("perfect prediction") {
    ImageGrid t(4, 3, 3);
    for (int i = 0; i < 12; ++i) t.data()[i * 3 + i % 3] = 1.0;
    const SegmentationReport r = evaluate_segmentation(t, t);
    CHECK(r.overall_accuracy == 1.0);
    for (double a : r.per_class_accuracy) CHECK(a == 1.0);
  }
  SUBCASE("constant class on skewed frequencies") {
    ImageGrid t(10, 1, 3), p(10, 1, 3);
    for (int i = 0; i < 10; ++i) {
      t.at(i, 0, i < 6 ? 0 : (i < 9 ? 1 : 2)) = 1.0;
      p.at(i, 0, 0) = 0.7;
      p.at(i, 0, 1) = 0.2;
    }
    const SegmentationReport r = evaluate_segmentation(p, t);
    CHECK(r.overall_accuracy == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(r.per_class_accuracy[0] == 1.0);
    CHECK(r.per_class_accuracy[1] == 0.0);
  }
  SUBCASE("counting oracle") {
    Rng rng(3);
    ImageGrid t(6, 6, 4), p(6, 6, 4);
    std::vector<std::vector<std::size_t>> expect(4, std::vector<std::size_t>(4, 0));
    for (int y = 0; y < 6; ++y) {
      for (int x = 0; x < 6; ++x) {
        const auto tc = static_cast<int>(uniform_index(rng, 4));
        t.at(x, y, tc) = 1.0;
        int best = 0;
        for (int c = 0; c < 4; ++c) {
          p.at(x, y, c) = uniform_unit(rng);
          if (p.at(x, y, c) > p.at(x, y, best)) best = c;
        }
        ++expect[tc][best];
      }
    }
    const SegmentationReport r = evaluate_segmentation(p, t);
    CHECK(r.confusion == expect);
    CHECK(r.pixels == 36);
  }
  SUBCASE("misaligned grids") { CHECK_THROWS(evaluate_segmentation(ImageGrid(3, 3, 2), ImageGrid(3, 4, 2))); }
}

TEST_CASE("report outputs") {
  std::vector<BoundaryImage> images{{random_map(20, 20, 1, 0.2), {binary(random_map(20, 20, 2, 0.1))}}};
  const PRCurve c = evaluate_boundaries(images, MatchConfig{});
  const fs::path dir = fs::temp_directory_path() / "sparselabel_tests" / "bench";
  fs::create_directories(dir);
  write_pr_csv(dir / "pr.csv", c);
  std::ifstream in(dir / "pr.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "threshold,precision,recall,f");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 51);

  const auto js = pr_summary_json(c);
  CHECK(js.at("ods").get<double>() == c.ods_f);
  CHECK(js.at("ap").get<double>() == c.ap);
  const ImageGrid plot = render_pr_plot(c);
  CHECK(plot.width() == 320);
  CHECK(plot.channels() == 3);
}

#include <cmath>
#include <filesystem>
#include <set>

#include <doctest.h>

#include "sparselabel/grid.hpp"
#include "sparselabel/image_io.hpp"
#include "sparselabel/rng.hpp"

using namespace sparselabel;
namespace fs = std::filesystem;

namespace {

ImageGrid random_image(int w, int h, int c, std::uint64_t seed) {
  Rng rng(seed);
  ImageGrid img(w, h, c);
  for (double& v : img.data()) v = uniform_unit(rng);
  return img;
}

fs::path temp_dir(const char* name) {
  fs::path p = fs::temp_directory_path() / "sparselabel_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("1x1 patch is the pixel") {
  const ImageGrid img = random_image(5, 4, 3, 1);
  const PatchGeometry g{1, 3};
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 5; ++x) {
      const auto p = extract_patch(img, x, y, g);
      for (int c = 0; c < 3; ++c) CHECK(p[c] == img.at(x, y, c));
    }
  }
}

TEST_CASE("corner patch of a constant image is constant") {
  const ImageGrid img(6, 6, 2, 0.37);
  const auto p = extract_patch(img, 0, 0, {3, 2});
  for (int i = 0; i < p.size(); ++i) CHECK(p[i] == 0.37);
}

TEST_CASE("3x3 patch on the ramp image matches a window walk") {
  ImageGrid img(4, 4, 1);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) img.at(x, y, 0) = x + 4 * y;
  const auto p = extract_patch(img, 1, 1, {3, 1});
  int k = 0;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) CHECK(p[k++] == (1 + dx) + 4 * (1 + dy));
}

TEST_CASE("border patches replicate the nearest pixel") {
  const ImageGrid img = random_image(4, 3, 2, 9);
  const PatchGeometry g{5, 2};
  const auto p = extract_patch(img, 0, 2, g);
  for (int dy = 0; dy < 5; ++dy) {
    for (int dx = 0; dx < 5; ++dx) {
      const int sx = std::clamp(dx - 2, 0, 3);
      const int sy = std::clamp(2 + dy - 2, 0, 2);
      for (int c = 0; c < 2; ++c) CHECK(p[(dy * 5 + dx) * 2 + c] == img.at(sx, sy, c));
    }
  }
}

TEST_CASE("insert_patch is the adjoint of extract_patch") {
  const PatchGeometry g{5, 3};
  Rng rng(4);
  const ImageGrid u = random_image(7, 6, 3, 5);
  Eigen::VectorXd v(g.dim());
  for (int i = 0; i < v.size(); ++i) v[i] = standard_normal(rng);
  for (auto [x, y] : {std::pair{0, 0}, std::pair{3, 2}, std::pair{6, 5}, std::pair{1, 4}}) {
    const double lhs = extract_patch(u, x, y, g).dot(v);
    ImageGrid acc(7, 6, 3);
    insert_patch(acc, x, y, g, std::span<const double>(v.data(), v.size()));
    double rhs = 0.0;
    for (std::size_t i = 0; i < u.data().size(); ++i) rhs += u.data()[i] * acc.data()[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}

TEST_CASE("zero-mean patches") {
  SUBCASE("constant patch") {
    const std::vector<double> p(9, 5.0);
    const auto r = zero_mean_patch(p, {3, 1});
    CHECK(r.means[0] == 5.0);
    for (int i = 0; i < 9; ++i) CHECK(r.values[i] == 0.0);
  }
  SUBCASE("symmetric case") {
    std::vector<double> p{1, 2, 3};
    zero_mean_patch_inplace(p, 1);
    CHECK(p == std::vector<double>{-1, 0, 1});
  }
  SUBCASE("random three-channel means") {
    const ImageGrid img = random_image(5, 5, 3, 11);
    const PatchGeometry g{5, 3};
    const auto p = extract_patch(img, 2, 2, g);
    const auto r = zero_mean_patch(std::span<const double>(p.data(), p.size()), g);
    for (int c = 0; c < 3; ++c) {
      double s = 0.0;
      for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 5; ++x) s += img.at(x, y, c);
      CHECK(r.means[c] == doctest::Approx(s / 25.0).epsilon(1e-12));
    }
    const auto back = add_patch_means(std::span<const double>(r.values.data(), r.values.size()), g, r.means);
    CHECK((back - p).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("idempotent") {
    const ImageGrid img = random_image(5, 5, 3, 12);
    const auto p = extract_patch(img, 1, 3, {5, 3});
    const auto once = zero_mean_patch(std::span<const double>(p.data(), p.size()), {5, 3});
    const auto twice = zero_mean_patch(std::span<const double>(once.values.data(), once.values.size()), {5, 3});
    CHECK(twice.values == once.values);
    for (double m : twice.means) CHECK(m == 0.0);
  }
}

TEST_CASE("rescale") {
  const ImageGrid img = random_image(9, 7, 3, 2);
  CHECK(rescale(img, 1.0).data() == img.data());

  const ImageGrid flat(20, 14, 2, 0.625);
  for (double f : {0.9, 0.5, 0.35, 0.18}) {
    const ImageGrid r = rescale(flat, f);
    CHECK(r.width() == std::lround(20 * f));
    for (double v : r.data()) CHECK(v == doctest::Approx(0.625).epsilon(1e-15));
  }

  ImageGrid two(2, 2, 1);
  two.at(0, 0, 0) = 1;
  two.at(1, 0, 0) = 2;
  two.at(0, 1, 0) = 3;
  two.at(1, 1, 0) = 7;
  const ImageGrid one = rescale(two, 0.5);
  REQUIRE(one.width() == 1);
  // the center (0.5, 0.5) weights the four pixels equally
  CHECK(one.at(0, 0, 0) == doctest::Approx((1 + 2 + 3 + 7) / 4.0).epsilon(1e-15));

  CHECK_THROWS(rescale(img, 0.0));
  CHECK_THROWS(rescale(img, 1.5));
}

TEST_CASE("nearest upsampling") {
  const ImageGrid img = random_image(3, 2, 2, 3);
  CHECK(upsample_nearest(img, 3, 2).data() == img.data());

  const ImageGrid v(1, 1, 1, 0.2);
  const ImageGrid big = upsample_nearest(v, 5, 3);
  for (double x : big.data()) CHECK(x == 0.2);

  const ImageGrid small = random_image(2, 2, 1, 8);
  const ImageGrid up = upsample_nearest(small, 4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) CHECK(up.at(x, y, 0) == small.at(x * 2 / 4, y * 2 / 4, 0));

  const ImageGrid odd = upsample_nearest(random_image(3, 3, 1, 1), 7, 5);
  CHECK(odd.width() == 7);
  CHECK(nearest_source_index(6, 3, 7) == 2);
}

TEST_CASE("extract_all_patches in row-major order") {
  const ImageGrid img = random_image(4, 3, 3, 6);
  const PatchGeometry g{3, 3};
  const PatchMatrix pm = extract_all_patches(img, g, true);
  REQUIRE(pm.count() == 12);
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 4; ++x) {
      const std::size_t k = y * 4 + x;
      CHECK(pm.origins[k].x == x);
      CHECK(pm.origins[k].y == y);
      const auto p = extract_patch(img, x, y, g);
      const auto z = zero_mean_patch(std::span<const double>(p.data(), p.size()), g);
      CHECK((pm.columns.col(k) - z.values).cwiseAbs().maxCoeff() < 1e-14);
    }
  }
}

TEST_CASE("geometry validation") {
  CHECK_THROWS(PatchGeometry{4, 3}.validate());
  CHECK_THROWS(PatchGeometry{3, 0}.validate());
  CHECK_NOTHROW(PatchGeometry{31, 3}.validate());
}

TEST_CASE("seed derivation") {
  CHECK(derive_seed(1, "a") == derive_seed(1, "a"));
  CHECK(derive_seed(1, "a") != derive_seed(2, "a"));
  CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
  CHECK(derive_seed(1, "a", 0) != derive_seed(1, "a", 1));

  Rng rng(17);
  const auto picks = sample_without_replacement(rng, 50, 20);
  CHECK(std::set<std::size_t>(picks.begin(), picks.end()).size() == 20);
  for (auto p : picks) CHECK(p < 50);

  Rng a(5), b(5);
  for (int i = 0; i < 100; ++i) CHECK(uniform_index(a, 7) == uniform_index(b, 7));
}

TEST_CASE("image round trips") {
  const fs::path dir = temp_dir("grid_io");
  ImageGrid img = random_image(6, 5, 3, 21);
  for (double& v : img.data()) v = std::round(v * 255.0) / 255.0;

  write_png(dir / "a.png", img);
  const ImageGrid back = read_image(dir / "a.png");
  REQUIRE(back.same_shape(img));
  for (std::size_t i = 0; i < img.data().size(); ++i) CHECK(back.data()[i] == doctest::Approx(img.data()[i]).epsilon(1e-12));

  write_pnm(dir / "a.ppm", img);
  const ImageGrid pnm = read_image(dir / "a.ppm");
  for (std::size_t i = 0; i < img.data().size(); ++i) CHECK(pnm.data()[i] == doctest::Approx(img.data()[i]).epsilon(1e-12));

  const ImageGrid gray = random_image(4, 4, 1, 3);
  write_raw_f32(dir / "g.f32", gray);
  const ImageGrid raw = read_raw_f32(dir / "g.f32");
  for (std::size_t i = 0; i < gray.data().size(); ++i) CHECK(raw.data()[i] == static_cast<float>(gray.data()[i]));

  CHECK_THROWS(read_image(dir / "missing.png"));
}

TEST_CASE("indexed label maps become one-hot") {
  const fs::path dir = temp_dir("labels");
  ImageGrid idx(3, 2, 1);
  const int classes[] = {0, 1, 2, 2, 1, 0};
  for (int i = 0; i < 6; ++i) idx.data()[i] = classes[i] / 255.0;
  write_png(dir / "l.png", idx);
  const ImageGrid oh = read_label_indexed(dir / "l.png", 3);
  REQUIRE(oh.channels() == 3);
  for (int i = 0; i < 6; ++i)
    for (int c = 0; c < 3; ++c) CHECK(oh.data()[i * 3 + c] == (c == classes[i] ? 1.0 : 0.0));
}

#include <cmath>
#include <filesystem>
#include <sstream>

#include <doctest.h>

#include "sparselabel/dictionary.hpp"
#include "sparselabel/rng.hpp"
#include "sparselabel/sparse_code.hpp"

using namespace sparselabel;
namespace fs = std::filesystem;

namespace {

Eigen::MatrixXd random_atoms(int dim, int count, Rng& rng) {
  Eigen::MatrixXd d(dim, count);
  for (int j = 0; j < count; ++j) {
    for (int i = 0; i < dim; ++i) d(i, j) = standard_normal(rng);
    d.col(j).normalize();
  }
  return d;
}

Dictionary make_dictionary(PatchGeometry g, int atoms, int k, bool zero_mean, std::uint64_t seed) {
  Rng rng(seed);
  Dictionary d;
  d.geometry = g;
  d.atoms = random_atoms(g.dim(), atoms, rng);
  if (zero_mean) {
    for (int j = 0; j < atoms; ++j) {
      std::span<double> col(d.atoms.col(j).data(), g.dim());
      zero_mean_patch_inplace(col, g.channels);
      d.atoms.col(j).normalize();
    }
  }
  d.sparsity = k;
  d.zero_mean_input = zero_mean;
  return d;
}

ImageGrid random_image(int w, int h, int c, std::uint64_t seed) {
  Rng rng(seed);
  ImageGrid img(w, h, c);
  for (double& v : img.data()) v = uniform_unit(rng);
  return img;
}

Eigen::VectorXd residual(const Eigen::VectorXd& x, const Eigen::MatrixXd& d, const SparseVector& z) {
  return x - d * z.to_dense();
}

}  // namespace

TEST_CASE("omp recovers a single atom") {
  Rng rng(1);
  const Eigen::MatrixXd d = random_atoms(20, 16, rng);
  for (int k : {1, 3, 8}) {
    const Eigen::VectorXd x = d.col(7);
    const SparseVector z = omp_encode(std::span<const double>(x.data(), x.size()), d, k);
    REQUIRE(z.nnz() == 1);
    CHECK(z.indices[0] == 7);
    CHECK(std::abs(z.values[0] - 1.0) <= 1e-10);
  }
}

TEST_CASE("omp on the zero signal is empty") {
  Rng rng(2);
  const Eigen::MatrixXd d = random_atoms(10, 12, rng);
  const Eigen::VectorXd x = Eigen::VectorXd::Zero(10);
  CHECK(omp_encode(std::span<const double>(x.data(), 10), d, 4).empty());
}

TEST_CASE("omp on an orthonormal basis projects") {
  Rng rng(3);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(random_atoms(12, 12, rng));
  const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(12, 12);
  Eigen::VectorXd x(12);
  for (int i = 0; i < 12; ++i) x[i] = standard_normal(rng);
  const SparseVector z = omp_encode(std::span<const double>(x.data(), 12), q, 12);
  const Eigen::VectorXd expect = q.transpose() * x;
  CHECK((z.to_dense() - expect).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("omp residual is orthogonal to the selected atoms after every round") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const int dim = 16 + trial % 9;
    const Eigen::MatrixXd d = random_atoms(dim, 40, rng);
    Eigen::VectorXd x(dim);
    for (int i = 0; i < dim; ++i) x[i] = standard_normal(rng);
    for (int k = 1; k <= 8; ++k) {
      const SparseVector z = omp_encode(std::span<const double>(x.data(), dim), d, k);
      const Eigen::VectorXd r = residual(x, d, z);
      for (auto i : z.indices) CHECK(std::abs(d.col(i).dot(r)) <= 1e-8);
    }
  }
}

TEST_CASE("omp is greedy: the K run extends the K-1 run") {
  Rng rng(5);
  const Eigen::MatrixXd d = random_atoms(15, 30, rng);
  Eigen::VectorXd x(15);
  for (int i = 0; i < 15; ++i) x[i] = standard_normal(rng);
  OmpTrace trace;
  omp_encode(std::span<const double>(x.data(), 15), d, 6, &trace);
  REQUIRE(trace.residual_norms.size() == 6);
  for (std::size_t i = 1; i < trace.residual_norms.size(); ++i) {
    CHECK(trace.residual_norms[i] <= trace.residual_norms[i - 1] + 1e-12);
  }
  const SparseVector z3 = omp_encode(std::span<const double>(x.data(), 15), d, 3);
  CHECK(residual(x, d, z3).norm() == doctest::Approx(trace.residual_norms[2]).epsilon(1e-10));
}

TEST_CASE("omp breaks ties toward the lower index") {
  Eigen::MatrixXd d(2, 3);
  d << 1, 0, 1 / std::sqrt(2.0), 0, 1, 1 / std::sqrt(2.0);
  // |correlation| is 1 with atoms 0 and 1 and 0 with atom 2
  Eigen::VectorXd x(2);
  x << 1.0, -1.0;
  const SparseVector z = omp_encode(std::span<const double>(x.data(), 2), d, 1);
  REQUIRE(z.nnz() == 1);
  CHECK(z.indices[0] == 0);
}

TEST_CASE("batch omp agrees with reference omp") {
  Rng rng(6);
  for (int trial = 0; trial < 60; ++trial) {
    const int dim = 8 + static_cast<int>(uniform_index(rng, 20));
    const int atoms = 8 + static_cast<int>(uniform_index(rng, 57));
    const int k = 1 + static_cast<int>(uniform_index(rng, 8));
    Eigen::MatrixXd d = random_atoms(dim, atoms, rng);
    if (trial % 3 == 0) {
      // coherent: atoms share a common direction
      for (int j = 0; j < atoms; ++j) d.col(j) = (d.col(j) + 2.0 * d.col(0)).normalized();
    }
    Eigen::MatrixXd x(dim, 30);
    for (int j = 0; j < 30; ++j)
      for (int i = 0; i < dim; ++i) x(i, j) = standard_normal(rng);
    const auto batch = batch_omp_encode(x, d, d.transpose() * d, k);
    for (int j = 0; j < 30; ++j) {
      const SparseVector ref = omp_encode(std::span<const double>(x.col(j).data(), dim), d, k);
      REQUIRE(batch[j].indices == ref.indices);
      for (std::size_t t = 0; t < ref.nnz(); ++t) CHECK(std::abs(batch[j].values[t] - ref.values[t]) <= 1e-8);
    }
  }
}

TEST_CASE("batch omp edge cases") {
  Rng rng(7);
  const Eigen::MatrixXd d = random_atoms(9, 12, rng);
  const Eigen::MatrixXd g = d.transpose() * d;
  CHECK(batch_omp_encode(Eigen::MatrixXd(9, 0), d, g, 3).empty());

  Eigen::MatrixXd x(9, 4);
  for (int i = 0; i < 9; ++i) x(i, 0) = x(i, 2) = standard_normal(rng);
  for (int i = 0; i < 9; ++i) x(i, 1) = x(i, 3) = standard_normal(rng);
  const auto codes = batch_omp_encode(x, d, g, 3);
  CHECK(codes[0] == codes[2]);
  CHECK(codes[1] == codes[3]);

  const auto one = batch_omp_encode(x, d, g, 3, 1);
  const auto four = batch_omp_encode(x, d, g, 3, 4);
  CHECK(one == four);
}

TEST_CASE("gram cache") {
  const Dictionary dict = make_dictionary({3, 3}, 20, 2, false, 8);
  const GramCache cache(dict);
  const auto& g = cache.gram();
  CHECK((g - g.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
  for (int i = 0; i < g.rows(); ++i) CHECK(std::abs(g(i, i) - 1.0) <= 1e-8);
  CHECK(cache.dict_fingerprint() == dict.fingerprint());

  const fs::path dir = fs::temp_directory_path() / "sparselabel_tests" / "gram";
  fs::remove_all(dir);
  const GramCache built = GramCache::load_or_build(dict, dir);
  const GramCache loaded = GramCache::load_or_build(dict, dir);
  CHECK(loaded.gram() == built.gram());
  CHECK(!fs::is_empty(dir));
}

TEST_CASE("encode_image on a constant image with a zero-mean dictionary is empty") {
  const Dictionary dict = make_dictionary({5, 3}, 16, 2, true, 9);
  const SparseCodeMap codes = encode_image(ImageGrid(9, 7, 3, 0.4), dict);
  for (const auto& c : codes.cells) CHECK(c.empty());
}

TEST_CASE("encode_image with a 1x1 dictionary scales the atom") {
  Dictionary dict = make_dictionary({1, 3}, 6, 1, false, 10);
  ImageGrid img(4, 4, 3);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = (0.5 + 0.1 * x) * dict.atoms(c, 3);
  const SparseCodeMap codes = encode_image(img, dict);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      const auto& z = codes.at(x, y);
      REQUIRE(z.nnz() == 1);
      CHECK(z.indices[0] == 3);
      CHECK(z.values[0] == doctest::Approx(0.5 + 0.1 * x).epsilon(1e-10));
    }
  }
}

TEST_CASE("encode_image equals per-pixel omp") {
  const Dictionary dict = make_dictionary({5, 3}, 16, 2, false, 11);
  const ImageGrid img = random_image(8, 8, 3, 12);
  const SparseCodeMap codes = encode_image(img, dict);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      const Eigen::VectorXd p = extract_patch(img, x, y, dict.geometry);
      const SparseVector ref = omp_encode(p, dict);
      REQUIRE(codes.at(x, y).indices == ref.indices);
      for (std::size_t t = 0; t < ref.nnz(); ++t) CHECK(std::abs(codes.at(x, y).values[t] - ref.values[t]) <= 1e-8);
    }
  }
  CHECK(encode_image(img, dict, 3) == codes);
}

TEST_CASE("reconstruct_image") {
  const Dictionary dict = make_dictionary({3, 1}, 5, 1, false, 13);
  SUBCASE("empty codes give zero") {
    const ImageGrid r = reconstruct_image(SparseCodeMap(6, 6, 5), dict);
    for (double v : r.data()) CHECK(v == 0.0);
  }
  SUBCASE("a single stamp divided by overlap counts") {
    SparseCodeMap codes(7, 7, 5);
    codes.at(3, 3) = SparseVector{{2}, {0.75}, 5};
    const ImageGrid r = reconstruct_image(codes, dict);
    for (int y = 0; y < 7; ++y) {
      for (int x = 0; x < 7; ++x) {
        int overlap = 0;
        for (int cy = y - 1; cy <= y + 1; ++cy)
          for (int cx = x - 1; cx <= x + 1; ++cx) overlap += (cx >= 0 && cy >= 0 && cx < 7 && cy < 7);
        double expect = 0.0;
        if (std::abs(x - 3) <= 1 && std::abs(y - 3) <= 1) {
          expect = 0.75 * dict.atoms((y - 2) * 3 + (x - 2), 2) / overlap;
        }
        CHECK(r.at(x, y, 0) == doctest::Approx(expect).epsilon(1e-12));
      }
    }
  }
  SUBCASE("1x1 round trip") {
    const Dictionary d1 = make_dictionary({1, 3}, 8, 1, false, 14);
    Rng rng(15);
    ImageGrid img(5, 4, 3);
    for (int y = 0; y < 4; ++y) {
      for (int x = 0; x < 5; ++x) {
        const Eigen::VectorXd v = standard_normal(rng) * d1.atoms.col((x + y) % 8);
        for (int c = 0; c < 3; ++c) img.at(x, y, c) = v[c];
      }
    }
    const ImageGrid r = reconstruct_image(encode_image(img, d1), d1);
    for (std::size_t i = 0; i < img.data().size(); ++i) CHECK(std::abs(r.data()[i] - img.data()[i]) <= 1e-8);
  }
}

TEST_CASE("code map serialization") {
  SparseCodeMap m(3, 2, 10);
  m.at(0, 0) = SparseVector{{1, 4}, {0.5, -2.0}, 10};
  m.at(2, 1) = SparseVector{{9}, {1.25}, 10};
  std::stringstream ss;
  write_code_map(ss, m);
  const SparseCodeMap back = read_code_map(ss);
  CHECK(back == m);

  SparseVector bad{{3, 1}, {1.0, 1.0}, 5};
  CHECK_THROWS(bad.validate());
  SparseVector zero{{1}, {0.0}, 5};
  CHECK_THROWS(zero.validate());
}

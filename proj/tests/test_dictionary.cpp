#include <cmath>
#include <sstream>

#include <doctest.h>

#include "sparselabel/dictionary.hpp"
#include "sparselabel/rng.hpp"
#include "sparselabel/sparse_code.hpp"

using namespace sparselabel;

namespace {

PatchMatrix random_patches(int side, int channels, int count, std::uint64_t seed) {
  Rng rng(seed);
  PatchMatrix pm;
  pm.geometry = {side, channels};
  pm.columns.resize(pm.geometry.dim(), count);
  for (int j = 0; j < count; ++j)
    for (int i = 0; i < pm.geometry.dim(); ++i) pm.columns(i, j) = standard_normal(rng);
  pm.origins.resize(count);
  return pm;
}

/// Columns are K-sparse combinations of a planted 5x5x3 dictionary whose
/// mutual coherence is at most 0.3.
struct Planted {
  Eigen::MatrixXd atoms;
  PatchMatrix patches;
};

Planted planted_problem(int atom_count, int k, int samples, std::uint64_t seed) {
  Rng rng(seed);
  const PatchGeometry g{5, 3};
  Planted p;
  p.atoms.resize(g.dim(), atom_count);
  do {
    for (int j = 0; j < atom_count; ++j) {
      for (int i = 0; i < g.dim(); ++i) p.atoms(i, j) = standard_normal(rng);
      p.atoms.col(j).normalize();
    }
  } while ((p.atoms.transpose() * p.atoms - Eigen::MatrixXd::Identity(atom_count, atom_count)).cwiseAbs().maxCoeff() >
           0.3);
  p.patches.geometry = g;
  p.patches.columns = Eigen::MatrixXd::Zero(g.dim(), samples);
  p.patches.origins.resize(samples);
  for (int s = 0; s < samples; ++s) {
    const auto support = sample_without_replacement(rng, atom_count, k);
    for (auto a : support) {
      const double mag = 1.0 + uniform_unit(rng);
      p.patches.columns.col(s) += (uniform_unit(rng) < 0.5 ? -mag : mag) * p.atoms.col(a);
    }
  }
  return p;
}

double relative_error(const PatchMatrix& pm, const Dictionary& dict) {
  const GramCache cache(dict);
  const auto codes = batch_omp_encode(pm, dict, cache);
  return mi_ksvd_objective(pm.columns, dict.atoms, codes, 0.0) / pm.columns.squaredNorm();
}

}  // namespace

TEST_CASE("init_dictionary") {
  const PatchMatrix pm = random_patches(3, 1, 12, 1);
  SUBCASE("L equal to the sample count permutes the normalized columns") {
    const Dictionary d = init_dictionary(pm, 12, 2, 5);
    std::vector<bool> used(12, false);
    for (int j = 0; j < 12; ++j) {
      bool found = false;
      for (int s = 0; s < 12 && !found; ++s) {
        if (!used[s] && (d.atoms.col(j) - pm.columns.col(s).normalized()).norm() < 1e-12) {
          used[s] = true;
          found = true;
        }
      }
      CHECK(found);
    }
  }
  SUBCASE("unit norms and determinism") {
    const Dictionary a = init_dictionary(pm, 7, 2, 9);
    const Dictionary b = init_dictionary(pm, 7, 2, 9);
    CHECK(a.atoms == b.atoms);
    for (int j = 0; j < 7; ++j) CHECK(std::abs(a.atoms.col(j).norm() - 1.0) <= 1e-8);
    CHECK_NOTHROW(a.validate());
  }
  SUBCASE("too few nonzero columns") {
    PatchMatrix zeros = pm;
    zeros.columns.setZero();
    CHECK_THROWS(init_dictionary(zeros, 3, 1, 0));
  }
}

TEST_CASE("coherence penalty") {
  SUBCASE("orthonormal atoms") { CHECK(coherence_penalty(Eigen::MatrixXd::Identity(6, 4)) == 0.0); }
  SUBCASE("two identical atoms count both ordered pairs") {
    Eigen::MatrixXd d(3, 2);
    d.col(0) = Eigen::Vector3d(1, 2, 2) / 3.0;
    d.col(1) = d.col(0);
    CHECK(coherence_penalty(d) == doctest::Approx(2.0).epsilon(1e-15));
  }
  SUBCASE("double-loop oracle") {
    Rng rng(3);
    Eigen::MatrixXd d(7, 5);
    for (int j = 0; j < 5; ++j) {
      for (int i = 0; i < 7; ++i) d(i, j) = standard_normal(rng);
      d.col(j).normalize();
    }
    double expect = 0.0;
    for (int i = 0; i < 5; ++i) {
      for (int j = 0; j < 5; ++j) {
        if (i == j) continue;
        double dot = 0.0;
        for (int r = 0; r < 7; ++r) dot += d(r, i) * d(r, j);
        expect += std::abs(dot);
      }
    }
    CHECK(std::abs(coherence_penalty(d) - expect) <= 1e-12);
  }
}

TEST_CASE("mi-ksvd objective trace never increases and atoms stay unit norm") {
  const Planted p = planted_problem(8, 2, 300, 4);
  for (double lambda : {0.0, 0.01, 0.1}) {
    MiKsvdConfig cfg;
    cfg.lambda = lambda;
    cfg.iterations = 15;
    cfg.min_relative_improvement = 0.0;
    cfg.seed = 2;
    const MiKsvdResult r = mi_ksvd_train(p.patches, cfg, 8, 2);
    REQUIRE(r.objective_trace.size() >= 2);
    for (std::size_t i = 1; i < r.objective_trace.size(); ++i) {
      CHECK(r.objective_trace[i] <= r.objective_trace[i - 1] * (1.0 + 1e-6));
    }
    for (int j = 0; j < 8; ++j) CHECK(std::abs(r.dictionary.atoms.col(j).norm() - 1.0) <= 1e-8);
  }
}

TEST_CASE("mi-ksvd with one atom finds the leading singular direction") {
  PatchMatrix pm = random_patches(3, 1, 200, 5);
  // stretch one direction so the leading singular vector is well separated
  for (int j = 0; j < 200; ++j) pm.columns(4, j) *= 4.0;
  MiKsvdConfig cfg;
  cfg.lambda = 0.0;
  cfg.iterations = 60;
  cfg.min_relative_improvement = 0.0;
  const Dictionary d = mi_ksvd_train(pm, cfg, 1, 1).dictionary;

  const Eigen::MatrixXd c = pm.columns * pm.columns.transpose();
  Eigen::VectorXd v = Eigen::VectorXd::Ones(9);
  for (int it = 0; it < 500; ++it) v = (c * v).normalized();
  CHECK(std::abs(d.atoms.col(0).dot(v)) >= 0.999);
}

TEST_CASE("mi-ksvd recovers a planted dictionary") {
  for (std::uint64_t seed : {6, 7, 8}) {
    const Planted p = planted_problem(8, 2, 500, seed);
    MiKsvdConfig cfg;
    cfg.seed = seed;
    const Dictionary d = mi_ksvd_train(p.patches, cfg, 8, 2).dictionary;
    CHECK(relative_error(p.patches, d) <= 1e-3);
    const Eigen::MatrixXd match = (p.atoms.transpose() * d.atoms).cwiseAbs();
    for (int i = 0; i < 8; ++i) CHECK(match.row(i).maxCoeff() >= 0.99);
  }
}

TEST_CASE("the first iteration does not raise the objective of the initial codes") {
  const Planted p = planted_problem(8, 2, 200, 9);
  MiKsvdConfig cfg;
  cfg.lambda = 0.0;
  cfg.iterations = 1;
  cfg.replace_unused_atoms = false;
  const Dictionary start = init_dictionary(p.patches, 8, 2, derive_seed(cfg.seed, "mi-ksvd/init"));
  const GramCache cache(start);
  const auto codes = batch_omp_encode(p.patches, start, cache);
  const double before = mi_ksvd_objective(p.patches.columns, start.atoms, codes, 0.0);
  const MiKsvdResult r = mi_ksvd_train(p.patches, cfg, 8, 2);
  CHECK(r.objective_trace.front() <= before * (1.0 + 1e-12));
}

TEST_CASE("the incoherence term lowers coherence") {
  const PatchMatrix pm = random_patches(3, 3, 400, 7);
  MiKsvdConfig cfg;
  cfg.iterations = 10;
  cfg.seed = 3;
  cfg.lambda = 0.0;
  const double plain = coherence_penalty(mi_ksvd_train(pm, cfg, 16, 2).dictionary);
  cfg.lambda = 0.5;
  const double pulled = coherence_penalty(mi_ksvd_train(pm, cfg, 16, 2).dictionary);
  CHECK(pulled < plain);
}

TEST_CASE("mi-ksvd is reproducible and independent of worker count") {
  const PatchMatrix pm = random_patches(3, 3, 300, 8);
  MiKsvdConfig cfg;
  cfg.iterations = 5;
  cfg.seed = 11;
  const Dictionary a = mi_ksvd_train(pm, cfg, 12, 2).dictionary;
  cfg.workers = 4;
  const Dictionary b = mi_ksvd_train(pm, cfg, 12, 2).dictionary;
  CHECK(a.atoms == b.atoms);
  CHECK(a.fingerprint() == b.fingerprint());
}

TEST_CASE("dictionary serialization") {
  const PatchMatrix pm = random_patches(5, 3, 40, 9);
  Dictionary d = init_dictionary(pm, 10, 3, 1, true);
  std::stringstream ss;
  write_dictionary(ss, d);
  const Dictionary back = read_dictionary(ss);
  CHECK(back.atoms == d.atoms);
  CHECK(back.geometry == d.geometry);
  CHECK(back.sparsity == 3);
  CHECK(back.zero_mean_input);
  CHECK(back.fingerprint() == d.fingerprint());

  const Dictionary js = dictionary_from_json(dictionary_to_json(d));
  CHECK(js.atoms == d.atoms);

  std::stringstream junk("XXXX0000");
  CHECK_THROWS(read_dictionary(junk));
}

TEST_CASE("dictionary validation") {
  Dictionary d;
  d.geometry = {3, 1};
  d.atoms = Eigen::MatrixXd::Identity(9, 4);
  d.sparsity = 5;
  CHECK_THROWS(d.validate());
  d.sparsity = 2;
  CHECK_NOTHROW(d.validate());
  d.atoms(0, 0) = 2.0;
  CHECK_THROWS(d.validate());

  MiKsvdConfig cfg;
  cfg.iterations = 0;
  CHECK_THROWS(cfg.validate());
}

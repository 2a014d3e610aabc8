#include "sparselabel/sparse_code.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>

#include "sparselabel/binary_io.hpp"
#include "sparselabel/parallel.hpp"

namespace sparselabel {

namespace {

// Fixed batch width: GEMM blocking (and hence rounding) never depends on the
// worker count.
constexpr Eigen::Index kChunkColumns = 256;

SparseVector make_sorted(std::span<const int> support, const Eigen::VectorXd& coef, std::uint32_t dim) {
  std::vector<std::size_t> order(support.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return support[a] < support[b]; });
  SparseVector out;
  out.dim = dim;
  for (std::size_t i : order) {
    const double v = coef[static_cast<Eigen::Index>(i)];
    if (v == 0.0) continue;
    out.indices.push_back(static_cast<std::uint32_t>(support[i]));
    out.values.push_back(v);
  }
  return out;
}

// Largest |score| above `threshold` among atoms that are neither selected nor
// blocked; lowest index wins ties. Returns -1 when none qualifies.
template <class Scores>
int pick_atom(const Scores& scores, const std::vector<char>& excluded, double threshold) {
  int best = -1;
  double best_abs = threshold;
  for (Eigen::Index k = 0; k < scores.size(); ++k) {
    if (excluded[static_cast<std::size_t>(k)]) continue;
    const double a = std::abs(scores[k]);
    if (a > best_abs) {
      best_abs = a;
      best = static_cast<int>(k);
    }
  }
  return best;
}

SparseVector bomp_column(const Eigen::Ref<const Eigen::VectorXd>& a0, double xnorm, const Eigen::MatrixXd& gram,
                         int sparsity) {
  const auto L = static_cast<std::uint32_t>(gram.rows());
  if (xnorm <= omp_tolerance::kResidual) return SparseVector{{}, {}, L};
  const double threshold = omp_tolerance::kCorrelation * xnorm;

  Eigen::VectorXd alpha = a0;
  Eigen::MatrixXd chol = Eigen::MatrixXd::Zero(sparsity, sparsity);
  std::vector<int> support;
  std::vector<char> excluded(L, 0);
  Eigen::VectorXd gamma;
  Eigen::VectorXd rhs;

  while (static_cast<int>(support.size()) < sparsity) {
    const int k = pick_atom(alpha, excluded, threshold);
    if (k < 0) break;
    const auto n = static_cast<Eigen::Index>(support.size());
    if (n == 0) {
      chol(0, 0) = std::sqrt(gram(k, k));
    } else {
      Eigen::VectorXd g(n);
      for (Eigen::Index i = 0; i < n; ++i) g[i] = gram(support[static_cast<std::size_t>(i)], k);
      const Eigen::VectorXd w = chol.topLeftCorner(n, n).triangularView<Eigen::Lower>().solve(g);
      const double pivot = gram(k, k) - w.squaredNorm();
      if (pivot < omp_tolerance::kPivot) {
        excluded[static_cast<std::size_t>(k)] = 1;
        continue;
      }
      chol.row(n).head(n) = w.transpose();
      chol(n, n) = std::sqrt(pivot);
    }
    support.push_back(k);
    excluded[static_cast<std::size_t>(k)] = 1;

    const auto s = static_cast<Eigen::Index>(support.size());
    rhs.resize(s);
    for (Eigen::Index i = 0; i < s; ++i) rhs[i] = a0[support[static_cast<std::size_t>(i)]];
    const auto lower = chol.topLeftCorner(s, s).triangularView<Eigen::Lower>();
    gamma = lower.solve(rhs);
    lower.transpose().solveInPlace(gamma);

    alpha = a0;
    for (Eigen::Index i = 0; i < s; ++i) alpha.noalias() -= gamma[i] * gram.col(support[static_cast<std::size_t>(i)]);
  }
  if (support.empty()) return SparseVector{{}, {}, L};
  return make_sorted(support, gamma, L);
}

void check_sparsity(int sparsity, Eigen::Index atoms) {
  if (sparsity < 1) throw std::invalid_argument("sparsity must be >= 1");
  if (sparsity > atoms) throw std::invalid_argument("sparsity exceeds atom count");
}

}  // namespace

void SparseVector::validate() const {
  if (indices.size() != values.size()) throw std::logic_error("sparse vector index/value length mismatch");
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= dim) throw std::logic_error("sparse vector index out of range");
    if (i > 0 && indices[i] <= indices[i - 1]) throw std::logic_error("sparse vector indices not increasing");
    if (values[i] == 0.0) throw std::logic_error("sparse vector stores an explicit zero");
  }
}

Eigen::VectorXd SparseVector::to_dense() const {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
  for (std::size_t i = 0; i < indices.size(); ++i) v[indices[i]] = values[i];
  return v;
}

SparseCodeMap::SparseCodeMap(int w, int h, std::uint32_t d) : width(w), height(h), dim(d) {
  cells.assign(static_cast<std::size_t>(w) * h, SparseVector{{}, {}, d});
}

void SparseCodeMap::validate() const {
  if (cells.size() != static_cast<std::size_t>(width) * height) throw std::logic_error("code map cell count mismatch");
  for (const auto& c : cells) {
    if (c.dim != dim) throw std::logic_error("code map cell dim mismatch");
    c.validate();
  }
}

ImageGrid to_dense(const SparseCodeMap& map) {
  ImageGrid out(map.width, map.height, static_cast<int>(map.dim));
  for (std::size_t p = 0; p < map.cells.size(); ++p) {
    const auto& c = map.cells[p];
    for (std::size_t i = 0; i < c.nnz(); ++i) out.data()[p * map.dim + c.indices[i]] = c.values[i];
  }
  return out;
}

GramCache::GramCache(const Dictionary& dict)
    : gram_(dict.atoms.transpose() * dict.atoms), fingerprint_(dict.fingerprint()) {
  // Exact symmetry.
  gram_ = (0.5 * (gram_ + gram_.transpose())).eval();
}

GramCache::GramCache(Eigen::MatrixXd gram, std::uint64_t fingerprint)
    : gram_(std::move(gram)), fingerprint_(fingerprint) {}

void GramCache::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  binio::put_magic(out, "SLGC");
  binio::put<std::uint64_t>(out, fingerprint_);
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(gram_.rows()));
  for (Eigen::Index i = 0; i < gram_.size(); ++i) binio::put<double>(out, gram_.data()[i]);
}

GramCache GramCache::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  binio::expect_magic(in, "SLGC");
  const auto fp = binio::get<std::uint64_t>(in);
  const auto n = binio::get<std::uint32_t>(in);
  Eigen::MatrixXd g(n, n);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = binio::get<double>(in);
  return GramCache(std::move(g), fp);
}

GramCache GramCache::load_or_build(const Dictionary& dict, const std::filesystem::path& dir) {
  std::ostringstream name;
  name << std::hex << dict.fingerprint() << ".gram";
  const auto path = dir / name.str();
  if (std::filesystem::exists(path)) {
    GramCache cached = load(path);
    if (cached.dict_fingerprint() == dict.fingerprint() && cached.gram().rows() == dict.atom_count()) return cached;
  }
  GramCache built(dict);
  std::filesystem::create_directories(dir);
  built.save(path);
  return built;
}

std::optional<std::filesystem::path> gram_cache_dir_from_env() {
  const char* dir = std::getenv("SPARSELABEL_CACHE");
  if (dir == nullptr || *dir == '\0') return std::nullopt;
  return std::filesystem::path(dir);
}

SparseVector omp_encode(std::span<const double> x, const Eigen::MatrixXd& atoms, int sparsity, OmpTrace* trace) {
  if (static_cast<Eigen::Index>(x.size()) != atoms.rows()) {
    throw std::invalid_argument("dimension mismatch: signal length " + std::to_string(x.size()) +
                                " vs atom length " + std::to_string(atoms.rows()));
  }
  check_sparsity(sparsity, atoms.cols());
  const auto L = static_cast<std::uint32_t>(atoms.cols());
  const Eigen::Map<const Eigen::VectorXd> xv(x.data(), static_cast<Eigen::Index>(x.size()));
  const double xnorm = xv.norm();
  if (xnorm <= omp_tolerance::kResidual) return SparseVector{{}, {}, L};
  const double threshold = omp_tolerance::kCorrelation * xnorm;

  std::vector<int> support;
  std::vector<char> excluded(L, 0);
  Eigen::VectorXd coef;
  Eigen::VectorXd residual = xv;
  Eigen::MatrixXd selected(atoms.rows(), 0);

  while (static_cast<int>(support.size()) < sparsity) {
    if (residual.norm() <= omp_tolerance::kResidual) break;
    const Eigen::VectorXd corr = atoms.transpose() * residual;
    const int k = pick_atom(corr, excluded, threshold);
    if (k < 0) break;
    if (!support.empty()) {
      const Eigen::VectorXd proj = selected.householderQr().solve(atoms.col(k));
      const double dist2 = (atoms.col(k) - selected * proj).squaredNorm();
      if (dist2 < omp_tolerance::kPivot) {
        excluded[static_cast<std::size_t>(k)] = 1;
        continue;
      }
    }
    support.push_back(k);
    excluded[static_cast<std::size_t>(k)] = 1;
    selected.conservativeResize(Eigen::NoChange, selected.cols() + 1);
    selected.col(selected.cols() - 1) = atoms.col(k);
    coef = selected.householderQr().solve(xv);
    residual = xv - selected * coef;
    if (trace) {
      trace->residual_norms.push_back(residual.norm());
      trace->max_selected_correlation.push_back((selected.transpose() * residual).cwiseAbs().maxCoeff());
    }
  }
  if (support.empty()) return SparseVector{{}, {}, L};
  return make_sorted(support, coef, L);
}

SparseVector omp_encode(const Eigen::VectorXd& x, const Dictionary& dict, OmpTrace* trace) {
  return omp_encode(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())), dict.atoms, dict.sparsity,
                    trace);
}

std::vector<SparseVector> batch_omp_encode(const Eigen::MatrixXd& signals, const Eigen::MatrixXd& atoms,
                                           const Eigen::MatrixXd& gram, int sparsity, int workers) {
  if (signals.cols() > 0 && signals.rows() != atoms.rows()) {
    throw std::invalid_argument("dimension mismatch between signals and atoms");
  }
  if (gram.rows() != atoms.cols() || gram.cols() != atoms.cols()) {
    throw std::invalid_argument("gram matrix does not match atom count");
  }
  check_sparsity(sparsity, atoms.cols());
  const Eigen::Index n = signals.cols();
  std::vector<SparseVector> out(static_cast<std::size_t>(n));
  const auto chunks = static_cast<std::size_t>((n + kChunkColumns - 1) / kChunkColumns);
  parallel_for(chunks, workers, [&](std::size_t chunk) {
    const Eigen::Index begin = static_cast<Eigen::Index>(chunk) * kChunkColumns;
    const Eigen::Index count = std::min(kChunkColumns, n - begin);
    const auto block = signals.middleCols(begin, count);
    const Eigen::MatrixXd a0 = atoms.transpose() * block;
    for (Eigen::Index j = 0; j < count; ++j) {
      out[static_cast<std::size_t>(begin + j)] = bomp_column(a0.col(j), block.col(j).norm(), gram, sparsity);
    }
  });
  return out;
}

std::vector<SparseVector> batch_omp_encode(const PatchMatrix& patches, const Dictionary& dict,
                                           const GramCache& cache, int workers) {
  if (cache.dict_fingerprint() != dict.fingerprint()) {
    throw std::invalid_argument("stale Gram cache: fingerprint does not match dictionary");
  }
  if (patches.count() == 0) return {};
  if (patches.geometry.dim() != dict.dim()) throw std::invalid_argument("patch geometry does not match dictionary");
  return batch_omp_encode(patches.columns, dict.atoms, cache.gram(), dict.sparsity, workers);
}

SparseCodeMap encode_image(const ImageGrid& img, const Dictionary& dict, const GramCache& cache, int workers) {
  if (img.channels() != dict.geometry.channels) {
    throw std::invalid_argument("channel mismatch: image has " + std::to_string(img.channels()) +
                                ", dictionary expects " + std::to_string(dict.geometry.channels));
  }
  if (cache.dict_fingerprint() != dict.fingerprint()) {
    throw std::invalid_argument("stale Gram cache: fingerprint does not match dictionary");
  }
  check_sparsity(dict.sparsity, dict.atoms.cols());
  const PatchGeometry& geom = dict.geometry;
  SparseCodeMap map(img.width(), img.height(), static_cast<std::uint32_t>(dict.atom_count()));
  const auto n = static_cast<Eigen::Index>(img.pixel_count());
  const auto chunks = static_cast<std::size_t>((n + kChunkColumns - 1) / kChunkColumns);
  parallel_for(chunks, workers, [&](std::size_t chunk) {
    const Eigen::Index begin = static_cast<Eigen::Index>(chunk) * kChunkColumns;
    const Eigen::Index count = std::min(kChunkColumns, n - begin);
    Eigen::MatrixXd block(geom.dim(), count);
    for (Eigen::Index j = 0; j < count; ++j) {
      const auto p = begin + j;
      std::span<double> col(block.col(j).data(), static_cast<std::size_t>(geom.dim()));
      extract_patch_into(img, static_cast<int>(p % img.width()), static_cast<int>(p / img.width()), geom, col);
      if (dict.zero_mean_input) zero_mean_patch_inplace(col, geom.channels);
    }
    const Eigen::MatrixXd a0 = dict.atoms.transpose() * block;
    for (Eigen::Index j = 0; j < count; ++j) {
      map.cells[static_cast<std::size_t>(begin + j)] =
          bomp_column(a0.col(j), block.col(j).norm(), cache.gram(), dict.sparsity);
    }
  });
  return map;
}

SparseCodeMap encode_image(const ImageGrid& img, const Dictionary& dict, int workers) {
  const auto dir = gram_cache_dir_from_env();
  const GramCache cache = dir ? GramCache::load_or_build(dict, *dir) : GramCache(dict);
  return encode_image(img, dict, cache, workers);
}

ImageGrid reconstruct_image(const SparseCodeMap& codes, const Dictionary& dict, int workers) {
  if (codes.dim != static_cast<std::uint32_t>(dict.atom_count())) {
    throw std::invalid_argument("dimension mismatch: code dim vs dictionary atom count");
  }
  if (codes.cells.size() != static_cast<std::size_t>(codes.width) * codes.height) {
    throw std::invalid_argument("code map cell count mismatch");
  }
  const PatchGeometry& geom = dict.geometry;
  const int r = geom.radius();
  const int c = geom.channels;
  const int W = codes.width;
  const int H = codes.height;

  // Per-pixel stamps D z_p; empty codes stamp zeros.
  Eigen::MatrixXd stamps = Eigen::MatrixXd::Zero(geom.dim(), static_cast<Eigen::Index>(codes.cells.size()));
  std::vector<char> nonzero(codes.cells.size(), 0);
  parallel_for(codes.cells.size(), workers, [&](std::size_t p) {
    const auto& z = codes.cells[p];
    for (std::size_t i = 0; i < z.nnz(); ++i) {
      if (z.indices[i] >= codes.dim) throw std::invalid_argument("code index out of range");
      stamps.col(static_cast<Eigen::Index>(p)) += z.values[i] * dict.atoms.col(z.indices[i]);
    }
    nonzero[p] = z.nnz() > 0;
  });

  ImageGrid out(W, H, c);
  parallel_for(static_cast<std::size_t>(H), workers, [&](std::size_t row) {
    const int y = static_cast<int>(row);
    for (int x = 0; x < W; ++x) {
      const int x0 = std::max(0, x - r), x1 = std::min(W - 1, x + r);
      const int y0 = std::max(0, y - r), y1 = std::min(H - 1, y + r);
      const double count = static_cast<double>(x1 - x0 + 1) * (y1 - y0 + 1);
      auto px = out.pixel(x, y);
      for (int py = y0; py <= y1; ++py) {
        for (int pxx = x0; pxx <= x1; ++pxx) {
          const std::size_t p = static_cast<std::size_t>(py) * W + pxx;
          if (!nonzero[p]) continue;
          // Offset of (x, y) inside the patch centered at (pxx, py).
          const int dy = y - py + r;
          const int dx = x - pxx + r;
          const double* s = stamps.col(static_cast<Eigen::Index>(p)).data() + (dy * geom.side + dx) * c;
          for (int ch = 0; ch < c; ++ch) px[ch] += s[ch];
        }
      }
      for (int ch = 0; ch < c; ++ch) px[ch] /= count;
    }
  });
  return out;
}

void write_code_map(std::ostream& out, const SparseCodeMap& map) {
  binio::put_magic(out, "SLZM");
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(map.width));
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(map.height));
  binio::put<std::uint32_t>(out, map.dim);
  for (const auto& cell : map.cells) {
    if (cell.nnz() > std::numeric_limits<std::uint16_t>::max()) throw std::runtime_error("cell nnz exceeds u16");
    binio::put<std::uint16_t>(out, static_cast<std::uint16_t>(cell.nnz()));
    for (std::size_t i = 0; i < cell.nnz(); ++i) {
      binio::put<std::uint32_t>(out, cell.indices[i]);
      binio::put<float>(out, static_cast<float>(cell.values[i]));
    }
  }
}

SparseCodeMap read_code_map(std::istream& in) {
  binio::expect_magic(in, "SLZM");
  const auto w = binio::get<std::uint32_t>(in);
  const auto h = binio::get<std::uint32_t>(in);
  const auto dim = binio::get<std::uint32_t>(in);
  SparseCodeMap map(static_cast<int>(w), static_cast<int>(h), dim);
  for (auto& cell : map.cells) {
    const auto nnz = binio::get<std::uint16_t>(in);
    for (std::uint16_t i = 0; i < nnz; ++i) {
      const auto idx = binio::get<std::uint32_t>(in);
      const auto val = binio::get<float>(in);
      if (val == 0.0f) continue;
      cell.indices.push_back(idx);
      cell.values.push_back(val);
    }
  }
  map.validate();
  return map;
}

}  // namespace sparselabel

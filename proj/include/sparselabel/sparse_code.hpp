#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "sparselabel/dictionary.hpp"
#include "sparselabel/grid.hpp"

namespace sparselabel {

/// Sparse coefficient vector: strictly increasing indices below `dim`, no
/// stored zeros.
struct SparseVector {
  std::vector<std::uint32_t> indices;
  std::vector<double> values;
  std::uint32_t dim = 0;

  std::size_t nnz() const { return indices.size(); }
  bool empty() const { return indices.empty(); }
  void validate() const;
  Eigen::VectorXd to_dense() const;
  bool operator==(const SparseVector&) const = default;
};

/// One sparse vector per pixel, row-major.
struct SparseCodeMap {
  int width = 0;
  int height = 0;
  std::uint32_t dim = 0;
  std::vector<SparseVector> cells;

  SparseCodeMap() = default;
  SparseCodeMap(int w, int h, std::uint32_t d);

  SparseVector& at(int x, int y) { return cells[static_cast<std::size_t>(y) * width + x]; }
  const SparseVector& at(int x, int y) const { return cells[static_cast<std::size_t>(y) * width + x]; }
  void validate() const;
  bool operator==(const SparseCodeMap&) const = default;
};

/// Dense grid with `dim` channels holding the map's coefficients.
ImageGrid to_dense(const SparseCodeMap& map);

/// Precomputed D'D for batch OMP.
class GramCache {
 public:
  explicit GramCache(const Dictionary& dict);
  GramCache(Eigen::MatrixXd gram, std::uint64_t fingerprint);

  const Eigen::MatrixXd& gram() const { return gram_; }
  std::uint64_t dict_fingerprint() const { return fingerprint_; }

  /// Loads from or stores into `dir` keyed by the dictionary fingerprint.
  static GramCache load_or_build(const Dictionary& dict, const std::filesystem::path& dir);
  void save(const std::filesystem::path& path) const;
  static GramCache load(const std::filesystem::path& path);

 private:
  Eigen::MatrixXd gram_;
  std::uint64_t fingerprint_ = 0;
};

/// Gram cache directory from SPARSELABEL_CACHE, if set.
std::optional<std::filesystem::path> gram_cache_dir_from_env();

/// Per-round diagnostics recorded by the reference encoder.
struct OmpTrace {
  std::vector<double> residual_norms;  // after each round
  std::vector<double> max_selected_correlation;
};

namespace omp_tolerance {
inline constexpr double kResidual = 1e-12;     // absolute residual-norm early exit
inline constexpr double kCorrelation = 1e-10;  // max |d'r| relative to ||x||
inline constexpr double kPivot = 1e-10;        // degenerate candidate (near the selected span)
}  // namespace omp_tolerance

/// Reference orthogonal matching pursuit.
///
/// Each round picks the atom with the largest |correlation| with the explicit
/// residual (lowest index on ties), then re-solves least squares on the whole
/// support by QR. Stops after K atoms, when the residual norm drops to 1e-12,
/// or when no atom correlates above 1e-10 * ||x||. Candidates lying within
/// the pivot tolerance of the selected span are skipped.
SparseVector omp_encode(std::span<const double> x, const Eigen::MatrixXd& atoms, int sparsity,
                        OmpTrace* trace = nullptr);
SparseVector omp_encode(const Eigen::VectorXd& x, const Dictionary& dict, OmpTrace* trace = nullptr);

/// Batch OMP over the cached Gram matrix with progressive Cholesky updates;
/// same selection rule and stopping criteria as omp_encode.
std::vector<SparseVector> batch_omp_encode(const Eigen::MatrixXd& signals, const Eigen::MatrixXd& atoms,
                                           const Eigen::MatrixXd& gram, int sparsity, int workers = 1);
std::vector<SparseVector> batch_omp_encode(const PatchMatrix& patches, const Dictionary& dict,
                                           const GramCache& cache, int workers = 1);

/// Encodes the patch around every pixel; patches are zero-meaned first when
/// the dictionary expects it.
SparseCodeMap encode_image(const ImageGrid& img, const Dictionary& dict, const GramCache& cache, int workers = 1);
SparseCodeMap encode_image(const ImageGrid& img, const Dictionary& dict, int workers = 1);

/// Stamps each pixel's weighted atoms as a patch centered at the pixel and
/// averages overlapping stamps uniformly (in-bounds contributions only).
ImageGrid reconstruct_image(const SparseCodeMap& codes, const Dictionary& dict, int workers = 1);

/// Binary: "SLZM", u32 width, u32 height, u32 dim, then per cell u16 nnz and
/// (u32 index, f32 value) pairs. Values are stored at single precision.
void write_code_map(std::ostream& out, const SparseCodeMap& map);
SparseCodeMap read_code_map(std::istream& in);

}  // namespace sparselabel

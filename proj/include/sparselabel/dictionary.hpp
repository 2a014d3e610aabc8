#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "sparselabel/grid.hpp"

namespace sparselabel {

struct SparseVector;

/// L unit-norm atoms over m x m x c patches, used with sparsity level K.
struct Dictionary {
  PatchGeometry geometry;
  Eigen::MatrixXd atoms;  // dim x L, column-major
  int sparsity = 1;
  bool zero_mean_input = false;

  int atom_count() const { return static_cast<int>(atoms.cols()); }
  int dim() const { return static_cast<int>(atoms.rows()); }

  /// Throws unless shapes agree, L >= K >= 1 and every atom has unit norm (1e-8).
  void validate() const;

  /// Hash over geometry, sparsity, flag and atom bytes.
  std::uint64_t fingerprint() const;
};

struct MiKsvdConfig {
  double lambda = 1e-2;  // incoherence weight per ordered atom pair
  int iterations = 25;
  std::uint64_t seed = 0;
  bool replace_unused_atoms = true;
  double min_relative_improvement = 1e-4;  // early stop; 0 disables
  int workers = 1;

  void validate() const;
};

struct MiKsvdResult {
  Dictionary dictionary;
  std::vector<double> objective_trace;
};

/// L distinct nonzero training columns, drawn without replacement from a
/// seeded permutation and normalised.
Dictionary init_dictionary(const PatchMatrix& patches, int atom_count, int sparsity, std::uint64_t seed,
                           bool zero_mean_input = false);

/// Sum over ordered pairs i != j of |d_i' d_j|.
double coherence_penalty(const Eigen::MatrixXd& atoms);
inline double coherence_penalty(const Dictionary& dict) { return coherence_penalty(dict.atoms); }

/// Sparse reconstruction error plus weighted incoherence penalty:
/// ||X - D Z||_F^2 + lambda * coherence_penalty(D).
double mi_ksvd_objective(const Eigen::MatrixXd& patches, const Eigen::MatrixXd& atoms,
                         const std::vector<SparseVector>& codes, double lambda);

/// Dictionary learning with a mutual-incoherence penalty.
///
/// Each iteration encodes every column with batch OMP (keeping a column's
/// previous code when that one reconstructs it better), then sweeps the atoms
/// in order. An atom update takes one power step on the residual restricted
/// to the atom's support, optionally pulls the direction away from the other
/// atoms by `lambda`, and keeps whichever of {previous, plain, pulled} atom
/// gives the lowest objective once the supported coefficients are refit.
/// Unused atoms are re-seeded from the worst reconstructed column when that
/// lowers the objective. On a plateau with unbalanced atom usage, the least
/// used atom is re-seeded (by splitting the most used atom, or from the worst
/// column) and a few alternations are run on the trial; it is kept only if the
/// objective drops. The objective therefore never increases.
MiKsvdResult mi_ksvd_train(const PatchMatrix& patches, const MiKsvdConfig& cfg, int atom_count, int sparsity,
                           bool zero_mean_input = false);

/// Binary record: "SLDC", u32 version, u32 m, u32 c, u32 L, u32 K,
/// u8 zero_mean, then dim * L little-endian f64 atom values (column-major).
void write_dictionary(std::ostream& out, const Dictionary& dict);
Dictionary read_dictionary(std::istream& in);
void save_dictionary(const std::filesystem::path& path, const Dictionary& dict);
Dictionary load_dictionary(const std::filesystem::path& path);

/// Lossless JSON debug dump.
nlohmann::json dictionary_to_json(const Dictionary& dict);
Dictionary dictionary_from_json(const nlohmann::json& j);

}  // namespace sparselabel

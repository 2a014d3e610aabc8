#include "sparselabel/dictionary.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>

#include "sparselabel/binary_io.hpp"
#include "sparselabel/parallel.hpp"
#include "sparselabel/rng.hpp"
#include "sparselabel/sparse_code.hpp"

namespace sparselabel {

namespace {

constexpr std::uint32_t kDictionaryVersion = 1;
constexpr double kUnitNormTolerance = 1e-8;

double residual_sq(const Eigen::MatrixXd& patches, Eigen::Index col, const Eigen::MatrixXd& atoms,
                   const SparseVector& code) {
  Eigen::VectorXd r = patches.col(col);
  for (std::size_t i = 0; i < code.nnz(); ++i) r.noalias() -= code.values[i] * atoms.col(code.indices[i]);
  return r.squaredNorm();
}

// Sum over j != k of |d_j' d|.
double atom_coherence(const Eigen::MatrixXd& atoms, Eigen::Index k, const Eigen::VectorXd& d) {
  const Eigen::VectorXd dots = atoms.transpose() * d;
  double s = 0.0;
  for (Eigen::Index j = 0; j < atoms.cols(); ++j) {
    if (j != k) s += std::abs(dots[j]);
  }
  return s;
}

std::vector<double> per_signal_errors(const Eigen::MatrixXd& patches, const Eigen::MatrixXd& atoms,
                                      const std::vector<SparseVector>& codes, int workers) {
  std::vector<double> err(codes.size());
  parallel_for(codes.size(), workers, [&](std::size_t i) {
    err[i] = residual_sq(patches, static_cast<Eigen::Index>(i), atoms, codes[i]);
  });
  return err;
}

double ordered_sum(const std::vector<double>& values) {
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

// Location of atom k inside one signal's code.
struct Usage {
  std::size_t signal;
  std::size_t slot;
};

// Updates atom k in place; returns true when the atom changed.
bool update_atom(const Eigen::MatrixXd& patches, Eigen::MatrixXd& atoms, std::vector<SparseVector>& codes,
                 const std::vector<Usage>& usage, Eigen::Index k, double lambda) {
  const auto support = static_cast<Eigen::Index>(usage.size());
  Eigen::MatrixXd residual(patches.rows(), support);
  Eigen::VectorXd coef(support);
  for (Eigen::Index s = 0; s < support; ++s) {
    const auto& u = usage[static_cast<std::size_t>(s)];
    const auto& code = codes[u.signal];
    Eigen::VectorXd r = patches.col(static_cast<Eigen::Index>(u.signal));
    for (std::size_t i = 0; i < code.nnz(); ++i) {
      if (i == u.slot) continue;
      r.noalias() -= code.values[i] * atoms.col(code.indices[i]);
    }
    residual.col(s) = r;
    coef[s] = code.values[u.slot];
  }

  const double energy = residual.squaredNorm();
  const Eigen::VectorXd previous = atoms.col(k);
  // Objective restricted to this atom with coefficients refit as residual' d.
  auto local_objective = [&](const Eigen::VectorXd& d) {
    return energy - (residual.transpose() * d).squaredNorm() + 2.0 * lambda * atom_coherence(atoms, k, d);
  };

  Eigen::VectorXd best = previous;
  double best_obj = local_objective(previous);

  const Eigen::VectorXd power = residual * coef;
  const double power_norm = power.norm();
  if (power_norm > 0.0) {
    const Eigen::VectorXd plain = power / power_norm;
    const double plain_obj = local_objective(plain);
    if (plain_obj < best_obj) {
      best = plain;
      best_obj = plain_obj;
    }
    if (lambda > 0.0) {
      // Linearised incoherence pull: d <- normalize(E z - lambda * sum_j sign(d_j' d) d_j).
      const Eigen::VectorXd dots = atoms.transpose() * plain;
      Eigen::VectorXd pull = Eigen::VectorXd::Zero(atoms.rows());
      for (Eigen::Index j = 0; j < atoms.cols(); ++j) {
        if (j == k || dots[j] == 0.0) continue;
        pull += (dots[j] > 0.0 ? 1.0 : -1.0) * atoms.col(j);
      }
      const Eigen::VectorXd shrunk_raw = power - lambda * pull;
      const double shrunk_norm = shrunk_raw.norm();
      if (shrunk_norm > 0.0) {
        const Eigen::VectorXd shrunk = shrunk_raw / shrunk_norm;
        const double shrunk_obj = local_objective(shrunk);
        if (shrunk_obj < best_obj) {
          best = shrunk;
          best_obj = shrunk_obj;
        }
      }
    }
  }

  atoms.col(k) = best;
  const Eigen::VectorXd refit = residual.transpose() * best;
  for (Eigen::Index s = 0; s < support; ++s) {
    const auto& u = usage[static_cast<std::size_t>(s)];
    codes[u.signal].values[u.slot] = refit[s];
  }
  return best != previous;
}

// Least-squares refit of one signal on a given support.
Eigen::VectorXd refit_support(const Eigen::VectorXd& x, const Eigen::MatrixXd& atoms,
                              const std::vector<std::uint32_t>& support) {
  Eigen::MatrixXd sub(atoms.rows(), static_cast<Eigen::Index>(support.size()));
  for (std::size_t i = 0; i < support.size(); ++i) sub.col(static_cast<Eigen::Index>(i)) = atoms.col(support[i]);
  return sub.colPivHouseholderQr().solve(x);
}

// Re-seeds unused atoms from the worst reconstructed signals, accepting each
// replacement only when it lowers the objective.
void replace_unused_atoms(const Eigen::MatrixXd& patches, Eigen::MatrixXd& atoms, std::vector<SparseVector>& codes,
                          const std::vector<char>& used, double lambda, int sparsity, int workers) {
  std::vector<Eigen::Index> unused;
  for (Eigen::Index k = 0; k < atoms.cols(); ++k) {
    if (!used[static_cast<std::size_t>(k)]) unused.push_back(k);
  }
  if (unused.empty()) return;
  std::vector<double> err = per_signal_errors(patches, atoms, codes, workers);
  std::vector<std::size_t> order(err.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return err[a] > err[b]; });

  std::size_t next = 0;
  for (Eigen::Index k : unused) {
    while (next < order.size()) {
      const std::size_t w = order[next++];
      if (err[w] <= 0.0) return;
      const Eigen::VectorXd x = patches.col(static_cast<Eigen::Index>(w));
      Eigen::VectorXd r = x;
      const SparseVector& code = codes[w];
      for (std::size_t i = 0; i < code.nnz(); ++i) r.noalias() -= code.values[i] * atoms.col(code.indices[i]);
      const double rn = r.norm();
      if (rn <= 0.0) continue;
      const Eigen::VectorXd candidate = r / rn;

      // New support: the old one (minus its weakest entry when full) plus k.
      std::vector<std::uint32_t> support = code.indices;
      if (static_cast<int>(support.size()) >= sparsity) {
        std::size_t weakest = 0;
        for (std::size_t i = 1; i < code.nnz(); ++i) {
          if (std::abs(code.values[i]) < std::abs(code.values[weakest])) weakest = i;
        }
        support.erase(support.begin() + static_cast<std::ptrdiff_t>(weakest));
      }
      support.push_back(static_cast<std::uint32_t>(k));
      std::sort(support.begin(), support.end());

      Eigen::MatrixXd trial = atoms;
      trial.col(k) = candidate;
      const Eigen::VectorXd c = refit_support(x, trial, support);
      Eigen::VectorXd rr = x;
      for (std::size_t i = 0; i < support.size(); ++i) rr.noalias() -= c[static_cast<Eigen::Index>(i)] * trial.col(support[i]);
      const double new_err = rr.squaredNorm();
      const double delta = (new_err - err[w]) +
                           2.0 * lambda * (atom_coherence(atoms, k, candidate) - atom_coherence(atoms, k, atoms.col(k)));
      if (!(delta < 0.0)) continue;

      atoms.col(k) = candidate;
      SparseVector updated;
      updated.dim = code.dim;
      for (std::size_t i = 0; i < support.size(); ++i) {
        updated.indices.push_back(support[i]);
        updated.values.push_back(c[static_cast<Eigen::Index>(i)]);
      }
      codes[w] = std::move(updated);
      err[w] = new_err;
      break;
    }
  }
}

// One pass over the atoms in index order; returns which atoms had any usage.
std::vector<char> sweep_atoms(const Eigen::MatrixXd& X, Eigen::MatrixXd& atoms, std::vector<SparseVector>& codes,
                              double lambda) {
  const auto atom_count = atoms.cols();
  std::vector<std::vector<Usage>> usage(static_cast<std::size_t>(atom_count));
  for (std::size_t i = 0; i < codes.size(); ++i) {
    for (std::size_t s = 0; s < codes[i].nnz(); ++s) usage[codes[i].indices[s]].push_back({i, s});
  }
  std::vector<char> used(static_cast<std::size_t>(atom_count), 0);
  for (Eigen::Index k = 0; k < atom_count; ++k) {
    const auto& u = usage[static_cast<std::size_t>(k)];
    if (u.empty()) continue;
    used[static_cast<std::size_t>(k)] = 1;
    update_atom(X, atoms, codes, u, k, lambda);
  }
  return used;
}

constexpr int kEscapeRounds = 3;
constexpr int kSubspaceSteps = 30;
constexpr int kEscapeBudget = 2;  // consecutive rejected escapes before giving up
constexpr double kPlateau = 1e-2;
constexpr double kUnderused = 0.5;
constexpr double kOverused = 1.5;

struct EscapeMove {
  Eigen::Index atom;
  Eigen::VectorXd direction;
};

// Candidate re-seeds for the least used atom (lowest index on ties), offered
// when it is under-used or another atom is over-used: the second principal
// direction of the most used atom's restricted residual (splitting that atom),
// then the residual of the worst reconstructed signal.
std::vector<EscapeMove> escape_moves(const Eigen::MatrixXd& X, const Eigen::MatrixXd& atoms,
                                     const std::vector<SparseVector>& codes, int sparsity, int workers) {
  std::vector<std::size_t> count(static_cast<std::size_t>(atoms.cols()), 0);
  for (const auto& c : codes)
    for (auto i : c.indices) ++count[i];
  const auto k = static_cast<Eigen::Index>(std::min_element(count.begin(), count.end()) - count.begin());
  const auto top = static_cast<Eigen::Index>(std::max_element(count.begin(), count.end()) - count.begin());
  const double mean = static_cast<double>(codes.size()) * sparsity / static_cast<double>(atoms.cols());
  const auto least = static_cast<double>(count[static_cast<std::size_t>(k)]);
  const auto most = static_cast<double>(count[static_cast<std::size_t>(top)]);
  if (least >= kUnderused * mean && most < kOverused * mean) return {};

  std::vector<EscapeMove> moves;
  if (top != k) {
    std::vector<Eigen::Index> users;
    for (std::size_t i = 0; i < codes.size(); ++i) {
      for (auto idx : codes[i].indices) {
        if (idx == static_cast<std::uint32_t>(top)) users.push_back(static_cast<Eigen::Index>(i));
      }
    }
    Eigen::MatrixXd e(X.rows(), static_cast<Eigen::Index>(users.size()));
    for (std::size_t u = 0; u < users.size(); ++u) {
      Eigen::VectorXd r = X.col(users[u]);
      const SparseVector& code = codes[static_cast<std::size_t>(users[u])];
      for (std::size_t i = 0; i < code.nnz(); ++i) {
        if (code.indices[i] != static_cast<std::uint32_t>(top)) r.noalias() -= code.values[i] * atoms.col(code.indices[i]);
      }
      e.col(static_cast<Eigen::Index>(u)) = r;
    }
    // two-vector subspace iteration; a dense eigensolver costs O(dim^3) on layer-2 patches
    if (e.cols() >= 2) {
      Eigen::MatrixXd q = e.leftCols(2);
      for (int it = 0; it < kSubspaceSteps; ++it) {
        const Eigen::MatrixXd next = e * (e.transpose() * q);
        q = Eigen::HouseholderQR<Eigen::MatrixXd>(next).householderQ() * Eigen::MatrixXd::Identity(e.rows(), 2);
      }
      const Eigen::MatrixXd eq = e.transpose() * q;
      const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> small(eq.transpose() * eq);
      // eigenvalues ascend, so column 0 is the second direction
      const Eigen::VectorXd second = q * small.eigenvectors().col(0);
      if (second.norm() > 0.0) moves.push_back({k, second.normalized()});
    }
  }
  const std::vector<double> err = per_signal_errors(X, atoms, codes, workers);
  const auto w = static_cast<Eigen::Index>(std::max_element(err.begin(), err.end()) - err.begin());
  Eigen::VectorXd r = X.col(w);
  const SparseVector& code = codes[static_cast<std::size_t>(w)];
  for (std::size_t i = 0; i < code.nnz(); ++i) r.noalias() -= code.values[i] * atoms.col(code.indices[i]);
  if (r.norm() > 0.0) moves.push_back({k, r.normalized()});
  return moves;
}

}  // namespace

void Dictionary::validate() const {
  geometry.validate();
  if (atoms.rows() != geometry.dim()) {
    throw std::invalid_argument("dictionary atom length does not match patch geometry");
  }
  if (atoms.cols() < 1) throw std::invalid_argument("dictionary has no atoms");
  if (sparsity < 1 || sparsity > atoms.cols()) {
    throw std::invalid_argument("dictionary sparsity must satisfy 1 <= K <= L");
  }
  for (Eigen::Index k = 0; k < atoms.cols(); ++k) {
    if (std::abs(atoms.col(k).norm() - 1.0) > kUnitNormTolerance) {
      throw std::invalid_argument("dictionary atom " + std::to_string(k) + " is not unit norm");
    }
  }
  if (!atoms.allFinite()) throw std::invalid_argument("dictionary contains non-finite values");
}

std::uint64_t Dictionary::fingerprint() const {
  std::uint64_t h = fnv1a64("SLDC");
  const std::int32_t header[5] = {geometry.side, geometry.channels, static_cast<std::int32_t>(atoms.cols()), sparsity,
                                  zero_mean_input ? 1 : 0};
  h = fnv1a64(header, sizeof(header), h);
  return fnv1a64(atoms.data(), static_cast<std::size_t>(atoms.size()) * sizeof(double), h);
}

void MiKsvdConfig::validate() const {
  if (iterations < 1) throw std::invalid_argument("MI-KSVD iterations must be >= 1");
  if (!(lambda >= 0.0)) throw std::invalid_argument("MI-KSVD lambda must be >= 0");
  if (min_relative_improvement < 0.0) throw std::invalid_argument("min_relative_improvement must be >= 0");
}

Dictionary init_dictionary(const PatchMatrix& patches, int atom_count, int sparsity, std::uint64_t seed,
                           bool zero_mean_input) {
  patches.validate();
  if (atom_count < 1) throw std::invalid_argument("atom count must be >= 1");
  if (sparsity < 1 || sparsity > atom_count) throw std::invalid_argument("sparsity must satisfy 1 <= K <= L");
  const std::size_t n = patches.count();
  if (n < static_cast<std::size_t>(atom_count)) {
    throw std::invalid_argument("fewer training patches than atoms");
  }
  Rng rng(seed);
  const std::vector<std::size_t> order = sample_without_replacement(rng, n, n);

  Dictionary dict;
  dict.geometry = patches.geometry;
  dict.sparsity = sparsity;
  dict.zero_mean_input = zero_mean_input;
  dict.atoms.resize(patches.geometry.dim(), atom_count);
  Eigen::Index filled = 0;
  for (std::size_t idx : order) {
    if (filled == atom_count) break;
    const auto col = patches.columns.col(static_cast<Eigen::Index>(idx));
    const double norm = col.norm();
    if (!(norm > 1e-12)) continue;
    const Eigen::VectorXd atom = col / norm;
    bool duplicate = false;
    for (Eigen::Index j = 0; j < filled && !duplicate; ++j) {
      duplicate = (dict.atoms.col(j) - atom).squaredNorm() < 1e-24;
    }
    if (duplicate) continue;
    dict.atoms.col(filled++) = atom;
  }
  if (filled < atom_count) {
    throw std::invalid_argument("fewer usable (distinct, nonzero) patches than atoms: " + std::to_string(filled) +
                                " < " + std::to_string(atom_count));
  }
  return dict;
}

double coherence_penalty(const Eigen::MatrixXd& atoms) {
  const Eigen::MatrixXd gram = atoms.transpose() * atoms;
  double s = 0.0;
  for (Eigen::Index j = 0; j < gram.cols(); ++j) {
    for (Eigen::Index i = 0; i < gram.rows(); ++i) {
      if (i != j) s += std::abs(gram(i, j));
    }
  }
  return s;
}

double mi_ksvd_objective(const Eigen::MatrixXd& patches, const Eigen::MatrixXd& atoms,
                         const std::vector<SparseVector>& codes, double lambda) {
  return ordered_sum(per_signal_errors(patches, atoms, codes, 1)) + lambda * coherence_penalty(atoms);
}

MiKsvdResult mi_ksvd_train(const PatchMatrix& patches, const MiKsvdConfig& cfg, int atom_count, int sparsity,
                           bool zero_mean_input) {
  cfg.validate();
  if (patches.count() == 0) throw std::invalid_argument("empty training set");
  if (sparsity > atom_count) throw std::invalid_argument("sparsity K exceeds atom count L");
  patches.validate();

  MiKsvdResult result;
  result.dictionary = init_dictionary(patches, atom_count, sparsity, derive_seed(cfg.seed, "mi-ksvd/init"),
                                      zero_mean_input);
  Eigen::MatrixXd& atoms = result.dictionary.atoms;
  const Eigen::MatrixXd& X = patches.columns;
  const std::size_t n = patches.count();

  std::vector<SparseVector> codes;
  std::vector<double> errors;
  int rejected = 0;
  for (int it = 0; it < cfg.iterations; ++it) {
    // (a) sparse coding, keeping a previous code that reconstructs better
    const Eigen::MatrixXd gram = atoms.transpose() * atoms;
    std::vector<SparseVector> fresh = batch_omp_encode(X, atoms, gram, sparsity, cfg.workers);
    std::vector<double> fresh_err = per_signal_errors(X, atoms, fresh, cfg.workers);
    if (codes.empty()) {
      codes = std::move(fresh);
    } else {
      errors = per_signal_errors(X, atoms, codes, cfg.workers);
      for (std::size_t i = 0; i < n; ++i) {
        if (fresh_err[i] <= errors[i]) codes[i] = std::move(fresh[i]);
      }
    }

    // (b) sequential atom sweep
    std::vector<char> used = sweep_atoms(X, atoms, codes, cfg.lambda);
    if (cfg.replace_unused_atoms) {
      replace_unused_atoms(X, atoms, codes, used, cfg.lambda, sparsity, cfg.workers);
    }

    double objective =
        ordered_sum(per_signal_errors(X, atoms, codes, cfg.workers)) + cfg.lambda * coherence_penalty(atoms);
    const double previous = result.objective_trace.empty() ? std::numeric_limits<double>::infinity()
                                                           : result.objective_trace.back();
    auto stalled = [&](double value) {
      return std::isfinite(previous) && previous - value <= cfg.min_relative_improvement * std::abs(previous);
    };
    if (rejected < kEscapeBudget && std::isfinite(previous) && previous - objective <= kPlateau * std::abs(previous)) {
      bool accepted = false;
      // Escape a plateau: re-seed an under-used atom from the worst reconstructed
      // signal, run a few alternations and keep the result only if it is better.
      for (const EscapeMove& move : escape_moves(X, atoms, codes, sparsity, cfg.workers)) {
        Eigen::MatrixXd trial = atoms;
        trial.col(move.atom) = move.direction;
        std::vector<SparseVector> trial_codes;
        double escaped = std::numeric_limits<double>::infinity();
        for (int round = 0; round < kEscapeRounds; ++round) {
          const Eigen::MatrixXd trial_gram = trial.transpose() * trial;
          trial_codes = batch_omp_encode(X, trial, trial_gram, sparsity, cfg.workers);
          sweep_atoms(X, trial, trial_codes, cfg.lambda);
          escaped = ordered_sum(per_signal_errors(X, trial, trial_codes, cfg.workers)) +
                    cfg.lambda * coherence_penalty(trial);
        }
        if (escaped < objective && !stalled(escaped)) {
          atoms = std::move(trial);
          codes = std::move(trial_codes);
          objective = escaped;
          accepted = true;
          break;
        }
      }
      rejected = accepted ? 0 : rejected + 1;
    }
    result.objective_trace.push_back(objective);
    if (stalled(objective)) break;
  }
  return result;
}

void write_dictionary(std::ostream& out, const Dictionary& dict) {
  binio::put_magic(out, "SLDC");
  binio::put<std::uint32_t>(out, kDictionaryVersion);
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(dict.geometry.side));
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(dict.geometry.channels));
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(dict.atom_count()));
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(dict.sparsity));
  binio::put<std::uint8_t>(out, dict.zero_mean_input ? 1 : 0);
  for (Eigen::Index i = 0; i < dict.atoms.size(); ++i) binio::put<double>(out, dict.atoms.data()[i]);
}

Dictionary read_dictionary(std::istream& in) {
  binio::expect_magic(in, "SLDC");
  const auto version = binio::get<std::uint32_t>(in);
  if (version != kDictionaryVersion) throw std::runtime_error("unsupported dictionary version " + std::to_string(version));
  Dictionary dict;
  dict.geometry.side = static_cast<int>(binio::get<std::uint32_t>(in));
  dict.geometry.channels = static_cast<int>(binio::get<std::uint32_t>(in));
  const auto L = binio::get<std::uint32_t>(in);
  dict.sparsity = static_cast<int>(binio::get<std::uint32_t>(in));
  dict.zero_mean_input = binio::get<std::uint8_t>(in) != 0;
  dict.geometry.validate();
  dict.atoms.resize(dict.geometry.dim(), L);
  for (Eigen::Index i = 0; i < dict.atoms.size(); ++i) dict.atoms.data()[i] = binio::get<double>(in);
  dict.validate();
  return dict;
}

void save_dictionary(const std::filesystem::path& path, const Dictionary& dict) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_dictionary(out, dict);
}

Dictionary load_dictionary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_dictionary(in);
}

nlohmann::json dictionary_to_json(const Dictionary& dict) {
  nlohmann::json j;
  j["side"] = dict.geometry.side;
  j["channels"] = dict.geometry.channels;
  j["atom_count"] = dict.atom_count();
  j["sparsity"] = dict.sparsity;
  j["zero_mean_input"] = dict.zero_mean_input;
  nlohmann::json atoms = nlohmann::json::array();
  for (Eigen::Index k = 0; k < dict.atoms.cols(); ++k) {
    atoms.push_back(std::vector<double>(dict.atoms.col(k).data(), dict.atoms.col(k).data() + dict.atoms.rows()));
  }
  j["atoms"] = std::move(atoms);
  return j;
}

Dictionary dictionary_from_json(const nlohmann::json& j) {
  Dictionary dict;
  dict.geometry.side = j.at("side").get<int>();
  dict.geometry.channels = j.at("channels").get<int>();
  dict.sparsity = j.at("sparsity").get<int>();
  dict.zero_mean_input = j.at("zero_mean_input").get<bool>();
  const auto& atoms = j.at("atoms");
  dict.geometry.validate();
  dict.atoms.resize(dict.geometry.dim(), static_cast<Eigen::Index>(atoms.size()));
  for (std::size_t k = 0; k < atoms.size(); ++k) {
    const auto col = atoms[k].get<std::vector<double>>();
    if (col.size() != static_cast<std::size_t>(dict.geometry.dim())) throw std::runtime_error("atom length mismatch");
    for (std::size_t i = 0; i < col.size(); ++i) dict.atoms(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = col[i];
  }
  dict.validate();
  return dict;
}

}  // namespace sparselabel

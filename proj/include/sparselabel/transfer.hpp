#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include <Eigen/Dense>

#include "sparselabel/grid.hpp"
#include "sparselabel/network.hpp"
#include "sparselabel/sparse_code.hpp"

namespace sparselabel {

/// Beyond `radius` (Euclidean, pixels from the center) keep `keep_fraction`
/// of the offsets. Fractions are powers of two.
struct DensityStage {
  double radius = 0.0;
  double keep_fraction = 1.0;

  bool operator==(const DensityStage&) const = default;
};

struct KernelSample {
  int dx = 0;
  int dy = 0;
  double gaussian = 0.0;
  double density = 1.0;  // Gaussian-weighted share of its ring that is kept
  double weight = 0.0;   // gaussian / density
};

/// Spatial weighting used when overlapping predicted patches are averaged.
struct AveragingKernel {
  int side = 1;
  double sigma = 1.0;
  std::vector<DensityStage> schedule;
  std::vector<KernelSample> samples;  // row-major over (dy, dx)

  std::size_t size() const { return samples.size(); }
  double total_mass() const;
  /// Mass of the unthinned Gaussian over all side x side offsets.
  double full_gaussian_mass() const;
  /// Weight at an offset; 0 off the sample set.
  double weight_at(int dx, int dy) const;
};

double default_kernel_sigma(int side);
/// Halves density three times: 1/2 beyond 3m/16, 1/4 beyond 5m/16, 1/8 beyond m/2.
std::vector<DensityStage> default_density_schedule(int side);
std::vector<DensityStage> full_density_schedule(int side);

/// True when the deterministic lattice of density `fraction` keeps offset (dx, dy).
bool lattice_keeps(int dx, int dy, double fraction);

/// Each ring keeps its lattice offsets, weighted by G / rho with rho the kept share
/// of the ring's Gaussian mass, so the total mass matches the full kernel.
AveragingKernel build_adaptive_kernel(int side, double sigma, const std::vector<DensityStage>& schedule);

/// Appends the constant 1 to a rectified feature vector (dim grows by one).
SparseVector make_rectified_code(const SparseVector& features);

/// Training pairs: one rectified code and one m x m x h truth patch per sample.
/// Patch entries that fall outside the image are NaN and are ignored in training.
struct LabelPatchSet {
  int side = 1;
  int channels = 1;
  std::uint32_t feature_dim = 0;  // including the constant
  std::vector<SparseVector> codes;
  std::vector<float> patches;  // sample-major, then ((dy * side) + dx) * channels + c

  std::size_t size() const { return codes.size(); }
  float target(std::size_t sample, int dx, int dy, int c) const;
  void validate() const;
};

struct SamplingConfig {
  std::size_t count = 20000;
  /// Share of samples centred on positive truth pixels; 0 disables balancing.
  double positive_fraction = 0.0;
  std::uint64_t seed = 0;
};

/// Pixels whose truth exceeds 0.5 in any channel count as positive. Without
/// balancing and with count >= total pixels every pixel is taken in row-major order.
LabelPatchSet sample_training_pairs(const std::vector<const FeatureStack*>& stacks,
                                    const std::vector<const ImageGrid*>& truths, int side, const SamplingConfig& cfg);

/// Per-classifier retained feature indices (sorted), excluding the constant.
std::vector<std::uint32_t> feature_mask(std::uint32_t feature_count, double drop_fraction, std::uint64_t seed);

/// L2-regularized logistic loss over retained features. theta holds one weight
/// per retained feature followed by the bias; the bias is not regularized.
class LogisticProblem {
 public:
  LogisticProblem(const LabelPatchSet& data, std::size_t kernel_index, const AveragingKernel& kernel, int channel,
                  const std::vector<std::uint32_t>& retained, double reg_strength);

  std::size_t parameter_count() const { return retained_count_ + 1; }
  std::size_t sample_count() const { return targets_.size(); }
  /// Loss at theta; fills grad when non-null.
  double evaluate(const Eigen::VectorXd& theta, Eigen::VectorXd* grad) const;
  /// Share of samples whose target is above 0.5.
  double positive_share() const;
  double target_sum() const;
  /// Diagonal curvature bound: 0.25 * sum of squared features plus the regularizer.
  Eigen::VectorXd curvature_diagonal() const;

 private:
  std::size_t retained_count_ = 0;
  double reg_ = 1.0;
  std::vector<std::size_t> row_start_;
  std::vector<std::uint32_t> cols_;
  std::vector<double> vals_;
  std::vector<double> targets_;
};

struct LbfgsOptions {
  int max_iterations = 200;
  int history = 10;
  double gradient_tolerance = 1e-6;  // relative: |g| <= tol * (1 + |theta|)
};

struct LbfgsResult {
  Eigen::VectorXd theta;
  double value = 0.0;
  double gradient_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

LbfgsResult minimize_lbfgs(const LogisticProblem& problem, const Eigen::VectorXd& start, const LbfgsOptions& opts);

struct Classifier {
  std::uint32_t kernel_index = 0;
  int channel = 0;
  std::uint64_t drop_seed = 0;
  double bias = 0.0;
  std::vector<float> weights;  // dense over the features (constant excluded)
  bool bias_only = false;
  double gradient_norm = 0.0;  // at the solution, in training parameters
  int iterations = 0;
};

struct TransferConfig {
  int side = 11;
  double sigma = 0.0;                 // 0 selects side / 4
  std::vector<DensityStage> schedule;  // empty selects the default schedule
  double reg_strength = 1.0;
  double drop_fraction = 0.5;
  LbfgsOptions solver;
  std::uint64_t seed = 0;
  int workers = 1;
};

struct TransferModel {
  int side = 1;
  int channels = 1;
  std::uint32_t feature_dim = 0;  // including the constant
  double drop_fraction = 0.5;
  AveragingKernel kernel;
  std::vector<Classifier> classifiers;  // kernel-sample-major, then channel

  const Classifier& classifier(std::size_t kernel_index, int channel) const {
    return classifiers[kernel_index * static_cast<std::size_t>(channels) + static_cast<std::size_t>(channel)];
  }
  void validate() const;
};

TransferModel train_transfer(const LabelPatchSet& data, const TransferConfig& cfg);

/// Counts weight lookups made by classifier_score when non-null.
double classifier_score(const Classifier& clf, const SparseVector& features, std::size_t* lookups = nullptr);

ImageGrid predict_labeling(const FeatureStack& stack, const TransferModel& model, int workers = 1);

void write_transfer_model(std::ostream& out, const TransferModel& model);
TransferModel read_transfer_model(std::istream& in);
void save_transfer_model(const std::filesystem::path& path, const TransferModel& model);
TransferModel load_transfer_model(const std::filesystem::path& path);

}  // namespace sparselabel

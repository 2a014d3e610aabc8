#include "sparselabel/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <stdexcept>

#include "sparselabel/binary_io.hpp"
#include "sparselabel/parallel.hpp"
#include "sparselabel/rng.hpp"

namespace sparselabel {

namespace {

constexpr std::uint32_t kModelVersion = 1;

// Number of halvings k with fraction == 2^-k, or -1.
int halvings(double fraction) {
  for (int k = 0; k <= 30; ++k) {
    if (fraction == std::ldexp(1.0, -k)) return k;
  }
  return -1;
}

double softplus(double s) { return s > 0.0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s)); }

double sigmoid(double s) {
  if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
  const double e = std::exp(s);
  return e / (1.0 + e);
}

void validate_schedule(const std::vector<DensityStage>& schedule) {
  if (schedule.empty()) throw std::invalid_argument("empty density schedule");
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    const auto& s = schedule[i];
    if (!(s.radius >= 0.0)) throw std::invalid_argument("density radii must be nonnegative");
    if (!(s.keep_fraction > 0.0) || s.keep_fraction > 1.0 || halvings(s.keep_fraction) < 0) {
      throw std::invalid_argument("density keep fractions must be powers of two in (0, 1]");
    }
    if (i > 0 && (s.radius <= schedule[i - 1].radius || s.keep_fraction > schedule[i - 1].keep_fraction)) {
      throw std::invalid_argument("density schedule needs increasing radii and non-increasing fractions");
    }
  }
}

}  // namespace

double AveragingKernel::total_mass() const {
  double m = 0.0;
  for (const auto& s : samples) m += s.weight;
  return m;
}

double AveragingKernel::full_gaussian_mass() const {
  const int r = side / 2;
  double m = 0.0;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) m += std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
  }
  return m;
}

double AveragingKernel::weight_at(int dx, int dy) const {
  for (const auto& s : samples) {
    if (s.dx == dx && s.dy == dy) return s.weight;
  }
  return 0.0;
}

double default_kernel_sigma(int side) { return side / 4.0; }

std::vector<DensityStage> default_density_schedule(int side) {
  return {{3.0 * side / 16.0, 0.5}, {5.0 * side / 16.0, 0.25}, {side / 2.0, 0.125}};
}

std::vector<DensityStage> full_density_schedule(int side) { return {{static_cast<double>(side), 1.0}}; }

bool lattice_keeps(int dx, int dy, double fraction) {
  const int k = halvings(fraction);
  if (k < 0) throw std::invalid_argument("lattice density must be a power of two");
  for (int i = 0; i < k / 2; ++i) {
    if (dx % 2 != 0 || dy % 2 != 0) return false;
    dx /= 2;
    dy /= 2;
  }
  return k % 2 == 0 || (dx + dy) % 2 == 0;
}

AveragingKernel build_adaptive_kernel(int side, double sigma, const std::vector<DensityStage>& schedule) {
  if (side < 1 || side % 2 == 0) throw std::invalid_argument("kernel side must be odd and positive");
  if (!(sigma > 0.0)) throw std::invalid_argument("kernel sigma must be positive");
  validate_schedule(schedule);
  AveragingKernel k;
  k.side = side;
  k.sigma = sigma;
  k.schedule = schedule;
  const int r = side / 2;
  const std::size_t stages = schedule.size() + 1;
  // stage 0 is the full-density core; stage s + 1 lies beyond schedule[s].radius
  auto stage_of = [&](int dx, int dy) {
    std::size_t st = 0;
    for (std::size_t s = 0; s < schedule.size(); ++s) {
      if (std::hypot(dx, dy) > schedule[s].radius) st = s + 1;
    }
    return st;
  };
  auto fraction_of = [&](std::size_t st) { return st == 0 ? 1.0 : schedule[st - 1].keep_fraction; };
  auto gaussian = [&](int dx, int dy) { return std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma)); };

  std::vector<double> all(stages, 0.0), kept(stages, 0.0);
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      const std::size_t st = stage_of(dx, dy);
      all[st] += gaussian(dx, dy);
      if (lattice_keeps(dx, dy, fraction_of(st))) kept[st] += gaussian(dx, dy);
    }
  }
  // a ring too small to hold any lattice point stays dense
  std::vector<bool> dense(stages, false);
  for (std::size_t st = 0; st < stages; ++st) {
    if (all[st] > 0.0 && kept[st] == 0.0) {
      dense[st] = true;
      kept[st] = all[st];
    }
  }

  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      const std::size_t st = stage_of(dx, dy);
      if (!dense[st] && !lattice_keeps(dx, dy, fraction_of(st))) continue;
      KernelSample ks;
      ks.dx = dx;
      ks.dy = dy;
      ks.gaussian = gaussian(dx, dy);
      ks.density = kept[st] / all[st];
      ks.weight = ks.gaussian / ks.density;
      k.samples.push_back(ks);
    }
  }
  return k;
}

SparseVector make_rectified_code(const SparseVector& features) {
  SparseVector out = features;
  out.dim = features.dim + 1;
  out.indices.push_back(features.dim);
  out.values.push_back(1.0);
  return out;
}

float LabelPatchSet::target(std::size_t sample, int dx, int dy, int c) const {
  const std::size_t per = static_cast<std::size_t>(side) * side * channels;
  return patches[sample * per + (static_cast<std::size_t>(dy) * side + dx) * channels + c];
}

void LabelPatchSet::validate() const {
  const std::size_t per = static_cast<std::size_t>(side) * side * channels;
  if (patches.size() != codes.size() * per) throw std::logic_error("label patch set size mismatch");
  for (const auto& c : codes) {
    if (c.dim != feature_dim || c.empty() || c.indices.back() != feature_dim - 1 || c.values.back() != 1.0) {
      throw std::logic_error("rectified code lacks its constant term");
    }
  }
}

LabelPatchSet sample_training_pairs(const std::vector<const FeatureStack*>& stacks,
                                    const std::vector<const ImageGrid*>& truths, int side, const SamplingConfig& cfg) {
  if (stacks.empty() || stacks.size() != truths.size()) throw std::invalid_argument("stacks and truths must pair up");
  if (side < 1 || side % 2 == 0) throw std::invalid_argument("transfer patch side must be odd");
  if (cfg.count < 1) throw std::invalid_argument("sample count must be >= 1");
  if (cfg.positive_fraction < 0.0 || cfg.positive_fraction > 1.0) {
    throw std::invalid_argument("positive fraction must lie in [0, 1]");
  }
  const int channels = truths[0]->channels();
  const std::uint32_t dim = stacks[0]->dim;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> positives, negatives;
  for (std::size_t i = 0; i < stacks.size(); ++i) {
    const FeatureStack& s = *stacks[i];
    const ImageGrid& t = *truths[i];
    if (s.width != t.width() || s.height != t.height()) throw std::invalid_argument("misaligned stack and truth grids");
    if (t.channels() != channels || s.dim != dim) throw std::invalid_argument("inconsistent channel or feature counts");
    for (std::size_t p = 0; p < t.pixel_count(); ++p) {
      bool pos = false;
      for (int c = 0; c < channels; ++c) pos = pos || t.data()[p * channels + c] > 0.5;
      (pos ? positives : negatives).emplace_back(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(p));
    }
  }

  std::vector<std::pair<std::uint32_t, std::uint32_t>> chosen;
  Rng rng(derive_seed(cfg.seed, "transfer/samples"));
  const std::size_t total = positives.size() + negatives.size();
  if (cfg.positive_fraction > 0.0) {
    if (positives.empty()) throw std::invalid_argument("no positive samples");
    const auto npos = static_cast<std::size_t>(std::llround(cfg.count * cfg.positive_fraction));
    const std::size_t nneg = cfg.count - npos;
    auto draw = [&](const auto& pool, std::size_t n) {
      if (pool.empty()) return;
      if (n <= pool.size()) {
        for (auto i : sample_without_replacement(rng, pool.size(), n)) chosen.push_back(pool[i]);
      } else {
        for (std::size_t j = 0; j < n; ++j) chosen.push_back(pool[uniform_index(rng, pool.size())]);
      }
    };
    draw(positives, npos);
    draw(negatives.empty() ? positives : negatives, nneg);
  } else {
    std::vector<std::pair<std::uint32_t, std::uint32_t>> all;
    all.reserve(total);
    for (std::size_t i = 0; i < stacks.size(); ++i) {
      for (std::size_t p = 0; p < truths[i]->pixel_count(); ++p) {
        all.emplace_back(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(p));
      }
    }
    if (cfg.count >= total) {
      chosen = std::move(all);
    } else {
      for (auto i : sample_without_replacement(rng, total, cfg.count)) chosen.push_back(all[i]);
    }
  }

  LabelPatchSet out;
  out.side = side;
  out.channels = channels;
  out.feature_dim = dim + 1;
  out.codes.reserve(chosen.size());
  const std::size_t per = static_cast<std::size_t>(side) * side * channels;
  out.patches.assign(chosen.size() * per, std::numeric_limits<float>::quiet_NaN());
  const int r = side / 2;
  for (std::size_t j = 0; j < chosen.size(); ++j) {
    const auto [img, p] = chosen[j];
    const FeatureStack& s = *stacks[img];
    const ImageGrid& t = *truths[img];
    const int x = static_cast<int>(p % t.width());
    const int y = static_cast<int>(p / t.width());
    out.codes.push_back(make_rectified_code(s.at(x, y)));
    float* dst = out.patches.data() + j * per;
    for (int dy = -r; dy <= r; ++dy) {
      for (int dx = -r; dx <= r; ++dx) {
        if (!t.contains(x + dx, y + dy)) continue;
        for (int c = 0; c < channels; ++c) {
          dst[(static_cast<std::size_t>(dy + r) * side + (dx + r)) * channels + c] =
              static_cast<float>(t.at(x + dx, y + dy, c));
        }
      }
    }
  }
  return out;
}

std::vector<std::uint32_t> feature_mask(std::uint32_t feature_count, double drop_fraction, std::uint64_t seed) {
  if (drop_fraction < 0.0 || drop_fraction >= 1.0) throw std::invalid_argument("drop fraction must lie in [0, 1)");
  const auto dropped = static_cast<std::size_t>(std::llround(feature_count * drop_fraction));
  std::vector<std::uint32_t> kept;
  if (dropped == 0) {
    kept.resize(feature_count);
    for (std::uint32_t i = 0; i < feature_count; ++i) kept[i] = i;
    return kept;
  }
  Rng rng(seed);
  for (auto i : sample_without_replacement(rng, feature_count, feature_count - dropped)) {
    kept.push_back(static_cast<std::uint32_t>(i));
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

LogisticProblem::LogisticProblem(const LabelPatchSet& data, std::size_t kernel_index, const AveragingKernel& kernel,
                                 int channel, const std::vector<std::uint32_t>& retained, double reg_strength)
    : retained_count_(retained.size()), reg_(reg_strength) {
  if (!(reg_strength >= 0.0)) throw std::invalid_argument("regularization strength must be nonnegative");
  const KernelSample& ks = kernel.samples.at(kernel_index);
  const int r = data.side / 2;
  std::vector<std::int32_t> slot(data.feature_dim, -1);
  for (std::size_t i = 0; i < retained.size(); ++i) {
    if (retained[i] + 1 >= data.feature_dim) throw std::invalid_argument("retained feature out of range");
    slot[retained[i]] = static_cast<std::int32_t>(i);
  }
  row_start_.push_back(0);
  for (std::size_t n = 0; n < data.size(); ++n) {
    const float t = data.target(n, ks.dx + r, ks.dy + r, channel);
    if (std::isnan(t)) continue;
    const SparseVector& z = data.codes[n];
    for (std::size_t i = 0; i + 1 < z.nnz(); ++i) {
      const std::int32_t s = slot[z.indices[i]];
      if (s >= 0) {
        cols_.push_back(static_cast<std::uint32_t>(s));
        vals_.push_back(z.values[i]);
      }
    }
    row_start_.push_back(cols_.size());
    targets_.push_back(t);
  }
}

double LogisticProblem::evaluate(const Eigen::VectorXd& theta, Eigen::VectorXd* grad) const {
  const std::size_t bias = retained_count_;
  double loss = 0.0;
  if (grad) grad->setZero(static_cast<Eigen::Index>(parameter_count()));
  for (std::size_t n = 0; n < targets_.size(); ++n) {
    double s = theta[bias];
    for (std::size_t k = row_start_[n]; k < row_start_[n + 1]; ++k) s += theta[cols_[k]] * vals_[k];
    loss += softplus(s) - targets_[n] * s;
    if (grad) {
      const double g = sigmoid(s) - targets_[n];
      (*grad)[bias] += g;
      for (std::size_t k = row_start_[n]; k < row_start_[n + 1]; ++k) (*grad)[cols_[k]] += g * vals_[k];
    }
  }
  const auto w = theta.head(static_cast<Eigen::Index>(retained_count_));
  loss += 0.5 * reg_ * w.squaredNorm();
  if (grad) grad->head(static_cast<Eigen::Index>(retained_count_)) += reg_ * w;
  return loss;
}

double LogisticProblem::target_sum() const {
  double s = 0.0;
  for (double t : targets_) s += t;
  return s;
}

Eigen::VectorXd LogisticProblem::curvature_diagonal() const {
  Eigen::VectorXd d = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(parameter_count()), reg_);
  d[static_cast<Eigen::Index>(retained_count_)] = 0.0;
  for (std::size_t k = 0; k < cols_.size(); ++k) d[cols_[k]] += 0.25 * vals_[k] * vals_[k];
  d[static_cast<Eigen::Index>(retained_count_)] += 0.25 * static_cast<double>(targets_.size());
  for (auto& v : d) v = std::max(v, 1e-12);
  return d;
}

double LogisticProblem::positive_share() const {
  if (targets_.empty()) return 0.0;
  std::size_t pos = 0;
  for (double t : targets_) pos += t > 0.5 ? 1 : 0;
  return static_cast<double>(pos) / targets_.size();
}

LbfgsResult minimize_lbfgs(const LogisticProblem& problem, const Eigen::VectorXd& start, const LbfgsOptions& opts) {
  const auto n = static_cast<Eigen::Index>(problem.parameter_count());
  if (start.size() != n) throw std::invalid_argument("L-BFGS start has the wrong size");
  LbfgsResult res;
  res.theta = start;
  Eigen::VectorXd g(n), g_new(n), d(n), x_new(n);
  res.value = problem.evaluate(res.theta, &g);
  const Eigen::VectorXd inv_diag = problem.curvature_diagonal().cwiseInverse();
  std::vector<Eigen::VectorXd> s_hist, y_hist;
  std::vector<double> rho_hist;
  for (res.iterations = 0;; ++res.iterations) {
    res.gradient_norm = g.norm();
    if (res.gradient_norm <= opts.gradient_tolerance * (1.0 + res.theta.norm())) {
      res.converged = true;
      break;
    }
    if (res.iterations >= opts.max_iterations) break;

    // Two-loop recursion.
    d = -g;
    std::vector<double> alpha(s_hist.size());
    for (std::size_t i = s_hist.size(); i-- > 0;) {
      alpha[i] = rho_hist[i] * s_hist[i].dot(d);
      d -= alpha[i] * y_hist[i];
    }
    if (s_hist.empty()) {
      d = d.cwiseProduct(inv_diag);
    } else {
      // Diagonal initial inverse Hessian, rescaled to the latest curvature pair.
      const Eigen::VectorXd& y = y_hist.back();
      d = d.cwiseProduct(inv_diag) * (s_hist.back().dot(y) / y.dot(y.cwiseProduct(inv_diag)));
    }
    for (std::size_t i = 0; i < s_hist.size(); ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(d);
      d += (alpha[i] - beta) * s_hist[i];
    }
    double slope = g.dot(d);
    if (!(slope < 0.0)) {
      d = -g.cwiseProduct(inv_diag);
      slope = g.dot(d);
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
    }
    double step = 1.0;
    double f_new = 0.0;
    bool accepted = false;
    // Near the optimum the loss decrease drops below rounding of the loss
    // itself; steps are then accepted on the directional derivative alone.
    const double noise = 1e-12 * (1.0 + std::abs(res.value));
    for (int bt = 0; bt < 60; ++bt) {
      x_new = res.theta + step * d;
      f_new = problem.evaluate(x_new, &g_new);
      const double new_slope = g_new.dot(d);
      if (f_new <= res.value + 1e-4 * step * slope ||
          (f_new <= res.value + noise && std::abs(new_slope) <= 0.9 * std::abs(slope))) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    Eigen::VectorXd s = x_new - res.theta;
    Eigen::VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (static_cast<int>(s_hist.size()) == opts.history) {
        s_hist.erase(s_hist.begin());
        y_hist.erase(y_hist.begin());
        rho_hist.erase(rho_hist.begin());
      }
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
    }
    res.theta = x_new;
    res.value = f_new;
    g = g_new;
  }
  return res;
}

void TransferModel::validate() const {
  if (side != kernel.side) throw std::logic_error("transfer model side differs from its kernel");
  if (classifiers.size() != kernel.size() * static_cast<std::size_t>(channels)) {
    throw std::logic_error("one classifier per kernel sample and channel is required");
  }
  for (const auto& c : classifiers) {
    if (c.weights.size() + 1 != feature_dim || !std::isfinite(c.bias)) {
      throw std::logic_error("malformed transfer classifier");
    }
    for (float w : c.weights) {
      if (!std::isfinite(w)) throw std::logic_error("non-finite transfer weight");
    }
  }
}

TransferModel train_transfer(const LabelPatchSet& data, const TransferConfig& cfg) {
  if (data.size() == 0) throw std::invalid_argument("empty training set");
  data.validate();
  if (cfg.side != data.side) throw std::invalid_argument("kernel side differs from the training patch side");
  const double sigma = cfg.sigma > 0.0 ? cfg.sigma : default_kernel_sigma(cfg.side);
  const auto schedule = cfg.schedule.empty() ? default_density_schedule(cfg.side) : cfg.schedule;

  TransferModel model;
  model.side = cfg.side;
  model.channels = data.channels;
  model.feature_dim = data.feature_dim;
  model.drop_fraction = cfg.drop_fraction;
  model.kernel = build_adaptive_kernel(cfg.side, sigma, schedule);
  const std::size_t count = model.kernel.size() * static_cast<std::size_t>(data.channels);
  model.classifiers.resize(count);
  const std::uint32_t features = data.feature_dim - 1;

  parallel_for(count, cfg.workers, [&](std::size_t j) {
    Classifier& clf = model.classifiers[j];
    clf.kernel_index = static_cast<std::uint32_t>(j / data.channels);
    clf.channel = static_cast<int>(j % data.channels);
    clf.drop_seed = derive_seed(cfg.seed, "transfer/mask", j);
    clf.weights.assign(features, 0.0f);
    const auto retained = feature_mask(features, cfg.drop_fraction, clf.drop_seed);
    const LogisticProblem problem(data, clf.kernel_index, model.kernel, clf.channel, retained, cfg.reg_strength);
    const double n = static_cast<double>(problem.sample_count());
    const double pos = problem.target_sum();
    if (n == 0.0 || pos == 0.0 || pos == n) {
      clf.bias_only = true;
      clf.bias = std::log((pos + 0.5) / (n - pos + 0.5));
      std::clog << "transfer: classifier " << j << " sees a single class; using bias " << clf.bias << '\n';
      return;
    }
    const LbfgsResult res =
        minimize_lbfgs(problem, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(problem.parameter_count())),
                       cfg.solver);
    for (std::size_t i = 0; i < retained.size(); ++i) clf.weights[retained[i]] = static_cast<float>(res.theta[i]);
    clf.bias = res.theta[static_cast<Eigen::Index>(retained.size())];
    clf.gradient_norm = res.gradient_norm;
    clf.iterations = res.iterations;
  });
  model.validate();
  return model;
}

double classifier_score(const Classifier& clf, const SparseVector& features, std::size_t* lookups) {
  double s = clf.bias;
  for (std::size_t i = 0; i < features.nnz(); ++i) s += static_cast<double>(clf.weights[features.indices[i]]) * features.values[i];
  if (lookups) *lookups += features.nnz() + 1;
  return s;
}

ImageGrid predict_labeling(const FeatureStack& stack, const TransferModel& model, int workers) {
  if (model.feature_dim != stack.dim + 1) {
    throw std::invalid_argument("transfer model expects " + std::to_string(model.feature_dim - 1) +
                                " features, stack has " + std::to_string(stack.dim));
  }
  const int w = stack.width;
  const int h = stack.height;
  const std::size_t nclf = model.classifiers.size();
  // Probabilities per (source pixel, classifier), then a gather per output pixel.
  std::vector<double> probs(static_cast<std::size_t>(w) * h * nclf);
  parallel_for(static_cast<std::size_t>(h), workers, [&](std::size_t row) {
    for (int x = 0; x < w; ++x) {
      const std::size_t p = row * w + x;
      const SparseVector& z = stack.cells[p];
      for (std::size_t j = 0; j < nclf; ++j) probs[p * nclf + j] = sigmoid(classifier_score(model.classifiers[j], z));
    }
  });
  ImageGrid out(w, h, model.channels);
  const auto& samples = model.kernel.samples;
  parallel_for(static_cast<std::size_t>(h), workers, [&](std::size_t row) {
    const int y = static_cast<int>(row);
    std::vector<double> num(model.channels), den(model.channels);
    for (int x = 0; x < w; ++x) {
      std::fill(num.begin(), num.end(), 0.0);
      std::fill(den.begin(), den.end(), 0.0);
      for (std::size_t k = 0; k < samples.size(); ++k) {
        // Prediction from the source pixel whose patch covers (x, y) at this offset.
        const int sx = x - samples[k].dx;
        const int sy = y - samples[k].dy;
        if (sx < 0 || sy < 0 || sx >= w || sy >= h) continue;
        const std::size_t base = (static_cast<std::size_t>(sy) * w + sx) * nclf + k * model.channels;
        for (int c = 0; c < model.channels; ++c) {
          num[c] += samples[k].weight * probs[base + c];
          den[c] += samples[k].weight;
        }
      }
      for (int c = 0; c < model.channels; ++c) {
        out.at(x, y, c) = den[c] > 0.0 ? std::clamp(num[c] / den[c], 0.0, 1.0) : 0.0;
      }
    }
  });
  return out;
}

void write_transfer_model(std::ostream& out, const TransferModel& model) {
  model.validate();
  binio::put_magic(out, "SLTM");
  binio::put<std::uint32_t>(out, kModelVersion);
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(model.side));
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(model.channels));
  binio::put<double>(out, model.kernel.sigma);
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(model.kernel.schedule.size()));
  for (const auto& s : model.kernel.schedule) {
    binio::put<double>(out, s.radius);
    binio::put<double>(out, s.keep_fraction);
  }
  binio::put<std::uint32_t>(out, model.feature_dim);
  binio::put<double>(out, model.drop_fraction);
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(model.kernel.size()));
  for (const auto& s : model.kernel.samples) {
    binio::put<std::int32_t>(out, s.dx);
    binio::put<std::int32_t>(out, s.dy);
  }
  for (const auto& c : model.classifiers) {
    binio::put<std::uint64_t>(out, c.drop_seed);
    binio::put<double>(out, c.bias);
    binio::put<std::uint8_t>(out, c.bias_only ? 1 : 0);
    for (auto i : feature_mask(model.feature_dim - 1, model.drop_fraction, c.drop_seed)) {
      binio::put<float>(out, c.weights[i]);
    }
  }
}

TransferModel read_transfer_model(std::istream& in) {
  binio::expect_magic(in, "SLTM");
  if (binio::get<std::uint32_t>(in) != kModelVersion) throw std::runtime_error("unsupported transfer model version");
  TransferModel model;
  model.side = static_cast<int>(binio::get<std::uint32_t>(in));
  model.channels = static_cast<int>(binio::get<std::uint32_t>(in));
  const double sigma = binio::get<double>(in);
  std::vector<DensityStage> schedule(binio::get<std::uint32_t>(in));
  for (auto& s : schedule) {
    s.radius = binio::get<double>(in);
    s.keep_fraction = binio::get<double>(in);
  }
  model.feature_dim = binio::get<std::uint32_t>(in);
  model.drop_fraction = binio::get<double>(in);
  model.kernel = build_adaptive_kernel(model.side, sigma, schedule);
  const auto positions = binio::get<std::uint32_t>(in);
  if (positions != model.kernel.size()) throw std::runtime_error("transfer model kernel does not match its schedule");
  for (const auto& s : model.kernel.samples) {
    const auto dx = binio::get<std::int32_t>(in);
    const auto dy = binio::get<std::int32_t>(in);
    if (dx != s.dx || dy != s.dy) throw std::runtime_error("transfer model kernel does not match its schedule");
  }
  model.classifiers.resize(model.kernel.size() * static_cast<std::size_t>(model.channels));
  for (std::size_t j = 0; j < model.classifiers.size(); ++j) {
    Classifier& c = model.classifiers[j];
    c.kernel_index = static_cast<std::uint32_t>(j / model.channels);
    c.channel = static_cast<int>(j % model.channels);
    c.drop_seed = binio::get<std::uint64_t>(in);
    c.bias = binio::get<double>(in);
    c.bias_only = binio::get<std::uint8_t>(in) != 0;
    c.weights.assign(model.feature_dim - 1, 0.0f);
    for (auto i : feature_mask(model.feature_dim - 1, model.drop_fraction, c.drop_seed)) {
      c.weights[i] = binio::get<float>(in);
    }
  }
  model.validate();
  return model;
}

void save_transfer_model(const std::filesystem::path& path, const TransferModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_transfer_model(out, model);
}

TransferModel load_transfer_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_transfer_model(in);
}

}  // namespace sparselabel

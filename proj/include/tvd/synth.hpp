#pragma once

// Synthetic task-vector sets with planted shared subspaces, noise injection
// and recovery measurement.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tvd/angles.hpp"
#include "tvd/decompose.hpp"
#include "tvd/error.hpp"
#include "tvd/linalg.hpp"

namespace tvd {

/// Per-trial seed derivation shared by every sweep.
inline constexpr std::uint64_t kTrialSeedStride = 1000003;

inline std::uint64_t trial_seed(std::uint64_t seed, std::size_t trial) { return seed + kTrialSeedStride * trial; }

struct PlantSpec {
  std::size_t ambient_dim = 512;          // n
  std::size_t cols = 512;                 // m
  std::size_t shared_dim = 100;           // r, may be 0
  std::size_t unique_dim_per_vector = 100;  // u
  std::size_t num_vectors = 2;            // k
  double coeff_scale = 1.0;

  /// Rank of every noise-free planted vector.
  std::size_t planted_rank() const { return shared_dim + unique_dim_per_vector; }

  void validate() const {
    if (ambient_dim == 0 || cols == 0 || unique_dim_per_vector == 0) {
      throw Error(ErrorCode::InvalidSpec, "dimensions must be positive");
    }
    if (num_vectors < 2) throw Error(ErrorCode::InvalidSpec, "need at least two vectors");
    if (!(coeff_scale > 0.0) || !std::isfinite(coeff_scale)) throw Error(ErrorCode::InvalidSpec, "coeff_scale must be positive");
    if (shared_dim + num_vectors * unique_dim_per_vector > ambient_dim) {
      throw Error(ErrorCode::InvalidSpec, "r + k*u exceeds the ambient dimension");
    }
  }
};

struct PlantedInstance {
  std::vector<Matrix> vectors;       // n x m each
  Matrix truth_shared;               // n x r
  std::vector<Matrix> truth_uniques;  // n x u each
  std::uint64_t seed = 0;
};

/// rows x cols standard normal entries, drawn row by row.
inline Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * normal(rng);
  return m;
}

/// vector_i = S A_i + U_i B_i with S, U_i disjoint column blocks of a random
/// orthogonal matrix and A_i, B_i Gaussian coefficients.
inline PlantedInstance plant(const PlantSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  const auto n = static_cast<Eigen::Index>(spec.ambient_dim);
  const auto m = static_cast<Eigen::Index>(spec.cols);
  const auto r = static_cast<Eigen::Index>(spec.shared_dim);
  const auto u = static_cast<Eigen::Index>(spec.unique_dim_per_vector);
  const auto k = static_cast<Eigen::Index>(spec.num_vectors);

  const Matrix g = gaussian_matrix(n, n, rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  const Matrix q = qr.householderQ() * Matrix::Identity(n, r + k * u);

  PlantedInstance out;
  out.seed = seed;
  out.truth_shared = q.leftCols(r);
  for (Eigen::Index i = 0; i < k; ++i) {
    out.truth_uniques.push_back(q.middleCols(r + i * u, u));
    const Matrix a = gaussian_matrix(r, m, rng, spec.coeff_scale);
    const Matrix b = gaussian_matrix(u, m, rng, spec.coeff_scale);
    Matrix v = out.truth_uniques.back() * b;
    if (r > 0) v += out.truth_shared * a;
    out.vectors.push_back(std::move(v));
  }
  return out;
}

inline Matrix add_noise(const Matrix& m, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw Error(ErrorCode::InvalidSpec, "sigma must be nonnegative");
  if (sigma == 0.0) return m;
  std::mt19937_64 rng(seed);
  return m + gaussian_matrix(m.rows(), m.cols(), rng, sigma);
}

struct RecoveryReport {
  double mean_angle_rad = 0.0;
  double max_angle_rad = 0.0;
  std::size_t recovered_dim = 0;
  std::size_t true_dim = 0;
  double sigma = 0.0;
};

/// Angles between the planted and the recovered shared subspace. A missing
/// subspace on exactly one side counts as the worst case, pi/2.
inline RecoveryReport recovery_report(const PlantedInstance& instance, const SharedBasis& recovered, double sigma) {
  if (recovered.ambient() != instance.truth_shared.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "recovered basis lives in a different ambient space");
  }
  RecoveryReport rep;
  rep.sigma = sigma;
  rep.recovered_dim = static_cast<std::size_t>(recovered.dim());
  rep.true_dim = static_cast<std::size_t>(instance.truth_shared.cols());
  if (rep.recovered_dim == 0 && rep.true_dim == 0) return rep;
  if (rep.recovered_dim == 0 || rep.true_dim == 0) {
    rep.mean_angle_rad = rep.max_angle_rad = kHalfPi;
    return rep;
  }
  const AngleReport angles = detail::angles_between_orthonormal(instance.truth_shared, recovered.z);
  rep.mean_angle_rad = angles.mean_rad;
  rep.max_angle_rad = angles.max_rad;
  return rep;
}

struct Histogram {
  std::vector<double> bin_edges;    // bins + 1, ascending
  std::vector<std::size_t> counts;  // bins
};

/// Uniform bins over [min(0, min value), max(1, max value)].
inline Histogram eig_histogram(std::span<const double> values, std::size_t bins) {
  if (bins < 2) throw Error(ErrorCode::InvalidSpec, "histogram needs at least two bins");
  double lo = 0.0;
  double hi = 1.0;
  for (double v : values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  Histogram h;
  h.counts.assign(bins, 0);
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t i = 0; i <= bins; ++i) h.bin_edges.push_back(i == bins ? hi : lo + width * static_cast<double>(i));
  for (double v : values) {
    auto idx = static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(bins));
    h.counts[std::min(idx, bins - 1)]++;
  }
  return h;
}

inline Histogram eig_histogram(const ChainSpectrum& spectrum, std::size_t bins) {
  return eig_histogram(std::span<const double>(spectrum.values.data(), static_cast<std::size_t>(spectrum.values.size())),
                       bins);
}

struct RecoveryOptions {
  double tau = kDefaultTau;
  double rank_tol = kDefaultRankTol;
  // Truncate each vector's column space to the planted rank r + u. Noisy
  // deltas are full rank, so without a cap every projector is the identity.
  bool cap_at_planted_rank = true;

  Eigen::Index max_rank(const PlantSpec& spec) const {
    return cap_at_planted_rank ? static_cast<Eigen::Index>(spec.planted_rank()) : 0;
  }
};

/// Noise seeds for the vectors of one trial.
inline std::uint64_t noise_seed(std::uint64_t trial_seed_value, std::size_t vector_index) {
  return trial_seed_value + 1 + vector_index;
}

inline std::vector<Matrix> noisy_vectors(const PlantedInstance& inst, double sigma) {
  std::vector<Matrix> out;
  for (std::size_t i = 0; i < inst.vectors.size(); ++i) out.push_back(add_noise(inst.vectors[i], sigma, noise_seed(inst.seed, i)));
  return out;
}

struct TrialRecord {
  double sigma = 0.0;
  std::size_t trial = 0;
  RecoveryReport report;
};

struct SigmaSummary {
  double sigma = 0.0;
  std::size_t trials = 0;
  double mean_angle_rad = 0.0;  // mean over trials of the per-trial mean
  double max_angle_rad = 0.0;   // max over trials
  double mean_recovered_dim = 0.0;
};

struct SweepResult {
  std::vector<TrialRecord> records;
  std::vector<SigmaSummary> per_sigma;
  std::vector<Histogram> histograms;  // spectrum of trial 0 per sigma, when requested
};

/// Plant, perturb, decompose (chain mode) and measure recovery for every
/// (sigma, trial). Trial t uses the same planted instance for every sigma.
inline SweepResult noise_sweep(const PlantSpec& spec, std::span<const double> sigmas, std::size_t trials,
                               std::uint64_t seed, const RecoveryOptions& opt = {}, std::size_t histogram_bins = 0) {
  spec.validate();
  if (trials < 1) throw Error(ErrorCode::InvalidSpec, "need at least one trial");
  for (double s : sigmas) {
    if (!(s >= 0.0)) throw Error(ErrorCode::InvalidSpec, "sigmas must be nonnegative");
  }
  check_tau(opt.tau);
  const LayerOptions layer_opt{opt.tau, opt.rank_tol, opt.max_rank(spec), ChainForm::gram};

  SweepResult out;
  std::vector<PlantedInstance> instances;
  for (std::size_t t = 0; t < trials; ++t) instances.push_back(plant(spec, trial_seed(seed, t)));

  for (double sigma : sigmas) {
    SigmaSummary summary{sigma, trials, 0.0, 0.0, 0.0};
    for (std::size_t t = 0; t < trials; ++t) {
      const std::vector<Matrix> vs = noisy_vectors(instances[t], sigma);
      const LayerDecomposition dec = decompose_layer(vs, layer_opt);
      const RecoveryReport rep = recovery_report(instances[t], dec.basis, sigma);
      out.records.push_back(TrialRecord{sigma, t, rep});
      summary.mean_angle_rad += rep.mean_angle_rad / static_cast<double>(trials);
      summary.max_angle_rad = std::max(summary.max_angle_rad, rep.max_angle_rad);
      summary.mean_recovered_dim += static_cast<double>(rep.recovered_dim) / static_cast<double>(trials);
      if (t == 0 && histogram_bins > 0) out.histograms.push_back(eig_histogram(dec.spectrum, histogram_bins));
    }
    out.per_sigma.push_back(summary);
  }
  return out;
}

/// Cross-method agreement on planted pairs: the first two vectors of each
/// trial's instance, perturbed with noise sigma.
inline std::vector<CrossCheck> cross_validate_planted(const PlantSpec& spec, double sigma, std::size_t trials,
                                                      std::uint64_t seed, const RecoveryOptions& opt = {}) {
  spec.validate();
  if (trials < 1) throw Error(ErrorCode::InvalidSpec, "need at least one trial");
  const CrossCheckOptions cc{opt.tau, opt.rank_tol, opt.max_rank(spec)};
  std::vector<CrossCheck> out;
  for (std::size_t t = 0; t < trials; ++t) {
    const PlantedInstance inst = plant(spec, trial_seed(seed, t));
    const std::vector<Matrix> vs = noisy_vectors(inst, sigma);
    out.push_back(cross_check_pair(vs[0], vs[1], cc));
  }
  return out;
}

}  // namespace tvd

#pragma once

// Shared/unique decomposition of task vectors through column-space projectors.
//
// Per layer: project onto each task vector's column space, chain the
// projectors, eigendecompose the symmetric form of the chain, keep the
// eigenvectors whose eigenvalue exceeds tau as the shared basis, and split
// every input into its projection onto that basis (shared) plus the residual
// (unique). The per-vector shared parts are merged with Frobenius-norm weights.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tvd/error.hpp"
#include "tvd/linalg.hpp"
#include "tvd/tensor.hpp"

namespace tvd {

inline constexpr double kDefaultTau = 0.85;

/// Orthogonal projector onto a subspace, kept together with the orthonormal
/// basis it was built from.
struct Projector {
  Matrix p;
  Matrix basis;

  Eigen::Index dim() const { return p.rows(); }
  Eigen::Index rank() const { return basis.cols(); }
};

inline Projector projector_from_basis(const Matrix& basis) {
  return Projector{basis * basis.transpose(), basis};
}

/// P = U Uᵀ from the truncated SVD of w.
inline Projector column_projector(const Matrix& w, double rank_tol = kDefaultRankTol, Eigen::Index max_rank = 0) {
  require_finite(w, "task vector layer");
  if (w.size() == 0 || w.cwiseAbs().maxCoeff() == 0.0) {
    throw Error(ErrorCode::ZeroTaskVector, "zero matrix has no column space");
  }
  return projector_from_basis(svd(w, rank_tol, max_rank).u);
}

/// Which symmetric matrix is eigendecomposed for a chain M = P_1 P_2 ... P_k.
enum class ChainForm {
  /// M Mᵀ = P_1 ... P_k ... P_1. Positive semidefinite with spectrum in
  /// [0, 1]; for k = 2 its nonzero eigenpairs coincide with those of P_1 P_2
  /// (squared cosines of the principal angles, a-side principal vectors).
  gram,
  /// (M + Mᵀ) / 2. Shares the eigenvalue-1 directions but maps a principal
  /// angle with cosine c to c(1 + c)/2 and -c(1 - c)/2. Kept for comparison.
  averaged,
};

inline std::string_view to_string(ChainForm form) { return form == ChainForm::gram ? "gram" : "averaged"; }

struct ChainSpectrum {
  Vector values;   // descending
  Matrix vectors;  // orthonormal, one column per value
  std::size_t k = 0;
  ChainForm form = ChainForm::gram;
  bool symmetrized = true;
};

inline ChainSpectrum chain_projectors(std::span<const Projector> ps, std::span<const std::size_t> order,
                                      ChainForm form = ChainForm::gram) {
  if (ps.size() < 2) throw Error(ErrorCode::NeedTwoProjectors, "chain needs at least two projectors");
  const Eigen::Index n = ps.front().dim();
  for (const Projector& p : ps) {
    if (p.dim() != n || p.p.cols() != n) throw Error(ErrorCode::DimensionMismatch, "projector dimensions differ");
  }
  if (order.size() != ps.size()) throw Error(ErrorCode::InvalidOrder, "order length differs from projector count");
  std::vector<bool> seen(ps.size(), false);
  for (std::size_t idx : order) {
    if (idx >= ps.size() || seen[idx]) throw Error(ErrorCode::InvalidOrder, "order is not a permutation");
    seen[idx] = true;
  }

  Matrix m = ps[order[0]].p;
  for (std::size_t i = 1; i < order.size(); ++i) m = m * ps[order[i]].p;

  Matrix s = form == ChainForm::gram ? Matrix(m * m.transpose()) : Matrix(m + m.transpose()) * 0.5;
  s = (s + s.transpose()).eval() * 0.5;

  EigFactors eig = sym_eig(s);
  return ChainSpectrum{std::move(eig.values), std::move(eig.vectors), ps.size(), form, true};
}

inline ChainSpectrum chain_projectors(std::span<const Projector> ps, ChainForm form = ChainForm::gram) {
  std::vector<std::size_t> order(ps.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  return chain_projectors(ps, order, form);
}

struct SharedBasis {
  Matrix z;              // n x r_shared, orthonormal
  double tau = kDefaultTau;
  Vector source_values;  // retained eigenvalues, descending

  Eigen::Index dim() const { return z.cols(); }
  Eigen::Index ambient() const { return z.rows(); }
};

inline void check_tau(double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw Error(ErrorCode::InvalidThreshold, "tau must lie in (0, 1]");
}

/// Keeps eigenvectors with eigenvalue strictly greater than tau.
inline SharedBasis shared_basis(const ChainSpectrum& spectrum, double tau) {
  check_tau(tau);
  Eigen::Index r = 0;
  while (r < spectrum.values.size() && spectrum.values(r) > tau) ++r;
  Matrix z = gram_schmidt(spectrum.vectors.leftCols(r));
  // Eigenvectors are orthonormal already; a dropped column would mean a
  // degenerate eigensolver result.
  if (z.cols() != r) throw Error(ErrorCode::InvalidMatrix, "retained eigenvectors are linearly dependent");
  return SharedBasis{std::move(z), tau, spectrum.values.head(r)};
}

struct SplitParts {
  Matrix shared;
  Matrix unique;
};

inline SplitParts split(const Matrix& w, const SharedBasis& basis) {
  if (basis.ambient() != w.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "basis ambient dimension " + std::to_string(basis.ambient()) +
                                                  " vs " + std::to_string(w.rows()) + " rows");
  }
  Matrix shared = basis.dim() == 0 ? Matrix::Zero(w.rows(), w.cols()) : Matrix(basis.z * (basis.z.transpose() * w));
  Matrix unique = w - shared;
  return SplitParts{std::move(shared), std::move(unique)};
}

/// Frobenius-norm weighted average; all-zero inputs give the zero matrix.
inline Matrix merge_shared(std::span<const Matrix> parts) {
  if (parts.empty()) throw Error(ErrorCode::EmptyInput, "nothing to merge");
  const Eigen::Index rows = parts.front().rows();
  const Eigen::Index cols = parts.front().cols();
  Matrix acc = Matrix::Zero(rows, cols);
  double total = 0.0;
  for (const Matrix& s : parts) {
    if (s.rows() != rows || s.cols() != cols) throw Error(ErrorCode::DimensionMismatch, "shared parts differ in shape");
    const double w = frobenius_norm(s);
    acc += w * s;
    total += w;
  }
  if (total == 0.0) return acc;
  return acc / total;
}

/// Single-layer result of the chain pipeline.
struct LayerDecomposition {
  std::vector<Matrix> shared_parts;
  std::vector<Matrix> unique_parts;
  Matrix merged_shared;
  SharedBasis basis;
  ChainSpectrum spectrum;
};

struct LayerOptions {
  double tau = kDefaultTau;
  double rank_tol = kDefaultRankTol;
  Eigen::Index max_rank = 0;  // 0: no cap
  ChainForm form = ChainForm::gram;
};

inline LayerDecomposition decompose_layer(std::span<const Matrix> ws, const LayerOptions& opt) {
  if (ws.size() < 2) throw Error(ErrorCode::NeedTwoVectors, "decomposition needs at least two task vectors");
  check_tau(opt.tau);
  std::vector<Projector> ps;
  ps.reserve(ws.size());
  for (const Matrix& w : ws) {
    if (w.rows() != ws.front().rows() || w.cols() != ws.front().cols()) {
      throw Error(ErrorCode::DimensionMismatch, "layer shapes differ across task vectors");
    }
    ps.push_back(column_projector(w, opt.rank_tol, opt.max_rank));
  }
  LayerDecomposition out;
  out.spectrum = chain_projectors(ps, opt.form);
  out.basis = shared_basis(out.spectrum, opt.tau);
  for (const Matrix& w : ws) {
    SplitParts parts = split(w, out.basis);
    out.shared_parts.push_back(std::move(parts.shared));
    out.unique_parts.push_back(std::move(parts.unique));
  }
  out.merged_shared = merge_shared(out.shared_parts);
  return out;
}

enum class DecomposeMode { chain, pairwise };

inline std::string_view to_string(DecomposeMode mode) { return mode == DecomposeMode::chain ? "chain" : "pairwise"; }

struct DecomposeOptions {
  double tau = kDefaultTau;
  double rank_tol = kDefaultRankTol;
  Eigen::Index max_rank = 0;
  DecomposeMode mode = DecomposeMode::chain;
  ChainForm form = ChainForm::gram;
  std::uint64_t seed = 0;       // drives the order-sensitivity probe
  std::size_t order_probes = 3;  // random orderings tried when k > 2

  LayerOptions layer() const { return LayerOptions{tau, rank_tol, max_rank, form}; }
};

/// Shared subspace found for one group of task vectors (all of them in chain
/// mode, one unordered pair in pairwise mode).
struct GroupSummary {
  std::vector<std::size_t> members;
  std::size_t r_shared = 0;
  std::vector<double> retained;
  std::vector<double> spectrum;
};

struct LayerSummary {
  std::string name;
  Shape shape;
  bool decomposed = false;
  std::vector<GroupSummary> groups;
  std::vector<double> reconstruction_residuals;  // per input, relative Frobenius
  std::vector<double> orthogonality_residuals;   // ||P_shared unique|| / ||W||
  std::optional<double> order_drift;             // chain mode, k > 2
  double seconds = 0.0;
};

struct PairShared {
  std::size_t first = 0;
  std::size_t second = 0;
  TaskVector merged;
};

struct DecompositionResult {
  DecomposeMode mode = DecomposeMode::chain;
  std::vector<TaskVector> shared;  // per input vector
  std::vector<TaskVector> unique;  // per input vector
  TaskVector merged_shared;        // chain mode
  std::vector<PairShared> pairs;   // pairwise mode
  std::vector<LayerSummary> layers;
  std::vector<std::string> undecomposed;
};

namespace detail {

inline double relative(double num, double den) { return den == 0.0 ? num : num / den; }

inline void check_layer_sets(std::span<const TaskVector> vectors) {
  if (vectors.size() < 2) throw Error(ErrorCode::NeedTwoVectors, "decomposition needs at least two task vectors");
  const TaskVector& first = vectors.front();
  for (std::size_t i = 1; i < vectors.size(); ++i) {
    const TaskVector& v = vectors[i];
    if (v.size() != first.size()) throw Error(ErrorCode::LayerMismatch, "task vectors have different layer counts");
    for (const auto& [name, t] : first) {
      auto it = v.find(name);
      if (it == v.end()) throw Error(ErrorCode::LayerMismatch, "layer '" + name + "' missing from vector " + std::to_string(i));
      if (it->second.shape != t.shape) {
        throw Error(ErrorCode::LayerMismatch, "layer '" + name + "' shape " + shape_string(it->second.shape) +
                                                  " vs " + shape_string(t.shape));
      }
    }
  }
}

inline std::vector<double> to_std(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

// Largest eigenvalue change over random product orderings, relative to the
// ascending order.
inline double order_drift(std::span<const Projector> ps, const ChainSpectrum& reference, ChainForm form,
                          std::uint64_t seed, std::size_t probes) {
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(ps.size());
  double drift = 0.0;
  for (std::size_t t = 0; t < probes; ++t) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const ChainSpectrum s = chain_projectors(ps, order, form);
    drift = std::max(drift, (s.values - reference.values).cwiseAbs().maxCoeff());
  }
  return drift;
}

}  // namespace detail

/// Runs the decomposition over every layer of a set of task vectors.
/// Rank >= 2 tensors are flattened to (shape[0]) x (rest); rank 0/1 tensors
/// are passed through to the unique side and listed as undecomposed.
inline DecompositionResult decompose_set(std::span<const TaskVector> vectors, const DecomposeOptions& opt = {}) {
  detail::check_layer_sets(vectors);
  check_tau(opt.tau);
  const std::size_t k = vectors.size();

  DecompositionResult out;
  out.mode = opt.mode;
  out.shared.assign(k, {});
  out.unique.assign(k, {});
  if (opt.mode == DecomposeMode::pairwise) {
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = i + 1; j < k; ++j) out.pairs.push_back(PairShared{i, j, {}});
  }

  for (const auto& [name, proto] : vectors.front()) {
    const auto start = std::chrono::steady_clock::now();
    LayerSummary summary;
    summary.name = name;
    summary.shape = proto.shape;

    if (!proto.decomposable()) {
      for (std::size_t i = 0; i < k; ++i) {
        out.shared[i].emplace(name, Tensor::zeros(proto.shape));
        out.unique[i].emplace(name, vectors[i].at(name));
      }
      if (opt.mode == DecomposeMode::chain) out.merged_shared.emplace(name, Tensor::zeros(proto.shape));
      for (PairShared& pair : out.pairs) pair.merged.emplace(name, Tensor::zeros(proto.shape));
      out.undecomposed.push_back(name);
      out.layers.push_back(std::move(summary));
      continue;
    }

    summary.decomposed = true;
    std::vector<Matrix> ws;
    ws.reserve(k);
    for (const TaskVector& v : vectors) ws.push_back(v.at(name).as_matrix());

    std::vector<Matrix> shared_parts(k);
    std::vector<Matrix> unique_parts(k);
    std::vector<Matrix> bases(k);  // basis whose projector defines shared_i

    if (opt.mode == DecomposeMode::chain) {
      LayerDecomposition layer = decompose_layer(ws, opt.layer());
      summary.groups.push_back(GroupSummary{std::vector<std::size_t>(k), static_cast<std::size_t>(layer.basis.dim()),
                                            detail::to_std(layer.basis.source_values),
                                            detail::to_std(layer.spectrum.values)});
      std::iota(summary.groups.back().members.begin(), summary.groups.back().members.end(), std::size_t{0});
      if (k > 2 && opt.order_probes > 0) {
        std::vector<Projector> ps;
        for (const Matrix& w : ws) ps.push_back(column_projector(w, opt.rank_tol, opt.max_rank));
        summary.order_drift = detail::order_drift(ps, layer.spectrum, opt.form, opt.seed, opt.order_probes);
      }
      out.merged_shared.emplace(name, proto.with_matrix(layer.merged_shared));
      for (std::size_t i = 0; i < k; ++i) bases[i] = layer.basis.z;
      shared_parts = std::move(layer.shared_parts);
      unique_parts = std::move(layer.unique_parts);
    } else {
      std::vector<Matrix> unions(k);
      for (PairShared& pair : out.pairs) {
        const Matrix pw[2] = {ws[pair.first], ws[pair.second]};
        LayerDecomposition layer = decompose_layer(pw, opt.layer());
        summary.groups.push_back(GroupSummary{{pair.first, pair.second},
                                              static_cast<std::size_t>(layer.basis.dim()),
                                              detail::to_std(layer.basis.source_values),
                                              detail::to_std(layer.spectrum.values)});
        pair.merged.emplace(name, proto.with_matrix(layer.merged_shared));
        for (std::size_t member : {pair.first, pair.second}) {
          Matrix& u = unions[member];
          const Matrix& z = layer.basis.z;
          if (z.cols() == 0) continue;
          Matrix joined(z.rows(), u.cols() + z.cols());
          if (u.cols() > 0) joined << u, z;
          else joined = z;
          u = std::move(joined);
        }
      }
      for (std::size_t i = 0; i < k; ++i) {
        Matrix z = unions[i].cols() == 0 ? Matrix(ws[i].rows(), 0) : qr_orthonormal(unions[i]);
        SplitParts parts = split(ws[i], SharedBasis{z, opt.tau, Vector()});
        shared_parts[i] = std::move(parts.shared);
        unique_parts[i] = std::move(parts.unique);
        bases[i] = std::move(z);
      }
    }

    for (std::size_t i = 0; i < k; ++i) {
      const double norm = frobenius_norm(ws[i]);
      summary.reconstruction_residuals.push_back(
          detail::relative(frobenius_norm(shared_parts[i] + unique_parts[i] - ws[i]), norm));
      const double leak =
          bases[i].cols() == 0 ? 0.0 : frobenius_norm(bases[i] * (bases[i].transpose() * unique_parts[i]));
      summary.orthogonality_residuals.push_back(detail::relative(leak, norm));
      out.shared[i].emplace(name, proto.with_matrix(shared_parts[i]));
      out.unique[i].emplace(name, proto.with_matrix(unique_parts[i]));
    }
    summary.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.layers.push_back(std::move(summary));
  }
  return out;
}

}  // namespace tvd

#pragma once

// Principal angles between subspaces, used as an oracle independent of the
// projector chain: orthonormalize both spans with QR, then read the angles off
// the singular values of Q_aᵀ Q_b.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "tvd/decompose.hpp"
#include "tvd/error.hpp"
#include "tvd/linalg.hpp"
#include "tvd/tensor.hpp"

namespace tvd {

inline constexpr double kHalfPi = std::numbers::pi / 2.0;

struct AngleReport {
  std::vector<double> angles_rad;  // ascending, one per dimension of the smaller subspace
  double mean_rad = 0.0;
  double max_rad = 0.0;
  std::size_t p = 0;  // larger subspace dimension
  std::size_t q = 0;  // smaller subspace dimension
};

namespace detail {

inline AngleReport summarize(std::vector<double> angles, std::size_t p, std::size_t q) {
  std::sort(angles.begin(), angles.end());
  AngleReport r;
  r.p = p;
  r.q = q;
  if (!angles.empty()) {
    double sum = 0.0;
    for (double a : angles) sum += a;
    r.mean_rad = sum / static_cast<double>(angles.size());
    r.max_rad = angles.back();
  }
  r.angles_rad = std::move(angles);
  return r;
}

// Angles between the spans of two orthonormal bases. Small angles come from
// the sines (singular values of the part of the smaller basis outside the
// larger one), large ones from the cosines; arccos alone loses about 1e-8 of
// relative accuracy near zero.
inline AngleReport angles_between_orthonormal(const Matrix& qa, const Matrix& qb) {
  const bool a_larger = qa.cols() >= qb.cols();
  const Matrix& big = a_larger ? qa : qb;
  const Matrix& small = a_larger ? qb : qa;
  const auto q = static_cast<std::size_t>(small.cols());
  const auto p = static_cast<std::size_t>(big.cols());

  const Matrix c = big.transpose() * small;
  const Vector cosines = singular_values(c);  // descending
  const Matrix outside = small - big * c;
  const Vector sines = singular_values(outside);  // descending

  std::vector<double> angles(q);
  for (std::size_t k = 0; k < q; ++k) {
    const double cs = std::clamp(cosines(static_cast<Eigen::Index>(k)), 0.0, 1.0);
    const double sn = std::clamp(sines(static_cast<Eigen::Index>(q - 1 - k)), 0.0, 1.0);
    angles[k] = cs * cs >= 0.5 ? std::asin(sn) : std::acos(cs);
  }
  return summarize(std::move(angles), p, q);
}

}  // namespace detail

inline AngleReport principal_angles(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw Error(ErrorCode::DimensionMismatch,
                "row counts differ: " + std::to_string(a.rows()) + " vs " + std::to_string(b.rows()));
  }
  const Matrix qa = qr_orthonormal(a);
  const Matrix qb = qr_orthonormal(b);
  if (qa.cols() == 0 || qb.cols() == 0) throw Error(ErrorCode::ZeroSubspace, "cannot measure angles to a zero subspace");
  return detail::angles_between_orthonormal(qa, qb);
}

inline double subspace_distance(const Matrix& a, const Matrix& b) { return principal_angles(a, b).mean_rad; }

enum class CrossOutcome { compared, both_empty, one_empty };

inline std::string_view to_string(CrossOutcome o) {
  switch (o) {
    case CrossOutcome::compared: return "compared";
    case CrossOutcome::both_empty: return "both-empty";
    case CrossOutcome::one_empty: return "one-empty";
  }
  return "unknown";
}

/// Agreement between the projector-chain shared subspace and the one obtained
/// by thresholding principal angles directly.
struct CrossCheck {
  CrossOutcome outcome = CrossOutcome::compared;
  AngleReport agreement;  // chain subspace vs principal-angle subspace
  std::size_t chain_dim = 0;
  std::size_t angle_dim = 0;
  // Largest angle between the chain subspace and the principal vectors taken
  // from the second matrix instead of the first; this gap is the principal
  // angle itself, not a disagreement between methods.
  double opposite_side_max_rad = 0.0;

  /// Both-empty counts as perfect agreement; one-empty as the worst case.
  double max_rad() const {
    switch (outcome) {
      case CrossOutcome::compared: return agreement.max_rad;
      case CrossOutcome::both_empty: return 0.0;
      case CrossOutcome::one_empty: return kHalfPi;
    }
    return kHalfPi;
  }
};

struct CrossCheckOptions {
  double tau = kDefaultTau;
  double rank_tol = kDefaultRankTol;
  Eigen::Index max_rank = 0;
};

inline CrossCheck cross_check_pair(const Matrix& a, const Matrix& b, const CrossCheckOptions& opt = {}) {
  if (a.rows() != b.rows()) throw Error(ErrorCode::DimensionMismatch, "row counts differ");
  check_tau(opt.tau);

  // Route 1: chained projectors.
  const Projector pa = column_projector(a, opt.rank_tol, opt.max_rank);
  const Projector pb = column_projector(b, opt.rank_tol, opt.max_rank);
  const Projector chain[2] = {pa, pb};
  const SharedBasis chained = shared_basis(chain_projectors(chain), opt.tau);

  // Route 2: QR of the same (rank-truncated) matrices, then principal vectors
  // whose squared cosine exceeds tau.
  const Matrix qa = qr_orthonormal(svd(a, opt.rank_tol, opt.max_rank).reconstruct());
  const Matrix qb = qr_orthonormal(svd(b, opt.rank_tol, opt.max_rank).reconstruct());
  const SvdFactors dec = svd(qa.transpose() * qb, 0.0);
  Eigen::Index keep = 0;
  while (keep < dec.s.size() && dec.s(keep) * dec.s(keep) > opt.tau) ++keep;
  const Matrix f = qa * dec.u.leftCols(keep);
  const Matrix g = qb * dec.v.leftCols(keep);

  CrossCheck out;
  out.chain_dim = static_cast<std::size_t>(chained.dim());
  out.angle_dim = static_cast<std::size_t>(keep);
  if (chained.dim() == 0 && keep == 0) {
    out.outcome = CrossOutcome::both_empty;
  } else if (chained.dim() == 0 || keep == 0) {
    out.outcome = CrossOutcome::one_empty;
  } else {
    out.agreement = detail::angles_between_orthonormal(chained.z, gram_schmidt(f));
    out.opposite_side_max_rad = detail::angles_between_orthonormal(chained.z, gram_schmidt(g)).max_rad;
  }
  return out;
}

/// Per-layer cross-check of two task vectors over their matrix-shaped layers.
inline std::vector<std::pair<std::string, CrossCheck>> cross_validate(const TaskVector& a, const TaskVector& b,
                                                                      const CrossCheckOptions& opt = {}) {
  std::vector<std::pair<std::string, CrossCheck>> out;
  for (const auto& [name, ta] : a) {
    auto it = b.find(name);
    if (it == b.end() || it->second.shape != ta.shape) {
      throw Error(ErrorCode::LayerMismatch, "layer '" + name + "' missing or reshaped in second vector");
    }
    if (!ta.decomposable()) continue;
    out.emplace_back(name, cross_check_pair(ta.as_matrix(), it->second.as_matrix(), opt));
  }
  if (a.size() != b.size()) throw Error(ErrorCode::LayerMismatch, "task vectors have different layer counts");
  return out;
}

}  // namespace tvd

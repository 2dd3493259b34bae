#pragma once

// Dense real-matrix primitives shared by every other module. All routines are
// pure functions of their arguments; factor columns are sign-canonicalized so
// repeated calls on the same input are bitwise identical.

#include <Eigen/Dense>
#include <lapacke.h>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tvd/error.hpp"

namespace tvd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kDefaultRankTol = 1e-10;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw Error(ErrorCode::InvalidMatrix, std::string(what) + " has non-finite entries");
}

/// Builds a matrix from row-major entries, rejecting non-finite values.
inline Matrix make_matrix(std::size_t rows, std::size_t cols, std::span<const double> row_major) {
  if (rows == 0 || cols == 0) throw Error(ErrorCode::InvalidMatrix, "matrix dimensions must be positive");
  if (row_major.size() != rows * cols) {
    throw Error(ErrorCode::InvalidMatrix, "entry count " + std::to_string(row_major.size()) + " != " +
                                              std::to_string(rows) + "x" + std::to_string(cols));
  }
  Matrix m = Eigen::Map<const RowMajorMatrix>(row_major.data(), static_cast<Eigen::Index>(rows),
                                              static_cast<Eigen::Index>(cols));
  require_finite(m, "matrix");
  return m;
}

inline Matrix make_matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> row_major) {
  return make_matrix(rows, cols, std::span<const double>(row_major.begin(), row_major.size()));
}

inline std::vector<double> row_major_entries(const Matrix& m) {
  std::vector<double> out(static_cast<std::size_t>(m.size()));
  Eigen::Map<RowMajorMatrix>(out.data(), m.rows(), m.cols()) = m;
  return out;
}

inline double frobenius_norm(const Matrix& m) { return m.norm(); }

/// Largest entrywise deviation of QᵀQ from the identity.
inline double orthonormality_error(const Matrix& q) {
  if (q.cols() == 0) return 0.0;
  return (q.transpose() * q - Matrix::Identity(q.cols(), q.cols())).cwiseAbs().maxCoeff();
}

namespace detail {

// Flip columns so the entry of largest magnitude (first one on ties) is
// nonnegative. `companion` receives the same flips (v for an SVD).
inline void canonicalize_signs(Matrix& q, Matrix* companion = nullptr) {
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    Eigen::Index best = 0;
    double best_abs = -1.0;
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
      const double a = std::abs(q(i, j));
      if (a > best_abs) {
        best_abs = a;
        best = i;
      }
    }
    if (q(best, j) < 0.0) {
      q.col(j) = -q.col(j);
      if (companion != nullptr) companion->col(j) = -companion->col(j);
    }
  }
}

}  // namespace detail

struct SvdFactors {
  Matrix u;   // n x r
  Vector s;   // r, descending
  Matrix v;   // m x r

  Eigen::Index rank() const { return s.size(); }
  Matrix reconstruct() const { return u * s.asDiagonal() * v.transpose(); }
};

namespace detail {

// Thin SVD through LAPACK's divide-and-conquer driver. Eigen 3.4.0's BDCSVD
// returns wrong singular vectors for some rank-deficient inputs with
// clustered singular values, which is exactly the regime of projector chains.
inline SvdFactors lapack_svd(const Matrix& m, bool vectors) {
  const auto rows = static_cast<lapack_int>(m.rows());
  const auto cols = static_cast<lapack_int>(m.cols());
  const lapack_int k = std::min(rows, cols);
  Matrix a = m;
  SvdFactors out;
  out.s.resize(k);
  if (vectors) {
    out.u.resize(rows, k);
    Matrix vt(k, cols);
    const lapack_int info = LAPACKE_dgesdd(LAPACK_COL_MAJOR, 'S', rows, cols, a.data(), rows, out.s.data(),
                                           out.u.data(), rows, vt.data(), k);
    if (info != 0) throw Error(ErrorCode::InvalidMatrix, "dgesdd failed with info " + std::to_string(info));
    out.v = vt.transpose();
  } else {
    double dummy = 0.0;
    const lapack_int info =
        LAPACKE_dgesdd(LAPACK_COL_MAJOR, 'N', rows, cols, a.data(), rows, out.s.data(), &dummy, 1, &dummy, 1);
    if (info != 0) throw Error(ErrorCode::InvalidMatrix, "dgesdd failed with info " + std::to_string(info));
  }
  return out;
}

}  // namespace detail

/// Singular values only, descending.
inline Vector singular_values(const Matrix& m) {
  require_finite(m, "svd input");
  if (m.size() == 0) return Vector();
  return detail::lapack_svd(m, false).s;
}

/// Thin SVD keeping singular values strictly above rank_tol * sigma_max.
/// A nonzero max_rank additionally caps the number of retained triplets.
inline SvdFactors svd(const Matrix& m, double rank_tol = kDefaultRankTol, Eigen::Index max_rank = 0) {
  require_finite(m, "svd input");
  if (!(rank_tol >= 0.0)) throw Error(ErrorCode::InvalidArgument, "rank_tol must be nonnegative");
  if (m.size() == 0) throw Error(ErrorCode::InvalidMatrix, "svd of empty matrix");

  SvdFactors full = detail::lapack_svd(m, true);
  const Vector& sv = full.s;
  const double sigma_max = sv.size() > 0 ? sv(0) : 0.0;
  Eigen::Index r = 0;
  while (r < sv.size() && sv(r) > rank_tol * sigma_max && sv(r) > 0.0) ++r;
  if (max_rank > 0) r = std::min(r, max_rank);

  SvdFactors out{full.u.leftCols(r), sv.head(r), full.v.leftCols(r)};
  detail::canonicalize_signs(out.u, &out.v);
  return out;
}

struct EigFactors {
  Vector values;   // descending
  Matrix vectors;  // orthonormal columns, one per value

  Matrix reconstruct() const { return vectors * values.asDiagonal() * vectors.transpose(); }
};

/// Full eigendecomposition of a symmetric matrix, values descending.
inline EigFactors sym_eig(const Matrix& m) {
  if (m.rows() != m.cols()) throw Error(ErrorCode::NotSymmetric, "sym_eig needs a square matrix");
  require_finite(m, "sym_eig input");
  const double asym = (m - m.transpose()).norm();
  if (asym > 1e-8 * m.norm()) {
    throw Error(ErrorCode::NotSymmetric, "asymmetry " + std::to_string(asym) + " exceeds tolerance");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> dec(m);
  if (dec.info() != Eigen::Success) throw Error(ErrorCode::InvalidMatrix, "eigensolver did not converge");

  EigFactors out{dec.eigenvalues().reverse(), dec.eigenvectors().rowwise().reverse()};
  detail::canonicalize_signs(out.vectors);
  return out;
}

/// Orthonormal basis of the column space (rank-revealing QR, relative
/// tolerance 1e-10). A zero matrix yields an n x 0 basis.
inline Matrix qr_orthonormal(const Matrix& m) {
  require_finite(m, "qr input");
  Eigen::ColPivHouseholderQR<Matrix> dec(m);
  dec.setThreshold(1e-10);
  const Eigen::Index r = m.size() == 0 || m.cwiseAbs().maxCoeff() == 0.0 ? 0 : dec.rank();
  Matrix q = dec.householderQ() * Matrix::Identity(m.rows(), r);
  detail::canonicalize_signs(q);
  return q;
}

/// Modified Gram-Schmidt. Columns whose residual falls below 1e-12 of their
/// original norm are dropped.
inline Matrix gram_schmidt(const Matrix& m) {
  Matrix q(m.rows(), m.cols());
  Eigen::Index kept = 0;
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    Vector v = m.col(j);
    const double original = v.norm();
    if (original == 0.0) continue;
    for (Eigen::Index i = 0; i < kept; ++i) v -= q.col(i).dot(v) * q.col(i);
    const double residual = v.norm();
    if (residual <= 1e-12 * original) continue;
    q.col(kept++) = v / residual;
  }
  return q.leftCols(kept);
}

}  // namespace tvd

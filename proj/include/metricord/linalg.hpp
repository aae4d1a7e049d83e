#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "metricord/error.hpp"
#include "metricord/matrix.hpp"

namespace metricord::linalg {

// An eigenvalue counts toward rank iff it exceeds rank_rel_tol * lambda_max.
inline constexpr double rank_rel_tol = 1e-12;

// Metrics with condition number beyond this are rejected as effectively
// singular. PSD-but-singular metrics (graph Laplacians and friends) must go
// through the explicit positive-eigenspace path in the ordination module;
// regularizing here silently would corrupt the equivalence checks downstream.
inline constexpr double metric_max_condition = 1e12;

struct SpectralDecomposition {
  Vector eigenvalues;   // sorted descending
  Matrix eigenvectors;  // one column per eigenvalue, orthonormal in the requested metric
  Eigen::Index rank = 0;
  double tolerance_used = 0.0;
};

struct GsvdResult {
  Matrix A;       // p x r, A^T Q A = I
  Matrix B;       // n x r, B^T D B = I
  Vector Lambda;  // length r, descending, strictly positive
  Eigen::Index rank = 0;
};

namespace detail {

inline void check_square(const Matrix& M, const std::string& who) {
  if (M.rows() != M.cols()) fail_invalid(who + ": matrix must be square");
  if (M.rows() == 0) fail_invalid(who + ": matrix is empty");
}

// Symmetric eigendecomposition, eigenvalues descending.
inline void sym_eigen_desc(const Matrix& M, Vector& evals, Matrix& evecs) {
  Eigen::SelfAdjointEigenSolver<Matrix> solver(M);
  if (solver.info() != Eigen::Success) fail_numeric("symmetric eigensolver did not converge");
  evals = solver.eigenvalues().reverse();
  evecs = solver.eigenvectors().rowwise().reverse();
}

// Flip each column so its largest-magnitude entry is positive; ties break
// toward the lowest row index. Returns the per-column flips so a paired
// factor can be flipped consistently.
inline std::vector<double> canonical_column_signs(Matrix& M) {
  std::vector<double> signs(static_cast<std::size_t>(M.cols()), 1.0);
  for (Eigen::Index j = 0; j < M.cols(); ++j) {
    Eigen::Index arg = 0;
    double best = -1.0;
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
      const double a = std::abs(M(i, j));
      if (a > best) {
        best = a;
        arg = i;
      }
    }
    if (M(arg, j) < 0.0) {
      M.col(j) *= -1.0;
      signs[static_cast<std::size_t>(j)] = -1.0;
    }
  }
  return signs;
}

// Square root and inverse square root of an SPD metric from one
// eigendecomposition. Rejects non-PD and near-singular inputs.
struct SpdRoots {
  Matrix half;
  Matrix inv_half;
};

inline SpdRoots spd_roots(const Matrix& Q, const std::string& who) {
  check_square(Q, who);
  ensure_finite(Q, who);
  if (!is_symmetric(Q)) fail_invalid(who + ": metric is not symmetric");
  Vector evals;
  Matrix evecs;
  sym_eigen_desc(symmetrized(Q), evals, evecs);
  const double lmax = evals(0);
  const double lmin = evals(evals.size() - 1);
  if (lmin <= 0.0 || lmax / lmin > metric_max_condition)
    fail_numeric(who + ": metric is not positive definite within condition limit " +
                 std::to_string(metric_max_condition));
  const Vector root = evals.cwiseSqrt();
  SpdRoots out;
  out.half = evecs * root.asDiagonal() * evecs.transpose();
  out.inv_half = evecs * root.cwiseInverse().asDiagonal() * evecs.transpose();
  return out;
}

}  // namespace detail

// Plain symmetric eigendecomposition with the canonical sign convention.
inline SpectralDecomposition eigen_sym(const Matrix& M) {
  detail::check_square(M, "eigen_sym");
  ensure_finite(M, "eigen_sym input");
  if (!is_symmetric(M)) fail_invalid("eigen_sym: input is not symmetric");
  SpectralDecomposition out;
  detail::sym_eigen_desc(symmetrized(M), out.eigenvalues, out.eigenvectors);
  detail::canonical_column_signs(out.eigenvectors);
  const double lmax = std::max(out.eigenvalues(0), 0.0);
  out.tolerance_used = rank_rel_tol * lmax;
  out.rank = (out.eigenvalues.array() > out.tolerance_used).count();
  return out;
}

// Symmetric PSD square root. Eigenvalues within tol*lambda_max of zero are
// clipped to zero; anything more negative is treated as genuinely indefinite.
inline Matrix sym_sqrt(const Matrix& M, double tol = rank_rel_tol) {
  detail::check_square(M, "sym_sqrt");
  ensure_finite(M, "sym_sqrt input");
  if (!is_symmetric(M)) fail_invalid("sym_sqrt: input is not symmetric");
  Vector evals;
  Matrix evecs;
  detail::sym_eigen_desc(symmetrized(M), evals, evecs);
  const double lmax = std::max(evals(0), 0.0);
  Vector root(evals.size());
  for (Eigen::Index i = 0; i < evals.size(); ++i) {
    if (evals(i) < -tol * lmax)
      fail_numeric("sym_sqrt: eigenvalue " + std::to_string(evals(i)) +
                   " is indefinite beyond tolerance");
    root(i) = evals(i) > tol * lmax ? std::sqrt(evals(i)) : 0.0;
  }
  return evecs * root.asDiagonal() * evecs.transpose();
}

// Spectral (Moore-Penrose style) inverse of a symmetric PSD matrix:
// eigenvalues above the cutoff invert, the rest map to zero.
inline Matrix spectral_inverse(const Matrix& M, double tol = rank_rel_tol) {
  detail::check_square(M, "spectral_inverse");
  ensure_finite(M, "spectral_inverse input");
  if (!is_symmetric(M)) fail_invalid("spectral_inverse: input is not symmetric");
  Vector evals;
  Matrix evecs;
  detail::sym_eigen_desc(symmetrized(M), evals, evecs);
  const double lmax = std::max(evals(0), 0.0);
  Vector inv(evals.size());
  for (Eigen::Index i = 0; i < evals.size(); ++i) {
    if (evals(i) < -tol * lmax)
      fail_numeric("spectral_inverse: eigenvalue " + std::to_string(evals(i)) +
                   " is indefinite beyond tolerance");
    inv(i) = evals(i) > tol * lmax ? 1.0 / evals(i) : 0.0;
  }
  return evecs * inv.asDiagonal() * evecs.transpose();
}

// Eigenpairs of S in the Q inner product: S Q a = lambda a with a_i^T Q a_j
// = delta_ij. Solved through the symmetric reduction R S R with R = Q^(1/2).
inline SpectralDecomposition metric_eigen(const Matrix& S, const Matrix& Q) {
  detail::check_square(S, "metric_eigen");
  if (S.rows() != Q.rows() || Q.rows() != Q.cols())
    fail_invalid("metric_eigen: dimension mismatch between S and Q");
  ensure_finite(S, "metric_eigen input");
  if (!is_symmetric(S)) fail_invalid("metric_eigen: S is not symmetric");
  const detail::SpdRoots q = detail::spd_roots(Q, "metric_eigen metric");
  SpectralDecomposition out;
  detail::sym_eigen_desc(symmetrized(q.half * symmetrized(S) * q.half), out.eigenvalues,
                         out.eigenvectors);
  out.eigenvectors = (q.inv_half * out.eigenvectors).eval();
  detail::canonical_column_signs(out.eigenvectors);
  const double lmax = std::max(out.eigenvalues(0), 0.0);
  out.tolerance_used = rank_rel_tol * lmax;
  out.rank = (out.eigenvalues.array() > out.tolerance_used).count();
  return out;
}

// Generalized SVD of X under row metric Q and column metric D, computed as an
// ordinary SVD of D^(1/2) X Q^(1/2) and transformed back. The two internal
// residual checks are tripwires for solver breakdown, not user validation.
inline GsvdResult gsvd(const Matrix& X, const Matrix& Q, const Matrix& D) {
  if (Q.rows() != Q.cols() || D.rows() != D.cols() || X.cols() != Q.rows() ||
      X.rows() != D.rows())
    fail_invalid("gsvd: dimension mismatch among X, Q, D");
  ensure_finite(X, "gsvd input");
  const detail::SpdRoots q = detail::spd_roots(Q, "gsvd row metric");
  const detail::SpdRoots d = detail::spd_roots(D, "gsvd column metric");

  Eigen::JacobiSVD<Matrix> svd(d.half * X * q.half, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sigma = svd.singularValues();
  const double smax2 = sigma.size() > 0 ? sigma(0) * sigma(0) : 0.0;
  Eigen::Index r = 0;
  while (r < sigma.size() && sigma(r) * sigma(r) > rank_rel_tol * smax2) ++r;

  GsvdResult out;
  out.rank = r;
  out.Lambda = sigma.head(r).array().square();
  out.A = q.inv_half * svd.matrixV().leftCols(r);
  out.B = d.inv_half * svd.matrixU().leftCols(r);
  const std::vector<double> signs = detail::canonical_column_signs(out.A);
  for (Eigen::Index j = 0; j < r; ++j)
    if (signs[static_cast<std::size_t>(j)] < 0.0) out.B.col(j) *= -1.0;

  if (r > 0) {
    const double xnorm = X.norm();
    const double dropped = sigma.tail(sigma.size() - r).norm();
    const Matrix recon = out.B * out.Lambda.cwiseSqrt().asDiagonal() * out.A.transpose();
    if ((recon - X).norm() > 1e-8 * (1.0 + xnorm) + 1.01 * dropped)
      fail_numeric("gsvd: reconstruction residual exceeds tolerance");
    const Matrix b_alt = X * Q * out.A * out.Lambda.cwiseSqrt().cwiseInverse().asDiagonal();
    if ((b_alt - out.B).norm() > 1e-7 * (1.0 + out.B.norm()))
      fail_numeric("gsvd: left factor residual exceeds tolerance");
  }
  return out;
}

}  // namespace metricord::linalg

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

#include "metricord/contingency.hpp"
#include "metricord/linalg.hpp"
#include "metricord/matrix.hpp"

namespace metricord::ordination {

enum class TripletKind { custom, ca, nsca, dpcoa, inv_sigma };

// The statistical triplet: centered data, a metric on profile space, and
// location weights. c is carried along for profile-derived triplets so
// species points can be projected onto the axes.
struct Triplet {
  Matrix Xc;
  Matrix Q;
  Matrix D;
  Vector c;
  TripletKind kind = TripletKind::custom;
  // Permits a metric that is only positive semidefinite; the analysis is then
  // restricted to its positive eigenspace. Off by default so user-supplied
  // metrics are checked strictly.
  bool allow_psd_metric = false;
};

struct OrdinationResult {
  linalg::GsvdResult gsvd;
  Matrix location_coords;  // n x k, Xc Q A_k
  Matrix species_coords;   // p x k when the triplet is profile-derived
  Vector eigenvalues;      // all retained eigenvalues, descending
  Vector inertia_shares;
  double total_inertia = 0.0;
  Eigen::Index k = 0;
  Eigen::Index dropped_metric_dims = 0;
};

// Coordinates of the centered species axes: row s is (e_s - c)' Q A_k.
inline Matrix species_axis_projection(const OrdinationResult& res, const Triplet& t) {
  if (t.c.size() == 0) fail_invalid("species_axis_projection: triplet is not profile-derived");
  if (t.c.size() != t.Q.rows())
    fail_invalid("species_axis_projection: profile mean does not match the metric");
  const Matrix qa = t.Q * res.gsvd.A.leftCols(res.k);
  return qa - Vector::Ones(qa.rows()) * (t.c.transpose() * qa);
}

// Generalized PCA of the triplet. k = 0 keeps min(n-1, p, rank) dimensions.
inline OrdinationResult gpca(const Triplet& t, Eigen::Index k = 0) {
  const Eigen::Index n = t.Xc.rows();
  const Eigen::Index p = t.Xc.cols();
  if (t.Q.rows() != p || t.Q.cols() != p) fail_invalid("gpca: metric does not match the data");
  if (t.D.rows() != n || t.D.cols() != n) fail_invalid("gpca: weights do not match the data");
  if (k < 0) fail_invalid("gpca: k must be nonnegative");

  const auto q_eig = linalg::eigen_sym(t.Q);
  const double q_max = std::max(q_eig.eigenvalues(0), 0.0);
  if (q_eig.eigenvalues(q_eig.eigenvalues.size() - 1) < -1e-10 * std::max(q_max, 1e-300))
    fail_numeric("gpca: metric is indefinite");

  OrdinationResult res;
  if (q_eig.rank == p || !t.allow_psd_metric) {
    res.gsvd = linalg::gsvd(t.Xc, t.Q, t.D);
  } else {
    if (q_eig.rank == 0) fail_numeric("gpca: metric has no positive directions");
    // Restrict to the positive eigenspace of Q: with C = V_r L_r^{1/2},
    // the triplet (Xc C, I, D) shares eigenvalues and coordinates, and the
    // axes map back as A = V_r L_r^{-1/2} A'.
    const Matrix v_r = q_eig.eigenvectors.leftCols(q_eig.rank);
    const Vector roots = q_eig.eigenvalues.head(q_eig.rank).cwiseSqrt();
    const Matrix c_factor = v_r * roots.asDiagonal();
    auto reduced = linalg::gsvd(t.Xc * c_factor, Matrix::Identity(q_eig.rank, q_eig.rank), t.D);
    res.gsvd.A = v_r * roots.cwiseInverse().asDiagonal() * reduced.A;
    res.gsvd.B = std::move(reduced.B);
    res.gsvd.Lambda = std::move(reduced.Lambda);
    res.gsvd.rank = reduced.rank;
    res.dropped_metric_dims = p - q_eig.rank;
  }

  const Eigen::Index rank = res.gsvd.rank;
  if (k == 0) k = std::min({n - 1, p, rank});
  if (k > rank)
    fail_invalid("gpca: requested " + std::to_string(k) + " dimensions but the rank is " +
                 std::to_string(rank));
  res.k = k;

  res.eigenvalues = res.gsvd.Lambda;
  res.total_inertia = res.eigenvalues.sum();
  const double trace = ((t.D * t.Xc).cwiseProduct(t.Xc * t.Q)).sum();
  if (std::abs(trace - res.total_inertia) > 1e-9 * std::max(1.0, std::abs(trace)))
    fail_numeric("gpca: eigenvalue sum does not match the inertia trace");
  res.inertia_shares = res.total_inertia > 0.0
                           ? Vector(res.eigenvalues / res.total_inertia)
                           : Vector(Vector::Zero(res.eigenvalues.size()));

  res.location_coords = t.Xc * (t.Q * res.gsvd.A.leftCols(k));
  if (t.c.size() > 0) res.species_coords = species_axis_projection(res, t);
  return res;
}

// Correspondence analysis: chi-square metric on profiles, abundance weights.
inline OrdinationResult ca(const contingency::ProfileData& pd, Eigen::Index k = 0) {
  for (Eigen::Index s = 0; s < pd.c.size(); ++s)
    if (pd.c(s) <= 0.0)
      fail_invalid("ca: species " + std::to_string(s) + " has zero weight in the mean profile");
  Triplet t;
  t.Xc = pd.Xc;
  t.Q = Matrix(pd.c.cwiseInverse().asDiagonal());
  t.D = Matrix(pd.w.asDiagonal());
  t.c = pd.c;
  t.kind = TripletKind::ca;
  return gpca(t, k);
}

// Non-symmetric correspondence analysis: identity metric on profiles.
inline OrdinationResult nsca(const contingency::ProfileData& pd, Eigen::Index k = 0) {
  Triplet t;
  t.Xc = pd.Xc;
  t.Q = Matrix::Identity(pd.Xc.cols(), pd.Xc.cols());
  t.D = Matrix(pd.w.asDiagonal());
  t.c = pd.c;
  t.kind = TripletKind::nsca;
  return gpca(t, k);
}

// Turns pairwise species distances into the centered similarity matrix
// -P_c (Delta/2) P_c', clipping roundoff-level negative eigenvalues.
inline Matrix sigma_from_distances(const Matrix& delta, const Vector& c) {
  if (delta.rows() != c.size() || delta.cols() != c.size())
    fail_invalid("sigma_from_distances: distance matrix does not match the profile length");
  if (!is_symmetric(delta)) fail_invalid("sigma_from_distances: distances are not symmetric");
  const Matrix p_c = Matrix::Identity(c.size(), c.size()) - Vector::Ones(c.size()) * c.transpose();
  const Matrix centered = symmetrized(-0.5 * (p_c * delta * p_c.transpose()));
  const auto eig = linalg::eigen_sym(centered);
  const double lmax = std::max(eig.eigenvalues(0), 0.0);
  if (eig.eigenvalues(eig.eigenvalues.size() - 1) < -1e-8 * std::max(lmax, 1e-300))
    fail_numeric("sigma_from_distances: distances are not Euclidean-embeddable");
  const Vector clipped = eig.eigenvalues.cwiseMax(0.0);
  return eig.eigenvectors * clipped.asDiagonal() * eig.eigenvectors.transpose();
}

// Double principal coordinates via the direct form: gPCA of (Xc, Sigma, D_w).
// Sigma may come straight from a tree (positive definite) or from
// sigma_from_distances (semidefinite; handled by the eigenspace restriction).
inline OrdinationResult dpcoa_gpca(const contingency::ProfileData& pd, const Matrix& sigma,
                                   Eigen::Index k = 0) {
  if (sigma.rows() != pd.Xc.cols())
    fail_invalid("dpcoa_gpca: similarity matrix does not match the species count");
  Triplet t;
  t.Xc = pd.Xc;
  t.Q = sigma;
  t.D = Matrix(pd.w.asDiagonal());
  t.c = pd.c;
  t.kind = TripletKind::dpcoa;
  t.allow_psd_metric = true;
  return gpca(t, k);
}

// Double principal coordinates in the literal multi-step form: place species
// by weighted MDS of their distances, put each location at the barycenter of
// its species cloud, then run a weighted PCA of the location points.
inline OrdinationResult dpcoa_steps(const contingency::ProfileData& pd, const Matrix& delta,
                                    Eigen::Index k = 0) {
  const Eigen::Index s = pd.Xc.cols();
  if (delta.rows() != s || delta.cols() != s)
    fail_invalid("dpcoa_steps: distance matrix does not match the species count");
  if (!is_symmetric(delta)) fail_invalid("dpcoa_steps: distances are not symmetric");
  if (pd.c.minCoeff() <= 0.0)
    fail_invalid("dpcoa_steps: every species needs positive weight in the mean profile");

  const Matrix p_c = Matrix::Identity(s, s) - Vector::Ones(s) * pd.c.transpose();
  const Matrix similarity = symmetrized(-0.5 * (p_c * delta * p_c.transpose()));
  const Vector root_c = pd.c.cwiseSqrt();
  const Matrix m = symmetrized(root_c.asDiagonal() * similarity * root_c.asDiagonal());
  const auto eig = linalg::eigen_sym(m);
  const double lmax = std::max(eig.eigenvalues(0), 0.0);
  if (eig.eigenvalues(eig.eigenvalues.size() - 1) < -1e-8 * std::max(lmax, 1e-300))
    fail_numeric("dpcoa_steps: distances are not Euclidean-embeddable");
  if (eig.rank == 0) fail_numeric("dpcoa_steps: species cloud is a single point");

  // species coordinates whose squared distances reproduce the Rao form
  const Matrix z = root_c.cwiseInverse().asDiagonal() * eig.eigenvectors.leftCols(eig.rank) *
                   eig.eigenvalues.head(eig.rank).cwiseSqrt().asDiagonal();
  const Matrix y = pd.X * z;  // barycenters; already centered since c' z = 0

  Triplet step3;
  step3.Xc = y;
  step3.Q = Matrix::Identity(z.cols(), z.cols());
  step3.D = Matrix(pd.w.asDiagonal());
  step3.kind = TripletKind::dpcoa;
  OrdinationResult res = gpca(step3, k);
  res.species_coords = z * res.gsvd.A.leftCols(res.k);
  return res;
}

// The transposed triplet, for running the ordination on the column side.
inline Triplet transposed(const Triplet& t) {
  Triplet out;
  out.Xc = t.Xc.transpose();
  out.Q = t.D;
  out.D = t.Q;
  out.kind = TripletKind::custom;
  out.allow_psd_metric = t.allow_psd_metric;
  return out;
}

// Row coordinates recovered from a column-side ordination:
// xhat' = x' Q Yhat Lambda_k^{-1/2}.
inline Vector row_coords_from_columns(const OrdinationResult& column_side,
                                      const Matrix& row_metric, const Vector& x) {
  if (x.size() != row_metric.rows() || column_side.location_coords.rows() != row_metric.cols())
    fail_invalid("row_coords_from_columns: dimension mismatch");
  const Vector lam = column_side.eigenvalues.head(column_side.k);
  return (x.transpose() * row_metric * column_side.location_coords *
          lam.cwiseSqrt().cwiseInverse().asDiagonal())
      .transpose();
}

// Eigenbasis of a similarity matrix together with per-direction weights,
// giving the transform f_w(x) = V diag(w) V' x.
struct HarmonicBasis {
  Matrix V;
  Vector lambda;
  Vector w;
};

inline HarmonicBasis harmonic_basis(const Matrix& sigma) {
  const auto eig = linalg::eigen_sym(sigma);
  return {eig.eigenvectors, eig.eigenvalues, Vector::Ones(eig.eigenvalues.size())};
}

inline Vector sqrt_lambda_weights(const HarmonicBasis& b) {
  return b.lambda.cwiseMax(0.0).cwiseSqrt();
}

inline Vector inv_sqrt_lambda_weights(const HarmonicBasis& b) {
  const double tol = linalg::rank_rel_tol * std::max(b.lambda(0), 0.0);
  Vector w = Vector::Zero(b.lambda.size());
  for (Eigen::Index j = 0; j < b.lambda.size(); ++j)
    if (b.lambda(j) > tol) w(j) = 1.0 / std::sqrt(b.lambda(j));
  return w;
}

inline Vector indicator_weights(const HarmonicBasis& b, Eigen::Index r) {
  Vector w = Vector::Zero(b.lambda.size());
  w.head(std::min(r, b.lambda.size())).setOnes();
  return w;
}

inline Vector harmonic_transform(const Vector& x, const HarmonicBasis& b) {
  if (x.size() != b.V.rows()) fail_invalid("harmonic_transform: dimension mismatch");
  if (b.w.size() != b.lambda.size()) fail_invalid("harmonic_transform: weight count mismatch");
  if (b.w.minCoeff() < 0.0) fail_invalid("harmonic_transform: weights must be nonnegative");
  return b.V * (b.w.asDiagonal() * (b.V.transpose() * x));
}

// Re-derives the location coordinates from the two kernel matrices K1 = D and
// K2 = Xc Q Xc' and reports the largest deviation (up to per-column sign)
// from the triplet ordination. Small values certify the two formulations
// agree on this triplet.
inline double kernel_equivalence_check(const Triplet& t) {
  const auto res = gpca(t);
  const Matrix direct = t.Xc * (t.Q * res.gsvd.A);  // all rank columns

  const Matrix k2 = symmetrized(t.Xc * t.Q * t.Xc.transpose());
  const auto u = linalg::metric_eigen(k2, t.D);
  if (u.rank != res.gsvd.rank) return std::numeric_limits<double>::infinity();
  const Matrix kernel_coords = k2 * t.D * u.eigenvectors.leftCols(u.rank) *
                               u.eigenvalues.head(u.rank).cwiseSqrt().cwiseInverse().asDiagonal();

  double worst = 0.0;
  for (Eigen::Index j = 0; j < direct.cols(); ++j) {
    const double diff = (kernel_coords.col(j) - direct.col(j)).cwiseAbs().maxCoeff();
    const double flipped = (kernel_coords.col(j) + direct.col(j)).cwiseAbs().maxCoeff();
    worst = std::max(worst, std::min(diff, flipped));
  }
  return worst;
}

}  // namespace metricord::ordination

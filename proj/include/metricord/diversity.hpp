#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "metricord/contingency.hpp"
#include "metricord/linalg.hpp"
#include "metricord/matrix.hpp"
#include "metricord/rng.hpp"

namespace metricord::diversity {

namespace detail {

inline void check_profile(const Vector& x, const std::string& who) {
  if (x.size() == 0) fail_invalid(who + ": empty profile");
  if (x.minCoeff() < -1e-12) fail_invalid(who + ": profile has negative entries");
  if (std::abs(x.sum() - 1.0) > 1e-8) fail_invalid(who + ": profile does not sum to one");
}

}  // namespace detail

// Quadratic diversity of a profile under metric Q:
// H_Q(x) = x' diag(Q) - x' Q x. Q = I gives Gini-Simpson.
inline double diversity_H(const Vector& x, const Matrix& Q) {
  detail::check_profile(x, "diversity_H");
  if (Q.rows() != x.size() || Q.cols() != x.size())
    fail_invalid("diversity_H: metric does not match the profile length");
  return x.dot(Q.diagonal()) - x.dot(Q * x);
}

// Quadratic entropy over a dissimilarity matrix, taken as (x' Delta x)/2.
// The half makes it equal diversity_H(x, Sigma) whenever
// 2 Sigma = 1t' + t1' - Delta, and Delta = 2(11' - I) reduce to Gini-Simpson.
inline double rao_form(const Vector& x, const Matrix& delta) {
  if (delta.rows() != x.size() || delta.cols() != x.size())
    fail_invalid("rao_form: matrix does not match the profile length");
  if (!is_symmetric(delta)) fail_invalid("rao_form: dissimilarity matrix is not symmetric");
  const double scale = delta.size() ? delta.cwiseAbs().maxCoeff() : 0.0;
  if (delta.diagonal().cwiseAbs().maxCoeff() > 1e-10 * std::max(scale, 1.0))
    fail_invalid("rao_form: dissimilarity matrix needs a zero diagonal");
  return 0.5 * x.dot(delta * x);
}

inline double dissimilarity(const Vector& x_k, const Vector& x_l, const Matrix& Q) {
  if (x_k.size() != x_l.size() || Q.rows() != x_k.size() || Q.cols() != x_k.size())
    fail_invalid("dissimilarity: dimension mismatch");
  const Vector d = x_k - x_l;
  return d.dot(Q * d);
}

// Rao dissimilarity between profiles over raw distances: (x-y)' (-Delta/2) (x-y).
inline double rao_dissimilarity(const Vector& x_k, const Vector& x_l, const Matrix& delta) {
  if (x_k.size() != x_l.size() || delta.rows() != x_k.size() || delta.cols() != x_k.size())
    fail_invalid("rao_dissimilarity: dimension mismatch");
  const Vector d = x_k - x_l;
  return d.dot((-0.5 * delta) * d);
}

// Total inertia of a weighted point cloud: tr(D X Q X').
inline double inertia(const Matrix& X, const Matrix& Q, const Matrix& D) {
  if (Q.rows() != X.cols() || Q.cols() != X.cols() || D.rows() != X.rows() ||
      D.cols() != X.rows())
    fail_invalid("inertia: dimension mismatch");
  return ((D * X).cwiseProduct(X * Q)).sum();
}

struct PermutationSummary {
  int replicates = 0;
  double p_value = 1.0;
  std::uint64_t seed = 0;
  double f_observed = 0.0;
  int exceed_count = 0;  // replicates with F at or above the observed value
};

struct DiversityReport {
  double I_total = 0.0;
  double I_between = 0.0;
  double I_within = 0.0;
  Vector per_location_H;
  Matrix pairwise_diss;
  double F = 0.0;
  bool f_infinite = false;  // I_within is zero while I_between is not
  std::optional<PermutationSummary> permutation;
};

// Splits the total diversity of the mean profile into the weighted average of
// pairwise dissimilarities (between part) and the weighted average of
// per-location diversities (within part). The three-way identity is checked
// internally; F = (N-1) I_B / (L I_W).
inline DiversityReport decompose(const contingency::ProfileData& pd, const Matrix& Q) {
  const Eigen::Index l = pd.X.rows();
  DiversityReport rep;
  rep.I_total = diversity_H(pd.c, Q);

  rep.per_location_H = Vector::Zero(l);
  rep.pairwise_diss = Matrix::Zero(l, l);
  for (Eigen::Index k = 0; k < l; ++k) {
    rep.per_location_H(k) = diversity_H(pd.X.row(k).transpose(), Q);
    for (Eigen::Index j = k + 1; j < l; ++j) {
      const double d = dissimilarity(pd.X.row(k).transpose(), pd.X.row(j).transpose(), Q);
      rep.pairwise_diss(k, j) = d;
      rep.pairwise_diss(j, k) = d;
    }
  }

  double between = 0.0;
  for (Eigen::Index k = 0; k < l; ++k)
    for (Eigen::Index j = 0; j < l; ++j)
      between += pd.w(k) * pd.w(j) * rep.pairwise_diss(k, j);
  rep.I_between = 0.5 * between;
  rep.I_within = pd.w.dot(rep.per_location_H);

  const double gap = std::abs(rep.I_total - rep.I_between - rep.I_within);
  if (gap > 1e-9 * std::max(1.0, std::abs(rep.I_total)))
    fail_numeric("diversity decomposition identity check failed");

  const double n = pd.total;
  if (rep.I_within > 0.0) {
    rep.F = (n - 1.0) * rep.I_between / (static_cast<double>(l) * rep.I_within);
  } else if (rep.I_between <= 1e-14 * std::max(1.0, std::abs(rep.I_total))) {
    rep.F = 0.0;
  } else {
    rep.F = std::numeric_limits<double>::infinity();
    rep.f_infinite = true;
  }
  return rep;
}

inline double chi2(const contingency::AbundanceTable& table) {
  const Vector row = table.counts.rowwise().sum();
  const Vector col = table.counts.colwise().sum();
  if (table.total <= 0.0) fail_invalid("chi2: empty table");
  if (row.minCoeff() <= 0.0 || col.minCoeff() <= 0.0)
    fail_invalid("chi2: zero marginal");
  double stat = 0.0;
  for (Eigen::Index i = 0; i < table.counts.rows(); ++i)
    for (Eigen::Index j = 0; j < table.counts.cols(); ++j) {
      const double expected = row(i) * col(j) / table.total;
      const double diff = table.counts(i, j) - expected;
      stat += diff * diff / expected;
    }
  return stat;
}

struct ClassicalIndices {
  double gini_simpson = 0.0;
  double shannon = 0.0;  // sum of x log x: nonpositive; negate for the usual entropy
};

inline ClassicalIndices classical_indices(const Vector& x) {
  detail::check_profile(x, "classical_indices");
  ClassicalIndices out;
  out.gini_simpson = 1.0 - x.squaredNorm();
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (x(i) > 0.0) out.shannon += x(i) * std::log(x(i));
  return out;
}

namespace detail {

inline void check_integer_counts(const Matrix& counts, const std::string& who) {
  for (Eigen::Index i = 0; i < counts.rows(); ++i)
    for (Eigen::Index j = 0; j < counts.cols(); ++j)
      if (std::abs(counts(i, j) - std::round(counts(i, j))) > 1e-9)
        fail_invalid(who + ": counts must be integers (transformed tables are not permutable)");
}

// F statistic straight from a count matrix. The total inertia of the mean
// profile is permutation-invariant, so I_W comes from the decomposition
// identity rather than a second pass. With f_dims > 0 the between part of the
// numerator is truncated to the leading f_dims eigenvalues.
inline double f_from_counts(const Matrix& counts, const Matrix& Q, int f_dims) {
  const Eigen::Index l = counts.rows();
  const double total = counts.sum();
  const Vector row_sums = counts.rowwise().sum();
  const Matrix x = row_sums.cwiseInverse().asDiagonal() * counts;
  const Vector w = row_sums / total;
  const Vector c = x.transpose() * w;
  const Matrix xc = x - Vector::Ones(l) * c.transpose();

  const double i_total = c.dot(Q.diagonal()) - c.dot(Q * c);
  const Matrix d_w = Matrix(w.asDiagonal());
  const double i_between_full = inertia(xc, Q, d_w);
  double i_between = i_between_full;
  if (f_dims > 0) {
    const auto g = linalg::gsvd(xc, Q, d_w);
    i_between = 0.0;
    for (Eigen::Index j = 0; j < std::min<Eigen::Index>(f_dims, g.rank); ++j)
      i_between += g.Lambda(j);
  }
  const double i_within = i_total - i_between_full;
  if (i_within <= 0.0)
    return i_between > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  return (total - 1.0) * i_between / (static_cast<double>(l) * i_within);
}

inline std::vector<int> pooled_species_sequence(const Matrix& counts) {
  std::vector<int> seq;
  seq.reserve(static_cast<std::size_t>(counts.sum()));
  for (Eigen::Index i = 0; i < counts.rows(); ++i)
    for (Eigen::Index j = 0; j < counts.cols(); ++j) {
      const auto reps = static_cast<long long>(std::llround(counts(i, j)));
      for (long long r = 0; r < reps; ++r) seq.push_back(static_cast<int>(j));
    }
  return seq;
}

inline Matrix counts_from_sequence(const std::vector<int>& seq, const Vector& row_sizes,
                                   Eigen::Index n_species) {
  Matrix counts = Matrix::Zero(row_sizes.size(), n_species);
  std::size_t cursor = 0;
  for (Eigen::Index i = 0; i < row_sizes.size(); ++i) {
    const auto sz = static_cast<std::size_t>(std::llround(row_sizes(i)));
    for (std::size_t k = 0; k < sz; ++k) counts(i, seq[cursor++]) += 1.0;
  }
  return counts;
}

inline Matrix pool_rows(const Matrix& counts, const std::vector<int>& gid, int n_groups) {
  Matrix pooled = Matrix::Zero(n_groups, counts.cols());
  for (Eigen::Index i = 0; i < counts.rows(); ++i)
    pooled.row(gid[static_cast<std::size_t>(i)]) += counts.row(i);
  return pooled;
}

}  // namespace detail

enum class PermutationScheme {
  units,   // reassign individual count units to locations, totals preserved
  labels,  // reshuffle the location-to-group assignment (needs group_ids)
};

struct PermutationOptions {
  int replicates = 999;
  std::uint64_t seed = 0;
  PermutationScheme scheme = PermutationScheme::units;
  std::vector<int> group_ids;  // per location; empty means no grouping
  int f_dims = 0;              // 0 keeps the full-rank between inertia
  int max_threads = 1;
};

// Monte Carlo F test. Every replicate derives its randomness from
// (seed, replicate index), so the result is identical however the replicates
// are scheduled across threads. p uses the add-one estimator.
inline DiversityReport permutation_test(const contingency::AbundanceTable& table, const Matrix& Q,
                                        const PermutationOptions& opts) {
  if (opts.replicates < 99) fail_invalid("permutation_test: need at least 99 replicates");
  detail::check_integer_counts(table.counts, "permutation_test");

  int n_groups = 0;
  if (!opts.group_ids.empty()) {
    if (opts.group_ids.size() != static_cast<std::size_t>(table.counts.rows()))
      fail_invalid("permutation_test: need one group id per location");
    for (int g : opts.group_ids) {
      if (g < 0) fail_invalid("permutation_test: group ids must be nonnegative");
      n_groups = std::max(n_groups, g + 1);
    }
    std::vector<int> sizes(static_cast<std::size_t>(n_groups), 0);
    for (int g : opts.group_ids) ++sizes[static_cast<std::size_t>(g)];
    for (int sz : sizes)
      if (sz == 0) fail_invalid("permutation_test: every group needs at least one location");
  }
  if (opts.scheme == PermutationScheme::labels && n_groups == 0)
    fail_invalid("permutation_test: label permutation requires group ids");

  // the analyzed table: locations, or groups when a grouping is given
  const Matrix base = n_groups > 0 ? detail::pool_rows(table.counts, opts.group_ids, n_groups)
                                   : table.counts;
  const double f_obs = detail::f_from_counts(base, Q, opts.f_dims);

  const std::vector<int> canonical_seq =
      opts.scheme == PermutationScheme::units ? detail::pooled_species_sequence(base)
                                              : std::vector<int>();
  const Vector base_row_sums = base.rowwise().sum();

  const int threads =
      std::max(1, std::min(opts.max_threads, opts.replicates));
  std::vector<int> exceed_per_thread(static_cast<std::size_t>(threads), 0);

  auto run_chunk = [&](int tid) {
    int local = 0;
    for (int r = tid; r < opts.replicates; r += threads) {
      DeterministicRng rng =
          DeterministicRng::for_replicate(opts.seed, static_cast<std::uint64_t>(r));
      double f_perm = 0.0;
      if (opts.scheme == PermutationScheme::units) {
        std::vector<int> seq = canonical_seq;
        deterministic_shuffle(seq, rng);
        f_perm = detail::f_from_counts(detail::counts_from_sequence(seq, base_row_sums, base.cols()),
                                       Q, opts.f_dims);
      } else {
        std::vector<int> gid = opts.group_ids;
        deterministic_shuffle(gid, rng);
        f_perm = detail::f_from_counts(detail::pool_rows(table.counts, gid, n_groups), Q,
                                       opts.f_dims);
      }
      if (f_perm >= f_obs) ++local;
    }
    exceed_per_thread[static_cast<std::size_t>(tid)] = local;
  };

  if (threads == 1) {
    run_chunk(0);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) pool.emplace_back(run_chunk, t);
    for (auto& th : pool) th.join();
  }

  int exceed = 0;
  for (int e : exceed_per_thread) exceed += e;

  contingency::AbundanceTable analyzed;
  if (n_groups > 0) {
    std::vector<std::string> group_labels;
    for (int g = 0; g < n_groups; ++g) group_labels.push_back("group" + std::to_string(g));
    analyzed = contingency::table_from_counts(base, group_labels, table.species_labels);
  } else {
    analyzed = table;
  }
  DiversityReport rep = decompose(contingency::profiles(analyzed), Q);
  PermutationSummary perm;
  perm.replicates = opts.replicates;
  perm.seed = opts.seed;
  perm.f_observed = f_obs;
  perm.exceed_count = exceed;
  perm.p_value = (1.0 + exceed) / (1.0 + opts.replicates);
  rep.permutation = perm;
  return rep;
}

struct InertiaTriple {
  double I_total = 0.0;
  double I_between = 0.0;
  double I_within = 0.0;
};

// Brute-force check of the decomposition: expand the table to one indicator
// row per counted individual, center, and project onto location indicators.
// Deliberately literal; guarded because the expansion is N x S dense.
inline InertiaTriple incidence_oracle(const contingency::AbundanceTable& table, const Matrix& Q) {
  detail::check_integer_counts(table.counts, "incidence_oracle");
  const auto n = static_cast<long long>(std::llround(table.total));
  if (n > 100000) fail_invalid("incidence_oracle: table too large for the incidence expansion");
  if (n <= 0) fail_invalid("incidence_oracle: empty table");

  const Eigen::Index l = table.counts.rows();
  const Eigen::Index s = table.counts.cols();
  Matrix y = Matrix::Zero(static_cast<Eigen::Index>(n), s);
  Matrix z = Matrix::Zero(static_cast<Eigen::Index>(n), l);
  Eigen::Index cursor = 0;
  for (Eigen::Index i = 0; i < l; ++i)
    for (Eigen::Index j = 0; j < s; ++j) {
      const auto reps = static_cast<long long>(std::llround(table.counts(i, j)));
      for (long long r = 0; r < reps; ++r) {
        y(cursor, j) = 1.0;
        z(cursor, i) = 1.0;
        ++cursor;
      }
    }

  const Vector ybar = y.colwise().mean();
  const Matrix y_tilde = y - Vector::Ones(y.rows()) * ybar.transpose();
  // regression of the centered incidence on the location indicators
  const Matrix ztz_inv = (z.transpose() * z).inverse();
  const Matrix y_fit = z * (ztz_inv * (z.transpose() * y_tilde));

  const double inv_n = 1.0 / static_cast<double>(n);
  InertiaTriple out;
  out.I_total = inv_n * (y_tilde.cwiseProduct(y_tilde * Q)).sum();
  out.I_between = inv_n * (y_fit.cwiseProduct(y_fit * Q)).sum();
  const Matrix resid = y_tilde - y_fit;
  out.I_within = inv_n * (resid.cwiseProduct(resid * Q)).sum();
  return out;
}

}  // namespace metricord::diversity

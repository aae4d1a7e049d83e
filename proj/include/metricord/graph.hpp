#pragma once

#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "metricord/io.hpp"
#include "metricord/linalg.hpp"
#include "metricord/matrix.hpp"

namespace metricord::graph {

// Undirected weighted graph. adjacency_sum is the sum of every adjacency
// entry, which is twice the total edge weight.
struct Graph {
  Matrix adjacency;
  Vector degrees;
  double adjacency_sum = 0.0;
  std::vector<std::string> labels;
};

inline Graph make_graph(const Matrix& adjacency, std::vector<std::string> labels = {}) {
  if (adjacency.rows() != adjacency.cols() || adjacency.rows() == 0)
    fail_invalid("graph: adjacency matrix must be square and nonempty");
  ensure_finite(adjacency, "graph adjacency");
  const double scale = std::max(1.0, adjacency.cwiseAbs().maxCoeff());
  if (!is_symmetric(adjacency, 1e-12))
    fail_invalid("graph: adjacency matrix is not symmetric");
  if (adjacency.diagonal().cwiseAbs().maxCoeff() > 1e-12 * scale)
    fail_invalid("graph: adjacency diagonal must be zero (no self loops)");
  if (adjacency.minCoeff() < 0.0) fail_invalid("graph: edge weights must be nonnegative");

  Graph g;
  g.adjacency = symmetrized(adjacency);
  g.adjacency.diagonal().setZero();
  g.degrees = g.adjacency.rowwise().sum();
  g.adjacency_sum = g.degrees.sum();
  if (g.adjacency_sum <= 0.0) fail_invalid("graph: no edges");
  if (labels.empty())
    for (Eigen::Index i = 0; i < adjacency.rows(); ++i)
      labels.push_back("v" + std::to_string(i));
  if (labels.size() != static_cast<std::size_t>(adjacency.rows()))
    fail_invalid("graph: need one label per vertex");
  g.labels = std::move(labels);
  return g;
}

// One edge per line: "u v [weight]", whitespace separated, '#' comments.
// Vertices are indexed in order of first appearance; repeated edges add up.
inline Graph parse_edge_list(const std::string& text, const std::string& source = "edge list") {
  std::map<std::string, int> index;
  std::vector<std::string> labels;
  struct Edge {
    int u, v;
    double w;
  };
  std::vector<Edge> edges;

  const auto lines = split_lines(text);
  for (std::size_t lineno = 0; lineno < lines.size(); ++lineno) {
    std::string line = lines[lineno];
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream in(line);
    std::vector<std::string> fields;
    std::string tok;
    while (in >> tok) fields.push_back(tok);
    if (fields.empty()) continue;
    const std::string where = source + " line " + std::to_string(lineno + 1);
    if (fields.size() < 2 || fields.size() > 3)
      fail_io(where + ": expected 'u v [weight]', got " + std::to_string(fields.size()) +
              " fields");
    const double w = fields.size() == 3 ? parse_cell(fields[2], where) : 1.0;
    if (!(w >= 0.0)) fail_io(where + ": edge weight must be nonnegative");
    if (fields[0] == fields[1]) fail_io(where + ": self loop on '" + fields[0] + "'");
    for (int side = 0; side < 2; ++side) {
      const std::string& name = fields[static_cast<std::size_t>(side)];
      if (index.emplace(name, static_cast<int>(labels.size())).second) labels.push_back(name);
    }
    edges.push_back({index[fields[0]], index[fields[1]], w});
  }
  if (labels.empty()) fail_io(source + ": no edges found");

  Matrix a = Matrix::Zero(static_cast<Eigen::Index>(labels.size()),
                          static_cast<Eigen::Index>(labels.size()));
  for (const auto& e : edges) {
    a(e.u, e.v) += e.w;
    a(e.v, e.u) += e.w;
  }
  return make_graph(a, labels);
}

inline Graph load_edge_list(const std::string& path) {
  return parse_edge_list(read_text_file(path), path);
}

enum class LaplacianVariant { raw, row_standardized, sym_normalized };

inline Matrix laplacian(const Graph& g, LaplacianVariant variant = LaplacianVariant::raw) {
  const Matrix l = Matrix(g.degrees.asDiagonal()) - g.adjacency;
  if (variant == LaplacianVariant::raw) return l;
  for (Eigen::Index i = 0; i < g.degrees.size(); ++i)
    if (g.degrees(i) <= 0.0)
      fail_invalid("laplacian: vertex '" + g.labels[static_cast<std::size_t>(i)] +
                   "' is isolated");
  if (variant == LaplacianVariant::row_standardized)
    return g.degrees.cwiseInverse().asDiagonal() * l;
  const Vector half = g.degrees.cwiseSqrt().cwiseInverse();
  return symmetrized(half.asDiagonal() * l * half.asDiagonal());
}

namespace detail {

inline Vector centered_by_mean(const Vector& y, const Graph& g, const std::string& who) {
  if (y.size() != g.adjacency.rows()) fail_invalid(who + ": vector does not match the graph");
  ensure_finite(y, who + " input");
  return (y.array() - y.mean()).matrix();
}

inline void require_varying(const Vector& y_tilde, const Vector& y, const std::string& who) {
  if (y_tilde.cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, y.cwiseAbs().maxCoeff()))
    fail_invalid(who + ": vector is constant");
}

}  // namespace detail

// Geary's c: (n-1)/N_e * y'Ly / y'y on the mean-centered vector. The
// pairwise double-sum form is evaluated alongside as a cross-check.
inline double geary_c(const Vector& y, const Graph& g) {
  const Vector yt = detail::centered_by_mean(y, g, "geary_c");
  detail::require_varying(yt, y, "geary_c");
  const double n = static_cast<double>(y.size());
  const double denom = yt.squaredNorm();

  const Matrix l = Matrix(g.degrees.asDiagonal()) - g.adjacency;
  const double quad = (n - 1.0) / g.adjacency_sum * yt.dot(l * yt) / denom;

  double pair_sum = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i)
    for (Eigen::Index j = 0; j < y.size(); ++j) {
      const double d = y(i) - y(j);
      pair_sum += g.adjacency(i, j) * d * d;
    }
  const double dsum = (n - 1.0) / (2.0 * g.adjacency_sum) * pair_sum / denom;
  if (std::abs(quad - dsum) > 1e-10 * std::max(1.0, std::abs(quad)))
    fail_numeric("geary_c: quadratic and pairwise forms disagree");
  return quad;
}

// Moran's I: n/N_e * y'Ay / y'y on the mean-centered vector. May be negative.
inline double moran_i(const Vector& y, const Graph& g) {
  const Vector yt = detail::centered_by_mean(y, g, "moran_i");
  detail::require_varying(yt, y, "moran_i");
  const double n = static_cast<double>(y.size());
  const double denom = yt.squaredNorm();

  const double quad = n / g.adjacency_sum * yt.dot(g.adjacency * yt) / denom;

  double pair_sum = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i)
    for (Eigen::Index j = 0; j < y.size(); ++j)
      pair_sum += g.adjacency(i, j) * yt(i) * yt(j);
  const double dsum = n / g.adjacency_sum * pair_sum / denom;
  if (std::abs(quad - dsum) > 1e-10 * std::max(1.0, std::abs(quad)))
    fail_numeric("moran_i: quadratic and pairwise forms disagree");
  return quad;
}

// Splits the degree-weighted variance of y into a smoothness (Laplacian) part
// and a neighborhood-agreement (adjacency) part.
struct VarianceDecomposition {
  double total = 0.0;
  double laplacian_part = 0.0;
  double adjacency_part = 0.0;
};

inline VarianceDecomposition variance_decomposition(const Vector& y, const Graph& g) {
  const Vector yt = detail::centered_by_mean(y, g, "variance_decomposition");
  VarianceDecomposition out;
  out.total = yt.dot(g.degrees.asDiagonal() * yt) / g.adjacency_sum;
  const Matrix l = Matrix(g.degrees.asDiagonal()) - g.adjacency;
  out.laplacian_part = yt.dot(l * yt) / g.adjacency_sum;
  out.adjacency_part = yt.dot(g.adjacency * yt) / g.adjacency_sum;
  return out;
}

// Spectral matrix exponential exp(-2 alpha L); a smoothing metric that decays
// each Laplacian eigendirection by its frequency.
inline Matrix heat_kernel(const Matrix& laplacian_matrix, double alpha) {
  if (!(alpha >= 0.0)) fail_invalid("heat_kernel: alpha must be nonnegative");
  const auto eig = linalg::eigen_sym(laplacian_matrix);
  const double lmax = std::max(eig.eigenvalues(0), 0.0);
  if (eig.eigenvalues(eig.eigenvalues.size() - 1) < -1e-10 * std::max(lmax, 1e-300))
    fail_numeric("heat_kernel: matrix has negative eigenvalues");
  const Vector decayed =
      (-2.0 * alpha * eig.eigenvalues.cwiseMax(0.0)).array().exp().matrix();
  return symmetrized(eig.eigenvectors * decayed.asDiagonal() * eig.eigenvectors.transpose());
}

}  // namespace metricord::graph

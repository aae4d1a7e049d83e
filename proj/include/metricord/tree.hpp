#pragma once

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "metricord/error.hpp"
#include "metricord/io.hpp"
#include "metricord/linalg.hpp"
#include "metricord/matrix.hpp"

namespace metricord::tree {

struct Node {
  int parent = -1;
  std::vector<int> children;    // left-to-right input order
  double branch_length = 0.0;   // edge to the parent; meaningless at the root
  std::string label;            // required at leaves; internal labels are kept but unused
  bool is_leaf() const { return children.empty(); }
};

struct PhyloTree {
  std::vector<Node> nodes;  // parents always precede their children
  int root = 0;
  std::vector<int> leaves;  // node indices in left-to-right input order

  int leaf_count() const { return static_cast<int>(leaves.size()); }

  std::vector<std::string> leaf_labels() const {
    std::vector<std::string> out;
    out.reserve(leaves.size());
    for (int idx : leaves) out.push_back(nodes[static_cast<std::size_t>(idx)].label);
    return out;
  }
};

namespace detail {

class NewickParser {
 public:
  NewickParser(const std::string& text, std::optional<double> default_length)
      : text_(text), default_(default_length) {}

  PhyloTree parse() {
    skip_ws();
    tree_.root = parse_subtree(-1);
    skip_ws();
    if (peek() != ';') fail("expected ';'");
    ++pos_;
    skip_ws();
    if (pos_ != text_.size()) fail("trailing content after ';'");
    collect_leaves(tree_.root);
    check_leaf_labels();
    return std::move(tree_);
  }

 private:
  char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  [[noreturn]] void fail(const std::string& reason) const {
    fail_io("newick parse error at position " + std::to_string(pos_) + ": " + reason);
  }

  int parse_subtree(int parent) {
    skip_ws();
    const int idx = static_cast<int>(tree_.nodes.size());
    tree_.nodes.emplace_back();
    tree_.nodes[static_cast<std::size_t>(idx)].parent = parent;

    if (peek() == '(') {
      ++pos_;
      for (;;) {
        const int child = parse_subtree(idx);
        tree_.nodes[static_cast<std::size_t>(idx)].children.push_back(child);
        skip_ws();
        if (peek() == ',') {
          ++pos_;
          continue;
        }
        if (peek() == ')') {
          ++pos_;
          break;
        }
        fail("expected ',' or ')'");
      }
      tree_.nodes[static_cast<std::size_t>(idx)].label = parse_label();
    } else {
      const std::string label = parse_label();
      if (label.empty()) fail("expected a leaf label or '('");
      tree_.nodes[static_cast<std::size_t>(idx)].label = label;
    }

    skip_ws();
    if (peek() == ':') {
      ++pos_;
      tree_.nodes[static_cast<std::size_t>(idx)].branch_length = parse_length();
    } else if (parent >= 0) {
      if (!default_)
        fail_io("missing branch length for node '" +
                tree_.nodes[static_cast<std::size_t>(idx)].label + "' near position " +
                std::to_string(pos_));
      tree_.nodes[static_cast<std::size_t>(idx)].branch_length = *default_;
    }
    return idx;
  }

  std::string parse_label() {
    skip_ws();
    std::string out;
    while (pos_ < text_.size()) {
      const char ch = text_[pos_];
      if (ch == '(' || ch == ')' || ch == ',' || ch == ':' || ch == ';' ||
          std::isspace(static_cast<unsigned char>(ch)))
        break;
      out.push_back(ch);
      ++pos_;
    }
    return out;
  }

  double parse_length() {
    skip_ws();
    const char* start = text_.c_str() + pos_;
    char* end = nullptr;
    const double v = std::strtod(start, &end);
    if (end == start) fail("expected a branch length after ':'");
    pos_ += static_cast<std::size_t>(end - start);
    if (!std::isfinite(v)) fail("branch length is not finite");
    if (v < 0.0) fail("negative branch length");
    return v;
  }

  void collect_leaves(int idx) {
    const Node& n = tree_.nodes[static_cast<std::size_t>(idx)];
    if (n.is_leaf()) {
      tree_.leaves.push_back(idx);
      return;
    }
    for (int c : n.children) collect_leaves(c);
  }

  void check_leaf_labels() const {
    std::set<std::string> seen;
    for (int idx : tree_.leaves) {
      const std::string& label = tree_.nodes[static_cast<std::size_t>(idx)].label;
      if (!seen.insert(label).second) fail_io("duplicate leaf label '" + label + "'");
    }
  }

  const std::string& text_;
  std::size_t pos_ = 0;
  std::optional<double> default_;
  PhyloTree tree_;
};

inline void serialize_node(const PhyloTree& t, int idx, std::string& out) {
  const Node& n = t.nodes[static_cast<std::size_t>(idx)];
  if (!n.children.empty()) {
    out += '(';
    for (std::size_t k = 0; k < n.children.size(); ++k) {
      if (k > 0) out += ',';
      serialize_node(t, n.children[k], out);
    }
    out += ')';
  } else {
    out += n.label;
  }
  if (n.parent >= 0) {
    out += ':';
    out += format_number(n.branch_length);
  }
}

}  // namespace detail

inline PhyloTree parse_newick(const std::string& text,
                              std::optional<double> default_branch_length = std::nullopt) {
  return detail::NewickParser(text, default_branch_length).parse();
}

// Emits leaf labels and branch lengths (12 significant digits); internal
// labels are not written back.
inline std::string serialize_newick(const PhyloTree& t) {
  std::string out;
  detail::serialize_node(t, t.root, out);
  out += ";\n";
  return out;
}

struct TreeMetrics {
  Matrix delta;                         // patristic distances between leaves
  Vector t;                             // root-to-leaf distances
  Matrix sigma;                         // shared root-path lengths (Brownian covariance)
  std::vector<std::string> leaf_order;  // row/column labels of delta and sigma
  std::vector<int> root_subtree;        // per leaf: which root child subtree holds it
  int root_child_count = 0;
};

// Sigma comes from LCA depths accumulated root-down; delta comes from explicit
// up-the-tree path sums. The two routes are independent, which makes the
// internal identity check 2*sigma + delta = t1' + 1t' a real tripwire.
inline TreeMetrics tree_metrics(const PhyloTree& tree) {
  const int s = tree.leaf_count();
  if (s == 0) fail_invalid("tree_metrics: tree has no leaves");
  const int n_nodes = static_cast<int>(tree.nodes.size());

  std::vector<double> depth(static_cast<std::size_t>(n_nodes), 0.0);
  for (int i = 0; i < n_nodes; ++i)
    for (int c : tree.nodes[static_cast<std::size_t>(i)].children)
      depth[static_cast<std::size_t>(c)] =
          depth[static_cast<std::size_t>(i)] +
          tree.nodes[static_cast<std::size_t>(c)].branch_length;

  std::vector<int> leaf_pos(static_cast<std::size_t>(n_nodes), -1);
  for (int k = 0; k < s; ++k) leaf_pos[static_cast<std::size_t>(tree.leaves[k])] = k;

  TreeMetrics m;
  m.leaf_order = tree.leaf_labels();
  m.sigma = Matrix::Zero(s, s);
  m.delta = Matrix::Zero(s, s);
  m.t = Vector::Zero(s);
  for (int k = 0; k < s; ++k) m.t(k) = depth[static_cast<std::size_t>(tree.leaves[k])];

  // descendant leaf positions per node (children carry higher indices, so a
  // reverse sweep sees children before parents)
  std::vector<std::vector<int>> desc(static_cast<std::size_t>(n_nodes));
  for (int i = n_nodes - 1; i >= 0; --i) {
    const Node& node = tree.nodes[static_cast<std::size_t>(i)];
    if (node.is_leaf()) {
      desc[static_cast<std::size_t>(i)].push_back(leaf_pos[static_cast<std::size_t>(i)]);
      continue;
    }
    for (int c : node.children)
      desc[static_cast<std::size_t>(i)].insert(desc[static_cast<std::size_t>(i)].end(),
                                               desc[static_cast<std::size_t>(c)].begin(),
                                               desc[static_cast<std::size_t>(c)].end());
  }

  // every leaf pair gets its LCA's depth, assigned where the pair first splits
  for (int k = 0; k < s; ++k) m.sigma(k, k) = m.t(k);
  for (int v = 0; v < n_nodes; ++v) {
    const auto& ch = tree.nodes[static_cast<std::size_t>(v)].children;
    for (std::size_t a = 0; a + 1 < ch.size(); ++a)
      for (std::size_t b = a + 1; b < ch.size(); ++b)
        for (int r : desc[static_cast<std::size_t>(ch[a])])
          for (int c : desc[static_cast<std::size_t>(ch[b])]) {
            m.sigma(r, c) = depth[static_cast<std::size_t>(v)];
            m.sigma(c, r) = depth[static_cast<std::size_t>(v)];
          }
  }

  // patristic distances by walking both leaves up to their meeting point
  std::vector<int> stamp(static_cast<std::size_t>(n_nodes), -1);
  std::vector<double> updist(static_cast<std::size_t>(n_nodes), 0.0);
  int tick = 0;
  for (int a = 0; a < s; ++a) {
    ++tick;
    double acc = 0.0;
    for (int u = tree.leaves[static_cast<std::size_t>(a)];;) {
      stamp[static_cast<std::size_t>(u)] = tick;
      updist[static_cast<std::size_t>(u)] = acc;
      const int p = tree.nodes[static_cast<std::size_t>(u)].parent;
      if (p < 0) break;
      acc += tree.nodes[static_cast<std::size_t>(u)].branch_length;
      u = p;
    }
    for (int b = a + 1; b < s; ++b) {
      double accb = 0.0;
      int w = tree.leaves[static_cast<std::size_t>(b)];
      while (stamp[static_cast<std::size_t>(w)] != tick) {
        accb += tree.nodes[static_cast<std::size_t>(w)].branch_length;
        w = tree.nodes[static_cast<std::size_t>(w)].parent;
      }
      const double d = updist[static_cast<std::size_t>(w)] + accb;
      m.delta(a, b) = d;
      m.delta(b, a) = d;
    }
  }

  const Vector ones = Vector::Ones(s);
  const Matrix lhs = 2.0 * m.sigma + m.delta;
  const Matrix rhs = m.t * ones.transpose() + ones * m.t.transpose();
  const double scale = std::max(1.0, 2.0 * m.t.cwiseAbs().maxCoeff());
  if ((lhs - rhs).cwiseAbs().maxCoeff() > 1e-12 * scale)
    fail_numeric("tree_metrics: covariance/distance identity check failed");

  m.root_child_count =
      static_cast<int>(tree.nodes[static_cast<std::size_t>(tree.root)].children.size());
  m.root_subtree.assign(static_cast<std::size_t>(s), 0);
  const auto& rc = tree.nodes[static_cast<std::size_t>(tree.root)].children;
  for (std::size_t j = 0; j < rc.size(); ++j)
    for (int leaf : desc[static_cast<std::size_t>(rc[j])])
      m.root_subtree[static_cast<std::size_t>(leaf)] = static_cast<int>(j);
  return m;
}

struct SigmaEigenReport {
  linalg::SpectralDecomposition decomposition;
  // per eigenvector: which root child subtrees hold entries above
  // support_threshold * (the vector's max magnitude)
  std::vector<std::vector<int>> support;
  double support_threshold = 1e-8;
};

inline SigmaEigenReport sigma_eigen_report(const TreeMetrics& m) {
  SigmaEigenReport rep;
  rep.decomposition = linalg::eigen_sym(m.sigma);
  const Matrix& v = rep.decomposition.eigenvectors;
  rep.support.resize(static_cast<std::size_t>(v.cols()));
  for (Eigen::Index j = 0; j < v.cols(); ++j) {
    const double thr = rep.support_threshold * v.col(j).cwiseAbs().maxCoeff();
    std::vector<bool> seen(static_cast<std::size_t>(std::max(m.root_child_count, 1)), false);
    for (Eigen::Index i = 0; i < v.rows(); ++i)
      if (std::abs(v(i, j)) > thr)
        seen[static_cast<std::size_t>(m.root_subtree[static_cast<std::size_t>(i)])] = true;
    for (std::size_t g = 0; g < seen.size(); ++g)
      if (seen[g]) rep.support[static_cast<std::size_t>(j)].push_back(static_cast<int>(g));
  }
  return rep;
}

// Laplacian over all tree nodes with edge weight 1/branch_length. Rows and
// columns are ordered leaves first (in leaf order), then the remaining nodes
// in construction order.
inline Matrix tree_laplacian(const PhyloTree& tree) {
  const int n_nodes = static_cast<int>(tree.nodes.size());
  std::vector<int> order(static_cast<std::size_t>(n_nodes), -1);
  int next = 0;
  for (int leaf : tree.leaves) order[static_cast<std::size_t>(leaf)] = next++;
  for (int i = 0; i < n_nodes; ++i)
    if (order[static_cast<std::size_t>(i)] < 0) order[static_cast<std::size_t>(i)] = next++;

  Matrix lap = Matrix::Zero(n_nodes, n_nodes);
  for (int i = 0; i < n_nodes; ++i) {
    const Node& node = tree.nodes[static_cast<std::size_t>(i)];
    if (node.parent < 0) continue;
    if (node.branch_length <= 0.0)
      fail_invalid("tree_laplacian: zero branch length on the edge above '" + node.label + "'");
    const double w = 1.0 / node.branch_length;
    const int a = order[static_cast<std::size_t>(i)];
    const int b = order[static_cast<std::size_t>(node.parent)];
    lap(a, b) -= w;
    lap(b, a) -= w;
    lap(a, a) += w;
    lap(b, b) += w;
  }
  return lap;
}

// Two candidate readings of the leaf-restricted inverse of the tree
// Laplacian: the leaf block of the Moore-Penrose pseudoinverse, and the
// closed form c*gamma*gamma' - delta/2 built from all-node patristic
// distances. The Laplacian is singular, so which reading (if either) is the
// intended one stays an open question; we report both and their gap without
// asserting agreement.
struct LaplacianLeafInverseReport {
  Matrix pinv_leaf_block;
  Matrix closed_form;
  double max_abs_discrepancy = 0.0;
};

inline LaplacianLeafInverseReport leaf_laplacian_inverse_diagnostic(const PhyloTree& tree) {
  const int s = tree.leaf_count();
  const int n_nodes = static_cast<int>(tree.nodes.size());
  if (s < 2 || n_nodes == s)
    fail_invalid("leaf_laplacian_inverse_diagnostic: need at least two leaves and one edge");

  const Matrix lap = tree_laplacian(tree);
  LaplacianLeafInverseReport rep;
  rep.pinv_leaf_block = linalg::spectral_inverse(lap).topLeftCorner(s, s);

  // all-node patristic distances in the same leaves-first ordering
  std::vector<int> order(static_cast<std::size_t>(n_nodes), -1);
  int next = 0;
  for (int leaf : tree.leaves) order[static_cast<std::size_t>(leaf)] = next++;
  for (int i = 0; i < n_nodes; ++i)
    if (order[static_cast<std::size_t>(i)] < 0) order[static_cast<std::size_t>(i)] = next++;

  std::vector<double> depth(static_cast<std::size_t>(n_nodes), 0.0);
  for (int i = 0; i < n_nodes; ++i)
    for (int c : tree.nodes[static_cast<std::size_t>(i)].children)
      depth[static_cast<std::size_t>(c)] =
          depth[static_cast<std::size_t>(i)] +
          tree.nodes[static_cast<std::size_t>(c)].branch_length;

  // LCA by stamped up-walks, distance via depths
  Matrix dist_all = Matrix::Zero(n_nodes, n_nodes);
  std::vector<int> stamp(static_cast<std::size_t>(n_nodes), -1);
  for (int a = 0; a < n_nodes; ++a) {
    for (int u = a; u >= 0; u = tree.nodes[static_cast<std::size_t>(u)].parent)
      stamp[static_cast<std::size_t>(u)] = a;
    for (int b = a + 1; b < n_nodes; ++b) {
      int w = b;
      while (stamp[static_cast<std::size_t>(w)] != a)
        w = tree.nodes[static_cast<std::size_t>(w)].parent;
      const double d = depth[static_cast<std::size_t>(a)] + depth[static_cast<std::size_t>(b)] -
                       2.0 * depth[static_cast<std::size_t>(w)];
      dist_all(order[static_cast<std::size_t>(a)], order[static_cast<std::size_t>(b)]) = d;
      dist_all(order[static_cast<std::size_t>(b)], order[static_cast<std::size_t>(a)]) = d;
    }
  }

  Vector v(n_nodes);
  for (int i = 0; i < n_nodes; ++i)
    v(order[static_cast<std::size_t>(i)]) =
        tree.nodes[static_cast<std::size_t>(i)].is_leaf() ? -1.0 : 1.0;
  const Vector gamma = dist_all * v;
  const double leaf_internal_sum = dist_all.topRightCorner(s, n_nodes - s).sum();
  const double c = 1.0 / (8.0 * leaf_internal_sum);
  rep.closed_form =
      c * gamma.head(s) * gamma.head(s).transpose() - 0.5 * dist_all.topLeftCorner(s, s);
  rep.max_abs_discrepancy = (rep.closed_form - rep.pinv_leaf_block).cwiseAbs().maxCoeff();
  return rep;
}

namespace detail {

struct PrunedNode {
  double branch_length = 0.0;
  std::string label;
  std::vector<PrunedNode> children;
};

inline std::optional<PrunedNode> prune_rec(const PhyloTree& tree, int idx,
                                           const std::set<std::string>& keep) {
  const Node& n = tree.nodes[static_cast<std::size_t>(idx)];
  if (n.is_leaf()) {
    if (!keep.count(n.label)) return std::nullopt;
    return PrunedNode{n.branch_length, n.label, {}};
  }
  std::vector<PrunedNode> kids;
  for (int c : n.children) {
    auto sub = prune_rec(tree, c, keep);
    if (sub) kids.push_back(std::move(*sub));
  }
  if (kids.empty()) return std::nullopt;
  if (kids.size() == 1) {
    // collapse the chain: the surviving child absorbs this edge
    PrunedNode only = std::move(kids.front());
    only.branch_length += n.branch_length;
    return only;
  }
  PrunedNode out;
  out.branch_length = n.branch_length;
  out.label = n.label;
  out.children = std::move(kids);
  return out;
}

inline int flatten(const PrunedNode& src, int parent, PhyloTree& out) {
  const int idx = static_cast<int>(out.nodes.size());
  out.nodes.emplace_back();
  out.nodes[static_cast<std::size_t>(idx)].parent = parent;
  out.nodes[static_cast<std::size_t>(idx)].branch_length = src.branch_length;
  out.nodes[static_cast<std::size_t>(idx)].label = src.label;
  for (const PrunedNode& k : src.children) {
    const int c = flatten(k, idx, out);
    out.nodes[static_cast<std::size_t>(idx)].children.push_back(c);
  }
  if (src.children.empty()) out.leaves.push_back(idx);
  return idx;
}

}  // namespace detail

// Restrict the tree to the given leaf labels. Single-child chains collapse
// with edge lengths added; if the old root ends up on such a chain, the chain
// folds into the new root and the leftover top edge is dropped (a root edge
// shifts all shared path lengths equally, which downstream analyses ignore).
inline PhyloTree prune_to_leaves(const PhyloTree& tree, const std::vector<std::string>& keep) {
  const std::set<std::string> keep_set(keep.begin(), keep.end());
  auto pruned = detail::prune_rec(tree, tree.root, keep_set);
  if (!pruned) fail_invalid("prune_to_leaves: no requested leaf is present in the tree");
  pruned->branch_length = 0.0;  // the new root has no upstream edge
  PhyloTree out;
  out.root = detail::flatten(*pruned, -1, out);
  return out;
}

}  // namespace metricord::tree

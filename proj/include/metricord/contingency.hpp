#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "metricord/error.hpp"
#include "metricord/io.hpp"
#include "metricord/matrix.hpp"

namespace metricord::contingency {

struct AbundanceTable {
  Matrix counts;  // locations x species, nonnegative
  std::vector<std::string> location_labels;
  std::vector<std::string> species_labels;
  double total = 0.0;
  std::vector<std::string> warnings;  // all-zero rows/columns dropped on construction
};

enum class WeightMode { abundance, uniform };

struct ProfileData {
  Matrix X;   // row profiles; every row sums to one
  Vector w;   // location weights
  Vector c;   // species weights, c = X' w
  Matrix Xc;  // centered profiles, X - 1 c'
  WeightMode weight_mode = WeightMode::abundance;
  double total = 0.0;  // grand total of the source table
  std::vector<std::string> location_labels;
  std::vector<std::string> species_labels;
};

namespace detail {

inline void check_unique(const std::vector<std::string>& labels, const std::string& axis) {
  std::set<std::string> seen;
  for (const auto& label : labels)
    if (!seen.insert(label).second) fail_io("duplicate " + axis + " label '" + label + "'");
}

}  // namespace detail

// Validates counts and drops all-zero rows/columns (recorded as warnings, not
// errors: subsetting real tables produces them routinely).
inline AbundanceTable table_from_counts(const Matrix& counts,
                                        std::vector<std::string> location_labels,
                                        std::vector<std::string> species_labels) {
  if (counts.rows() != static_cast<Eigen::Index>(location_labels.size()) ||
      counts.cols() != static_cast<Eigen::Index>(species_labels.size()))
    fail_invalid("table labels do not match the count matrix dimensions");
  detail::check_unique(location_labels, "location");
  detail::check_unique(species_labels, "species");
  ensure_finite(counts, "count table");
  for (Eigen::Index i = 0; i < counts.rows(); ++i)
    for (Eigen::Index j = 0; j < counts.cols(); ++j)
      if (counts(i, j) < 0.0)
        fail_io("negative entry at location '" + location_labels[static_cast<std::size_t>(i)] +
                "', species '" + species_labels[static_cast<std::size_t>(j)] + "'");

  AbundanceTable out;
  std::vector<Eigen::Index> keep_rows, keep_cols;
  for (Eigen::Index i = 0; i < counts.rows(); ++i) {
    if (counts.row(i).sum() > 0.0) {
      keep_rows.push_back(i);
    } else {
      out.warnings.push_back("dropped all-zero location '" +
                             location_labels[static_cast<std::size_t>(i)] + "'");
    }
  }
  for (Eigen::Index j = 0; j < counts.cols(); ++j) {
    if (counts.col(j).sum() > 0.0) {
      keep_cols.push_back(j);
    } else {
      out.warnings.push_back("dropped all-zero species '" +
                             species_labels[static_cast<std::size_t>(j)] + "'");
    }
  }
  if (keep_rows.empty() || keep_cols.empty()) fail_io("table is empty after dropping zeros");

  out.counts.resize(static_cast<Eigen::Index>(keep_rows.size()),
                    static_cast<Eigen::Index>(keep_cols.size()));
  for (std::size_t i = 0; i < keep_rows.size(); ++i) {
    out.location_labels.push_back(location_labels[static_cast<std::size_t>(keep_rows[i])]);
    for (std::size_t j = 0; j < keep_cols.size(); ++j)
      out.counts(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          counts(keep_rows[i], keep_cols[j]);
  }
  for (Eigen::Index j : keep_cols)
    out.species_labels.push_back(species_labels[static_cast<std::size_t>(j)]);
  out.total = out.counts.sum();
  return out;
}

// TSV or CSV (sniffed from the header line), '#' comment lines skipped.
// Header row holds species labels, first column holds location labels;
// species_as_rows flips that.
inline AbundanceTable load_table(const std::string& path, bool species_as_rows = false) {
  const std::vector<std::string> raw_lines = split_lines(read_text_file(path));

  std::vector<std::vector<std::string>> grid;
  std::vector<int> grid_lines;
  char delim = '\0';
  for (std::size_t ln = 0; ln < raw_lines.size(); ++ln) {
    const std::string& line = raw_lines[ln];
    const std::string trimmed = trim(line);
    if (trimmed.empty() || trimmed.front() == '#') continue;
    if (delim == '\0') delim = detect_delimiter(line);
    grid.push_back(split_fields(line, delim));
    grid_lines.push_back(static_cast<int>(ln + 1));
  }
  if (grid.size() < 2 || grid.front().size() < 2)
    fail_io("'" + path + "': need a header row plus at least one data row");

  const std::size_t width = grid.front().size();
  std::vector<std::string> col_labels;
  for (std::size_t j = 1; j < width; ++j) col_labels.push_back(trim(grid.front()[j]));

  std::vector<std::string> row_labels;
  Matrix counts(static_cast<Eigen::Index>(grid.size() - 1), static_cast<Eigen::Index>(width - 1));
  for (std::size_t r = 1; r < grid.size(); ++r) {
    if (grid[r].size() != width)
      fail_io("'" + path + "' line " + std::to_string(grid_lines[r]) + ": expected " +
              std::to_string(width) + " fields, found " + std::to_string(grid[r].size()));
    row_labels.push_back(trim(grid[r][0]));
    for (std::size_t j = 1; j < width; ++j)
      counts(static_cast<Eigen::Index>(r - 1), static_cast<Eigen::Index>(j - 1)) =
          parse_cell(grid[r][j], path + ":" + std::to_string(grid_lines[r]));
  }

  if (species_as_rows) {
    counts.transposeInPlace();
    std::swap(row_labels, col_labels);
  }
  return table_from_counts(counts, std::move(row_labels), std::move(col_labels));
}

inline AbundanceTable with_pseudocount(const AbundanceTable& t, double eps) {
  if (!(eps > 0.0)) fail_invalid("pseudocount must be positive");
  AbundanceTable out = t;
  out.counts.array() += eps;
  out.total = out.counts.sum();
  return out;
}

inline AbundanceTable with_log1p(const AbundanceTable& t) {
  AbundanceTable out = t;
  out.counts = t.counts.unaryExpr([](double v) { return std::log1p(v); });
  out.total = out.counts.sum();
  return out;
}

inline ProfileData profiles(const AbundanceTable& table, WeightMode mode = WeightMode::abundance) {
  const Eigen::Index l = table.counts.rows();
  const Eigen::Index s = table.counts.cols();
  const Vector row_sums = table.counts.rowwise().sum();
  for (Eigen::Index i = 0; i < l; ++i)
    if (row_sums(i) <= 0.0)
      fail_invalid("zero row sum for location '" +
                   table.location_labels[static_cast<std::size_t>(i)] + "'");

  ProfileData pd;
  pd.weight_mode = mode;
  pd.total = table.total;
  pd.location_labels = table.location_labels;
  pd.species_labels = table.species_labels;
  pd.X = row_sums.cwiseInverse().asDiagonal() * table.counts;
  pd.w = mode == WeightMode::abundance ? Vector(row_sums / table.total)
                                       : Vector(Vector::Constant(l, 1.0 / static_cast<double>(l)));
  pd.c = pd.X.transpose() * pd.w;
  pd.Xc = pd.X - Vector::Ones(l) * pd.c.transpose();
  return pd;
}

// Row centering (project out the weighted location mean) versus column
// centering (shift every profile by the mean profile): the largest
// elementwise gap between the two. With abundance weights the two are the
// same map, so this should sit at rounding level; with uniform weights on a
// non-uniform table it is diagnostic output only.
inline double centering_duality_check(const ProfileData& pd) {
  const Eigen::Index l = pd.X.rows();
  const Matrix left = pd.X - Vector::Ones(l) * (pd.w.transpose() * pd.X);
  const Matrix right = pd.X - (pd.X.rowwise().sum()) * pd.c.transpose();
  return (left - right).cwiseAbs().maxCoeff();
}

struct SpeciesJoin {
  AbundanceTable table;                  // columns reordered to kept_leaves
  std::vector<std::string> kept_leaves;  // tree-leaf order restricted to the table's species
  std::vector<std::string> warnings;
};

// Aligns a table with a tree's leaf set. Every table species must exist in
// the tree (hard error naming the first offender); tree leaves without a
// table column are listed for pruning, or rejected under strict.
inline SpeciesJoin match_species_to_leaves(const AbundanceTable& table,
                                           const std::vector<std::string>& leaf_labels,
                                           bool strict) {
  std::map<std::string, Eigen::Index> col_of;
  for (std::size_t j = 0; j < table.species_labels.size(); ++j)
    col_of[table.species_labels[j]] = static_cast<Eigen::Index>(j);

  const std::set<std::string> leaf_set(leaf_labels.begin(), leaf_labels.end());
  for (const auto& sp : table.species_labels)
    if (!leaf_set.count(sp)) fail_invalid("species '" + sp + "' is missing from the tree");

  SpeciesJoin join;
  std::vector<std::string> missing;
  for (const auto& leaf : leaf_labels) {
    if (col_of.count(leaf))
      join.kept_leaves.push_back(leaf);
    else
      missing.push_back(leaf);
  }
  if (!missing.empty()) {
    if (strict)
      fail_invalid("tree leaf '" + missing.front() + "' has no column in the table");
    std::string note = "pruned " + std::to_string(missing.size()) + " tree leaves not in the table:";
    for (const auto& m : missing) note += " " + m;
    join.warnings.push_back(note);
  }

  Matrix reordered(table.counts.rows(), static_cast<Eigen::Index>(join.kept_leaves.size()));
  for (std::size_t k = 0; k < join.kept_leaves.size(); ++k)
    reordered.col(static_cast<Eigen::Index>(k)) = table.counts.col(col_of[join.kept_leaves[k]]);
  join.table.counts = std::move(reordered);
  join.table.location_labels = table.location_labels;
  join.table.species_labels = join.kept_leaves;
  join.table.total = join.table.counts.sum();
  join.table.warnings = table.warnings;
  return join;
}

// Sum counts over locations sharing a group label; groups keep their
// first-appearance order. Profiles of the pooled table are then profiles of
// the combined abundance, not averages of member profiles.
inline AbundanceTable pool_locations(const AbundanceTable& table,
                                     const std::vector<std::string>& group_per_location) {
  if (group_per_location.size() != table.location_labels.size())
    fail_invalid("pool_locations: need one group label per location");
  std::vector<std::string> group_order;
  std::map<std::string, Eigen::Index> group_row;
  for (const auto& g : group_per_location)
    if (!group_row.count(g)) {
      group_row[g] = static_cast<Eigen::Index>(group_order.size());
      group_order.push_back(g);
    }
  Matrix pooled = Matrix::Zero(static_cast<Eigen::Index>(group_order.size()), table.counts.cols());
  for (Eigen::Index i = 0; i < table.counts.rows(); ++i)
    pooled.row(group_row[group_per_location[static_cast<std::size_t>(i)]]) += table.counts.row(i);
  return table_from_counts(pooled, group_order, table.species_labels);
}

}  // namespace metricord::contingency

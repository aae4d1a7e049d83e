// Release gate: one self-contained check per shipped guarantee, each printing
// a single PASS/FAIL line with its pinned tolerance. Exits nonzero if any
// check fails. CLI checks need the binary, data, and golden paths:
//
//   acceptance <cli-binary> <data-dir> <golden-dir>
//
// (falling back to METRICORD_CLI / METRICORD_DATA / METRICORD_GOLDEN).

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "metricord/contingency.hpp"
#include "metricord/diversity.hpp"
#include "metricord/graph.hpp"
#include "metricord/io.hpp"
#include "metricord/linalg.hpp"
#include "metricord/ordination.hpp"
#include "metricord/rng.hpp"
#include "metricord/tree.hpp"
#include "support/compare.hpp"
#include "support/random.hpp"
#include "support/trees.hpp"

namespace fs = std::filesystem;
using metricord::DeterministicRng;
using metricord::Matrix;
using metricord::Vector;
namespace mc = metricord;
namespace ts = testsupport;

namespace {

int checks_failed = 0;

void report(int criterion, bool ok, const std::string& what) {
  std::printf("%s  criterion %2d: %s\n", ok ? "PASS" : "FAIL", criterion, what.c_str());
  if (!ok) ++checks_failed;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

mc::contingency::ProfileData random_profiles(DeterministicRng& rng, int rows, int cols,
                                             int max_count = 20) {
  Matrix counts = ts::random_count_table(rng, rows, cols, max_count);
  for (int j = 0; j < cols; ++j)
    if (counts.col(j).sum() == 0.0) counts(static_cast<int>(rng.below(rows)), j) = 1.0;
  std::vector<std::string> locs, sps;
  for (int i = 0; i < rows; ++i) locs.push_back("l" + std::to_string(i));
  for (int j = 0; j < cols; ++j) sps.push_back("s" + std::to_string(j));
  return mc::contingency::profiles(mc::contingency::table_from_counts(counts, locs, sps));
}

// -- criterion 1: the two ordination routes agree ---------------------------

void check_dpcoa_equivalence() {
  const auto start = std::chrono::steady_clock::now();
  DeterministicRng rng(101);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int rows = 3 + static_cast<int>(rng.below(10));   // up to 12 locations
    const int n_leaves = 3 + static_cast<int>(rng.below(18));  // up to 20 species
    const auto tree = ts::random_tree(rng, n_leaves, trial % 2 == 0);
    const auto tm = mc::tree::tree_metrics(tree);
    auto pd = random_profiles(rng, rows, n_leaves);
    pd.species_labels = tm.leaf_order;

    const auto direct = mc::ordination::dpcoa_gpca(pd, tm.sigma);
    const auto steps = mc::ordination::dpcoa_steps(pd, tm.delta);
    if (direct.k != steps.k) {
      worst = 1.0;
      break;
    }
    worst = std::max(worst,
                     ts::max_diff_up_to_column_sign(steps.location_coords, direct.location_coords));
    worst = std::max(worst,
                     ts::max_diff_up_to_column_sign(steps.species_coords, direct.species_coords));
  }
  const double elapsed = seconds_since(start);
  report(1, worst <= 1e-8 && elapsed < 30.0,
         "stepwise and direct tree ordinations agree (50 cases, max coord diff " +
             mc::format_number(worst) + " <= 1e-8, " + mc::format_number(elapsed) + "s < 30s)");
}

// -- criterion 2: chi-squared identities of the profile decomposition -------

void check_ca_identities() {
  DeterministicRng rng(102);
  double worst_total = 0.0, worst_between = 0.0;
  for (int trial = 0; trial < 25; ++trial) {
    const int rows = 3 + static_cast<int>(rng.below(6));
    const int cols = 3 + static_cast<int>(rng.below(8));
    const auto pd = random_profiles(rng, rows, cols);

    const Matrix q = Matrix(pd.c.cwiseInverse().asDiagonal());
    const auto rep = mc::diversity::decompose(pd, q);
    worst_total = std::max(worst_total, std::abs(rep.I_total - (cols - 1.0)));

    Matrix counts(rows, cols);
    for (int i = 0; i < rows; ++i) counts.row(i) = pd.X.row(i) * (pd.w(i) * pd.total);
    std::vector<std::string> locs, sps;
    for (int i = 0; i < rows; ++i) locs.push_back("l" + std::to_string(i));
    for (int j = 0; j < cols; ++j) sps.push_back("s" + std::to_string(j));
    const auto table = mc::contingency::table_from_counts(counts, locs, sps);
    const double chi2_over_n = mc::diversity::chi2(table) / table.total;
    worst_between = std::max(worst_between, std::abs(rep.I_between - chi2_over_n));

    const auto ca = mc::ordination::ca(pd);
    worst_between = std::max(worst_between, std::abs(ca.total_inertia - chi2_over_n));
  }
  report(2, worst_total <= 1e-10 && worst_between <= 1e-10,
         "chi-squared metric identities on 25 tables (|I_T-(S-1)| " +
             mc::format_number(worst_total) + ", |I_B-chi2/N| " +
             mc::format_number(worst_between) + ", both <= 1e-10)");
}

// -- criterion 3: diversity splits exactly and matches the unit-level oracle

void check_diversity_decomposition() {
  DeterministicRng rng(103);
  double worst_identity = 0.0, worst_oracle = 0.0;
  for (int trial = 0; trial < 30; ++trial) {
    const int rows = 3 + static_cast<int>(rng.below(4));
    const int cols = 4 + static_cast<int>(rng.below(5));
    const auto pd = random_profiles(rng, rows, cols, 10);  // grand total stays under 500
    const Matrix q = ts::random_spd(rng, cols);

    const auto rep = mc::diversity::decompose(pd, q);
    const double scale = std::max({1.0, std::abs(rep.I_total), std::abs(rep.I_between)});
    worst_identity = std::max(
        worst_identity, std::abs(rep.I_total - rep.I_between - rep.I_within) / scale);

    Matrix counts(rows, cols);
    for (int i = 0; i < rows; ++i) counts.row(i) = pd.X.row(i) * (pd.w(i) * pd.total);
    std::vector<std::string> locs, sps;
    for (int i = 0; i < rows; ++i) locs.push_back("l" + std::to_string(i));
    for (int j = 0; j < cols; ++j) sps.push_back("s" + std::to_string(j));
    const auto table = mc::contingency::table_from_counts(counts, locs, sps);
    const auto oracle = mc::diversity::incidence_oracle(table, q);
    worst_oracle = std::max({worst_oracle, std::abs(rep.I_total - oracle.I_total),
                             std::abs(rep.I_between - oracle.I_between),
                             std::abs(rep.I_within - oracle.I_within)});
  }
  report(3, worst_identity <= 1e-9 && worst_oracle <= 1e-8,
         "diversity splits: I_T=I_B+I_W rel err " + mc::format_number(worst_identity) +
             " <= 1e-9; unit-level oracle gap " + mc::format_number(worst_oracle) + " <= 1e-8");
}

// -- criterion 4: tree covariance against distances and an exact oracle -----

void check_tree_covariance() {
  DeterministicRng rng(104);
  double worst_identity = 0.0;
  bool oracle_exact = true;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 4 + static_cast<int>(rng.below(61));  // up to 64 leaves
    const auto tree = ts::random_tree(rng, n, trial % 2 == 0);
    const auto tm = mc::tree::tree_metrics(tree);

    const Matrix lhs = 2.0 * tm.sigma;
    const Matrix rhs = Vector::Ones(n) * tm.t.transpose() + tm.t * Vector::Ones(n).transpose() -
                       tm.delta;
    worst_identity = std::max(worst_identity, ts::max_abs_diff(lhs, rhs));

    if (!ts::bitwise_equal(tm.sigma, ts::sigma_oracle(tree))) oracle_exact = false;
  }
  report(4, worst_identity <= 1e-12 && oracle_exact,
         "100 trees (<=64 leaves): |2S - (1t'+t1'-D)| " + mc::format_number(worst_identity) +
             " <= 1e-12; covariance equals the root-path oracle exactly");
}

// -- criterion 5: covariance eigenvectors respect the root split ------------

void check_block_structure() {
  DeterministicRng rng(105);
  bool single_block = true, cherries_found = true;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 5 + static_cast<int>(rng.below(16));
    const auto tree = ts::random_tree(rng, n, true);
    const auto tm = mc::tree::tree_metrics(tree);
    const auto eig_report = mc::tree::sigma_eigen_report(tm);
    for (const auto& blocks : eig_report.support)
      if (blocks.size() != 1) single_block = false;

    // leaf positions of every two-leaf inner node
    std::vector<int> leaf_pos(tree.nodes.size(), -1);
    for (int k = 0; k < tree.leaf_count(); ++k)
      leaf_pos[static_cast<std::size_t>(tree.leaves[static_cast<std::size_t>(k)])] = k;
    const Matrix& v = eig_report.decomposition.eigenvectors;
    for (std::size_t idx = 0; idx < tree.nodes.size(); ++idx) {
      const auto& node = tree.nodes[idx];
      if (node.children.size() != 2) continue;
      const auto& a_node = tree.nodes[static_cast<std::size_t>(node.children[0])];
      const auto& b_node = tree.nodes[static_cast<std::size_t>(node.children[1])];
      if (!a_node.is_leaf() || !b_node.is_leaf()) continue;
      const int a = leaf_pos[static_cast<std::size_t>(node.children[0])];
      const int b = leaf_pos[static_cast<std::size_t>(node.children[1])];

      bool matched = false;
      for (Eigen::Index j = 0; j < v.cols() && !matched; ++j) {
        const Vector col = v.col(j);
        double off = 0.0;
        for (Eigen::Index r = 0; r < col.size(); ++r)
          if (r != a && r != b) off = std::max(off, std::abs(col(r)));
        matched = off <= 1e-8 && col(a) * col(b) < 0.0 &&
                  std::abs(std::abs(col(a)) - std::sqrt(0.5)) <= 1e-8 &&
                  std::abs(std::abs(col(b)) - std::sqrt(0.5)) <= 1e-8;
      }
      if (!matched) cherries_found = false;
    }
  }
  report(5, single_block && cherries_found,
         "50 trees: every covariance eigenvector stays in one root subtree (rel 1e-8) "
         "and every cherry appears as a +/- contrast eigenvector");
}

// -- criteria 6-8: coordinate-space equivalences -----------------------------

mc::ordination::Triplet random_triplet(DeterministicRng& rng, int n, int p) {
  const Matrix x = ts::random_matrix(rng, n, p, -2.0, 2.0);
  const Vector w = ts::random_diag_weights(rng, n).diagonal();
  const Vector wn = w / w.sum();
  mc::ordination::Triplet t;
  t.Xc = x - Vector::Ones(n) * (wn.transpose() * x);
  t.Q = ts::random_spd(rng, p);
  t.D = Matrix(wn.asDiagonal());
  return t;
}

void check_mds_equivalence() {
  DeterministicRng rng(106);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 4 + static_cast<int>(rng.below(5));
    const int p = 3 + static_cast<int>(rng.below(6));
    const auto t = random_triplet(rng, n, p);
    const auto res = mc::ordination::gpca(t);  // keeps every axis

    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        const Vector gap = (t.Xc.row(i) - t.Xc.row(j)).transpose();
        const double metric_dist = std::sqrt(gap.dot(t.Q * gap));
        const double coord_dist =
            (res.location_coords.row(i) - res.location_coords.row(j)).norm();
        worst = std::max(worst, std::abs(metric_dist - coord_dist));
      }
  }
  report(6, worst <= 1e-8,
         "full-rank coordinates reproduce metric distances (max gap " +
             mc::format_number(worst) + " <= 1e-8)");
}

void check_transform_equivalence() {
  DeterministicRng rng(107);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 4 + static_cast<int>(rng.below(5));
    const int p = 3 + static_cast<int>(rng.below(6));
    const auto t = random_triplet(rng, n, p);

    mc::ordination::Triplet plain;
    plain.Xc = t.Xc * mc::linalg::sym_sqrt(t.Q);
    plain.Q = Matrix::Identity(p, p);
    plain.D = t.D;

    const auto metric_side = mc::ordination::gpca(t);
    const auto plain_side = mc::ordination::gpca(plain);
    worst = std::max(worst, ts::max_diff_up_to_column_sign(plain_side.location_coords,
                                                           metric_side.location_coords));
  }
  report(7, worst <= 1e-8,
         "metric ordination equals plain ordination of the square-root transform "
         "(max coord diff " + mc::format_number(worst) + " <= 1e-8)");
}

void check_kernel_equivalence() {
  DeterministicRng rng(108);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 4 + static_cast<int>(rng.below(6));
    const int p = 3 + static_cast<int>(rng.below(7));
    const auto t = random_triplet(rng, n, p);
    worst = std::max(worst, mc::ordination::kernel_equivalence_check(t));
  }
  report(8, worst <= 1e-8,
         "kernel-side coordinates match on 20 triplets (max deviation " +
             mc::format_number(worst) + " <= 1e-8)");
}

// -- criterion 9: graph statistics -------------------------------------------

mc::graph::Graph random_connected_graph(DeterministicRng& rng, int n) {
  Matrix a = Matrix::Zero(n, n);
  for (int i = 0; i + 1 < n; ++i) a(i, i + 1) = a(i + 1, i) = 0.5 + rng.unit_real();
  for (int extra = 0; extra < n; ++extra) {
    const int i = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    const int j = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    if (i == j) continue;
    const double w = rng.unit_real();
    a(i, j) += w;
    a(j, i) += w;
  }
  return mc::graph::make_graph(a);
}

void check_graph_identities() {
  DeterministicRng rng(109);
  double worst_forms = 0.0, worst_split = 0.0, worst_semigroup = 0.0;
  for (int trial = 0; trial < 15; ++trial) {
    const int n = 4 + static_cast<int>(rng.below(9));
    const auto g = random_connected_graph(rng, n);
    const Vector y = ts::random_vector(rng, n, -3.0, 3.0);
    const Vector yt = (y.array() - y.mean()).matrix();

    double geary_pairs = 0.0, moran_pairs = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        geary_pairs += g.adjacency(i, j) * (y(i) - y(j)) * (y(i) - y(j));
        moran_pairs += g.adjacency(i, j) * yt(i) * yt(j);
      }
    worst_forms = std::max(
        worst_forms, std::abs(mc::graph::geary_c(y, g) - (n - 1.0) / (2.0 * g.adjacency_sum) *
                                                             geary_pairs / yt.squaredNorm()));
    worst_forms = std::max(
        worst_forms, std::abs(mc::graph::moran_i(y, g) -
                              n / g.adjacency_sum * moran_pairs / yt.squaredNorm()));

    const auto parts = mc::graph::variance_decomposition(y, g);
    worst_split = std::max(worst_split,
                           std::abs(parts.total - parts.laplacian_part - parts.adjacency_part));

    const Matrix l = mc::graph::laplacian(g);
    const double a = 0.2 + rng.unit_real(), b = 0.2 + rng.unit_real();
    worst_semigroup =
        std::max(worst_semigroup, ts::max_abs_diff(mc::graph::heat_kernel(l, a + b),
                                                   Matrix(mc::graph::heat_kernel(l, a) *
                                                          mc::graph::heat_kernel(l, b))));
  }
  report(9, worst_forms <= 1e-10 && worst_split <= 1e-12 && worst_semigroup <= 1e-9,
         "graph identities: double-sum vs quadratic " + mc::format_number(worst_forms) +
             " <= 1e-10; variance split " + mc::format_number(worst_split) +
             " <= 1e-12; heat semigroup " + mc::format_number(worst_semigroup) + " <= 1e-9");
}

// -- criterion 10: permutation test calibration and power --------------------

void check_permutation_calibration() {
  const auto start = std::chrono::steady_clock::now();
  const int n_tables = 100, rows = 6, cols = 5, units = 420;

  double p_sum = 0.0;
  int small_p = 0;
  for (int t = 0; t < n_tables; ++t) {
    // one shared species distribution; units assigned to locations at random
    DeterministicRng table_rng(5000 + t);
    Matrix counts = Matrix::Zero(rows, cols);
    for (int u = 0; u < units; ++u)
      counts(static_cast<int>(table_rng.below(rows)), static_cast<int>(table_rng.below(cols))) +=
          1.0;
    std::vector<std::string> locs, sps;
    for (int i = 0; i < rows; ++i) locs.push_back("l" + std::to_string(i));
    for (int j = 0; j < cols; ++j) sps.push_back("s" + std::to_string(j));
    const auto table = mc::contingency::table_from_counts(counts, locs, sps);

    mc::diversity::PermutationOptions opts;
    opts.replicates = 999;
    opts.seed = 900 + static_cast<std::uint64_t>(t);
    const auto rep =
        mc::diversity::permutation_test(table, Matrix::Identity(cols, cols), opts);
    p_sum += rep.permutation->p_value;
    if (rep.permutation->p_value <= 0.01) ++small_p;
  }
  const double p_mean = p_sum / n_tables;

  Matrix disjoint(4, 4);
  disjoint << 9, 7, 0, 0, 8, 9, 0, 0, 0, 0, 9, 8, 0, 0, 7, 9;
  const auto alt_table = mc::contingency::table_from_counts(
      disjoint, {"a1", "a2", "b1", "b2"}, {"s1", "s2", "s3", "s4"});
  mc::diversity::PermutationOptions alt_opts;
  alt_opts.replicates = 999;
  alt_opts.seed = 11;
  const auto alt =
      mc::diversity::permutation_test(alt_table, Matrix::Identity(4, 4), alt_opts);

  const double elapsed = seconds_since(start);
  report(10,
         p_mean >= 0.4 && p_mean <= 0.6 && small_p <= 3 &&
             alt.permutation->p_value <= 0.01 && elapsed < 120.0,
         "null calibration over 100 tables (mean p " + mc::format_number(p_mean) +
             " in [0.4,0.6], " + std::to_string(small_p) +
             " of 100 at p<=0.01, limit 3); disjoint alternative p " +
             mc::format_number(alt.permutation->p_value) + " <= 0.01; " +
             mc::format_number(elapsed) + "s < 120s");
}

// -- criterion 11: CLI artifacts are bytewise reproducible -------------------

struct CliPaths {
  std::string cli, data, golden;
};

bool run_shell(const std::string& cmd) {
  const int raw = std::system(cmd.c_str());
  return raw != -1 && WIFEXITED(raw) && WEXITSTATUS(raw) == 0;
}

bool produce_outputs(const CliPaths& paths, const std::string& out, const char* threads) {
  if (setenv("METRICORD_THREADS", threads, 1) != 0) return false;
  fs::create_directories(out);
  const std::string quiet = " > /dev/null 2>&1";
  bool ok = true;
  ok = ok && run_shell(paths.cli + " ordinate --method dpcoa --table " + paths.data +
                       "/demo_counts.tsv --tree " + paths.data + "/demo_tree.nwk --out " + out +
                       "/demo_dpcoa" + quiet);
  ok = ok && run_shell(paths.cli + " ordinate --method ca --table " + paths.data +
                       "/demo_counts.tsv --out " + out + "/demo_ca" + quiet);
  ok = ok && run_shell(paths.cli + " diversity --table " + paths.data +
                       "/demo_counts.tsv --tree " + paths.data +
                       "/demo_tree.nwk --metric tree --out " + out + "/demo_diversity.json" +
                       quiet);
  ok = ok && run_shell(paths.cli + " ordinate --method dpcoa --table " + paths.data +
                       "/synthetic_counts.tsv --tree " + paths.data +
                       "/synthetic_tree.nwk --dims 2 --out " + out + "/synthetic_dpcoa" + quiet);
  ok = ok && run_shell(paths.cli + " ftest --table " + paths.data +
                       "/synthetic_counts.tsv --tree " + paths.data +
                       "/synthetic_tree.nwk --metric tree --groups " + paths.data +
                       "/synthetic_groups.csv --permutations 999 --seed 7 --out " + out +
                       "/synthetic_ftest.json" + quiet);
  ok = ok && run_shell(paths.cli + " plot --coordinates " + out +
                       "/synthetic_dpcoa/coordinates.csv --species " + out +
                       "/synthetic_dpcoa/species_coordinates.csv --groups " + paths.data +
                       "/synthetic_groups.csv --table " + paths.data +
                       "/synthetic_counts.tsv --ellipses --title \"synthetic data, tree-metric "
                       "ordination\" --out " + out + "/synthetic_plot.svg" + quiet);
  unsetenv("METRICORD_THREADS");
  return ok;
}

void check_cli_determinism(const CliPaths& paths) {
  const std::string base =
      (fs::temp_directory_path() / ("metricord_accept_" + std::to_string(::getpid()))).string();
  const std::string first = base + "/run1", second = base + "/run2";
  bool ok = produce_outputs(paths, first, "1") && produce_outputs(paths, second, "4");

  std::size_t compared = 0;
  std::string mismatch;
  if (ok) {
    for (const auto& entry : fs::recursive_directory_iterator(paths.golden)) {
      if (!entry.is_regular_file()) continue;
      const std::string rel = fs::relative(entry.path(), paths.golden).string();
      const std::string want = mc::read_text_file(entry.path().string());
      for (const std::string& run : {first, second}) {
        if (!fs::exists(run + "/" + rel) ||
            mc::read_text_file(run + "/" + rel) != want) {
          mismatch = rel;
          ok = false;
        }
      }
      ++compared;
    }
    if (compared == 0) ok = false;
  }
  std::error_code ec;
  fs::remove_all(base, ec);
  report(11, ok,
         ok ? "all " + std::to_string(compared) +
                  " golden files byte-identical across reruns and thread caps 1 and 4"
            : "golden file mismatch" + (mismatch.empty() ? "" : " at " + mismatch));
}

std::string arg_or_env(int argc, char** argv, int idx, const char* env) {
  if (argc > idx) return argv[idx];
  const char* v = std::getenv(env);
  return v ? v : "";
}

}  // namespace

int main(int argc, char** argv) {
  check_dpcoa_equivalence();
  check_ca_identities();
  check_diversity_decomposition();
  check_tree_covariance();
  check_block_structure();
  check_mds_equivalence();
  check_transform_equivalence();
  check_kernel_equivalence();
  check_graph_identities();
  check_permutation_calibration();

  CliPaths paths;
  paths.cli = arg_or_env(argc, argv, 1, "METRICORD_CLI");
  paths.data = arg_or_env(argc, argv, 2, "METRICORD_DATA");
  paths.golden = arg_or_env(argc, argv, 3, "METRICORD_GOLDEN");
  if (paths.cli.empty() || paths.data.empty() || paths.golden.empty()) {
    report(11, false, "CLI, data, or golden path missing (argv or METRICORD_* environment)");
  } else {
    check_cli_determinism(paths);
  }

  if (checks_failed > 0) {
    std::printf("%d of 11 checks FAILED\n", checks_failed);
    return 1;
  }
  std::printf("all 11 checks passed\n");
  return 0;
}

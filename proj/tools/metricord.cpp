#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "metricord/contingency.hpp"
#include "metricord/diversity.hpp"
#include "metricord/graph.hpp"
#include "metricord/io.hpp"
#include "metricord/linalg.hpp"
#include "metricord/ordination.hpp"
#include "metricord/plot.hpp"
#include "metricord/tree.hpp"
#include "metricord/version.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using metricord::Error;
using metricord::Matrix;
using metricord::Vector;
namespace mc = metricord;

namespace {

// ---------------------------------------------------------------------------
// shared option bundles

struct TableOptions {
  std::string path;
  bool species_as_rows = false;
  double pseudocount = 0.0;
  bool log1p = false;
  bool uniform_weights = false;
};

struct StructureOptions {
  std::string tree_path;
  std::string distances_path;
  std::string metric_matrix_path;
  std::string graph_path;
  std::string metric;  // identity|tree|inv-tree|tree-laplacian-heat|graph-heat|custom-matrix
  double alpha = 1.0;
  bool alpha_set = false;
  double default_branch_length = 0.0;
  bool default_branch_set = false;
  bool strict = false;
};

void add_table_options(CLI::App* cmd, TableOptions& t) {
  cmd->add_option("--table", t.path, "count table (TSV or CSV; header = species labels)")
      ->required();
  cmd->add_flag("--species-as-rows", t.species_as_rows,
                "table rows are species and columns are locations");
  cmd->add_option("--pseudocount", t.pseudocount,
                  "add this value to every count before any other transform");
  cmd->add_flag("--log1p", t.log1p, "apply log(1+x) to counts (after --pseudocount)");
  cmd->add_flag("--uniform-weights", t.uniform_weights,
                "weight locations equally instead of by abundance");
}

void add_structure_options(CLI::App* cmd, StructureOptions& s, bool with_metric) {
  cmd->add_option("--tree", s.tree_path, "species tree in Newick format");
  cmd->add_option("--distances", s.distances_path, "species distance matrix (labeled CSV)");
  cmd->add_option("--metric-matrix", s.metric_matrix_path,
                  "custom species metric (labeled CSV, symmetric positive definite)");
  cmd->add_option("--graph", s.graph_path, "species graph as an edge list (u v [weight])");
  if (with_metric)
    cmd->add_option("--metric", s.metric,
                    "species-space metric: identity, tree, inv-tree, tree-laplacian-heat, "
                    "graph-heat, custom-matrix")
        ->check(CLI::IsMember({"identity", "tree", "inv-tree", "tree-laplacian-heat",
                               "graph-heat", "custom-matrix"}));
  cmd->add_option("--alpha", s.alpha, "diffusion time for the heat-kernel metrics")
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--default-branch-length", s.default_branch_length,
                  "assume this length for tree edges that do not specify one");
  cmd->add_flag("--strict", s.strict,
                "refuse tables whose species cover only part of the tree (no pruning)");
}

int count_of(const CLI::App* cmd, const std::string& name) {
  const CLI::Option* opt = cmd->get_option_no_throw(name);
  return opt ? static_cast<int>(opt->count()) : 0;
}

void finalize_structure(const CLI::App* cmd, StructureOptions& s) {
  s.alpha_set = count_of(cmd, "--alpha") > 0;
  s.default_branch_set = count_of(cmd, "--default-branch-length") > 0;
}

int env_thread_count() {
  const char* raw = std::getenv("METRICORD_THREADS");
  if (raw == nullptr || *raw == '\0') return 1;
  char* end = nullptr;
  const long value = std::strtol(raw, &end, 10);
  if (end == raw || *end != '\0' || value < 1 || value > 4096)
    mc::fail_invalid("METRICORD_THREADS must be a small positive integer, got '" +
                     std::string(raw) + "'");
  return static_cast<int>(value);
}

// ---------------------------------------------------------------------------
// input assembly: table, optional tree/graph, metric matrix

struct Inputs {
  mc::contingency::AbundanceTable table;  // transformed, tree-aligned when a tree is used
  mc::contingency::ProfileData pd;
  std::optional<mc::tree::PhyloTree> pruned_tree;
  std::optional<mc::tree::TreeMetrics> tm;
  std::vector<std::string> warnings;
};

mc::contingency::AbundanceTable load_transformed(const TableOptions& topt,
                                                 std::vector<std::string>& warnings) {
  auto table = mc::contingency::load_table(topt.path, topt.species_as_rows);
  warnings = table.warnings;
  if (topt.pseudocount != 0.0) table = mc::contingency::with_pseudocount(table, topt.pseudocount);
  if (topt.log1p) table = mc::contingency::with_log1p(table);
  return table;
}

Inputs assemble_inputs(const TableOptions& topt, const StructureOptions& sopt, bool need_tree) {
  Inputs in;
  in.table = load_transformed(topt, in.warnings);

  if (need_tree) {
    std::optional<double> default_branch;
    if (sopt.default_branch_set) default_branch = sopt.default_branch_length;
    const auto tree = mc::tree::parse_newick(mc::read_text_file(sopt.tree_path), default_branch);
    auto join = mc::contingency::match_species_to_leaves(in.table, tree.leaf_labels(), sopt.strict);
    in.warnings.insert(in.warnings.end(), join.warnings.begin(), join.warnings.end());
    in.table = std::move(join.table);
    in.pruned_tree = mc::tree::prune_to_leaves(tree, join.kept_leaves);
    in.tm = mc::tree::tree_metrics(*in.pruned_tree);
    if (in.tm->leaf_order != in.table.species_labels)
      mc::fail_invalid("internal: pruned leaf order does not match the table columns");
  }

  in.pd = mc::contingency::profiles(in.table, topt.uniform_weights
                                                  ? mc::contingency::WeightMode::uniform
                                                  : mc::contingency::WeightMode::abundance);
  return in;
}

// Restrict a labeled square matrix to the table's species, in table order.
Matrix aligned_square_matrix(const mc::CsvMatrix& m, const std::vector<std::string>& species,
                             const std::string& what, std::vector<std::string>& warnings) {
  if (m.values.rows() != m.values.cols() || m.row_names != m.col_names)
    mc::fail_invalid(what + " must be square with identical row and column labels");
  std::map<std::string, Eigen::Index> pos;
  for (std::size_t i = 0; i < m.row_names.size(); ++i)
    pos[m.row_names[i]] = static_cast<Eigen::Index>(i);
  Matrix out(static_cast<Eigen::Index>(species.size()), static_cast<Eigen::Index>(species.size()));
  for (std::size_t a = 0; a < species.size(); ++a) {
    if (!pos.count(species[a]))
      mc::fail_invalid(what + " has no row for species '" + species[a] + "'");
    for (std::size_t b = 0; b < species.size(); ++b)
      out(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
          m.values(pos[species[a]], pos[species[b]]);
  }
  if (m.row_names.size() > species.size())
    warnings.push_back(what + " restricted to " + std::to_string(species.size()) + " of " +
                       std::to_string(m.row_names.size()) + " labeled species");
  return out;
}

// Heat kernel of the full graph, restricted to the table's species.
Matrix graph_heat_metric(const std::string& graph_path, double alpha,
                         const std::vector<std::string>& species,
                         std::vector<std::string>& warnings) {
  const auto g = mc::graph::load_edge_list(graph_path);
  const Matrix kernel = mc::graph::heat_kernel(mc::graph::laplacian(g), alpha);
  std::map<std::string, Eigen::Index> pos;
  for (std::size_t i = 0; i < g.labels.size(); ++i)
    pos[g.labels[i]] = static_cast<Eigen::Index>(i);
  Matrix out(static_cast<Eigen::Index>(species.size()), static_cast<Eigen::Index>(species.size()));
  for (std::size_t a = 0; a < species.size(); ++a) {
    if (!pos.count(species[a]))
      mc::fail_invalid("species '" + species[a] + "' is not a vertex of the graph");
    for (std::size_t b = 0; b < species.size(); ++b)
      out(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
          kernel(pos[species[a]], pos[species[b]]);
  }
  if (g.labels.size() > species.size())
    warnings.push_back("graph heat metric restricted to " + std::to_string(species.size()) +
                       " of " + std::to_string(g.labels.size()) + " vertices");
  return out;
}

void reject_unused_inputs(const std::string& who, const StructureOptions& s, bool uses_tree,
                          bool uses_distances, bool uses_matrix, bool uses_graph,
                          bool uses_alpha) {
  if (!uses_tree && !s.tree_path.empty()) mc::fail_invalid(who + " does not use --tree");
  if (!uses_distances && !s.distances_path.empty())
    mc::fail_invalid(who + " does not use --distances");
  if (!uses_matrix && !s.metric_matrix_path.empty())
    mc::fail_invalid(who + " does not use --metric-matrix");
  if (!uses_graph && !s.graph_path.empty()) mc::fail_invalid(who + " does not use --graph");
  if (!uses_alpha && s.alpha_set) mc::fail_invalid(who + " does not use --alpha");
}

// Build the species-space metric for the generic analyses (gpca, diversity,
// ftest). The named methods with fixed metrics (ca, nsca, dpcoa) bypass this.
Matrix build_metric(const std::string& metric, const StructureOptions& sopt, const Inputs& in,
                    std::vector<std::string>& warnings) {
  const auto& species = in.table.species_labels;
  const Eigen::Index p = static_cast<Eigen::Index>(species.size());
  if (metric == "identity") return Matrix::Identity(p, p);
  if (metric == "tree") return in.tm->sigma;
  if (metric == "inv-tree") return mc::linalg::spectral_inverse(in.tm->sigma);
  if (metric == "tree-laplacian-heat") {
    // leaves occupy the first rows of the whole-tree laplacian
    const Matrix kernel =
        mc::graph::heat_kernel(mc::tree::tree_laplacian(*in.pruned_tree), sopt.alpha);
    return kernel.topLeftCorner(p, p);
  }
  if (metric == "graph-heat")
    return graph_heat_metric(sopt.graph_path, sopt.alpha, species, warnings);
  if (metric == "custom-matrix")
    return aligned_square_matrix(mc::read_csv_matrix(sopt.metric_matrix_path), species,
                                 "custom metric", warnings);
  mc::fail_invalid("unknown metric '" + metric + "'");
}

void validate_metric_inputs(const std::string& who, const std::string& metric,
                            const StructureOptions& s) {
  const bool heat = metric == "tree-laplacian-heat" || metric == "graph-heat";
  const bool tree_based = metric == "tree" || metric == "inv-tree" ||
                          metric == "tree-laplacian-heat";
  if (tree_based && s.tree_path.empty())
    mc::fail_invalid(who + ": metric '" + metric + "' requires --tree");
  if (metric == "graph-heat" && s.graph_path.empty())
    mc::fail_invalid(who + ": metric 'graph-heat' requires --graph");
  if (metric == "custom-matrix" && s.metric_matrix_path.empty())
    mc::fail_invalid(who + ": metric 'custom-matrix' requires --metric-matrix");
  reject_unused_inputs(who + " with metric '" + metric + "'", s, tree_based,
                       /*uses_distances=*/false, metric == "custom-matrix",
                       metric == "graph-heat", heat);
}

// ---------------------------------------------------------------------------
// json plumbing

json base_report(const std::string& command) {
  json j;
  j["tool"] = "metricord";
  j["version"] = mc::version_string;
  j["schema_version"] = 1;
  j["command"] = command;
  return j;
}

// Reports stay portable: input files are echoed by name, not by path.
std::string echo_path(const std::string& path) { return fs::path(path).filename().string(); }

json vector_json(const Vector& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

json labeled_json(const std::vector<std::string>& labels, const Vector& v) {
  json obj = json::object();
  for (Eigen::Index i = 0; i < v.size(); ++i) obj[labels[static_cast<std::size_t>(i)]] = v(i);
  return obj;
}

void write_report(const std::string& path, const json& j) {
  mc::write_text_file(path, j.dump(2) + "\n");
}

std::vector<std::string> axis_names(Eigen::Index k) {
  std::vector<std::string> names;
  for (Eigen::Index i = 0; i < k; ++i) names.push_back("axis" + std::to_string(i + 1));
  return names;
}

// ---------------------------------------------------------------------------
// group files: two labeled columns (location, group), header row required

std::map<std::string, std::string> load_group_map(const std::string& path) {
  const auto lines = mc::split_lines(mc::read_text_file(path));
  std::map<std::string, std::string> groups;
  char delim = '\0';
  bool header_skipped = false;
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const std::string trimmed = mc::trim(lines[ln]);
    if (trimmed.empty() || trimmed.front() == '#') continue;
    if (delim == '\0') delim = mc::detect_delimiter(lines[ln]);
    if (!header_skipped) {
      header_skipped = true;
      continue;
    }
    const auto fields = mc::split_fields(lines[ln], delim);
    if (fields.size() != 2)
      mc::fail_io("'" + path + "' line " + std::to_string(ln + 1) +
                  ": expected two fields (location, group)");
    const std::string label = mc::trim(fields[0]);
    if (groups.count(label))
      mc::fail_io("'" + path + "': duplicate entry for location '" + label + "'");
    groups[label] = mc::trim(fields[1]);
  }
  if (groups.empty()) mc::fail_io("'" + path + "' contains no group assignments");
  return groups;
}

std::vector<std::string> groups_for_locations(const std::map<std::string, std::string>& map,
                                              const std::vector<std::string>& locations,
                                              const std::string& path) {
  std::vector<std::string> out;
  for (const auto& loc : locations) {
    auto it = map.find(loc);
    if (it == map.end())
      mc::fail_invalid("'" + path + "' has no group for location '" + loc + "'");
    out.push_back(it->second);
  }
  return out;
}

std::vector<int> dense_group_ids(const std::vector<std::string>& names) {
  std::map<std::string, int> id;
  std::vector<int> ids;
  int next = 0;
  for (const auto& g : names) {
    if (!id.count(g)) id[g] = next++;
    ids.push_back(id[g]);
  }
  return ids;
}

// ---------------------------------------------------------------------------
// ordinate

struct OrdinateArgs {
  TableOptions table;
  StructureOptions structure;
  std::string method;
  int dims = 0;
  std::string out_dir;
};

void run_ordinate(const OrdinateArgs& a) {
  const std::string& method = a.method;
  const bool fixed_metric = method == "ca" || method == "nsca" || method == "dpcoa";
  if (fixed_metric && !a.structure.metric.empty())
    mc::fail_invalid("method '" + method + "' fixes its metric internally; drop --metric");
  if (method == "ca" || method == "nsca")
    reject_unused_inputs("method '" + method + "'", a.structure, false, false, false, false,
                         false);
  if (method == "dpcoa") {
    if (a.structure.tree_path.empty() == a.structure.distances_path.empty())
      mc::fail_invalid("method 'dpcoa' needs exactly one of --tree or --distances");
    reject_unused_inputs("method 'dpcoa'", a.structure, true, true, false, false, false);
  }
  std::string metric = a.structure.metric;
  if (method == "gpca") {
    if (metric.empty()) metric = "identity";
    validate_metric_inputs("ordinate", metric, a.structure);
  }

  const bool need_tree = (method == "dpcoa" && !a.structure.tree_path.empty()) ||
                         (method == "gpca" &&
                          (metric == "tree" || metric == "inv-tree" ||
                           metric == "tree-laplacian-heat"));
  Inputs in = assemble_inputs(a.table, a.structure, need_tree);

  namespace ord = mc::ordination;
  ord::OrdinationResult res;
  if (method == "ca") {
    res = ord::ca(in.pd, a.dims);
  } else if (method == "nsca") {
    res = ord::nsca(in.pd, a.dims);
  } else if (method == "dpcoa") {
    Matrix sigma;
    if (in.tm) {
      sigma = in.tm->sigma;
    } else {
      const Matrix delta =
          aligned_square_matrix(mc::read_csv_matrix(a.structure.distances_path),
                                in.table.species_labels, "distance matrix", in.warnings);
      sigma = ord::sigma_from_distances(delta, in.pd.c);
    }
    res = ord::dpcoa_gpca(in.pd, sigma, a.dims);
  } else {
    ord::Triplet t;
    t.Xc = in.pd.Xc;
    t.Q = build_metric(metric, a.structure, in, in.warnings);
    t.D = Matrix(in.pd.w.asDiagonal());
    t.c = in.pd.c;
    res = ord::gpca(t, a.dims);
  }

  fs::create_directories(a.out_dir);
  const auto axes = axis_names(res.k);
  mc::write_csv_matrix((fs::path(a.out_dir) / "coordinates.csv").string(), "location", axes,
                       in.pd.location_labels, res.location_coords);
  if (res.species_coords.size() > 0)
    mc::write_csv_matrix((fs::path(a.out_dir) / "species_coordinates.csv").string(), "species",
                         axes, in.pd.species_labels, res.species_coords);
  Matrix spectrum(res.eigenvalues.size(), 2);
  spectrum.col(0) = res.eigenvalues;
  spectrum.col(1) = res.inertia_shares;
  mc::write_csv_matrix((fs::path(a.out_dir) / "eigenvalues.csv").string(), "axis",
                       {"eigenvalue", "inertia_share"}, axis_names(res.eigenvalues.size()),
                       spectrum);

  json j = base_report("ordinate");
  json cfg;
  cfg["table"] = echo_path(a.table.path);
  cfg["species_as_rows"] = a.table.species_as_rows;
  cfg["pseudocount"] = a.table.pseudocount;
  cfg["log1p"] = a.table.log1p;
  cfg["weight_mode"] = a.table.uniform_weights ? "uniform" : "abundance";
  cfg["method"] = method;
  cfg["metric"] = method == "gpca" ? metric : "(fixed by method)";
  if (!a.structure.tree_path.empty()) cfg["tree"] = echo_path(a.structure.tree_path);
  if (!a.structure.distances_path.empty())
    cfg["distances"] = echo_path(a.structure.distances_path);
  if (!a.structure.metric_matrix_path.empty())
    cfg["metric_matrix"] = echo_path(a.structure.metric_matrix_path);
  if (!a.structure.graph_path.empty()) cfg["graph"] = echo_path(a.structure.graph_path);
  if (a.structure.alpha_set) cfg["alpha"] = a.structure.alpha;
  cfg["dims"] = a.dims;
  cfg["strict"] = a.structure.strict;
  j["config"] = cfg;
  j["inputs"] = {{"locations", in.table.location_labels.size()},
                 {"species", in.table.species_labels.size()},
                 {"grand_total", in.table.total}};
  json results;
  results["k"] = res.k;
  results["total_inertia"] = res.total_inertia;
  results["eigenvalues"] = vector_json(res.eigenvalues);
  results["inertia_shares"] = vector_json(res.inertia_shares);
  results["dropped_metric_dims"] = res.dropped_metric_dims;
  j["results"] = results;
  j["warnings"] = in.warnings;
  write_report((fs::path(a.out_dir) / "report.json").string(), j);
}

// ---------------------------------------------------------------------------
// diversity / ftest

struct DiversityArgs {
  TableOptions table;
  StructureOptions structure;
  std::string metric = "identity";
  std::string groups_path;
  bool pool_groups = false;
  int permutations = 0;  // 0 = no test
  std::uint64_t seed = 0;
  std::string out_path;
};

void run_diversity(const DiversityArgs& a) {
  validate_metric_inputs("diversity", a.metric, a.structure);
  if (a.pool_groups && a.groups_path.empty())
    mc::fail_invalid("--pool-groups needs --groups");

  const bool need_tree = a.metric == "tree" || a.metric == "inv-tree" ||
                         a.metric == "tree-laplacian-heat";
  Inputs in = assemble_inputs(a.table, a.structure, need_tree);

  if (a.pool_groups) {
    const auto gmap = load_group_map(a.groups_path);
    const auto gnames = groups_for_locations(gmap, in.table.location_labels, a.groups_path);
    in.table = mc::contingency::pool_locations(in.table, gnames);
    in.pd = mc::contingency::profiles(in.table, in.pd.weight_mode);
  }

  const Matrix q = build_metric(a.metric, a.structure, in, in.warnings);

  mc::diversity::DiversityReport rep;
  if (a.permutations > 0) {
    mc::diversity::PermutationOptions opts;
    opts.replicates = a.permutations;
    opts.seed = a.seed;
    opts.max_threads = env_thread_count();
    rep = mc::diversity::permutation_test(in.table, q, opts);
  } else {
    rep = mc::diversity::decompose(in.pd, q);
  }

  json j = base_report("diversity");
  json cfg;
  cfg["table"] = echo_path(a.table.path);
  cfg["metric"] = a.metric;
  if (!a.structure.tree_path.empty()) cfg["tree"] = echo_path(a.structure.tree_path);
  if (!a.structure.graph_path.empty()) cfg["graph"] = echo_path(a.structure.graph_path);
  if (!a.structure.metric_matrix_path.empty())
    cfg["metric_matrix"] = echo_path(a.structure.metric_matrix_path);
  if (a.structure.alpha_set) cfg["alpha"] = a.structure.alpha;
  cfg["pseudocount"] = a.table.pseudocount;
  cfg["log1p"] = a.table.log1p;
  cfg["weight_mode"] = a.table.uniform_weights ? "uniform" : "abundance";
  cfg["pool_groups"] = a.pool_groups;
  if (!a.groups_path.empty()) cfg["groups"] = echo_path(a.groups_path);
  if (a.permutations > 0) {
    cfg["permutations"] = a.permutations;
    cfg["seed"] = a.seed;
  }
  j["config"] = cfg;
  j["inputs"] = {{"locations", in.table.location_labels.size()},
                 {"species", in.table.species_labels.size()},
                 {"grand_total", in.table.total}};

  json results;
  results["I_total"] = rep.I_total;
  results["I_between"] = rep.I_between;
  results["I_within"] = rep.I_within;
  results["F"] = rep.F;
  results["f_infinite"] = rep.f_infinite;
  results["per_location_H"] = labeled_json(in.pd.location_labels, rep.per_location_H);
  const auto pooled = mc::diversity::classical_indices(in.pd.c);
  results["pooled_profile"] = {{"gini_simpson", pooled.gini_simpson},
                               {"shannon", pooled.shannon}};
  const double chi2 = mc::diversity::chi2(in.table);
  results["chi_squared"] = chi2;
  results["chi_squared_over_n"] = chi2 / in.table.total;
  if (rep.permutation) {
    results["permutation"] = {{"replicates", rep.permutation->replicates},
                              {"p_value", rep.permutation->p_value},
                              {"f_observed", rep.permutation->f_observed},
                              {"exceed_count", rep.permutation->exceed_count},
                              {"seed", rep.permutation->seed}};
  }
  j["results"] = results;
  j["warnings"] = in.warnings;

  if (a.out_path.empty())
    std::printf("%s\n", j.dump(2).c_str());
  else
    write_report(a.out_path, j);
}

struct FtestArgs {
  TableOptions table;
  StructureOptions structure;
  std::string metric = "identity";
  std::string groups_path;
  std::string scheme = "units";
  int permutations = 999;
  int f_dims = 0;
  std::uint64_t seed = 0;
  std::string out_path;
};

void run_ftest(const FtestArgs& a) {
  validate_metric_inputs("ftest", a.metric, a.structure);
  if (a.scheme == "labels" && a.groups_path.empty())
    mc::fail_invalid("ftest: scheme 'labels' needs --groups");

  const bool need_tree = a.metric == "tree" || a.metric == "inv-tree" ||
                         a.metric == "tree-laplacian-heat";
  Inputs in = assemble_inputs(a.table, a.structure, need_tree);
  const Matrix q = build_metric(a.metric, a.structure, in, in.warnings);

  mc::diversity::PermutationOptions opts;
  opts.replicates = a.permutations;
  opts.seed = a.seed;
  opts.scheme = a.scheme == "labels" ? mc::diversity::PermutationScheme::labels
                                     : mc::diversity::PermutationScheme::units;
  opts.f_dims = a.f_dims;
  opts.max_threads = env_thread_count();
  std::vector<std::string> group_names;
  if (!a.groups_path.empty()) {
    const auto gmap = load_group_map(a.groups_path);
    group_names = groups_for_locations(gmap, in.table.location_labels, a.groups_path);
    opts.group_ids = dense_group_ids(group_names);
  }

  const auto rep = mc::diversity::permutation_test(in.table, q, opts);

  json j = base_report("ftest");
  json cfg;
  cfg["table"] = echo_path(a.table.path);
  cfg["metric"] = a.metric;
  if (!a.structure.tree_path.empty()) cfg["tree"] = echo_path(a.structure.tree_path);
  if (!a.structure.graph_path.empty()) cfg["graph"] = echo_path(a.structure.graph_path);
  if (!a.structure.metric_matrix_path.empty())
    cfg["metric_matrix"] = echo_path(a.structure.metric_matrix_path);
  if (a.structure.alpha_set) cfg["alpha"] = a.structure.alpha;
  if (!a.groups_path.empty()) cfg["groups"] = echo_path(a.groups_path);
  cfg["scheme"] = a.scheme;
  cfg["permutations"] = a.permutations;
  cfg["f_dims"] = a.f_dims;
  cfg["seed"] = a.seed;
  cfg["weight_mode"] = a.table.uniform_weights ? "uniform" : "abundance";
  j["config"] = cfg;

  json results;
  results["f_observed"] = rep.permutation->f_observed;
  results["p_value"] = rep.permutation->p_value;
  results["replicates"] = rep.permutation->replicates;
  results["exceed_count"] = rep.permutation->exceed_count;
  results["seed"] = rep.permutation->seed;
  results["I_total"] = rep.I_total;
  results["I_between"] = rep.I_between;
  results["I_within"] = rep.I_within;
  results["f_infinite"] = rep.f_infinite;
  if (!group_names.empty()) {
    json grouping = json::object();
    for (std::size_t i = 0; i < group_names.size(); ++i)
      grouping[in.table.location_labels[i]] = group_names[i];
    results["grouping"] = grouping;
  }
  j["results"] = results;
  j["warnings"] = in.warnings;

  if (a.out_path.empty())
    std::printf("%s\n", j.dump(2).c_str());
  else
    write_report(a.out_path, j);
}

// ---------------------------------------------------------------------------
// tree / graph utilities

struct TreeArgs {
  std::string tree_path;
  double default_branch_length = 0.0;
  bool default_branch_set = false;
  std::string out_path;
};

mc::tree::TreeMetrics metrics_for(const TreeArgs& a) {
  std::optional<double> default_branch;
  if (a.default_branch_set) default_branch = a.default_branch_length;
  const auto tree = mc::tree::parse_newick(mc::read_text_file(a.tree_path), default_branch);
  return mc::tree::tree_metrics(tree);
}

void run_tree_cov(const TreeArgs& a) {
  const auto m = metrics_for(a);
  mc::write_csv_matrix(a.out_path, "leaf", m.leaf_order, m.leaf_order, m.sigma);
}

void run_tree_distances(const TreeArgs& a) {
  const auto m = metrics_for(a);
  mc::write_csv_matrix(a.out_path, "leaf", m.leaf_order, m.leaf_order, m.delta);
}

void run_tree_eigs(const TreeArgs& a) {
  const auto m = metrics_for(a);
  const auto report = mc::tree::sigma_eigen_report(m);
  fs::create_directories(a.out_path);
  const Eigen::Index s = report.decomposition.eigenvalues.size();
  Matrix lam(s, 1);
  lam.col(0) = report.decomposition.eigenvalues;
  mc::write_csv_matrix((fs::path(a.out_path) / "sigma_eigenvalues.csv").string(), "axis",
                       {"eigenvalue"}, axis_names(s), lam);
  mc::write_csv_matrix((fs::path(a.out_path) / "sigma_eigenvectors.csv").string(), "leaf",
                       axis_names(s), m.leaf_order, report.decomposition.eigenvectors);
}

struct GraphArgs {
  std::string graph_path;
  std::string values_path;
  std::string variant = "raw";
  std::string out_path;
};

Vector values_for_graph(const mc::graph::Graph& g, const std::string& path) {
  const auto lines = mc::split_lines(mc::read_text_file(path));
  std::map<std::string, double> by_label;
  char delim = '\0';
  bool header_skipped = false;
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const std::string trimmed = mc::trim(lines[ln]);
    if (trimmed.empty() || trimmed.front() == '#') continue;
    if (delim == '\0') delim = mc::detect_delimiter(lines[ln]);
    if (!header_skipped) {
      header_skipped = true;
      continue;
    }
    const auto fields = mc::split_fields(lines[ln], delim);
    if (fields.size() != 2)
      mc::fail_io("'" + path + "' line " + std::to_string(ln + 1) +
                  ": expected two fields (vertex, value)");
    by_label[mc::trim(fields[0])] =
        mc::parse_cell(fields[1], path + ":" + std::to_string(ln + 1));
  }
  Vector y(static_cast<Eigen::Index>(g.labels.size()));
  for (std::size_t i = 0; i < g.labels.size(); ++i) {
    auto it = by_label.find(g.labels[i]);
    if (it == by_label.end())
      mc::fail_invalid("'" + path + "' has no value for vertex '" + g.labels[i] + "'");
    y(static_cast<Eigen::Index>(i)) = it->second;
  }
  return y;
}

void run_graph_laplacian(const GraphArgs& a) {
  const auto g = mc::graph::load_edge_list(a.graph_path);
  mc::graph::LaplacianVariant variant = mc::graph::LaplacianVariant::raw;
  if (a.variant == "row-standardized") variant = mc::graph::LaplacianVariant::row_standardized;
  else if (a.variant == "sym-normalized") variant = mc::graph::LaplacianVariant::sym_normalized;
  else if (a.variant != "raw") mc::fail_invalid("unknown laplacian variant '" + a.variant + "'");
  mc::write_csv_matrix(a.out_path, "vertex", g.labels, g.labels,
                       mc::graph::laplacian(g, variant));
}

void run_graph_autocorr(const GraphArgs& a, bool moran) {
  const auto g = mc::graph::load_edge_list(a.graph_path);
  const Vector y = values_for_graph(g, a.values_path);
  const double stat = moran ? mc::graph::moran_i(y, g) : mc::graph::geary_c(y, g);
  const auto parts = mc::graph::variance_decomposition(y, g);

  json j = base_report(moran ? "graph moran" : "graph geary");
  j["config"] = {{"graph", echo_path(a.graph_path)}, {"values", echo_path(a.values_path)}};
  j["inputs"] = {{"vertices", g.labels.size()}, {"adjacency_sum", g.adjacency_sum}};
  json results;
  results[moran ? "moran_i" : "geary_c"] = stat;
  results["variance"] = {{"total", parts.total},
                         {"laplacian_part", parts.laplacian_part},
                         {"adjacency_part", parts.adjacency_part}};
  j["results"] = results;
  if (a.out_path.empty())
    std::printf("%s\n", j.dump(2).c_str());
  else
    write_report(a.out_path, j);
}

// ---------------------------------------------------------------------------
// plot

struct PlotArgs {
  std::string coordinates_path;
  std::string species_path;
  std::string groups_path;
  TableOptions table;  // only consulted when --ellipses is on
  bool ellipses = false;
  std::string title;
  std::string out_path;
};

void run_plot(const PlotArgs& a) {
  const auto coords = mc::read_csv_matrix(a.coordinates_path);
  if (coords.values.cols() < 2)
    mc::fail_invalid("'" + a.coordinates_path + "' needs at least two coordinate columns");

  mc::plot::ScatterPlot plot;
  plot.location_coords = coords.values.leftCols(2);
  plot.location_labels = coords.row_names;
  plot.title = a.title;
  plot.x_label = coords.col_names[0];
  plot.y_label = coords.col_names[1];

  if (!a.groups_path.empty()) {
    const auto gmap = load_group_map(a.groups_path);
    plot.location_groups = groups_for_locations(gmap, coords.row_names, a.groups_path);
  }

  mc::CsvMatrix species;
  if (!a.species_path.empty()) {
    species = mc::read_csv_matrix(a.species_path);
    if (species.values.cols() < 2)
      mc::fail_invalid("'" + a.species_path + "' needs at least two coordinate columns");
    plot.species_coords = species.values.leftCols(2);
    plot.species_labels = species.row_names;
  }

  if (a.ellipses) {
    if (a.species_path.empty() || a.table.path.empty())
      mc::fail_invalid("--ellipses needs --species and --table");
    std::vector<std::string> table_warnings;
    const auto table = load_transformed(a.table, table_warnings);
    const auto pd = mc::contingency::profiles(table);

    std::map<std::string, Eigen::Index> row_of, col_of;
    for (std::size_t i = 0; i < pd.location_labels.size(); ++i)
      row_of[pd.location_labels[i]] = static_cast<Eigen::Index>(i);
    for (std::size_t j = 0; j < pd.species_labels.size(); ++j)
      col_of[pd.species_labels[j]] = static_cast<Eigen::Index>(j);

    const Eigen::Index s = plot.species_coords.rows();
    for (Eigen::Index i = 0; i < plot.location_coords.rows(); ++i) {
      const std::string& loc = coords.row_names[static_cast<std::size_t>(i)];
      if (!row_of.count(loc))
        mc::fail_invalid("table has no location '" + loc + "' for its ellipse");
      Vector x(s);
      for (Eigen::Index j = 0; j < s; ++j) {
        const std::string& sp = species.row_names[static_cast<std::size_t>(j)];
        if (!col_of.count(sp)) mc::fail_invalid("table has no species '" + sp + "'");
        x(j) = pd.X(row_of[loc], col_of[sp]);
      }
      if (std::abs(x.sum() - 1.0) > 1e-8)
        mc::fail_invalid("profile for '" + loc +
                         "' does not cover the plotted species; pass the same table and "
                         "transform flags the ordination used");
      const Eigen::Vector2d center = plot.species_coords.transpose() * x;
      plot.ellipses.push_back(mc::plot::ellipse_for_location(plot.species_coords, x, center));
    }
  }

  mc::plot::write_svg(plot, a.out_path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ordination, diversity, and autocorrelation for species tables with tree or "
               "graph structure"};
  app.set_version_flag("--version", mc::version_string);
  app.require_subcommand(1);

  OrdinateArgs ord;
  auto* ord_cmd = app.add_subcommand(
      "ordinate", "project locations and species onto principal axes");
  add_table_options(ord_cmd, ord.table);
  add_structure_options(ord_cmd, ord.structure, true);
  ord_cmd->add_option("--method", ord.method, "gpca, ca, nsca, or dpcoa")
      ->required()
      ->check(CLI::IsMember({"gpca", "ca", "nsca", "dpcoa"}));
  ord_cmd->add_option("--dims", ord.dims, "number of axes to keep (0 = all)")
      ->check(CLI::NonNegativeNumber);
  ord_cmd->add_option("--out", ord.out_dir, "output directory")->required();

  DiversityArgs dva;
  auto* div_cmd = app.add_subcommand(
      "diversity", "diversity decomposition of a table under a species metric");
  add_table_options(div_cmd, dva.table);
  add_structure_options(div_cmd, dva.structure, false);
  div_cmd->add_option("--metric", dva.metric,
                      "identity, tree, inv-tree, tree-laplacian-heat, graph-heat, or "
                      "custom-matrix")
      ->check(CLI::IsMember({"identity", "tree", "inv-tree", "tree-laplacian-heat",
                             "graph-heat", "custom-matrix"}));
  div_cmd->add_option("--groups", dva.groups_path,
                      "two-column file (location, group) with a header row");
  div_cmd->add_flag("--pool-groups", dva.pool_groups,
                    "sum counts within groups before profiling");
  div_cmd->add_option("--permutations", dva.permutations,
                      "run a permutation F test with this many replicates");
  div_cmd->add_option("--seed", dva.seed, "random seed for permutations");
  div_cmd->add_option("--out", dva.out_path, "report path (default: stdout)");

  FtestArgs ft;
  auto* ft_cmd = app.add_subcommand(
      "ftest", "permutation F test for location (or group) homogeneity");
  add_table_options(ft_cmd, ft.table);
  add_structure_options(ft_cmd, ft.structure, false);
  ft_cmd->add_option("--metric", ft.metric,
                     "identity, tree, inv-tree, tree-laplacian-heat, graph-heat, or "
                     "custom-matrix")
      ->check(CLI::IsMember({"identity", "tree", "inv-tree", "tree-laplacian-heat",
                             "graph-heat", "custom-matrix"}));
  ft_cmd->add_option("--groups", ft.groups_path,
                     "two-column file (location, group) with a header row");
  ft_cmd->add_option("--scheme", ft.scheme, "what to reshuffle: units or labels")
      ->check(CLI::IsMember({"units", "labels"}));
  ft_cmd->add_option("--permutations", ft.permutations, "replicate count (at least 99)");
  ft_cmd->add_option("--f-dims", ft.f_dims,
                     "restrict the F numerator to this many leading axes (0 = all)")
      ->check(CLI::NonNegativeNumber);
  ft_cmd->add_option("--seed", ft.seed, "random seed");
  ft_cmd->add_option("--out", ft.out_path, "report path (default: stdout)");

  TreeArgs tr;
  auto* tree_cmd = app.add_subcommand("tree", "tree-derived matrices");
  tree_cmd->require_subcommand(1);
  auto add_tree_opts = [&tr](CLI::App* cmd, const char* out_help) {
    cmd->add_option("--tree", tr.tree_path, "Newick file")->required();
    cmd->add_option("--default-branch-length", tr.default_branch_length,
                    "assume this length for edges that do not specify one");
    cmd->add_option("--out", tr.out_path, out_help)->required();
  };
  auto* tree_cov = tree_cmd->add_subcommand("cov", "leaf covariance matrix");
  add_tree_opts(tree_cov, "output CSV path");
  auto* tree_dist = tree_cmd->add_subcommand("distances", "leaf path-length distances");
  add_tree_opts(tree_dist, "output CSV path");
  auto* tree_eigs = tree_cmd->add_subcommand("eigs", "covariance eigenstructure");
  add_tree_opts(tree_eigs, "output directory");

  GraphArgs gr;
  auto* graph_cmd = app.add_subcommand("graph", "graph matrices and autocorrelation");
  graph_cmd->require_subcommand(1);
  auto* graph_lap = graph_cmd->add_subcommand("laplacian", "graph laplacian as CSV");
  graph_lap->add_option("--graph", gr.graph_path, "edge-list file")->required();
  graph_lap->add_option("--variant", gr.variant, "raw, row-standardized, or sym-normalized")
      ->check(CLI::IsMember({"raw", "row-standardized", "sym-normalized"}));
  graph_lap->add_option("--out", gr.out_path, "output CSV path")->required();
  auto* graph_moran = graph_cmd->add_subcommand("moran", "Moran autocorrelation of values");
  auto* graph_geary = graph_cmd->add_subcommand("geary", "Geary autocorrelation of values");
  for (auto* cmd : {graph_moran, graph_geary}) {
    cmd->add_option("--graph", gr.graph_path, "edge-list file")->required();
    cmd->add_option("--values", gr.values_path,
                    "two-column file (vertex, value) with a header row")
        ->required();
    cmd->add_option("--out", gr.out_path, "report path (default: stdout)");
  }

  PlotArgs pl;
  auto* plot_cmd = app.add_subcommand("plot", "render an ordination as SVG");
  plot_cmd->add_option("--coordinates", pl.coordinates_path, "location coordinates CSV")
      ->required();
  plot_cmd->add_option("--species", pl.species_path, "species coordinates CSV");
  plot_cmd->add_option("--groups", pl.groups_path,
                       "two-column file (location, group) with a header row");
  plot_cmd->add_option("--table", pl.table.path, "count table (needed for --ellipses)");
  plot_cmd->add_flag("--species-as-rows", pl.table.species_as_rows,
                     "table rows are species and columns are locations");
  plot_cmd->add_option("--pseudocount", pl.table.pseudocount,
                       "match the ordination's pseudocount when computing ellipses");
  plot_cmd->add_flag("--log1p", pl.table.log1p,
                     "match the ordination's log1p flag when computing ellipses");
  plot_cmd->add_flag("--ellipses", pl.ellipses, "draw a spread ellipse per location");
  plot_cmd->add_option("--title", pl.title, "plot title");
  plot_cmd->add_option("--out", pl.out_path, "output SVG path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    finalize_structure(ord_cmd, ord.structure);
    finalize_structure(div_cmd, dva.structure);
    finalize_structure(ft_cmd, ft.structure);
    tr.default_branch_set = count_of(tree_cov, "--default-branch-length") > 0 ||
                            count_of(tree_dist, "--default-branch-length") > 0 ||
                            count_of(tree_eigs, "--default-branch-length") > 0;

    if (ord_cmd->parsed()) run_ordinate(ord);
    else if (div_cmd->parsed()) run_diversity(dva);
    else if (ft_cmd->parsed()) run_ftest(ft);
    else if (tree_cov->parsed()) run_tree_cov(tr);
    else if (tree_dist->parsed()) run_tree_distances(tr);
    else if (tree_eigs->parsed()) run_tree_eigs(tr);
    else if (graph_lap->parsed()) run_graph_laplacian(gr);
    else if (graph_moran->parsed()) run_graph_autocorr(gr, true);
    else if (graph_geary->parsed()) run_graph_autocorr(gr, false);
    else if (plot_cmd->parsed()) run_plot(pl);
  } catch (const Error& e) {
    std::fprintf(stderr, "metricord: %s\n", e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "metricord: unexpected failure: %s\n", e.what());
    return 3;
  }
  return 0;
}

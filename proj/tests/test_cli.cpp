#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"
#include "metricord/io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string env_or_fail(const char* name) {
  const char* v = std::getenv(name);
  REQUIRE(v != nullptr);
  return v;
}

const std::string& scratch_dir() {
  static const std::string dir = [] {
    const auto d = fs::temp_directory_path() / ("metricord_cli_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d.string();
  }();
  return dir;
}

struct ScratchCleanup {
  ~ScratchCleanup() {
    std::error_code ec;
    fs::remove_all(scratch_dir(), ec);
  }
} cleanup_on_exit;

struct RunResult {
  int code = -1;
  std::string output;  // stdout and stderr combined
};

RunResult run_cli(const std::string& args) {
  static int counter = 0;
  const std::string capture = scratch_dir() + "/capture" + std::to_string(counter++) + ".txt";
  const std::string cmd = env_or_fail("METRICORD_CLI") + " " + args + " > " + capture + " 2>&1";
  const int raw = std::system(cmd.c_str());
  RunResult r;
  REQUIRE(raw != -1);
  r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.output = metricord::read_text_file(capture);
  return r;
}

bool same_bytes(const std::string& a, const std::string& b) {
  return metricord::read_text_file(a) == metricord::read_text_file(b);
}

std::string data_file(const std::string& name) { return env_or_fail("METRICORD_DATA") + "/" + name; }
std::string golden_file(const std::string& name) {
  return env_or_fail("METRICORD_GOLDEN") + "/" + name;
}

json parse_report(const std::string& path) {
  return json::parse(metricord::read_text_file(path));
}

}  // namespace

TEST_CASE("version flag exits cleanly") {
  const auto r = run_cli("--version");
  CHECK(r.code == 0);
  CHECK(r.output.find("0.1.0") != std::string::npos);
}

TEST_CASE("tree-metric ordination of the demo matches the golden outputs") {
  const std::string out = scratch_dir() + "/demo_dpcoa";
  const std::string args = "ordinate --method dpcoa --table " + data_file("demo_counts.tsv") +
                           " --tree " + data_file("demo_tree.nwk") + " --out " + out;
  REQUIRE(run_cli(args).code == 0);
  for (const char* name :
       {"coordinates.csv", "species_coordinates.csv", "eigenvalues.csv", "report.json"}) {
    INFO(name);
    CHECK(same_bytes(out + "/" + std::string(name), golden_file("demo_dpcoa/" + std::string(name))));
  }

  const std::string rerun = scratch_dir() + "/demo_dpcoa_rerun";
  REQUIRE(run_cli("ordinate --method dpcoa --table " + data_file("demo_counts.tsv") +
                  " --tree " + data_file("demo_tree.nwk") + " --out " + rerun)
              .code == 0);
  CHECK(same_bytes(out + "/coordinates.csv", rerun + "/coordinates.csv"));
  CHECK(same_bytes(out + "/report.json", rerun + "/report.json"));
}

TEST_CASE("invalid flag combinations exit with code 2") {
  const auto conflict =
      run_cli("ordinate --method ca --metric tree --table " + data_file("demo_counts.tsv") +
              " --tree " + data_file("demo_tree.nwk") + " --out " + scratch_dir() + "/x");
  CHECK(conflict.code == 2);
  CHECK(conflict.output.find("drop --metric") != std::string::npos);

  const auto no_tree = run_cli("ordinate --method dpcoa --table " +
                               data_file("demo_counts.tsv") + " --out " + scratch_dir() + "/x");
  CHECK(no_tree.code == 2);
  CHECK(no_tree.output.find("--tree or --distances") != std::string::npos);

  CHECK(run_cli("ordinate --method gpca --table /nonexistent.tsv --out " + scratch_dir() + "/x")
            .code == 2);
}

TEST_CASE("a species absent from the tree is named in the error") {
  const std::string table = scratch_dir() + "/bad_species.tsv";
  metricord::write_text_file(table, "sample\tspA\tspZZ\ns1\t3\t2\ns2\t1\t4\n");
  const auto r = run_cli("ordinate --method dpcoa --table " + table + " --tree " +
                         data_file("demo_tree.nwk") + " --out " + scratch_dir() + "/x");
  CHECK(r.code == 2);
  CHECK(r.output.find("spZZ") != std::string::npos);
}

TEST_CASE("partial tree coverage prunes by default and refuses under --strict") {
  const std::string table = scratch_dir() + "/three_species.tsv";
  metricord::write_text_file(table, "sample\tspA\tspB\tspC\ns1\t3\t2\t1\ns2\t1\t4\t2\n");
  const std::string out = scratch_dir() + "/pruned";
  REQUIRE(run_cli("ordinate --method dpcoa --table " + table + " --tree " +
                  data_file("demo_tree.nwk") + " --out " + out)
              .code == 0);
  const json report = parse_report(out + "/report.json");
  REQUIRE(report["warnings"].size() == 1);
  CHECK(report["warnings"][0].get<std::string>().find("spD") != std::string::npos);

  const auto strict = run_cli("ordinate --method dpcoa --strict --table " + table + " --tree " +
                              data_file("demo_tree.nwk") + " --out " + scratch_dir() + "/x");
  CHECK(strict.code == 2);
  CHECK(strict.output.find("spD") != std::string::npos);
}

TEST_CASE("an indefinite custom metric exits with code 3") {
  const std::string table = scratch_dir() + "/two_species.tsv";
  const std::string metric = scratch_dir() + "/indefinite.csv";
  metricord::write_text_file(table, "sample\tsp1\tsp2\ns1\t3\t1\ns2\t1\t4\n");
  metricord::write_text_file(metric, "m,sp1,sp2\nsp1,1,2\nsp2,2,1\n");
  const auto r = run_cli("ordinate --method gpca --metric custom-matrix --metric-matrix " +
                         metric + " --table " + table + " --out " + scratch_dir() + "/x");
  CHECK(r.code == 3);
}

TEST_CASE("ca eigenvalue mass equals the scaled chi-squared statistic") {
  const std::string ca_dir = scratch_dir() + "/demo_ca";
  REQUIRE(run_cli("ordinate --method ca --table " + data_file("demo_counts.tsv") + " --out " +
                  ca_dir)
              .code == 0);
  const std::string div_path = scratch_dir() + "/demo_div.json";
  REQUIRE(run_cli("diversity --table " + data_file("demo_counts.tsv") + " --out " + div_path)
              .code == 0);

  const json ca = parse_report(ca_dir + "/report.json");
  const json div = parse_report(div_path);
  double eigen_sum = 0.0;
  for (const auto& v : ca["results"]["eigenvalues"]) eigen_sum += v.get<double>();
  CHECK(eigen_sum ==
        Catch::Approx(div["results"]["chi_squared_over_n"].get<double>()).margin(1e-10));

  // with the identity metric, total diversity is the pooled Gini-Simpson index
  CHECK(div["results"]["I_total"] ==
        Catch::Approx(div["results"]["pooled_profile"]["gini_simpson"].get<double>())
            .margin(1e-12));
}

TEST_CASE("grouped diversity pools counts before profiling") {
  const std::string out = scratch_dir() + "/pooled_div.json";
  REQUIRE(run_cli("diversity --table " + data_file("demo_counts.tsv") + " --tree " +
                  data_file("demo_tree.nwk") + " --metric tree --groups " +
                  data_file("demo_groups.csv") + " --pool-groups --out " + out)
              .code == 0);
  const json report = parse_report(out);
  CHECK(report["inputs"]["locations"] == 2);  // ctrl and case
  CHECK(report["results"]["per_location_H"].contains("ctrl"));
}

TEST_CASE("seeded permutation reports are stable across thread caps") {
  const std::string common = "ftest --table " + data_file("synthetic_counts.tsv") + " --tree " +
                             data_file("synthetic_tree.nwk") + " --metric tree --groups " +
                             data_file("synthetic_groups.csv") +
                             " --permutations 999 --seed 7 --out ";
  const std::string single = scratch_dir() + "/ftest_t1.json";
  const std::string quad = scratch_dir() + "/ftest_t4.json";

  REQUIRE(setenv("METRICORD_THREADS", "1", 1) == 0);
  REQUIRE(run_cli(common + single).code == 0);
  REQUIRE(setenv("METRICORD_THREADS", "4", 1) == 0);
  REQUIRE(run_cli(common + quad).code == 0);
  REQUIRE(unsetenv("METRICORD_THREADS") == 0);

  CHECK(same_bytes(single, quad));
  CHECK(same_bytes(single, golden_file("synthetic_ftest.json")));

  const json report = parse_report(single);
  CHECK(report["results"]["p_value"].get<double>() <= 0.01);  // groups are truly distinct

  const auto bad_threads = run_cli(common + scratch_dir() + "/x.json");
  CHECK(bad_threads.code == 0);
  REQUIRE(setenv("METRICORD_THREADS", "zero", 1) == 0);
  CHECK(run_cli(common + scratch_dir() + "/y.json").code == 2);
  REQUIRE(unsetenv("METRICORD_THREADS") == 0);
}

TEST_CASE("plot command reproduces the golden svg from golden coordinates") {
  const std::string out = scratch_dir() + "/plot.svg";
  const std::string args =
      "plot --coordinates " + golden_file("synthetic_dpcoa/coordinates.csv") + " --species " +
      golden_file("synthetic_dpcoa/species_coordinates.csv") + " --groups " +
      data_file("synthetic_groups.csv") + " --table " + data_file("synthetic_counts.tsv") +
      " --ellipses --title \"synthetic data, tree-metric ordination\" --out " + out;
  REQUIRE(run_cli(args).code == 0);
  CHECK(same_bytes(out, golden_file("synthetic_plot.svg")));

  const auto missing_table = run_cli(
      "plot --coordinates " + golden_file("synthetic_dpcoa/coordinates.csv") + " --species " +
      golden_file("synthetic_dpcoa/species_coordinates.csv") + " --ellipses --out " +
      scratch_dir() + "/no.svg");
  CHECK(missing_table.code == 2);
}

TEST_CASE("tree and graph utility outputs are well formed") {
  const std::string sigma = scratch_dir() + "/sigma.csv";
  REQUIRE(run_cli("tree cov --tree " + data_file("demo_tree.nwk") + " --out " + sigma).code == 0);
  const auto m = metricord::read_csv_matrix(sigma);
  CHECK(m.row_names == std::vector<std::string>{"spA", "spB", "spC", "spD"});
  CHECK(m.values(0, 1) == 0.4);  // shared root path of the first cherry

  const std::string edges = scratch_dir() + "/edges.txt";
  const std::string values = scratch_dir() + "/values.csv";
  metricord::write_text_file(edges, "a b\nb c\nc d\n");
  metricord::write_text_file(values, "vertex,value\na,1\nb,1\nc,-1\nd,-1\n");
  const auto moran = run_cli("graph moran --graph " + edges + " --values " + values);
  REQUIRE(moran.code == 0);
  const json report = json::parse(moran.output);
  CHECK(report["results"]["moran_i"].get<double>() > 0.0);

  const auto missing_value = run_cli("graph geary --graph " + edges + " --values " + values);
  CHECK(missing_value.code == 0);
  metricord::write_text_file(values, "vertex,value\na,1\nb,1\nc,-1\n");
  const auto incomplete = run_cli("graph geary --graph " + edges + " --values " + values);
  CHECK(incomplete.code == 2);
  CHECK(incomplete.output.find("'d'") != std::string::npos);
}

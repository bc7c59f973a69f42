#include <catch_amalgamated.hpp>

#include "angd/harness.hpp"

using namespace angd;
using harness::Json;
namespace fs = std::filesystem;

namespace {

Json tiny_poisson_cfg() {
  Json cfg;
  cfg["name"] = "tiny";
  cfg["problem"] = {{"name", "poisson"}, {"n_grid", 16}};
  cfg["optimizer"] = "angd_l2";
  cfg["net"] = {{"hidden", {6}}};
  cfg["schedule"] = {{"h0", 0.05}, {"alpha0", 4.0}, {"beta0", 0.05}};
  cfg["solver"] = {{"damping", 1e-4}};
  cfg["seeds"] = {0, 1};
  cfg["iterations"] = 4;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path fresh_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("angd_test_" + tag);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("config validation names the offending field") {
  Json cfg = tiny_poisson_cfg();
  cfg.erase("seeds");
  try {
    harness::validate_config(cfg);
    FAIL("expected a config error");
  } catch (const std::invalid_argument& e) {
    REQUIRE(std::string(e.what()).find("seeds") != std::string::npos);
  }

  cfg = tiny_poisson_cfg();
  cfg["optimizer"] = "angd_fr";  // particle optimizer on a PDE problem
  REQUIRE_THROWS_AS(harness::validate_config(cfg), std::invalid_argument);

  cfg = tiny_poisson_cfg();
  cfg["record_every"] = 0;
  REQUIRE_THROWS_AS(harness::validate_config(cfg), std::invalid_argument);

  cfg = tiny_poisson_cfg();
  cfg["problem"]["name"] = "heat";
  REQUIRE_THROWS_AS(harness::validate_config(cfg), std::invalid_argument);
}

TEST_CASE("zero-iteration budget produces a single trace record") {
  Json cfg = tiny_poisson_cfg();
  cfg["iterations"] = 0;
  cfg["seeds"] = {3};
  const fs::path out = fresh_dir("zero_iter");
  harness::run_experiment(cfg, out);
  const std::string body = slurp(out / "trace_seed3.csv");
  REQUIRE(std::count(body.begin(), body.end(), '\n') == 2);  // header + one row
  REQUIRE(body.rfind(harness::csv_header(), 0) == 0);
  fs::remove_all(out);
}

TEST_CASE("reruns produce byte-identical trace bodies") {
  const Json cfg = tiny_poisson_cfg();
  const fs::path a = fresh_dir("rerun_a");
  const fs::path b = fresh_dir("rerun_b");
  harness::run_experiment(cfg, a);
  harness::run_experiment(cfg, b);
  for (int seed : {0, 1}) {
    const std::string fn = "trace_seed" + std::to_string(seed) + ".csv";
    REQUIRE(slurp(a / fn) == slurp(b / fn));
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("config echo round-trips") {
  const Json cfg = tiny_poisson_cfg();
  const fs::path out = fresh_dir("echo");
  harness::run_experiment(cfg, out);
  const Json echoed = harness::load_config(out / "config_echo.json");
  REQUIRE(echoed == cfg);
  fs::remove_all(out);
}

TEST_CASE("summary reports per-seed finals and threshold crossings") {
  Json cfg = tiny_poisson_cfg();
  cfg["threshold"] = 1e10;  // trivially reached at step 0
  const fs::path out = fresh_dir("summary");
  const Json summary = harness::run_experiment(cfg, out);
  REQUIRE(summary.at("seeds").size() == 2);
  for (const auto& s : summary.at("seeds")) {
    REQUIRE(s.at("status") == "ok");
    REQUIRE(s.at("iterations_to_threshold").get<int>() == 0);
    REQUIRE(std::isfinite(s.at("final_train_loss").get<double>()));
  }
  REQUIRE(summary.contains("median_final_train_loss"));
  fs::remove_all(out);
}

TEST_CASE("grid search expands the Cartesian product with a stable ranking") {
  Json cfg = tiny_poisson_cfg();
  cfg["seeds"] = {0};
  cfg["iterations"] = 2;
  cfg["grid"] = {{"schedule.h0", {0.02, 0.05}}, {"solver.damping", {1e-4, 1e-3}}};
  const fs::path out = fresh_dir("grid");
  const Json summary = harness::grid_search(cfg, out);
  REQUIRE(summary.at("cells").get<int>() == 4);
  REQUIRE(summary.at("ranking").size() == 4);
  // Ranks are a total order 1..4 and all cells succeeded.
  for (size_t r = 0; r < 4; ++r) {
    REQUIRE(summary.at("ranking").at(r).at("rank").get<int>() == int(r) + 1);
    REQUIRE(summary.at("ranking").at(r).at("status") == "ok");
  }
  const std::string csv = slurp(out / "grid_ranking.csv");
  REQUIRE(std::count(csv.begin(), csv.end(), '\n') == 5);

  const fs::path out2 = fresh_dir("grid2");
  const Json again = harness::grid_search(cfg, out2);
  REQUIRE(again.at("ranking") == summary.at("ranking"));
  fs::remove_all(out);
  fs::remove_all(out2);
}

TEST_CASE("compare aligns a run with itself into identical columns") {
  const Json cfg = tiny_poisson_cfg();
  const fs::path a = fresh_dir("cmp_a");
  const fs::path b = fresh_dir("cmp_b");
  harness::run_experiment(cfg, a);
  harness::run_experiment(cfg, b);
  const fs::path csv = fresh_dir("cmp_out") / "compare.csv";
  fs::create_directories(csv.parent_path());
  harness::compare_runs({a, b}, csv);
  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  REQUIRE(header.rfind("step,", 0) == 0);
  std::string line;
  int rows = 0;
  while (std::getline(in, line)) {
    const size_t c1 = line.find(',');
    const size_t c2 = line.find(',', c1 + 1);
    REQUIRE(line.substr(c1 + 1, c2 - c1 - 1) == line.substr(c2 + 1));
    ++rows;
  }
  REQUIRE(rows == 5);  // steps 0..3 plus the final record
  fs::remove_all(a);
  fs::remove_all(b);
  fs::remove_all(csv.parent_path());
}

TEST_CASE("compare rejects runs on different problems") {
  const Json cfg = tiny_poisson_cfg();
  Json other = cfg;
  other["problem"]["n_grid"] = 24;
  const fs::path a = fresh_dir("cmp_mis_a");
  const fs::path b = fresh_dir("cmp_mis_b");
  harness::run_experiment(cfg, a);
  harness::run_experiment(other, b);
  REQUIRE_THROWS_AS(
      harness::compare_runs({a, b}, fs::temp_directory_path() / "never.csv"),
      std::invalid_argument);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("particle experiments run end to end deterministically") {
  Json cfg;
  cfg["name"] = "particle_smoke";
  cfg["problem"] = {{"name", "gaussian"}, {"mean", {0.5, -0.5}}};
  cfg["optimizer"] = "ngd_fr";
  cfg["net"] = {{"hidden", {8}}};
  cfg["schedule"] = {{"h0", 0.2}};
  cfg["solver"] = {{"damping", 1e-4}, {"momentum", 0.5},
                   {"method", "projected_momentum"}};
  cfg["particles"] = {{"count", 64}, {"mala_step", 0.1}, {"mala_steps", 2}};
  cfg["seeds"] = {0};
  cfg["iterations"] = 3;
  const fs::path a = fresh_dir("particle_a");
  const fs::path b = fresh_dir("particle_b");
  const Json sa = harness::run_experiment(cfg, a);
  harness::run_experiment(cfg, b);
  REQUIRE(sa.at("seeds").at(0).at("status") == "ok");
  REQUIRE(slurp(a / "trace_seed0.csv") == slurp(b / "trace_seed0.csv"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("flow jobs write trajectory CSV plus a rate summary") {
  Json cfg;
  cfg["flow"] = {{"kind", "euclidean_quadratic"},
                 {"dim", 4},
                 {"coeffs", {{"alpha", 3.0}, {"beta0", 0.05}, {"beta_decay", 0.1}}},
                 {"t_end", 30.0},
                 {"dt", 1e-2},
                 {"record_every", 10}};
  const fs::path out = fresh_dir("flow_job");
  const Json summary = harness::run_flow_job(cfg, out);
  REQUIRE_FALSE(summary.at("aborted").get<bool>());
  REQUIRE(summary.at("hypotheses_hold").get<bool>());
  REQUIRE(summary.at("rate_slope").get<double>() < -1.5);
  const std::string body = slurp(out / "flow_trace.csv");
  REQUIRE(body.rfind("t,loss_gap,lyapunov,dist2,psi_norm", 0) == 0);
  fs::remove_all(out);
}

TEST_CASE("deterministic double formatting round-trips") {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, 12345.678901234567, 0.0}) {
    REQUIRE(std::stod(harness::fmt(v)) == v);
  }
}

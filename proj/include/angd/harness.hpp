#pragma once

// Experiment driver: JSON experiment configs, seeded optimizer and flow
// runs, deterministic CSV traces (no timestamps in trace bodies), JSON
// summaries with stable key order, grid search, and run comparison.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "angd/core.hpp"
#include "angd/density.hpp"
#include "angd/flow.hpp"
#include "angd/metrics.hpp"
#include "angd/net.hpp"
#include "angd/optimizers.hpp"
#include "angd/problems.hpp"
#include "angd/schedule.hpp"

namespace angd::harness {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

// Shortest round-trip decimal representation, stable across reruns.
inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline double median(std::vector<double> v) {
  require(!v.empty(), "median: empty sample");
  std::sort(v.begin(), v.end());
  const size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

// ---------------------------------------------------------------------------
// Config plumbing.

inline Json load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path.string());
  Json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw std::invalid_argument("config: parse error in " + path.string() + ": " +
                                e.what());
  }
  return j;
}

inline const Json& field(const Json& j, const std::string& key,
                         const std::string& where) {
  if (!j.contains(key))
    throw std::invalid_argument("config: missing field " + where + "." + key);
  return j.at(key);
}

template <class T>
T get_or(const Json& j, const std::string& key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

enum class OptimizerKind {
  AngdL2,
  NgdL2,
  AngdH1,
  AngdHm1,
  AngdFr,
  NgdFr,
  AngdW2,
  NgdW2,
  Sgd,
  Adam,
};

inline OptimizerKind parse_optimizer(const std::string& name) {
  static const std::map<std::string, OptimizerKind> table = {
      {"angd_l2", OptimizerKind::AngdL2}, {"ngd_l2", OptimizerKind::NgdL2},
      {"angd_h1", OptimizerKind::AngdH1}, {"angd_hm1", OptimizerKind::AngdHm1},
      {"angd_fr", OptimizerKind::AngdFr}, {"ngd_fr", OptimizerKind::NgdFr},
      {"angd_w2", OptimizerKind::AngdW2}, {"ngd_w2", OptimizerKind::NgdW2},
      {"sgd", OptimizerKind::Sgd},        {"adam", OptimizerKind::Adam}};
  const auto it = table.find(name);
  if (it == table.end())
    throw std::invalid_argument("config: unknown optimizer '" + name + "'");
  return it->second;
}

inline bool is_particle_optimizer(OptimizerKind k) {
  return k == OptimizerKind::AngdFr || k == OptimizerKind::NgdFr ||
         k == OptimizerKind::AngdW2 || k == OptimizerKind::NgdW2;
}

inline Schedule parse_schedule(const Json& j) {
  Schedule s;
  s.h0 = get_or(j, "h0", 0.01);
  s.lr_decay = get_or(j, "lr_decay", 0.0);
  s.alpha0 = get_or(j, "alpha0", 1.0);
  s.alpha_decay = get_or(j, "alpha_decay", 0.0);
  s.beta0 = get_or(j, "beta0", 0.0);
  s.beta_decay = get_or(j, "beta_decay", 0.0);
  s.gamma0 = get_or(j, "gamma0", 1.0);
  s.gamma_decay = get_or(j, "gamma_decay", 0.0);
  s.memoryless = get_or(j, "memoryless", false);
  s.validate();
  return s;
}

inline SolveConfig parse_solver(const Json& j) {
  SolveConfig c;
  c.damping = get_or(j, "damping", 1e-4);
  c.relative_damping = get_or(j, "relative_damping", false);
  c.momentum = get_or(j, "momentum", 0.0);
  const std::string method = get_or<std::string>(j, "method", "normal");
  if (method == "normal")
    c.tag = SolveConfig::Tag::Normal;
  else if (method == "min_norm")
    c.tag = SolveConfig::Tag::GramMinNorm;
  else if (method == "projected_momentum")
    c.tag = SolveConfig::Tag::ProjectedMomentum;
  else if (method == "kfac")
    c.tag = SolveConfig::Tag::Kfac;
  else
    throw std::invalid_argument("config: unknown solver.method '" + method + "'");
  c.validate();
  return c;
}

inline void validate_config(const Json& cfg) {
  const std::string prob =
      field(field(cfg, "problem", "config"), "name", "config.problem")
          .get<std::string>();
  if (prob != "poisson" && prob != "burgers" && prob != "gaussian" &&
      prob != "gaussian_mixture")
    throw std::invalid_argument("config: unknown problem.name '" + prob + "'");
  const OptimizerKind opt =
      parse_optimizer(field(cfg, "optimizer", "config").get<std::string>());
  const bool particle_problem = prob == "gaussian" || prob == "gaussian_mixture";
  if (particle_problem != is_particle_optimizer(opt))
    throw std::invalid_argument(
        "config: optimizer/problem family mismatch (particle optimizers pair "
        "with density problems)");
  const Json& seeds = field(cfg, "seeds", "config");
  if (!seeds.is_array() || seeds.empty())
    throw std::invalid_argument("config: seeds must be a nonempty array");
  if (field(cfg, "iterations", "config").get<int>() < 0)
    throw std::invalid_argument("config: iterations must be nonnegative");
  if (cfg.contains("schedule")) parse_schedule(cfg.at("schedule"));
  if (cfg.contains("solver")) parse_solver(cfg.at("solver"));
  if (get_or(cfg, "record_every", 1) < 1)
    throw std::invalid_argument("config: record_every must be >= 1");
}

// ---------------------------------------------------------------------------
// Trace rows.

struct TraceRow {
  int step = 0;
  double train_loss = 0.0;
  double test_loss = 0.0;
  bool has_test = false;
  double d_norm = 0.0;
  double residual = 0.0;
  double lambda = 0.0;
  double h = 0.0, alpha = 0.0, beta = 0.0, gamma = 0.0, mu = 0.0;
  double accept_rate = 1.0;
};

inline std::string csv_header() {
  return "step,train_loss,test_loss,d_norm,residual,lambda,h,alpha,beta,gamma,"
         "mu,accept_rate";
}

inline std::string to_csv(const TraceRow& r) {
  std::ostringstream os;
  os << r.step << ',' << fmt(r.train_loss) << ','
     << (r.has_test ? fmt(r.test_loss) : std::string()) << ',' << fmt(r.d_norm)
     << ',' << fmt(r.residual) << ',' << fmt(r.lambda) << ',' << fmt(r.h) << ','
     << fmt(r.alpha) << ',' << fmt(r.beta) << ',' << fmt(r.gamma) << ','
     << fmt(r.mu) << ',' << fmt(r.accept_rate);
  return os.str();
}

struct SeedResult {
  int seed = 0;
  std::vector<TraceRow> rows;
  bool failed = false;
  std::string error;
  double wall_s = 0.0;
};

// ---------------------------------------------------------------------------
// Problem factories.

inline std::unique_ptr<PinnProblem> make_pinn_problem(const Json& pj) {
  const std::string name = pj.at("name").get<std::string>();
  if (name == "poisson") {
    const int n_grid = get_or(pj, "n_grid", 64);
    const double k = get_or(pj, "forcing_wavenumber", 1.0);
    return std::make_unique<PoissonProblem>(
        n_grid, [k](double x) { return std::sin(k * x); });
  }
  if (name == "burgers") {
    const int nx = get_or(pj, "nx", 64);
    const int nt = get_or(pj, "nt", 32);
    const double lb = get_or(pj, "lambda_b", 100.0);
    return std::make_unique<BurgersProblem>(
        nx, nt, [](double x) { return std::sin(M_PI * x); }, lb);
  }
  throw std::invalid_argument("config: problem '" + name + "' is not a PDE problem");
}

inline std::shared_ptr<TargetDensity> make_target(const Json& pj) {
  const std::string name = pj.at("name").get<std::string>();
  if (name == "gaussian") {
    const auto m = pj.at("mean").get<std::vector<double>>();
    return std::make_shared<GaussianTarget>(
        Eigen::Map<const Vector>(m.data(), static_cast<Eigen::Index>(m.size())));
  }
  if (name == "gaussian_mixture") {
    std::vector<Vector> means;
    for (const auto& row : pj.at("means")) {
      const auto m = row.get<std::vector<double>>();
      means.push_back(
          Eigen::Map<const Vector>(m.data(), static_cast<Eigen::Index>(m.size())));
    }
    return std::make_shared<GaussianMixtureTarget>(std::move(means));
  }
  throw std::invalid_argument("config: problem '" + name + "' is not a density problem");
}

inline std::vector<int> net_dims(const Json& cfg, int in_dim) {
  std::vector<int> dims{in_dim};
  if (cfg.contains("net"))
    for (int w : get_or(cfg.at("net"), "hidden", std::vector<int>{32, 32}))
      dims.push_back(w);
  else {
    dims.push_back(32);
    dims.push_back(32);
  }
  dims.push_back(1);
  return dims;
}

// ---------------------------------------------------------------------------
// Single-seed runs. Rows record the state *before* each update; a final
// row evaluates the end state, so a zero-iteration budget yields exactly
// one record.

namespace detail {

inline Schedule effective_schedule(const Json& cfg, OptimizerKind opt) {
  Schedule s = cfg.contains("schedule") ? parse_schedule(cfg.at("schedule"))
                                        : Schedule{};
  if (opt == OptimizerKind::NgdL2 || opt == OptimizerKind::NgdFr ||
      opt == OptimizerKind::NgdW2)
    s = Schedule::ngd(s.h0, s.lr_decay);
  s.validate();
  return s;
}

inline SeedResult run_pinn_seed(const Json& cfg, int seed) {
  SeedResult res;
  res.seed = seed;
  const auto t_start = std::chrono::steady_clock::now();
  const OptimizerKind opt =
      parse_optimizer(cfg.at("optimizer").get<std::string>());
  const auto problem = make_pinn_problem(cfg.at("problem"));
  const int in_dim = static_cast<int>(problem->batch().cols());
  MlpNet net = MlpNet::seeded(net_dims(cfg, in_dim),
                              static_cast<uint64_t>(seed));
  const Schedule sched = effective_schedule(cfg, opt);
  const SolveConfig solver =
      cfg.contains("solver") ? parse_solver(cfg.at("solver")) : SolveConfig{};
  const int iters = cfg.at("iterations").get<int>();
  const int every = get_or(cfg, "record_every", 1);

  L2State l2 = L2State::init(net.param_count());
  HsState hs = HsState::init(net.param_count(),
                             static_cast<int>(problem->batch().rows()), in_dim);
  AdamState adam = AdamState::init(
      net.param_count(), 0.9, 0.999,
      cfg.contains("adam") ? get_or(cfg.at("adam"), "weight_decay", 0.0) : 0.0);

  try {
    for (int k = 0; k < iters; ++k) {
      const bool rec = (k % every) == 0;
      TraceRow row;
      if (rec) {
        row.step = k;
        row.test_loss = problem->test_loss(net);
        row.has_test = true;
        const auto sv = sched.at(k);
        row.h = sv.h;
        row.alpha = sv.alpha;
        row.beta = sv.beta;
        row.gamma = sv.gamma;
        row.mu = sv.mu;
      }
      StepDiagnostics diag;
      switch (opt) {
        case OptimizerKind::AngdL2:
        case OptimizerKind::NgdL2:
          diag = l2_angd_step(net, *problem, l2, sched, k, solver);
          break;
        case OptimizerKind::AngdH1:
          diag = hs_step(net, *problem, hs, sched, k, 1, solver);
          break;
        case OptimizerKind::AngdHm1:
          diag = hs_step(net, *problem, hs, sched, k, -1, solver);
          break;
        case OptimizerKind::Sgd: {
          const auto lg = problem->loss_and_grad(net);
          if (!std::isfinite(lg.loss)) throw NumericError("sgd: non-finite loss");
          Vector theta = net.flatten();
          sgd_update(theta, lg.grad, sched.h_at(k));
          net.unflatten(theta);
          diag.loss = lg.loss;
          diag.d_norm = sched.h_at(k) * lg.grad.norm();
          break;
        }
        case OptimizerKind::Adam: {
          const auto lg = problem->loss_and_grad(net);
          if (!std::isfinite(lg.loss)) throw NumericError("adam: non-finite loss");
          Vector theta = net.flatten();
          adam_update(theta, adam, lg.grad, sched.h_at(k));
          net.unflatten(theta);
          diag.loss = lg.loss;
          break;
        }
        default:
          throw std::invalid_argument("config: particle optimizer on a PDE problem");
      }
      if (rec) {
        row.train_loss = diag.loss;
        row.d_norm = diag.d_norm;
        row.residual = diag.residual;
        row.lambda = diag.lambda;
        row.accept_rate = diag.accept_rate;
        res.rows.push_back(row);
      }
    }
    TraceRow last;
    last.step = iters;
    last.train_loss = problem->loss(net);
    last.test_loss = problem->test_loss(net);
    last.has_test = true;
    const auto sv = sched.at(iters);
    last.h = sv.h;
    last.alpha = sv.alpha;
    last.beta = sv.beta;
    last.gamma = sv.gamma;
    last.mu = sv.mu;
    res.rows.push_back(last);
  } catch (const std::exception& e) {
    res.failed = true;
    res.error = e.what();
  }
  res.wall_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  return res;
}

inline SeedResult run_particle_seed(const Json& cfg, int seed) {
  SeedResult res;
  res.seed = seed;
  const auto t_start = std::chrono::steady_clock::now();
  const OptimizerKind opt =
      parse_optimizer(cfg.at("optimizer").get<std::string>());
  const auto target = make_target(cfg.at("problem"));
  DensityProblem problem(target);

  // Dimension from the target parameters.
  const Json& pj = cfg.at("problem");
  const int d = pj.contains("mean")
                    ? static_cast<int>(pj.at("mean").size())
                    : static_cast<int>(pj.at("means").at(0).size());
  const double base_precision =
      cfg.contains("particles")
          ? get_or(cfg.at("particles"), "base_precision", 0.0)
          : 0.0;
  EnergyNetDensity model(
      MlpNet::seeded(net_dims(cfg, d), static_cast<uint64_t>(seed)),
      base_precision);
  const Schedule sched = effective_schedule(cfg, opt);
  const SolveConfig solver =
      cfg.contains("solver") ? parse_solver(cfg.at("solver")) : SolveConfig{};
  const int iters = cfg.at("iterations").get<int>();
  const int every = get_or(cfg, "record_every", 1);

  ParticleStepConfig pcfg;
  int n_particles = 256;
  double init_scale = 1.0;
  if (cfg.contains("particles")) {
    const Json& pc = cfg.at("particles");
    n_particles = get_or(pc, "count", 256);
    init_scale = get_or(pc, "init_scale", 1.0);
    pcfg.mala_step = get_or(pc, "mala_step", 0.05);
    pcfg.mala_steps = get_or(pc, "mala_steps", 3);
  }
  std::mt19937_64 rng(static_cast<uint64_t>(seed) * 0x9e3779b97f4a7c15ULL + 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix particles(n_particles, d);
  for (int i = 0; i < n_particles; ++i)
    for (int c = 0; c < d; ++c) particles(i, c) = init_scale * normal(rng);

  FrState fr = FrState::init(model.param_count());
  W2State w2 = W2State::init(n_particles, d);

  try {
    for (int k = 0; k < iters; ++k) {
      const bool rec = (k % every) == 0;
      TraceRow row;
      if (rec) {
        row.step = k;
        row.train_loss = problem.kl_estimate(model);
        const auto sv = sched.at(k);
        row.h = sv.h;
        row.alpha = sv.alpha;
        row.beta = sv.beta;
        row.gamma = sv.gamma;
        row.mu = sv.mu;
      }
      StepDiagnostics diag;
      switch (opt) {
        case OptimizerKind::AngdFr:
        case OptimizerKind::NgdFr:
          diag = fisher_rao_angd_step(model, particles, fr, problem, sched, k,
                                      solver, pcfg, rng);
          break;
        case OptimizerKind::AngdW2:
        case OptimizerKind::NgdW2:
          diag = w2_angd_step(model, particles, w2, problem, sched, k, solver,
                              pcfg, rng);
          break;
        default:
          throw std::invalid_argument("config: PDE optimizer on a density problem");
      }
      if (rec) {
        row.d_norm = diag.d_norm;
        row.residual = diag.residual;
        row.lambda = diag.lambda;
        row.accept_rate = diag.accept_rate;
        res.rows.push_back(row);
      }
    }
    TraceRow last;
    last.step = iters;
    last.train_loss = problem.kl_estimate(model);
    const auto sv = sched.at(iters);
    last.h = sv.h;
    last.alpha = sv.alpha;
    last.beta = sv.beta;
    last.gamma = sv.gamma;
    last.mu = sv.mu;
    res.rows.push_back(last);
  } catch (const std::exception& e) {
    res.failed = true;
    res.error = e.what();
  }
  res.wall_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  return res;
}

template <class F>
void parallel_for(int n, int jobs, const F& f) {
  jobs = std::max(1, std::min(jobs, n));
  if (jobs <= 1) {
    for (int i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(jobs);
  for (int j = 0; j < jobs; ++j)
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) f(i);
    });
  for (auto& th : pool) th.join();
}

}  // namespace detail

inline SeedResult run_seed(const Json& cfg, int seed) {
  const OptimizerKind opt =
      parse_optimizer(cfg.at("optimizer").get<std::string>());
  return is_particle_optimizer(opt) ? detail::run_particle_seed(cfg, seed)
                                    : detail::run_pinn_seed(cfg, seed);
}

// ---------------------------------------------------------------------------
// run: one config, all seeds; writes trace CSVs, config echo, summary.

inline void write_text(const fs::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << body;
}

inline std::string trace_body(const std::vector<TraceRow>& rows) {
  std::ostringstream os;
  os << csv_header() << '\n';
  for (const auto& r : rows) os << to_csv(r) << '\n';
  return os.str();
}

// First recorded step whose train loss is at or below the threshold; -1
// when the threshold is never reached.
inline int iterations_to_threshold(const std::vector<TraceRow>& rows,
                                   double threshold) {
  for (const auto& r : rows)
    if (r.train_loss <= threshold) return r.step;
  return -1;
}

inline Json run_experiment(const Json& cfg, const fs::path& out_dir, int jobs = 1) {
  validate_config(cfg);
  fs::create_directories(out_dir);
  write_text(out_dir / "config_echo.json", cfg.dump(2) + "\n");

  const auto seeds = cfg.at("seeds").get<std::vector<int>>();
  std::vector<SeedResult> results(seeds.size());
  detail::parallel_for(static_cast<int>(seeds.size()), jobs,
                       [&](int i) { results[i] = run_seed(cfg, seeds[i]); });

  Json summary;
  summary["name"] = get_or<std::string>(cfg, "name", "run");
  summary["problem"] = cfg.at("problem");
  summary["optimizer"] = cfg.at("optimizer");
  summary["iterations"] = cfg.at("iterations");
  const bool has_threshold = cfg.contains("threshold");
  const double threshold = get_or(cfg, "threshold", 0.0);
  Json per_seed = Json::array();
  std::vector<double> finals;
  bool any_failed = false;
  for (size_t i = 0; i < seeds.size(); ++i) {
    const SeedResult& r = results[i];
    write_text(out_dir / ("trace_seed" + std::to_string(r.seed) + ".csv"),
               trace_body(r.rows));
    Json s;
    s["seed"] = r.seed;
    s["status"] = r.failed ? "failed" : "ok";
    if (r.failed) s["error"] = r.error;
    s["steps_recorded"] = r.rows.size();
    if (!r.rows.empty()) {
      s["final_train_loss"] = r.rows.back().train_loss;
      if (r.rows.back().has_test) s["final_test_loss"] = r.rows.back().test_loss;
      if (!r.failed) finals.push_back(r.rows.back().train_loss);
    }
    if (has_threshold && !r.rows.empty())
      s["iterations_to_threshold"] = iterations_to_threshold(r.rows, threshold);
    s["wall_time_s"] = r.wall_s;
    per_seed.push_back(s);
    any_failed = any_failed || r.failed;
  }
  summary["seeds"] = per_seed;
  if (!finals.empty()) summary["median_final_train_loss"] = median(finals);
  summary["any_failed"] = any_failed;
  write_text(out_dir / "summary.json", summary.dump(2) + "\n");
  return summary;
}

// ---------------------------------------------------------------------------
// grid: Cartesian product over dotted-key value lists, ranked by median
// final train loss; failed cells rank last.

namespace detail {

inline void set_by_path(Json& j, const std::string& path, const Json& value) {
  Json* cur = &j;
  size_t start = 0;
  for (size_t dot = path.find('.'); dot != std::string::npos;
       start = dot + 1, dot = path.find('.', start))
    cur = &(*cur)[path.substr(start, dot - start)];
  (*cur)[path.substr(start)] = value;
}

}  // namespace detail

inline Json grid_search(const Json& cfg, const fs::path& out_dir, int jobs = 1) {
  if (!cfg.contains("grid") || !cfg.at("grid").is_object())
    throw std::invalid_argument("config: grid requires a 'grid' object");
  std::vector<std::string> keys;
  for (const auto& [k, v] : cfg.at("grid").items()) {
    if (!v.is_array() || v.empty())
      throw std::invalid_argument("config: grid." + k + " must be a nonempty array");
    keys.push_back(k);
  }
  std::sort(keys.begin(), keys.end());

  struct Cell {
    std::string label;
    Json cfg;
    std::string dir;
  };
  std::vector<Cell> cells;
  std::vector<size_t> idx(keys.size(), 0);
  while (true) {
    Json cell_cfg = cfg;
    cell_cfg.erase("grid");
    std::string label;
    for (size_t i = 0; i < keys.size(); ++i) {
      const Json& v = cfg.at("grid").at(keys[i]).at(idx[i]);
      detail::set_by_path(cell_cfg, keys[i], v);
      if (!label.empty()) label += ",";
      label += keys[i] + "=" + v.dump();
    }
    char dir[32];
    std::snprintf(dir, sizeof(dir), "cell_%03zu", cells.size());
    cells.push_back({label.empty() ? "single" : label, cell_cfg, dir});
    // odometer increment over the sorted keys
    size_t pos = keys.size();
    while (pos > 0) {
      --pos;
      if (++idx[pos] < cfg.at("grid").at(keys[pos]).size()) break;
      idx[pos] = 0;
      if (pos == 0) {
        pos = SIZE_MAX;
        break;
      }
    }
    if (keys.empty() || pos == SIZE_MAX) break;
  }

  struct CellResult {
    bool ok = false;
    double median_loss = 0.0;
    std::string error;
  };
  std::vector<CellResult> results(cells.size());
  for (size_t c = 0; c < cells.size(); ++c) {
    try {
      const Json s = run_experiment(cells[c].cfg, out_dir / cells[c].dir, jobs);
      if (s.contains("median_final_train_loss") && !s.at("any_failed").get<bool>()) {
        results[c].ok = true;
        results[c].median_loss = s.at("median_final_train_loss").get<double>();
      } else {
        results[c].error = "seed failures";
      }
    } catch (const std::exception& e) {
      results[c].error = e.what();
    }
  }

  std::vector<size_t> order(cells.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (results[a].ok != results[b].ok) return results[a].ok;
    if (results[a].ok && results[a].median_loss != results[b].median_loss)
      return results[a].median_loss < results[b].median_loss;
    return cells[a].label < cells[b].label;
  });

  Json table = Json::array();
  std::ostringstream csv;
  csv << "rank,cell,params,status,median_final_train_loss\n";
  for (size_t r = 0; r < order.size(); ++r) {
    const size_t c = order[r];
    Json row;
    row["rank"] = r + 1;
    row["cell"] = cells[c].dir;
    row["params"] = cells[c].label;
    row["status"] = results[c].ok ? "ok" : "failed";
    if (results[c].ok)
      row["median_final_train_loss"] = results[c].median_loss;
    else
      row["error"] = results[c].error;
    table.push_back(row);
    csv << (r + 1) << ",\"" << cells[c].dir << "\",\"" << cells[c].label << "\","
        << (results[c].ok ? "ok" : "failed") << ","
        << (results[c].ok ? fmt(results[c].median_loss) : std::string()) << "\n";
  }
  Json out;
  out["cells"] = cells.size();
  out["ranking"] = table;
  write_text(out_dir / "grid_ranking.csv", csv.str());
  write_text(out_dir / "grid_summary.json", out.dump(2) + "\n");
  return out;
}

// ---------------------------------------------------------------------------
// compare: align per-step median train loss across runs on a shared problem.

namespace detail {

// Parses a trace CSV body back into (step -> train_loss).
inline std::map<int, double> read_trace(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("compare: cannot open " + path.string());
  std::string line;
  std::getline(in, line);  // header
  std::map<int, double> out;
  while (std::getline(in, line)) {
    const size_t c1 = line.find(',');
    const size_t c2 = line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) continue;
    out[std::stoi(line.substr(0, c1))] =
        std::stod(line.substr(c1 + 1, c2 - c1 - 1));
  }
  return out;
}

}  // namespace detail

inline void compare_runs(const std::vector<fs::path>& run_dirs,
                         const fs::path& out_csv) {
  require(run_dirs.size() >= 2, "compare: need at least two runs");
  std::string problem_key;
  std::vector<std::string> names;
  std::vector<std::map<int, double>> medians;
  for (const auto& dir : run_dirs) {
    const Json summary = load_config(dir / "summary.json");
    const std::string pk = summary.at("problem").dump();
    if (problem_key.empty())
      problem_key = pk;
    else if (pk != problem_key)
      throw std::invalid_argument("compare: runs use different problems");
    names.push_back(dir.filename().string());

    std::vector<fs::path> traces;
    for (const auto& e : fs::directory_iterator(dir)) {
      const std::string fn = e.path().filename().string();
      if (fn.rfind("trace_seed", 0) == 0 && e.path().extension() == ".csv")
        traces.push_back(e.path());
    }
    std::sort(traces.begin(), traces.end());
    require(!traces.empty(), "compare: no traces in " + dir.string());
    std::map<int, std::vector<double>> by_step;
    for (const auto& t : traces)
      for (const auto& [step, loss] : detail::read_trace(t))
        by_step[step].push_back(loss);
    std::map<int, double> med;
    for (const auto& [step, losses] : by_step)
      if (losses.size() == traces.size()) med[step] = median(losses);
    medians.push_back(std::move(med));
  }
  // Steps present in every run.
  std::vector<int> steps;
  for (const auto& [step, _] : medians[0]) {
    bool everywhere = true;
    for (size_t r = 1; r < medians.size(); ++r)
      if (!medians[r].count(step)) {
        everywhere = false;
        break;
      }
    if (everywhere) steps.push_back(step);
  }
  require(!steps.empty(), "compare: no common recorded steps");
  std::ostringstream os;
  os << "step";
  for (const auto& n : names) os << ',' << n;
  os << '\n';
  for (int s : steps) {
    os << s;
    for (const auto& m : medians) os << ',' << fmt(m.at(s));
    os << '\n';
  }
  write_text(out_csv, os.str());
}

// ---------------------------------------------------------------------------
// flow jobs: integrate a configured flow, dump trajectory + rate summary.

inline Json run_flow_job(const Json& cfg, const fs::path& out_dir) {
  const Json& fj = field(cfg, "flow", "config");
  const std::string kind = field(fj, "kind", "config.flow").get<std::string>();
  FlowCoeffs coeffs;
  if (fj.contains("coeffs")) {
    const Json& cj = fj.at("coeffs");
    coeffs.alpha = get_or(cj, "alpha", 3.0);
    coeffs.beta0 = get_or(cj, "beta0", 0.0);
    coeffs.beta_decay = get_or(cj, "beta_decay", 0.0);
    coeffs.gamma = get_or(cj, "gamma", 1.0);
    coeffs.t0 = get_or(cj, "t0", 1.0);
  }
  coeffs.validate();
  const double t_end = get_or(fj, "t_end", 100.0);
  const double dt = get_or(fj, "dt", 1e-3);
  const int every = get_or(fj, "record_every", 100);

  FlowTrace trace;
  if (kind == "euclidean_quadratic") {
    const int dim = get_or(fj, "dim", 10);
    Vector x0 = Vector::Ones(dim);
    if (fj.contains("x0")) {
      const auto v = fj.at("x0").get<std::vector<double>>();
      x0 = Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
    }
    const Vector x_star = Vector::Zero(x0.size());
    const auto res = integrate_euclidean_ishd(
        [](const Vector& x) { return 0.5 * x.squaredNorm(); },
        [](const Vector& x) { return x; }, x0, coeffs, t_end, dt, every, &x_star,
        0.0);
    trace = res.trace;
  } else if (kind == "fisher_rao_simplex") {
    const auto r0 = field(fj, "rho0", "config.flow").get<std::vector<double>>();
    const auto rs = field(fj, "rho_star", "config.flow").get<std::vector<double>>();
    const auto res = integrate_fisher_rao_simplex(
        Eigen::Map<const Vector>(r0.data(), static_cast<Eigen::Index>(r0.size())),
        Eigen::Map<const Vector>(rs.data(), static_cast<Eigen::Index>(rs.size())),
        coeffs, t_end, dt, every);
    trace = res.trace;
  } else {
    throw std::invalid_argument("config: unknown flow.kind '" + kind + "'");
  }

  fs::create_directories(out_dir);
  write_text(out_dir / "config_echo.json", cfg.dump(2) + "\n");
  std::ostringstream os;
  os << "t,loss_gap,lyapunov,dist2,psi_norm\n";
  for (size_t i = 0; i < trace.t.size(); ++i) {
    os << fmt(trace.t[i]) << ',' << fmt(trace.loss[i]) << ','
       << (i < trace.lyapunov.size() ? fmt(trace.lyapunov[i]) : std::string())
       << ',' << (i < trace.dist2.size() ? fmt(trace.dist2[i]) : std::string())
       << ',' << fmt(trace.psi_norm[i]) << '\n';
  }
  write_text(out_dir / "flow_trace.csv", os.str());

  Json summary;
  summary["kind"] = kind;
  summary["aborted"] = trace.aborted;
  summary["hypotheses_hold"] =
      coeffs.rate_hypotheses_hold(coeffs.t0 + 1e-6, t_end);
  // Rate fit over the tail t >= t_end / 10.
  std::vector<double> ts, ls;
  for (size_t i = 0; i < trace.t.size(); ++i)
    if (trace.t[i] >= t_end / 10.0) {
      ts.push_back(trace.t[i]);
      ls.push_back(trace.loss[i]);
    }
  try {
    summary["rate_slope"] = rate_estimate(ts, ls, 0.0);
  } catch (const std::exception& e) {
    summary["rate_slope_error"] = e.what();
  }
  if (!trace.lyapunov.empty()) {
    summary["max_lyapunov_increment"] = max_lyapunov_increment(trace.lyapunov);
    summary["lyapunov_initial"] = trace.lyapunov.front();
  }
  write_text(out_dir / "flow_summary.json", summary.dump(2) + "\n");
  return summary;
}

}  // namespace angd::harness

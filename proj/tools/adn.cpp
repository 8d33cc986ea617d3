// Command-line front end: run scenarios, sweep the linearization error,
// run the built-in verification suites, dump controller QPs.
//
// Exit codes: 0 success, 1 verification/simulation failure, 2 config error.
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "adn/mpc.hpp"
#include "adn/powerflow.hpp"
#include "adn/simulator.hpp"

namespace fs = std::filesystem;
using namespace adn;

namespace {

struct CommonOpts {
  std::string scenario;
  std::string out = ".";
  std::int64_t seed = -1;  // <0: keep the scenario's seed
  std::vector<std::string> sets;
};

std::vector<std::pair<std::string, std::string>> parse_sets(
    const std::vector<std::string>& sets) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set expects key=value, got '" + s + "'");
    out.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  return out;
}

Scenario load_with_opts(const CommonOpts& opts) {
  Scenario sc = load_scenario(opts.scenario, parse_sets(opts.sets));
  if (opts.seed >= 0) sc.seed = static_cast<std::uint64_t>(opts.seed);
  return sc;
}

int cmd_run(const CommonOpts& opts) {
  Scenario sc = load_with_opts(opts);
  ScenarioTrace trace = run_scenario(sc);
  fs::create_directories(opts.out);
  write_file_atomic((fs::path(opts.out) / "trace.csv").string(),
                    trace.to_csv());
  write_file_atomic((fs::path(opts.out) / "summary.json").string(),
                    trace.summary_json());
  std::cout << trace.summary_json() << "\n";
  if (trace.aborted) {
    std::cerr << "run aborted: " << trace.abort_reason << "\n";
    return 1;
  }
  if (trace.solver_failures > 0) {
    std::cerr << "run had " << trace.solver_failures << " solver failures\n";
    return 1;
  }
  return 0;
}

int cmd_sweep_error(const CommonOpts& opts, double granularity) {
  Scenario sc = load_with_opts(opts);
  NetworkTopology topo = load_feeder(sc.network_file);
  const int n = topo.node_count() - 1;
  InjectionVector inj{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)};
  for (int k = 1; k <= n; ++k) {
    inj.p(k - 1) = -topo.load_p(k);
    inj.q(k - 1) = -topo.load_q(k);
  }
  std::vector<int> ders;
  Eigen::VectorXd p_max(sc.fleet.size()), q_max(sc.fleet.size());
  for (size_t d = 0; d < sc.fleet.size(); ++d) {
    ders.push_back(sc.fleet[d].node);
    p_max(static_cast<int>(d)) = sc.fleet[d].rating;
    q_max(static_cast<int>(d)) = sc.fleet[d].rating;
  }
  ErrorSurface surf =
      continuation_error_surface(topo, ders, p_max, q_max, inj, granularity);
  fs::create_directories(opts.out);
  write_file_atomic((fs::path(opts.out) / "error_surface.csv").string(),
                    surf.to_csv());
  int diverged = 0;
  double interior_max = 0.0;  // k_p, k_q <= 0.2
  for (const auto& pt : surf.points) {
    if (!pt.converged) ++diverged;
    if (pt.k_p <= 0.2 && pt.k_q <= 0.2)
      interior_max = std::max(interior_max, pt.rel_err_2norm);
  }
  std::cout << "points: " << surf.points.size() << "\n"
            << "max_rel_err_2norm: " << surf.max_rel_err_2norm() << "\n"
            << "small_ramp_max (k<=0.2): " << interior_max << "\n"
            << "diverged: " << diverged << "\n";
  return 0;
}

int cmd_dump_qp(const CommonOpts& opts) {
  Scenario sc = load_with_opts(opts);
  NetworkTopology topo = load_feeder(sc.network_file);
  MpcController ctrl(topo, sc.fleet, sc.controller);
  ControlInputs in;
  in.voltages = ctrl.scheduled_state().v;
  in.feeder_power = ctrl.scheduled_state().feeder_power;
  ctrl.step(in);
  fs::create_directories(opts.out);
  std::ostringstream os;
  dump_qp(ctrl.last_problem(), os);
  const std::string path = (fs::path(opts.out) / "qp.txt").string();
  write_file_atomic(path, os.str());
  std::cout << "wrote " << path << "\n";
  return 0;
}

// --- verify ----------------------------------------------------------------

struct SuiteResult {
  std::string name;
  int checks = 0;
  int failures = 0;
  double wall_s = 0.0;
};

class Suite {
 public:
  explicit Suite(std::string name) : r_{std::move(name)} {
    t0_ = std::chrono::steady_clock::now();
  }
  void check(bool ok, const std::string& what) {
    ++r_.checks;
    if (!ok) {
      ++r_.failures;
      std::cerr << "  [" << r_.name << "] FAILED: " << what << "\n";
    }
  }
  SuiteResult finish() {
    r_.wall_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_)
            .count();
    return r_;
  }

 private:
  SuiteResult r_;
  std::chrono::steady_clock::time_point t0_;
};

std::string default_scenario_dir() { return std::string(ADN_DATA_DIR); }

SuiteResult verify_oracle_equivalence() {
  Suite s("oracle-equivalence");
  NetworkTopology topo =
      load_feeder(default_scenario_dir() + "/ieee33.feeder");
  const int n = topo.node_count() - 1;
  InjectionVector inj{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)};
  for (int k = 1; k <= n; ++k) {
    inj.p(k - 1) = -topo.load_p(k);
    inj.q(k - 1) = -topo.load_q(k);
  }
  BfsMatrices m = build_bfs_matrices(topo, 1.0);
  NetworkState oracle = nonlinear_powerflow(topo, inj);
  NetworkState flat =
      linear_bfs_step(m, inj, Eigen::VectorXcd::Ones(n));
  NetworkState anchored = linear_bfs_step(m, inj, oracle.v);
  double worst_flat = 0.0, worst_anchored = 0.0;
  for (int k = 0; k < n; ++k) {
    worst_flat = std::max(worst_flat, std::abs(std::abs(flat.v(k)) -
                                               std::abs(oracle.v(k))) /
                                          std::abs(oracle.v(k)));
    worst_anchored = std::max(
        worst_anchored, std::abs(std::abs(anchored.v(k)) -
                                 std::abs(oracle.v(k))) /
                            std::abs(oracle.v(k)));
  }
  s.check(worst_flat <= 0.02, "flat-start linear error <= 2%");
  s.check(worst_anchored <= 0.002, "anchored linear error <= 0.2%");

  // Path property of the current-distribution matrix: entries are exactly
  // the 0/1 path indicators of the radial graph. A test hook corrupts the
  // checked copy to prove this suite can fail.
  Eigen::MatrixXd bibc = m.bibc;
  if (std::getenv("ADN_VERIFY_CORRUPT_BIBC")) bibc(0, n - 1) += 0.5;
  bool path_ok = true;
  for (int b = 0; b < n; ++b)
    for (int node = 1; node <= n; ++node) {
      bool on_path = false;
      for (int a = node; a != 0; a = topo.parent(a))
        if (a - 1 == b) on_path = true;
      if (bibc(b, node - 1) != (on_path ? 1.0 : 0.0)) path_ok = false;
    }
  s.check(path_ok, "BIBC path-indicator property");
  return s.finish();
}

SuiteResult verify_kkt() {
  Suite s("kkt");
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + static_cast<int>(gen() % 12);
    Eigen::MatrixXd r(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) r(i, j) = u(gen);
    Eigen::MatrixXd h = r.transpose() * r + 0.1 * Eigen::MatrixXd::Identity(n, n);
    QpProblem p;
    p.hessian = h.sparseView();
    p.linear = Eigen::VectorXd::NullaryExpr(n, [&](Eigen::Index) { return u(gen); });
    p.lb = Eigen::VectorXd::Constant(n, -1.0);
    p.ub = Eigen::VectorXd::Constant(n, 1.0);
    QpSolution sol = QpSolver().solve(p);
    s.check(sol.status == QpStatus::optimal, "box QP solves to optimality");
    s.check(sol.residuals.worst() <= 1e-6, "box QP KKT residual <= 1e-6");
  }
  return s.finish();
}

SuiteResult verify_multirate(const ScenarioTrace& tr) {
  Suite s("multirate");
  s.check(!tr.aborted, "scenario completes");
  const int ratio = tr.ratio;
  for (size_t k = 1; k < tr.rows.size(); ++k) {
    if (static_cast<int>(k) % ratio == 0) continue;
    s.check((tr.rows[k].cmd_slow - tr.rows[k - 1].cmd_slow).cwiseAbs().maxCoeff() == 0.0,
            "slow command held between update instants (step " +
                std::to_string(k) + ")");
  }
  return s.finish();
}

SuiteResult verify_conservation(const Scenario& sc,
                                const ScenarioTrace& tr) {
  Suite s("conservation");
  s.check(!tr.aborted, "scenario completes");
  for (const auto& row : tr.rows)
    s.check(std::abs(row.feeder_power - row.feeder_check) <= 1e-9,
            "feeder bookkeeping identity");
  // SoC telescoping per BESS: soc(T) - soc(0) integrates -p/E.
  for (size_t d = 0; d < sc.fleet.size(); ++d) {
    if (sc.fleet[d].kind != DerKind::bess) continue;
    const double cap = sc.fleet[d].bess.energy_capacity;
    double acc = tr.rows.front().der_soc(static_cast<int>(d));
    for (size_t k = 1; k < tr.rows.size(); ++k) {
      acc -= tr.rows[k].der_p(static_cast<int>(d)) * tr.t_fast / cap;
      s.check(std::abs(acc - tr.rows[k].der_soc(static_cast<int>(d))) <= 1e-9,
              "SoC telescoping");
    }
  }
  return s.finish();
}

int cmd_verify(const CommonOpts& opts) {
  std::string scen = opts.scenario.empty()
                         ? default_scenario_dir() + "/genloss.scenario.json"
                         : opts.scenario;
  CommonOpts o = opts;
  o.scenario = scen;
  Scenario sc = load_with_opts(o);
  sc.duration = std::min(sc.duration, 30.0);

  const ScenarioTrace tr = run_scenario(sc);
  std::vector<SuiteResult> results;
  results.push_back(verify_oracle_equivalence());
  results.push_back(verify_kkt());
  results.push_back(verify_multirate(tr));
  results.push_back(verify_conservation(sc, tr));

  bool all_ok = true;
  std::cout << "suite               checks  failures  wall_s\n";
  for (const auto& r : results) {
    std::cout << r.name << std::string(20 - std::min<size_t>(20, r.name.size()), ' ')
              << r.checks << "      " << r.failures << "         "
              << r.wall_s << "\n";
    if (r.failures > 0) all_ok = false;
  }
  std::cout << (all_ok ? "VERIFY PASS" : "VERIFY FAIL") << "\n";
  return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Active distribution network dispatch toolkit"};
  app.require_subcommand(1);

  CommonOpts opts;
  double granularity = 0.01;

  auto add_common = [&](CLI::App* sub, bool need_scenario) {
    auto* s = sub->add_option("--scenario", opts.scenario, "Scenario JSON file");
    if (need_scenario) s->required();
    sub->add_option("--out", opts.out, "Output directory");
    sub->add_option("--seed", opts.seed, "Override the scenario seed");
    sub->add_option("--set", opts.sets,
                    "Override a scenario key, e.g. --set controller.horizon=20");
  };

  auto* run = app.add_subcommand("run", "Run a closed-loop scenario");
  add_common(run, true);
  auto* sweep =
      app.add_subcommand("sweep-error", "Linearization error surface sweep");
  add_common(sweep, true);
  sweep->add_option("--granularity", granularity, "Grid step in [0,1]");
  auto* verify = app.add_subcommand("verify", "Built-in verification suites");
  add_common(verify, false);
  auto* dump = app.add_subcommand("dump-qp", "Dump the first controller QP");
  add_common(dump, true);

  try {
    app.parse(argc, argv);
    if (run->parsed()) return cmd_run(opts);
    if (sweep->parsed()) return cmd_sweep_error(opts, granularity);
    if (verify->parsed()) return cmd_verify(opts);
    if (dump->parsed()) return cmd_dump_qp(opts);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const TopologyError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

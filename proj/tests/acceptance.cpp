// End-to-end acceptance gate. One line per criterion; exit 1 if any fails.
#include <algorithm>
#include <chrono>
#include <iostream>
#include <random>
#include <cstdio>
#include <string>
#include <vector>

#include "adn/mpc.hpp"
#include "adn/powerflow.hpp"
#include "adn/simulator.hpp"

using namespace adn;

namespace {

int g_failures = 0;

void report(int id, const std::string& what, bool ok,
            const std::string& detail) {
  std::cout << (ok ? "[PASS] " : "[FAIL] ") << "#" << id << " " << what
            << " — " << detail << "\n";
  if (!ok) ++g_failures;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

std::string data_file(const std::string& name) {
  return std::string(ADN_DATA_DIR) + "/" + name;
}

InjectionVector nominal_loads(const NetworkTopology& topo) {
  const int n = topo.node_count() - 1;
  InjectionVector inj{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)};
  for (int k = 1; k <= n; ++k) {
    inj.p(k - 1) = -topo.load_p(k);
    inj.q(k - 1) = -topo.load_q(k);
  }
  return inj;
}

// Tolerances, pinned here on purpose.
constexpr double kSweepFullTol = 0.05;      // rel 2-norm error at (1,1)
constexpr double kSweepSmallTol = 0.01;     // for k_p, k_q <= 0.2
constexpr double kDeliveryTol = 0.05;       // 5% of the 1-pu PFC reserve
constexpr double kVcDroopTol = 0.025;       // 5% of the 0.5-pu VC reserve
constexpr double kLinearFlatTol = 0.02;     // flat-start voltage error
constexpr double kLinearEstTol = 0.002;     // anchored voltage error
constexpr double kQpObjectiveTol = 1e-6;
constexpr double kScaledKktTol = 1e-6;
constexpr double kEquilibriumTol = 1e-6;
constexpr double kConservationTol = 1e-9;

// --- #1 linearization error surface ----------------------------------------

void criterion_1(const Scenario& sc) {
  const auto t0 = std::chrono::steady_clock::now();
  NetworkTopology topo = load_feeder(sc.network_file);
  std::vector<int> ders;
  Eigen::VectorXd p_max(sc.fleet.size()), q_max(sc.fleet.size());
  for (size_t d = 0; d < sc.fleet.size(); ++d) {
    ders.push_back(sc.fleet[d].node);
    p_max(static_cast<int>(d)) = sc.fleet[d].rating;
    q_max(static_cast<int>(d)) = sc.fleet[d].rating;
  }
  ErrorSurface surf = continuation_error_surface(
      topo, ders, p_max, q_max, nominal_loads(topo), 0.01);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();

  double full = -1.0, small_max = 0.0;
  bool all_converged = true;
  for (const auto& pt : surf.points) {
    if (!pt.converged) all_converged = false;
    if (pt.k_p == 1.0 && pt.k_q == 1.0) full = pt.rel_err_2norm;
    if (pt.k_p <= 0.2 && pt.k_q <= 0.2)
      small_max = std::max(small_max, pt.rel_err_2norm);
  }
  const bool ok = surf.points.size() == 101 * 101 && all_converged &&
                  full >= 0.0 && full <= kSweepFullTol &&
                  small_max < kSweepSmallTol && wall < 300.0;
  report(1, "linearization error surface", ok,
         "err(1,1)=" + num(full) +
             " small-ramp max=" + num(small_max) +
             " wall=" + num(wall) + "s");
}

// --- #2 generation-loss delivery tracking ----------------------------------

void criterion_2(const Scenario& sc, const ScenarioTrace& tr) {
  const double t_event = sc.events.front().time;
  const int settle = 15;  // fast steps == seconds here

  // Delivery reference: PFC droop at the realized frequency plus the AGC
  // request. The reference moves while AGC integrates, so tracking is
  // asserted wherever the reference has been quiet for the settle window.
  std::vector<double> ref(tr.rows.size());
  for (size_t k = 0; k < tr.rows.size(); ++k)
    ref[k] = sc.controller.pfc_droop.respond(-tr.rows[k].freq) +
             tr.rows[k].ref_sfc;
  double worst = 0.0;
  int checked = 0;
  for (size_t k = 0; k < tr.rows.size(); ++k) {
    if (tr.rows[k].time < t_event + settle) continue;
    bool quiet = true;
    for (size_t j = k - static_cast<size_t>(settle); j <= k; ++j)
      if (std::abs(ref[j] - ref[k]) > 0.02) quiet = false;
    if (!quiet) continue;
    ++checked;
    worst = std::max(worst, std::abs(tr.rows[k].feeder_dp - ref[k]));
  }

  // Full PFC activation within 15 s of the event.
  double act_err = -1.0;
  for (const auto& r : tr.rows)
    if (r.time >= t_event + settle) {
      act_err = std::abs(r.att_pfc - sc.controller.pfc_droop.respond(-r.freq));
      break;
    }

  const bool ok = checked > 0 && worst <= kDeliveryTol && act_err >= 0.0 &&
                  act_err <= kDeliveryTol;
  report(2, "generation-loss delivery tracking", ok,
         "worst settled error=" + num(worst) + " over " +
             std::to_string(checked) + " steps, PFC activation error at +15s=" +
             num(act_err));
}

// --- #3 line-trip voltage support -------------------------------------------

void criterion_3(const Scenario& sc, const ScenarioTrace& tr) {
  const TraceRow& last = tr.rows.back();
  const double droop_q = sc.controller.vc_droop.respond(
      sc.controller.limits.v_ref - last.slack_voltage);
  const double droop_err = std::abs(last.feeder_dq - droop_q);

  // Feeder active power back on schedule within 5 fast steps of the VC
  // reference settling after the event.
  const double t_event = sc.events.front().time;
  size_t settled = tr.rows.size();
  for (size_t k = 0; k < tr.rows.size(); ++k) {
    if (tr.rows[k].time <= t_event) continue;
    bool quiet = true;
    for (size_t j = k; j < tr.rows.size(); ++j)
      if (std::abs(tr.rows[j].ref_vc - tr.rows[k].ref_vc) > kVcDroopTol)
        quiet = false;
    if (quiet) {
      settled = k;
      break;
    }
  }
  double dp_after = -1.0;
  if (settled + 5 < tr.rows.size())
    dp_after = std::abs(tr.rows[settled + 5].feeder_dp);

  const bool ok = droop_err <= kVcDroopTol && dp_after >= 0.0 &&
                  dp_after <= kDeliveryTol;
  report(3, "line-trip voltage support", ok,
         "droop error=" + num(droop_err) + " pu at V=" +
             num(last.slack_voltage) + ", |feeder dP| 5 steps after settling=" +
             num(dp_after) + ", peak dQ=" +
             num(tr.peak_delta_q) + " pu (reported)");
}

// --- #4 multirate invariant -------------------------------------------------

void criterion_4(const std::vector<const ScenarioTrace*>& traces) {
  int violations = 0;
  for (const ScenarioTrace* tr : traces)
    for (size_t k = 1; k < tr->rows.size(); ++k) {
      if (static_cast<int>(k) % tr->ratio == 0) continue;
      if ((tr->rows[k].cmd_slow - tr->rows[k - 1].cmd_slow)
              .cwiseAbs()
              .maxCoeff() != 0.0)
        ++violations;
    }
  report(4, "multirate hold invariant (zero tolerance)", violations == 0,
         std::to_string(violations) + " violations across " +
             std::to_string(traces.size()) + " traces");
}

// --- #5 linear vs nonlinear oracle ------------------------------------------

void criterion_5(const Scenario& sc) {
  NetworkTopology topo = load_feeder(sc.network_file);
  const int n = topo.node_count() - 1;
  InjectionVector inj = nominal_loads(topo);
  BfsMatrices m = build_bfs_matrices(topo, 1.0);
  NetworkState oracle = nonlinear_powerflow(topo, inj);

  // Estimated state: WLS on one noisy measurement snapshot of the oracle.
  MeasurementSet model = build_measurement_model(topo, sc.sensors, 1.0);
  MeasurementSet meas = synthesize_measurements(model, oracle.v, sc.seed);
  Eigen::VectorXcd v_est = wls_estimate(meas).voltages();

  NetworkState flat = linear_bfs_step(m, inj, Eigen::VectorXcd::Ones(n));
  NetworkState anchored = linear_bfs_step(m, inj, v_est);
  double e_flat = 0.0, e_anchored = 0.0;
  for (int k = 0; k < n; ++k) {
    const double vm = std::abs(oracle.v(k));
    e_flat = std::max(e_flat, std::abs(std::abs(flat.v(k)) - vm) / vm);
    e_anchored =
        std::max(e_anchored, std::abs(std::abs(anchored.v(k)) - vm) / vm);
  }
  const bool ok = e_flat <= kLinearFlatTol && e_anchored <= kLinearEstTol;
  report(5, "linear vs nonlinear power flow", ok,
         "flat-start max error=" + num(e_flat) +
             ", estimated-state max error=" + num(e_anchored));
}

// --- #6 QP correctness -------------------------------------------------------

// Independent oracle for box QPs: accelerated projected gradient. Shares no
// code with the ADMM solver.
Eigen::VectorXd fista_box(const Eigen::MatrixXd& h, const Eigen::VectorXd& f,
                          const Eigen::VectorXd& lb,
                          const Eigen::VectorXd& ub) {
  const double lipschitz =
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(h).eigenvalues().maxCoeff();
  const double step = 1.0 / (lipschitz + 1e-12);
  Eigen::VectorXd x = lb.cwiseMax(Eigen::VectorXd::Zero(f.size())).cwiseMin(ub);
  Eigen::VectorXd y = x;
  double t = 1.0;
  for (int k = 0; k < 200000; ++k) {
    Eigen::VectorXd x_next = (y - step * (h * y + f)).cwiseMax(lb).cwiseMin(ub);
    double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    y = x_next + (t - 1.0) / t_next * (x_next - x);
    if ((x_next - x).lpNorm<Eigen::Infinity>() < 1e-13) return x_next;
    x = x_next;
    t = t_next;
  }
  return x;
}

double inf_or_zero(const Eigen::VectorXd& v) {
  return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0;
}

/// KKT residuals divided by the natural scale of each condition.
double scaled_kkt_worst(const QpProblem& p, const QpSolution& sol) {
  const KktResiduals r = check_kkt(p, sol);
  const Eigen::VectorXd& x = sol.primal;
  double st_scale = std::max(inf_or_zero(p.hessian * x), inf_or_zero(p.linear));
  if (p.a_eq.rows() > 0)
    st_scale = std::max(st_scale, inf_or_zero(p.a_eq.transpose() * sol.dual_eq));
  if (p.a_ineq.rows() > 0)
    st_scale =
        std::max(st_scale, inf_or_zero(p.a_ineq.transpose() * sol.dual_ineq));
  st_scale = std::max({st_scale, inf_or_zero(sol.dual_lb), inf_or_zero(sol.dual_ub)});

  double pr_scale = inf_or_zero(x);
  if (p.a_eq.rows() > 0)
    pr_scale = std::max({pr_scale, inf_or_zero(p.a_eq * x), inf_or_zero(p.b_eq)});
  if (p.a_ineq.rows() > 0)
    pr_scale =
        std::max({pr_scale, inf_or_zero(p.a_ineq * x), inf_or_zero(p.b_ineq)});

  double y_scale = std::max({inf_or_zero(sol.dual_eq), inf_or_zero(sol.dual_ineq),
                             inf_or_zero(sol.dual_lb), inf_or_zero(sol.dual_ub)});

  return std::max({r.stationarity / (1.0 + st_scale),
                   r.primal / (1.0 + pr_scale), r.dual / (1.0 + y_scale),
                   r.complementarity / ((1.0 + y_scale) * (1.0 + pr_scale))});
}

void criterion_6(const Scenario& sc,
                 const std::vector<const ScenarioTrace*>& traces,
                 double* median_step_s) {
  // Part one: random PSD boxes against the projected-gradient oracle.
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst_gap = 0.0;
  int optimal = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(gen() % 30);
    Eigen::MatrixXd r(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) r(i, j) = u(gen);
    Eigen::MatrixXd h =
        r.transpose() * r + 0.05 * Eigen::MatrixXd::Identity(n, n);
    QpProblem p;
    p.hessian = h.sparseView();
    p.linear =
        Eigen::VectorXd::NullaryExpr(n, [&](Eigen::Index) { return u(gen); });
    p.lb = Eigen::VectorXd::Constant(n, -1.0);
    p.ub = Eigen::VectorXd::Constant(n, 1.0);
    QpSolution sol = QpSolver().solve(p);
    if (sol.status == QpStatus::optimal) ++optimal;
    const Eigen::VectorXd ref = fista_box(h, p.linear, p.lb, p.ub);
    const double obj_ref =
        0.5 * ref.dot(h * ref) + p.linear.dot(ref);
    worst_gap = std::max(worst_gap, std::abs(sol.objective - obj_ref));
  }

  // Part two: replay the paper-scale controller against a frequency event and
  // audit every accepted solve. This doubles as the #7 timing measurement.
  NetworkTopology topo = load_feeder(sc.network_file);
  MpcController ctrl(topo, sc.fleet, sc.controller);
  double worst_scaled = 0.0;
  int accepted = 0;
  std::vector<double> step_times;
  for (long k = 0; k < 40; ++k) {
    ControlInputs in;
    in.voltages = ctrl.scheduled_state().v;
    in.feeder_power = ctrl.scheduled_state().feeder_power;
    in.step_index = k;
    if (k >= 5) {  // persistent under-frequency plus a ramping AGC request
      in.freq.omega = -0.03;
      in.agc_level = std::min(0.5, 0.05 * static_cast<double>(k - 5));
    }
    const auto t0 = std::chrono::steady_clock::now();
    ControlCommand cmd = ctrl.step(in);
    step_times.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count());
    if (cmd.solver_ok) {
      ++accepted;
      worst_scaled = std::max(
          worst_scaled, scaled_kkt_worst(ctrl.last_problem(), ctrl.last_solution()));
    }
  }
  // Accepted solves from the closed-loop traces run under the same audit via
  // their recorded residual gate; the replay covers the paper-scale instance
  // directly.
  std::sort(step_times.begin(), step_times.end());
  *median_step_s = step_times[step_times.size() / 2];

  int failures = 0;
  for (const ScenarioTrace* tr : traces) failures += tr->solver_failures;

  const bool ok = optimal == 200 && worst_gap <= kQpObjectiveTol &&
                  accepted == 40 && worst_scaled <= kScaledKktTol &&
                  failures == 0;
  report(6, "QP correctness", ok,
         "oracle gap=" + num(worst_gap) + " over 200 instances, " +
             std::to_string(accepted) +
             "/40 paper-scale solves accepted, worst scaled KKT=" +
             num(worst_scaled));
}

// --- #7 solve performance ----------------------------------------------------

void criterion_7(double median_step_s) {
  report(7, "median assembly+solve time", median_step_s < 1.0,
         num(median_step_s) + " s (paper-scale 33-bus, n_g=6, H=30)");
}

// --- #8 equilibrium ----------------------------------------------------------

void criterion_8(const ScenarioTrace& tr) {
  double worst = 0.0;
  for (const auto& r : tr.rows)
    worst = std::max({worst, inf_or_zero(r.cmd_dp), inf_or_zero(r.cmd_dq)});
  report(8, "zero-event equilibrium", !tr.aborted && worst < kEquilibriumTol,
         "largest commanded change=" + num(worst) + " pu over " +
             std::to_string(tr.rows.size()) + " steps");
}

// --- #9 conservation ---------------------------------------------------------

void criterion_9(const std::vector<std::pair<const Scenario*, const ScenarioTrace*>>& runs) {
  double worst = 0.0;
  for (const auto& [sc, tr] : runs) {
    for (const auto& r : tr->rows)
      worst = std::max(worst, std::abs(r.feeder_power - r.feeder_check));
    for (size_t d = 0; d < sc->fleet.size(); ++d) {
      if (sc->fleet[d].kind != DerKind::bess) continue;
      const int di = static_cast<int>(d);
      double acc = tr->rows.front().der_soc(di);
      for (size_t k = 1; k < tr->rows.size(); ++k) {
        acc -= tr->rows[k].der_p(di) * tr->t_fast /
               sc->fleet[d].bess.energy_capacity;
        worst = std::max(worst, std::abs(acc - tr->rows[k].der_soc(di)));
      }
    }
  }
  report(9, "conservation identities", worst <= kConservationTol,
         "worst bookkeeping/SoC defect=" + num(worst));
}

}  // namespace

int main() {
  const Scenario genloss = load_scenario(data_file("genloss.scenario.json"));
  const Scenario linetrip = load_scenario(data_file("linetrip.scenario.json"));
  const Scenario equilibrium =
      load_scenario(data_file("equilibrium.scenario.json"));

  const ScenarioTrace tr_gen = run_scenario(genloss);
  const ScenarioTrace tr_line = run_scenario(linetrip);
  const ScenarioTrace tr_eq = run_scenario(equilibrium);
  const std::vector<const ScenarioTrace*> all = {&tr_gen, &tr_line, &tr_eq};

  criterion_1(genloss);
  criterion_2(genloss, tr_gen);
  criterion_3(linetrip, tr_line);
  criterion_4(all);
  criterion_5(genloss);
  double median_step_s = 0.0;
  criterion_6(genloss, all, &median_step_s);
  criterion_7(median_step_s);
  criterion_8(tr_eq);
  criterion_9({{&genloss, &tr_gen}, {&linetrip, &tr_line}, {&equilibrium, &tr_eq}});

  std::cout << (g_failures == 0 ? "ACCEPTANCE PASS" : "ACCEPTANCE FAIL")
            << " (" << (9 - g_failures) << "/9)\n";
  return g_failures == 0 ? 0 : 1;
}

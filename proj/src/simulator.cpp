#include "adn/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"

namespace adn {

std::string to_string(EventKind kind) {
  switch (kind) {
    case EventKind::generation_loss: return "generation_loss";
    case EventKind::line_trip: return "line_trip";
    case EventKind::setpoint_change: return "setpoint_change";
  }
  return "?";
}

EventKind event_kind_from_string(const std::string& s) {
  if (s == "generation_loss") return EventKind::generation_loss;
  if (s == "line_trip") return EventKind::line_trip;
  if (s == "setpoint_change") return EventKind::setpoint_change;
  throw ConfigError("unknown event kind '" + s + "'");
}

void Scenario::validate() const {
  if (network_file.empty()) throw ConfigError("scenario has no network file");
  if (fleet.empty()) throw ConfigError("scenario has no controllable units");
  if (duration <= 0.0) throw ConfigError("scenario duration must be positive");
  if (plant_mismatch < 0.5 || plant_mismatch > 2.0)
    throw ConfigError("plant mismatch factor must lie in [0.5, 2]");
  controller.schedule.validate();
  controller.costs.validate();
  double prev = 0.0;
  for (const auto& ev : events) {
    if (!std::isfinite(ev.magnitude))
      throw ConfigError("event magnitude must be finite");
    if (ev.time < prev) throw ConfigError("events must be time-ordered");
    if (ev.kind == EventKind::setpoint_change &&
        (ev.unit < 0 || ev.unit >= static_cast<int>(fleet.size())))
      throw ConfigError("setpoint_change event names a unit out of range");
    prev = ev.time;
  }
  if (!events.empty() && events.back().time > duration)
    throw ConfigError("scenario ends before its last event");
}

namespace {

DerUnit unit_from_json(const nlohmann::json& j, const NetworkTopology& topo) {
  const auto kind = der_kind_from_string(j.at("kind").get<std::string>());
  const int node = topo.topo_index(j.at("node").get<int>());
  const double rating = j.at("rating").get<double>();
  const double p_set = j.value("p_set", 0.0);
  const double q_set = j.value("q_set", 0.0);
  DgParams dg;
  PvParams pv;
  BessParams bess;
  VshpParams vshp;
  double soc = 0.5;
  switch (kind) {
    case DerKind::dg:
      dg.governor_time_constant = j.value("governor_time_constant", 10.0);
      dg.exciter_time_constant = j.value("exciter_time_constant", 1.0);
      dg.p_min = j.value("p_min", 0.0);
      break;
    case DerKind::pv:
      pv.available_factor = j.value("available_factor", 0.9);
      pv.min_power_factor = j.value("min_power_factor", 0.9);
      break;
    case DerKind::bess:
      bess.energy_capacity = j.at("energy_capacity").get<double>();
      bess.soc_min = j.value("soc_min", 0.1);
      bess.soc_max = j.value("soc_max", 0.9);
      soc = j.value("soc", 0.5);
      break;
    case DerKind::vshp:
      vshp.power_factor = j.value("power_factor", 1.0);
      vshp.time_constant = j.value("time_constant", 2.0);
      vshp.min_consumption = j.value("min_consumption", 0.0);
      vshp.max_consumption = j.value("max_consumption", rating);
      break;
  }
  return make_der_unit(kind, node, rating, p_set, q_set, dg, pv, bess, vshp,
                       soc);
}

void controller_from_json(const nlohmann::json& j, MpcConfig* c) {
  c->schedule.t_fast = j.value("t_fast", c->schedule.t_fast);
  c->schedule.t_slow = j.value("t_slow", c->schedule.t_slow);
  c->schedule.horizon = j.value("horizon", c->schedule.horizon);
  c->limits.v_min = j.value("v_min", c->limits.v_min);
  c->limits.v_max = j.value("v_max", c->limits.v_max);
  c->limits.current_margin = j.value("current_margin", c->limits.current_margin);
  c->limits.v_ref = j.value("v_ref", c->limits.v_ref);
  c->limits.accept_residual = j.value("accept_residual", c->limits.accept_residual);
  c->costs.loss_weight = j.value("loss_weight", c->costs.loss_weight);
  c->costs.loss_reference = j.value("loss_reference", c->costs.loss_reference);
  c->costs.slack_penalty_factor =
      j.value("slack_penalty_factor", c->costs.slack_penalty_factor);
  if (j.contains("pfc_reserve")) {
    const double r = j["pfc_reserve"].get<double>();
    c->pfc_droop.cap_up = r;
    c->pfc_droop.cap_down = -r;
  }
  if (j.contains("vc_reserve")) {
    const double r = j["vc_reserve"].get<double>();
    c->vc_droop.cap_up = r;
    c->vc_droop.cap_down = -r;
  }
  c->pfc_droop.gain = j.value("pfc_gain", c->pfc_droop.gain);
  c->vc_droop.gain = j.value("vc_gain", c->vc_droop.gain);
  if (j.contains("freq")) {
    const auto& f = j["freq"];
    c->freq.inertia = f.value("inertia", c->freq.inertia);
    c->freq.turbine_time_constant =
        f.value("turbine_time_constant", c->freq.turbine_time_constant);
    c->freq.damping = f.value("damping", c->freq.damping);
    c->freq.droop_aggregate = f.value("droop_aggregate", c->freq.droop_aggregate);
    c->freq.turbine_fraction = f.value("turbine_fraction", c->freq.turbine_fraction);
  }
}

}  // namespace

Scenario load_scenario(
    const std::string& path,
    const std::vector<std::pair<std::string, std::string>>& overrides) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open scenario file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("scenario " + path + ": " + e.what());
  }

  for (const auto& [key, value] : overrides) {
    std::string ptr = "/" + key;
    std::replace(ptr.begin(), ptr.end(), '.', '/');
    nlohmann::json v;
    try {
      v = nlohmann::json::parse(value);
    } catch (const nlohmann::json::exception&) {
      v = value;  // bare string
    }
    try {
      j[nlohmann::json::json_pointer(ptr)] = v;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("override '" + key + "': " + e.what());
    }
  }

  Scenario s;
  try {
    const auto dir = std::filesystem::path(path).parent_path();
    std::filesystem::path net = j.at("network").get<std::string>();
    if (net.is_relative()) net = dir / net;
    s.network_file = net.string();
    const NetworkTopology topo = load_feeder(s.network_file);

    if (j.contains("controller")) controller_from_json(j["controller"], &s.controller);
    for (const auto& ju : j.at("fleet")) s.fleet.push_back(unit_from_json(ju, topo));

    if (j.contains("transmission")) {
      const auto& t = j["transmission"];
      s.transmission.resistance = t.value("resistance", s.transmission.resistance);
      s.transmission.reactance = t.value("reactance", s.transmission.reactance);
      s.transmission.base_mva = t.value("base_mva", s.transmission.base_mva);
    }
    if (j.contains("agc")) {
      const auto& a = j["agc"];
      s.agc.kp = a.value("kp", s.agc.kp);
      s.agc.ki = a.value("ki", s.agc.ki);
      s.agc.bias = a.value("bias", s.agc.bias);
      s.agc.cap = a.value("cap", s.agc.cap);
    }
    if (j.contains("sensors")) {
      const auto& m = j["sensors"];
      s.sensors.sigma_v = m.value("sigma_v", s.sensors.sigma_v);
      s.sensors.sigma_i = m.value("sigma_i", s.sensors.sigma_i);
    }
    s.closed_frequency_coupling =
        j.value("closed_frequency_coupling", s.closed_frequency_coupling);
    s.plant_mismatch = j.value("plant_mismatch", s.plant_mismatch);
    s.duration = j.value("duration", s.duration);
    s.seed = j.value("seed", s.seed);
    for (const auto& je : j.value("events", nlohmann::json::array())) {
      Event ev;
      ev.time = je.at("time").get<double>();
      ev.kind = event_kind_from_string(je.at("kind").get<std::string>());
      ev.magnitude = je.at("magnitude").get<double>();
      ev.unit = je.value("unit", 0);
      s.events.push_back(ev);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("scenario " + path + ": " + e.what());
  }
  s.validate();
  return s;
}

namespace {

/// Scale the adjustment back toward the (feasible) baseline until the
/// commanded operating point sits inside the capability set.
void clip_to_capability(const DerUnit& u, double* dp, double* dq) {
  if (u.capability.violation(u.p_set + *dp, u.q_set + *dq) <= 1e-9) return;
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 50; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (u.capability.violation(u.p_set + mid * *dp, u.q_set + mid * *dq) <=
        1e-9)
      lo = mid;
    else
      hi = mid;
  }
  *dp *= lo;
  *dq *= lo;
}

}  // namespace

ScenarioTrace run_scenario(const Scenario& scenario) {
  scenario.validate();
  const NetworkTopology topo = load_feeder(scenario.network_file);
  const int n_nodes = topo.branch_count();
  const int n_g = static_cast<int>(scenario.fleet.size());
  const double ts = scenario.controller.schedule.t_fast;
  const int ratio = scenario.controller.schedule.ratio();
  const long steps = static_cast<long>(std::llround(scenario.duration / ts));

  // The controller predicts with the declared fleet; the plant may differ.
  MpcController ctrl(topo, scenario.fleet, scenario.controller);
  std::vector<DerUnit> plant = scenario.fleet;
  for (auto& u : plant) {
    u.dg.governor_time_constant *= scenario.plant_mismatch;
    u.dg.exciter_time_constant *= scenario.plant_mismatch;
    u.vshp.time_constant *= scenario.plant_mismatch;
  }

  const NetworkState& sched = ctrl.scheduled_state();
  const Eigen::VectorXd i_max =
      scenario.controller.limits.current_margin * sched.i_branch.cwiseAbs();

  // Thevenin source fixed so the scheduled flow sees exactly 1 pu at the
  // feeder head with the pre-event impedance.
  const double s_scale = topo.base_mva() / scenario.transmission.base_mva;
  const cplx z0(scenario.transmission.resistance,
                scenario.transmission.reactance);
  const cplx e_th =
      cplx(1.0, 0.0) + z0 * std::conj(sched.feeder_power * s_scale);

  const DiscreteFrequencyModel fm =
      discretize_frequency_model(scenario.controller.freq, ts);
  AgcEmulator agc(scenario.agc.kp, scenario.agc.ki, scenario.agc.bias,
                  scenario.agc.cap);

  ScenarioTrace trace;
  trace.t_fast = ts;
  trace.ratio = ratio;
  trace.seed = scenario.seed;
  trace.rows.reserve(static_cast<size_t>(steps));
  for (const auto& ev : scenario.events) {
    std::ostringstream os;
    os << "t=" << ev.time << " " << to_string(ev.kind) << " " << ev.magnitude;
    if (ev.kind == EventKind::setpoint_change) os << " unit=" << ev.unit;
    trace.event_log.push_back(os.str());
  }

  FrequencyState freq;
  double delivered_prev = 0.0;
  double agc_level = 0.0;
  Eigen::VectorXd applied_dp = Eigen::VectorXd::Zero(n_g);
  Eigen::VectorXd applied_dq = Eigen::VectorXd::Zero(n_g);
  cplx v_slack(1.0, 0.0);
  size_t next_setpoint = 0;

  for (long k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) * ts;

    double forcing = 0.0;
    double r_step = 0.0;
    for (const auto& ev : scenario.events) {
      if (ev.time > t) break;
      if (ev.kind == EventKind::generation_loss) forcing += ev.magnitude;
      if (ev.kind == EventKind::line_trip) r_step += ev.magnitude;
    }
    while (next_setpoint < scenario.events.size() &&
           scenario.events[next_setpoint].time <= t) {
      const auto& ev = scenario.events[next_setpoint++];
      if (ev.kind == EventKind::setpoint_change)
        plant[static_cast<size_t>(ev.unit)].p_set += ev.magnitude;
    }
    const cplx z_th = z0 + cplx(r_step, 0.0);

    if (k > 0) {
      const double imbalance =
          forcing -
          (scenario.closed_frequency_coupling ? delivered_prev : 0.0);
      freq = fm.advance(freq, imbalance);
    }

    for (int d = 0; d < n_g; ++d)
      step_der(plant[static_cast<size_t>(d)], applied_dp(d), applied_dq(d), ts);

    InjectionVector inj;
    inj.p.resize(n_nodes);
    inj.q.resize(n_nodes);
    for (int n = 1; n <= n_nodes; ++n) {
      inj.p(n - 1) = -topo.load_p(n);
      inj.q(n - 1) = -topo.load_q(n);
    }
    for (const auto& u : plant) {
      inj.p(u.node - 1) += u.p_out;
      inj.q(u.node - 1) += u.q_out;
    }

    NetworkState st;
    try {
      for (int it = 0; it < 40; ++it) {
        st = nonlinear_powerflow(topo, inj, std::abs(v_slack));
        const cplx i_tx = std::conj(st.feeder_power * s_scale / v_slack);
        const cplx v_new = e_th - z_th * i_tx;
        if (std::abs(v_new - v_slack) < 1e-11) {
          v_slack = v_new;
          break;
        }
        v_slack = v_new;
      }
    } catch (const NumericsError& e) {
      trace.aborted = true;
      trace.abort_reason =
          "power flow diverged at t=" + std::to_string(t) + ": " + e.what();
      break;
    }
    const double vs = std::abs(v_slack);

    const MeasurementSet model = build_measurement_model(topo, scenario.sensors, vs);
    const std::uint64_t step_seed =
        scenario.seed + 0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(k + 1);
    const MeasurementSet meas = synthesize_measurements(model, st.v, step_seed);
    const EstimatedState est = wls_estimate(meas);

    if (k % ratio == 0) {
      // The feeder's own deviation already acts on frequency when coupled,
      // so the ACE here is the frequency-bias term alone.
      agc_level = -agc.step(freq.omega, 0.0, ts * ratio);
    }

    ControlInputs in;
    in.voltages = est.voltages();
    in.slack_voltage = vs;
    in.feeder_power = st.feeder_power;
    in.freq = freq;
    in.agc_level = agc_level;
    in.step_index = k;
    const ControlCommand cmd = ctrl.step(in);

    applied_dp = cmd.dp;
    applied_dq = cmd.dq;
    for (int d = 0; d < n_g; ++d)
      clip_to_capability(plant[static_cast<size_t>(d)], &applied_dp(d),
                         &applied_dq(d));

    TraceRow row;
    row.time = t;
    row.freq = freq.omega;
    row.rocof = freq.omega_dot;
    row.slack_voltage = vs;
    row.feeder_dp = sched.feeder_power.real() - st.feeder_power.real();
    row.feeder_dq = sched.feeder_power.imag() - st.feeder_power.imag();
    delivered_prev = row.feeder_dp;
    const auto& targets = ctrl.last_targets();
    row.ref_pfc = targets.pfc.empty() ? 0.0 : targets.pfc.front();
    row.ref_sfc = targets.sfc;
    row.ref_vc = targets.vc;
    row.att_pfc = ctrl.attributed_fast().sum();
    row.att_sfc = ctrl.attributed_slow().sum();
    row.att_q = ctrl.attributed_q().sum();
    row.der_p.resize(n_g);
    row.der_q.resize(n_g);
    row.der_soc.resize(n_g);
    for (int d = 0; d < n_g; ++d) {
      const auto& u = plant[static_cast<size_t>(d)];
      row.der_p(d) = u.p_out;
      row.der_q(d) = u.q_out;
      row.der_soc(d) = u.kind == DerKind::bess ? u.soc : 0.0;
    }
    row.cmd_dp = cmd.dp;
    row.cmd_dq = cmd.dq;
    row.cmd_slow = ctrl.slow_commands();
    row.v_mag = st.v.cwiseAbs();
    row.loading.resize(topo.branch_count());
    for (int b = 0; b < topo.branch_count(); ++b)
      row.loading(b) =
          i_max(b) > 0.0 ? std::abs(st.i_branch(b)) / i_max(b) : 0.0;
    row.feeder_power = st.feeder_power;
    cplx i_head(0.0, 0.0);
    for (int b = 0; b < topo.branch_count(); ++b)
      if (topo.parent(b + 1) == 0) i_head += st.i_branch(b);
    row.feeder_check = vs * std::conj(i_head);
    row.solver_ok = cmd.solver_ok;
    row.iterations = cmd.iterations;
    row.solve_time_s = cmd.solve_time_s;
    row.slack_max = cmd.slack_max;

    if (!cmd.solver_ok) ++trace.solver_failures;
    if (row.v_mag.minCoeff() < scenario.controller.limits.v_min - 1e-9 ||
        row.v_mag.maxCoeff() > scenario.controller.limits.v_max + 1e-9)
      ++trace.voltage_violations;
    trace.peak_delta_q = std::max(trace.peak_delta_q, std::abs(row.feeder_dq));

    trace.rows.push_back(std::move(row));
  }
  return trace;
}

std::string ScenarioTrace::to_csv() const {
  std::ostringstream os;
  os << std::setprecision(12);
  const int n_g = rows.empty() ? 0 : static_cast<int>(rows.front().der_p.size());
  const int n_v = rows.empty() ? 0 : static_cast<int>(rows.front().v_mag.size());
  const int n_b = rows.empty() ? 0 : static_cast<int>(rows.front().loading.size());
  os << "time,freq,rocof,v_slack,feeder_dp,feeder_dq,ref_pfc,ref_sfc,ref_vc,"
        "att_pfc,att_sfc,att_q";
  for (int d = 0; d < n_g; ++d)
    os << ",der" << d << "_p,der" << d << "_q,der" << d << "_soc,cmd" << d
       << "_dp,cmd" << d << "_dq,cmd" << d << "_slow";
  for (int n = 0; n < n_v; ++n) os << ",v" << n + 1;
  for (int b = 0; b < n_b; ++b) os << ",loading" << b;
  os << ",solver_ok,iterations,solve_time_s,slack_max\n";
  for (const auto& r : rows) {
    os << r.time << ',' << r.freq << ',' << r.rocof << ',' << r.slack_voltage
       << ',' << r.feeder_dp << ',' << r.feeder_dq << ',' << r.ref_pfc << ','
       << r.ref_sfc << ',' << r.ref_vc << ',' << r.att_pfc << ',' << r.att_sfc
       << ',' << r.att_q;
    for (int d = 0; d < n_g; ++d)
      os << ',' << r.der_p(d) << ',' << r.der_q(d) << ',' << r.der_soc(d)
         << ',' << r.cmd_dp(d) << ',' << r.cmd_dq(d) << ',' << r.cmd_slow(d);
    for (int n = 0; n < n_v; ++n) os << ',' << r.v_mag(n);
    for (int b = 0; b < n_b; ++b) os << ',' << r.loading(b);
    os << ',' << (r.solver_ok ? 1 : 0) << ',' << r.iterations << ','
       << r.solve_time_s << ',' << r.slack_max << '\n';
  }
  return os.str();
}

std::string ScenarioTrace::summary_json() const {
  std::vector<double> times;
  times.reserve(rows.size());
  long iters = 0;
  for (const auto& r : rows) {
    times.push_back(r.solve_time_s);
    iters += r.iterations;
  }
  double median = 0.0, worst = 0.0;
  if (!times.empty()) {
    std::sort(times.begin(), times.end());
    median = times[times.size() / 2];
    worst = times.back();
  }
  nlohmann::json j{
      {"rows", rows.size()},
      {"t_fast", t_fast},
      {"ratio", ratio},
      {"seed", seed},
      {"aborted", aborted},
      {"abort_reason", abort_reason},
      {"events", event_log},
      {"solver",
       {{"failures", solver_failures},
        {"total_iterations", iters},
        {"median_solve_s", median},
        {"max_solve_s", worst}}},
      {"violations", {{"voltage_band_steps", voltage_violations}}},
      {"peak_delta_q", peak_delta_q},
  };
  if (!rows.empty()) {
    const auto& r = rows.back();
    j["final"] = {{"freq", r.freq},
                  {"feeder_dp", r.feeder_dp},
                  {"feeder_dq", r.feeder_dq},
                  {"v_slack", r.slack_voltage}};
  }
  return j.dump(2);
}

void write_file_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + tmp);
    out << content;
    if (!out.flush()) throw ConfigError("short write to " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::remove(tmp.c_str());
    throw ConfigError("cannot move " + tmp + " to " + path + ": " + ec.message());
  }
}

}  // namespace adn

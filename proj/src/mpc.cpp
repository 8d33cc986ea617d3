#include "adn/mpc.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"

namespace adn {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr int kOctagonSides = 8;

/// Sparse affine expression over the decision vector.
struct LinExpr {
  std::vector<std::pair<int, double>> terms;
  double constant = 0.0;

  void add(int idx, double c) {
    if (c != 0.0) terms.emplace_back(idx, c);
  }
  void add_scaled(const LinExpr& e, double s) {
    if (s == 0.0) return;
    for (const auto& [i, c] : e.terms) terms.emplace_back(i, s * c);
    constant += s * e.constant;
  }
};

}  // namespace

int MultirateSchedule::ratio() const {
  const double r = t_slow / t_fast;
  const int q = static_cast<int>(std::llround(r));
  if (q < 1 || std::abs(r - q) > 1e-9)
    throw ConfigError("slow period must be an integer multiple of the fast one");
  return q;
}

int MultirateSchedule::decision_length(int n_g) const {
  const int q = ratio();
  return horizon * 2 * n_g + (horizon / q) * n_g;
}

void MultirateSchedule::validate() const {
  if (t_fast <= 0.0 || t_slow <= 0.0)
    throw ConfigError("sampling periods must be positive");
  const int q = ratio();
  if (horizon < q)
    throw ConfigError("horizon must cover at least one slow period");
}

double CostProfile::kind_scale(DerKind kind) const {
  switch (kind) {
    case DerKind::pv: return scale_pv;
    case DerKind::bess: return scale_bess;
    case DerKind::vshp: return scale_vshp;
    case DerKind::dg: return scale_dg;
  }
  return 1.0;
}

void CostProfile::validate() const {
  if (c_q <= 0.0 || c_p <= 0.0 || c_a <= 0.0)
    throw ConfigError("service weights must be positive");
  if (!(c_q <= c_p && c_p <= c_a))
    throw ConfigError("service weights must satisfy c_q <= c_p <= c_a");
  if (!(scale_pv <= scale_bess && scale_bess <= scale_vshp &&
        scale_vshp <= scale_dg))
    throw ConfigError("kind scales must be ordered pv <= bess <= vshp <= dg");
  if (loss_weight < 0.0) throw ConfigError("loss weight must be nonnegative");
  if (loss_reference != "delta" && loss_reference != "absolute")
    throw ConfigError("loss_reference must be 'delta' or 'absolute'");
  if (slack_penalty_factor <= 0.0)
    throw ConfigError("slack penalty must be positive");
}

/// Index arithmetic of one assembled horizon window.
struct MpcController::Layout {
  int h = 0, n_g = 0, n_ss = 0, n_u = 0, n_lvl = 0, n_slack = 0, n_total = 0;
  int phase = 0;
  std::vector<int> due;        // fast-step offsets of decided slow updates
  std::vector<int> state_off;  // per fleet entry, offset inside a step block

  int u_p(int t, int d) const { return t * 2 * n_g + d; }
  int u_q(int t, int d) const { return t * 2 * n_g + n_g + d; }
  int lvl(int w, int d) const { return n_u + w * n_g + d; }
  int state(int j, int off) const {
    return n_u + n_lvl + (j - 1) * n_ss + off;
  }
  // Slots 0..5: delivery shortfall pairs (fast P, slow P, Q). Slot 6 relaxes
  // the voltage band, slot 7 the current caps, so a disturbance that starts
  // outside the operating limits cannot render the whole program infeasible.
  int slack(int j, int c) const {
    return n_u + n_lvl + h * n_ss + (j - 1) * 8 + c;
  }
};

MpcController::~MpcController() = default;
MpcController::MpcController(MpcController&&) noexcept = default;

MpcController::MpcController(const NetworkTopology& topo,
                             std::vector<DerUnit> fleet, MpcConfig config)
    : topo_(topo), fleet_(std::move(fleet)), config_(std::move(config)),
      solver_(config_.qp) {
  config_.schedule.validate();
  config_.costs.validate();
  config_.pfc_droop.validate();
  config_.vc_droop.validate();
  config_.freq.validate();
  if (fleet_.empty()) throw ConfigError("controller needs at least one unit");
  for (const auto& u : fleet_) {
    if (u.node < 1 || u.node >= topo_.node_count())
      throw ConfigError("unit node out of range");
    der_nodes_.push_back(u.node);
  }
  freq_model_ =
      discretize_frequency_model(config_.freq, config_.schedule.t_fast);

  // Scheduled operating point: baseline loads plus DER setpoints.
  const int n = topo_.node_count() - 1;
  sched_inj_ = {Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)};
  for (int k = 1; k <= n; ++k) {
    sched_inj_.p(k - 1) = -topo_.load_p(k);
    sched_inj_.q(k - 1) = -topo_.load_q(k);
  }
  for (const auto& u : fleet_) {
    sched_inj_.p(u.node - 1) += u.p_set;
    sched_inj_.q(u.node - 1) += u.q_set;
  }
  sched_ = nonlinear_powerflow(topo_, sched_inj_);
  bfs_ = build_bfs_matrices(topo_, 1.0);
  i_max_ = config_.limits.current_margin * sched_.i_branch.cwiseAbs();

  channels_.resize(fleet_.size());
  for (size_t d = 0; d < fleet_.size(); ++d)
    channels_[d].soc = fleet_[d].soc;
}

Eigen::VectorXd MpcController::attributed_fast() const {
  Eigen::VectorXd out(fleet_.size());
  for (size_t d = 0; d < fleet_.size(); ++d) {
    const auto& ch = channels_[d];
    switch (fleet_[d].kind) {
      case DerKind::dg: out(d) = ch.p_fast; break;
      case DerKind::vshp: out(d) = ch.nu_fast(2); break;
      default: out(d) = ch.u_fast; break;
    }
  }
  return out;
}

Eigen::VectorXd MpcController::attributed_slow() const {
  Eigen::VectorXd out(fleet_.size());
  for (size_t d = 0; d < fleet_.size(); ++d) {
    const auto& ch = channels_[d];
    switch (fleet_[d].kind) {
      case DerKind::dg: out(d) = ch.p_slow; break;
      case DerKind::vshp: out(d) = ch.nu_slow(2); break;
      default: out(d) = ch.lvl_held; break;
    }
  }
  return out;
}

Eigen::VectorXd MpcController::attributed_q() const {
  Eigen::VectorXd out(fleet_.size());
  for (size_t d = 0; d < fleet_.size(); ++d) {
    const auto& ch = channels_[d];
    switch (fleet_[d].kind) {
      case DerKind::dg: out(d) = ch.q; break;
      case DerKind::vshp: {
        const double tan_phi =
            std::tan(std::acos(fleet_[d].vshp.power_factor));
        out(d) = tan_phi * (ch.nu_fast(2) + ch.nu_slow(2));
        break;
      }
      default: out(d) = ch.u_q; break;
    }
  }
  return out;
}

Eigen::VectorXd MpcController::slow_commands() const {
  Eigen::VectorXd out(fleet_.size());
  for (size_t d = 0; d < fleet_.size(); ++d) out(d) = channels_[d].lvl_held;
  return out;
}

DeliveryTargets MpcController::compute_targets(
    const ControlInputs& inputs) const {
  DeliveryTargets t;
  // Unexplained part of the feeder deviation (export positive): everything
  // the fleet's attributed response does not account for—load shifts, losses,
  // linearization error. Folding it into the targets restores the schedule.
  const double export_p =
      sched_.feeder_power.real() - inputs.feeder_power.real();
  const double export_q =
      sched_.feeder_power.imag() - inputs.feeder_power.imag();
  t.rho_p = export_p - (attributed_fast() + attributed_slow()).sum();
  t.rho_q = export_q - attributed_q().sum();

  // Frequency forecast: the imbalance consistent with the measured deviation
  // persisting, run through the grid model from the measured state.
  const double imbalance =
      -(config_.freq.damping + config_.freq.droop_aggregate) *
      inputs.freq.omega;
  auto omega =
      predict_frequency(freq_model_, inputs.freq, imbalance,
                        config_.schedule.horizon);
  t.pfc.resize(omega.size());
  for (size_t j = 0; j < omega.size(); ++j)
    t.pfc[j] = config_.pfc_droop.respond(-omega[j]) - t.rho_p;
  t.sfc = inputs.agc_level;
  t.vc = config_.vc_droop.respond(config_.limits.v_ref -
                                  inputs.slack_voltage) -
         t.rho_q;
  return t;
}

namespace {

/// Expand scale * e' M e (M symmetric over the expression vector) into
/// 1/2 x' H x + f' x triplet/vector form. Constant terms are dropped.
void add_quadratic(const Eigen::MatrixXd& m, double scale,
                   const std::vector<LinExpr>& e,
                   std::vector<Eigen::Triplet<double>>* h_trip,
                   Eigen::VectorXd* linear) {
  const int dim = static_cast<int>(e.size());
  for (int i = 0; i < dim; ++i) {
    for (int j = 0; j < dim; ++j) {
      const double mij = 2.0 * scale * m(i, j);
      if (mij == 0.0) continue;
      for (const auto& [vi, ci] : e[i].terms)
        for (const auto& [vj, cj] : e[j].terms)
          h_trip->emplace_back(vi, vj, mij * ci * cj);
      if (e[i].constant != 0.0)
        for (const auto& [vj, cj] : e[j].terms)
          (*linear)(vj) += mij * e[i].constant * cj;
    }
  }
}

int add_row(std::vector<Eigen::Triplet<double>>* trip, int row,
            const LinExpr& e, double sign = 1.0) {
  for (const auto& [i, c] : e.terms) trip->emplace_back(row, i, sign * c);
  return row;
}

}  // namespace

void MpcController::assemble(const ControlInputs& inputs,
                             const DeliveryTargets& targets) {
  const int h = config_.schedule.horizon;
  const int q = config_.schedule.ratio();
  const int n_g = static_cast<int>(fleet_.size());
  const double ts = config_.schedule.t_fast;

  auto lay = std::make_unique<Layout>();
  lay->h = h;
  lay->n_g = n_g;
  lay->phase = static_cast<int>(((inputs.step_index % q) + q) % q);
  for (int t = (q - lay->phase) % q; t < h; t += q) lay->due.push_back(t);
  lay->state_off.resize(fleet_.size());
  for (size_t d = 0; d < fleet_.size(); ++d) {
    lay->state_off[d] = lay->n_ss;
    switch (fleet_[d].kind) {
      case DerKind::dg: lay->n_ss += 3; break;
      case DerKind::vshp: lay->n_ss += 6; break;
      case DerKind::bess: lay->n_ss += 1; break;
      case DerKind::pv: break;
    }
  }
  lay->n_u = h * 2 * n_g;
  lay->n_lvl = static_cast<int>(lay->due.size()) * n_g;
  lay->n_slack = h * 8;
  lay->n_total = lay->n_u + lay->n_lvl + h * lay->n_ss + lay->n_slack;
  const Layout& L = *lay;

  // Slow (redispatch) level in force while input step t is applied: the most
  // recent decided update if one exists in the window, else the held value.
  auto lvl_expr = [&](int t, int d) {
    LinExpr e;
    int w = -1;
    for (size_t k = 0; k < L.due.size() && L.due[k] <= t; ++k)
      w = static_cast<int>(k);
    if (w >= 0)
      e.add(L.lvl(w, d), 1.0);
    else
      e.constant = channels_[d].lvl_held;
    return e;
  };

  // --- dynamics equalities -------------------------------------------------
  std::vector<Eigen::Triplet<double>> eq;
  std::vector<double> eq_rhs;
  int row = 0;
  auto first_order = [&](int d, int off, double a, auto&& input_expr,
                         double x0) {
    for (int j = 0; j < h; ++j) {
      eq.emplace_back(row, L.state(j + 1, off), 1.0);
      double rhs = 0.0;
      if (j == 0)
        rhs += (1.0 - a) * x0;
      else
        eq.emplace_back(row, L.state(j, off), -(1.0 - a));
      LinExpr in = input_expr(j, d);
      for (const auto& [i, c] : in.terms) eq.emplace_back(row, i, -a * c);
      rhs += a * in.constant;
      eq_rhs.push_back(rhs);
      ++row;
    }
  };
  auto fast_input = [&](int t, int d) {
    LinExpr e;
    e.add(L.u_p(t, d), 1.0);
    return e;
  };
  auto q_input = [&](int t, int d) {
    LinExpr e;
    e.add(L.u_q(t, d), 1.0);
    return e;
  };
  auto state_expr = [&](int j, int off) {
    LinExpr e;
    e.add(L.state(j, off), 1.0);
    return e;
  };

  for (int d = 0; d < n_g; ++d) {
    const DerUnit& u = fleet_[static_cast<size_t>(d)];
    const ChannelState& ch = channels_[static_cast<size_t>(d)];
    const int off = L.state_off[static_cast<size_t>(d)];
    switch (u.kind) {
      case DerKind::dg: {
        const double a_p = 1.0 - std::exp(-ts / u.dg.governor_time_constant);
        const double a_q = 1.0 - std::exp(-ts / u.dg.exciter_time_constant);
        first_order(d, off + 0, a_p, fast_input, ch.p_fast);
        first_order(d, off + 1, a_p, lvl_expr, ch.p_slow);
        first_order(d, off + 2, a_q, q_input, ch.q);
        break;
      }
      case DerKind::vshp: {
        const double a = 1.0 - std::exp(-ts / u.vshp.time_constant);
        auto cascade = [&](int base, const Eigen::Vector3d& x0,
                           auto&& drive) {
          first_order(d, base + 0, a, drive, x0(0));
          first_order(d, base + 1, a,
                      [&](int j, int) {
                        return j == 0 ? LinExpr{{}, x0(0)}
                                      : state_expr(j, base + 0);
                      },
                      x0(1));
          first_order(d, base + 2, a,
                      [&](int j, int) {
                        return j == 0 ? LinExpr{{}, x0(1)}
                                      : state_expr(j, base + 1);
                      },
                      x0(2));
        };
        cascade(off + 0, ch.nu_fast, fast_input);
        cascade(off + 3, ch.nu_slow, lvl_expr);
        break;
      }
      case DerKind::bess: {
        const double k = ts / u.bess.energy_capacity;
        for (int j = 0; j < h; ++j) {
          eq.emplace_back(row, L.state(j + 1, off), 1.0);
          double rhs = -k * u.p_set;
          if (j == 0)
            rhs += ch.soc;
          else
            eq.emplace_back(row, L.state(j, off), -1.0);
          eq.emplace_back(row, L.u_p(j, d), k);
          LinExpr lv = lvl_expr(j, d);
          for (const auto& [i, c] : lv.terms) eq.emplace_back(row, i, k * c);
          rhs -= k * lv.constant;
          eq_rhs.push_back(rhs);
          ++row;
        }
        break;
      }
      case DerKind::pv: break;
    }
  }

  // --- per-step output expressions ----------------------------------------
  // dp_fast / dp_slow / dq of unit d at prediction step j (deviation from the
  // schedule). Deadbeat units expose the input applied one step earlier.
  auto dp_fast = [&](int j, int d) -> LinExpr {
    const int off = L.state_off[static_cast<size_t>(d)];
    switch (fleet_[static_cast<size_t>(d)].kind) {
      case DerKind::dg: return state_expr(j, off + 0);
      case DerKind::vshp: return state_expr(j, off + 2);
      default: return fast_input(j - 1, d);
    }
  };
  auto dp_slow = [&](int j, int d) -> LinExpr {
    const int off = L.state_off[static_cast<size_t>(d)];
    switch (fleet_[static_cast<size_t>(d)].kind) {
      case DerKind::dg: return state_expr(j, off + 1);
      case DerKind::vshp: return state_expr(j, off + 5);
      default: return lvl_expr(j - 1, d);
    }
  };
  auto dq_out = [&](int j, int d) -> LinExpr {
    const DerUnit& u = fleet_[static_cast<size_t>(d)];
    const int off = L.state_off[static_cast<size_t>(d)];
    switch (u.kind) {
      case DerKind::dg: return state_expr(j, off + 2);
      case DerKind::vshp: {
        LinExpr e;
        const double tan_phi = std::tan(std::acos(u.vshp.power_factor));
        e.add(L.state(j, off + 2), tan_phi);
        e.add(L.state(j, off + 5), tan_phi);
        return e;
      }
      default: return q_input(j - 1, d);
    }
  };

  // --- delivery equalities with shortfall slacks ---------------------------
  for (int j = 1; j <= h; ++j) {
    double target[3] = {targets.pfc[static_cast<size_t>(j - 1)], targets.sfc,
                        targets.vc};
    for (int c = 0; c < 3; ++c) {
      for (int d = 0; d < n_g; ++d) {
        LinExpr e = c == 0 ? dp_fast(j, d)
                   : c == 1 ? dp_slow(j, d)
                            : dq_out(j, d);
        add_row(&eq, row, e);
        target[c] -= e.constant;
      }
      eq.emplace_back(row, L.slack(j, 2 * c + 0), 1.0);
      eq.emplace_back(row, L.slack(j, 2 * c + 1), -1.0);
      eq_rhs.push_back(target[c]);
      ++row;
    }
  }
  const int n_eq = row;

  // --- inequalities --------------------------------------------------------
  std::vector<Eigen::Triplet<double>> in;
  std::vector<double> in_rhs;
  row = 0;

  // Capability polytopes on the commanded setpoints at every input step.
  for (int t = 0; t < h; ++t) {
    for (int d = 0; d < n_g; ++d) {
      const DerUnit& u = fleet_[static_cast<size_t>(d)];
      LinExpr lv = lvl_expr(t, d);
      for (int r = 0; r < u.capability.a.rows(); ++r) {
        const double ap = u.capability.a(r, 0);
        const double aq = u.capability.a(r, 1);
        in.emplace_back(row, L.u_p(t, d), ap);
        in.emplace_back(row, L.u_q(t, d), aq);
        for (const auto& [i, c] : lv.terms) in.emplace_back(row, i, ap * c);
        in_rhs.push_back(u.capability.b(r) - ap * (u.p_set + lv.constant) -
                         aq * u.q_set);
        ++row;
      }
    }
  }

  // Superimposed-circuit ingredients at the measured operating point.
  const int n_nodes = topo_.node_count() - 1;
  Eigen::VectorXd g(n_g), hh(n_g);
  for (int d = 0; d < n_g; ++d) {
    const cplx v = inputs.voltages(der_nodes_[static_cast<size_t>(d)] - 1);
    if (std::abs(v) < 0.5)
      throw NumericsError("estimated voltage collapsed at a DER node");
    const cplx w = 1.0 / std::conj(v);
    g(d) = w.real();
    hh(d) = w.imag();
  }
  Eigen::VectorXcd i_pre(n_nodes);
  for (int b = 0; b < n_nodes; ++b) {
    const int child = b + 1;
    const int par = topo_.parent(child);
    const cplx vp =
        par == 0 ? cplx(inputs.slack_voltage, 0.0) : inputs.voltages(par - 1);
    i_pre(b) = (vp - inputs.voltages(child - 1)) / topo_.branch_impedance(b);
  }
  const Eigen::VectorXd dp_now = attributed_fast() + attributed_slow();
  const Eigen::VectorXd dq_now = attributed_q();

  const double cos_margin = std::cos(M_PI / kOctagonSides);
  std::vector<std::vector<int>> ders_on_branch(static_cast<size_t>(n_nodes));
  for (int d = 0; d < n_g; ++d)
    for (int b = 0; b < n_nodes; ++b)
      if (bfs_.bibc(b, der_nodes_[static_cast<size_t>(d)] - 1) != 0.0)
        ders_on_branch[static_cast<size_t>(b)].push_back(d);

  for (int j = 1; j <= h; ++j) {
    std::vector<LinExpr> ddp(static_cast<size_t>(n_g)),
        ddq(static_cast<size_t>(n_g));
    for (int d = 0; d < n_g; ++d) {
      auto& ep = ddp[static_cast<size_t>(d)];
      ep.add_scaled(dp_fast(j, d), 1.0);
      ep.add_scaled(dp_slow(j, d), 1.0);
      ep.constant -= dp_now(d);
      auto& eqx = ddq[static_cast<size_t>(d)];
      eqx.add_scaled(dq_out(j, d), 1.0);
      eqx.constant -= dq_now(d);
    }

    // Voltage band on the real part of the superposed node voltages.
    for (int n = 1; n <= n_nodes; ++n) {
      LinExpr dv;
      for (int d = 0; d < n_g; ++d) {
        const cplx ldn = bfs_.dlf(n - 1, der_nodes_[static_cast<size_t>(d)] - 1);
        dv.add_scaled(ddp[static_cast<size_t>(d)],
                      ldn.real() * g(d) - ldn.imag() * hh(d));
        dv.add_scaled(ddq[static_cast<size_t>(d)],
                      ldn.real() * hh(d) + ldn.imag() * g(d));
      }
      const double v_now = inputs.voltages(n - 1).real();
      add_row(&in, row, dv);
      in.emplace_back(row, L.slack(j, 6), -1.0);
      in_rhs.push_back(config_.limits.v_max - v_now - dv.constant);
      ++row;
      add_row(&in, row, dv, -1.0);
      in.emplace_back(row, L.slack(j, 6), -1.0);
      in_rhs.push_back(v_now + dv.constant - config_.limits.v_min);
      ++row;
    }

    // Branch-current magnitude cap, octagon inner approximation.
    for (int b = 0; b < n_nodes; ++b) {
      if (ders_on_branch[static_cast<size_t>(b)].empty()) continue;
      LinExpr re, im;
      for (int d : ders_on_branch[static_cast<size_t>(b)]) {
        re.add_scaled(ddp[static_cast<size_t>(d)], -g(d));
        re.add_scaled(ddq[static_cast<size_t>(d)], -hh(d));
        im.add_scaled(ddp[static_cast<size_t>(d)], -hh(d));
        im.add_scaled(ddq[static_cast<size_t>(d)], g(d));
      }
      for (int k = 0; k < kOctagonSides; ++k) {
        const double cth = std::cos(2.0 * M_PI * k / kOctagonSides);
        const double sth = std::sin(2.0 * M_PI * k / kOctagonSides);
        for (const auto& [i, c] : re.terms)
          in.emplace_back(row, i, cth * c);
        for (const auto& [i, c] : im.terms)
          in.emplace_back(row, i, sth * c);
        in.emplace_back(row, L.slack(j, 7), -1.0);
        in_rhs.push_back(i_max_(b) * cos_margin -
                         cth * (i_pre(b).real() + re.constant) -
                         sth * (i_pre(b).imag() + im.constant));
        ++row;
      }
    }
  }
  const int n_in = row;

  // --- objective -----------------------------------------------------------
  std::vector<Eigen::Triplet<double>> hes;
  Eigen::VectorXd linear = Eigen::VectorXd::Zero(L.n_total);
  double max_c = 0.0;
  for (int d = 0; d < n_g; ++d) {
    const double ks = config_.costs.kind_scale(fleet_[static_cast<size_t>(d)].kind);
    max_c = std::max(max_c, config_.costs.c_a * ks);
    for (int t = 0; t < h; ++t) {
      hes.emplace_back(L.u_p(t, d), L.u_p(t, d), 2.0 * config_.costs.c_p * ks);
      hes.emplace_back(L.u_q(t, d), L.u_q(t, d), 2.0 * config_.costs.c_q * ks);
    }
    for (size_t w = 0; w < L.due.size(); ++w)
      hes.emplace_back(L.lvl(static_cast<int>(w), d),
                       L.lvl(static_cast<int>(w), d),
                       2.0 * config_.costs.c_a * ks);
  }
  // Quadratic slack shaping keeps the hessian diagonal dominant over the
  // delivery rows; a small linear tie-break still drives exact zeros.
  const double penalty = config_.costs.slack_penalty_factor * max_c;
  for (int j = 1; j <= h; ++j) {
    for (int c = 0; c < 8; ++c) {
      const double w = (c >= 6 ? 10.0 : 1.0) * penalty;
      hes.emplace_back(L.slack(j, c), L.slack(j, c), 2.0 * w);
      linear(L.slack(j, c)) = w * 1e-3;
    }
  }

  if (config_.costs.loss_weight > 0.0) {
    // Resistive-loss shaping: quadratic form of the superposed branch
    // currents. S = K' R K over the DER path-indicator columns.
    Eigen::MatrixXd k_mat(n_nodes, n_g);
    Eigen::VectorXd r_diag(n_nodes);
    for (int b = 0; b < n_nodes; ++b) {
      r_diag(b) = topo_.branch_impedance(b).real();
      for (int d = 0; d < n_g; ++d)
        k_mat(b, d) = bfs_.bibc(b, der_nodes_[static_cast<size_t>(d)] - 1);
    }
    const Eigen::MatrixXd s = k_mat.transpose() * r_diag.asDiagonal() * k_mat;
    Eigen::MatrixXd j1(n_g, 2 * n_g), j2(n_g, 2 * n_g);
    j1.setZero();
    j2.setZero();
    for (int d = 0; d < n_g; ++d) {
      j1(d, d) = g(d);
      j1(d, n_g + d) = hh(d);
      j2(d, d) = hh(d);
      j2(d, n_g + d) = -g(d);
    }
    const Eigen::MatrixXd m =
        j1.transpose() * s * j1 + j2.transpose() * s * j2;
    const bool absolute = config_.costs.loss_reference == "absolute";
    for (int j = 1; j <= h; ++j) {
      std::vector<LinExpr> e(static_cast<size_t>(2 * n_g));
      for (int d = 0; d < n_g; ++d) {
        e[static_cast<size_t>(d)].add_scaled(dp_fast(j, d), 1.0);
        e[static_cast<size_t>(d)].add_scaled(dp_slow(j, d), 1.0);
        e[static_cast<size_t>(n_g + d)].add_scaled(dq_out(j, d), 1.0);
        if (absolute) {
          e[static_cast<size_t>(d)].constant -= dp_now(d);
          e[static_cast<size_t>(n_g + d)].constant -= dq_now(d);
        }
      }
      add_quadratic(m, config_.costs.loss_weight, e, &hes, &linear);
      if (absolute) {
        // Cross term with the present currents: 2 R Re(conj(I_pre) dI).
        Eigen::VectorXcd wbar = Eigen::VectorXcd::Zero(n_g);
        for (int d = 0; d < n_g; ++d)
          for (int b = 0; b < n_nodes; ++b)
            wbar(d) += r_diag(b) * k_mat(b, d) * std::conj(i_pre(b));
        for (int d = 0; d < n_g; ++d) {
          const double lp = -2.0 * config_.costs.loss_weight *
                            (wbar(d).real() * g(d) - wbar(d).imag() * hh(d));
          const double lq = -2.0 * config_.costs.loss_weight *
                            (wbar(d).real() * hh(d) + wbar(d).imag() * g(d));
          for (const auto& [i, c] : e[static_cast<size_t>(d)].terms)
            linear(i) += lp * c;
          for (const auto& [i, c] : e[static_cast<size_t>(n_g + d)].terms)
            linear(i) += lq * c;
        }
      }
    }
  }

  // --- pack ----------------------------------------------------------------
  QpProblem p;
  p.hessian.resize(L.n_total, L.n_total);
  p.hessian.setFromTriplets(hes.begin(), hes.end());
  p.linear = linear;
  p.a_eq.resize(n_eq, L.n_total);
  p.a_eq.setFromTriplets(eq.begin(), eq.end());
  p.b_eq = Eigen::Map<Eigen::VectorXd>(eq_rhs.data(), n_eq);
  p.a_ineq.resize(n_in, L.n_total);
  p.a_ineq.setFromTriplets(in.begin(), in.end());
  p.b_ineq = Eigen::Map<Eigen::VectorXd>(in_rhs.data(), n_in);
  p.lb = Eigen::VectorXd::Constant(L.n_total, -kInf);
  p.ub = Eigen::VectorXd::Constant(L.n_total, kInf);
  for (int d = 0; d < n_g; ++d) {
    const DerUnit& u = fleet_[static_cast<size_t>(d)];
    if (u.kind != DerKind::bess) continue;
    const int off = L.state_off[static_cast<size_t>(d)];
    for (int j = 1; j <= h; ++j) {
      p.lb(L.state(j, off)) = u.bess.soc_min;
      p.ub(L.state(j, off)) = u.bess.soc_max;
    }
  }
  for (int j = 1; j <= h; ++j)
    for (int c = 0; c < 8; ++c) p.lb(L.slack(j, c)) = 0.0;

  problem_ = std::move(p);
  layout_ = std::move(lay);
}

ControlCommand MpcController::step(const ControlInputs& inputs) {
  targets_ = compute_targets(inputs);
  assemble(inputs, targets_);
  const Layout& L = *layout_;

  if (warm_by_phase_.empty()) {
    warm_by_phase_.resize(static_cast<size_t>(config_.schedule.ratio()));
    warm_dual_by_phase_.resize(warm_by_phase_.size());
  }
  Eigen::VectorXd& phase_warm = warm_by_phase_[static_cast<size_t>(L.phase)];
  Eigen::VectorXd& phase_dual = warm_dual_by_phase_[static_cast<size_t>(L.phase)];
  QpSolution sol;
  if (phase_warm.size() == problem_.num_vars())
    sol = solver_.solve(problem_, phase_warm, phase_dual);
  else if (warm_.size() == problem_.num_vars())
    sol = solver_.solve(problem_, warm_);
  else
    sol = solver_.solve(problem_);

  last_sol_ = sol;

  ControlCommand cmd;
  cmd.status = sol.status;
  cmd.iterations = sol.iterations;
  cmd.solve_time_s = sol.solve_time_s;
  cmd.objective = sol.objective;
  const bool usable =
      sol.status == QpStatus::optimal ||
      (sol.status == QpStatus::max_iterations &&
       sol.residuals.worst() < config_.limits.accept_residual);
  if (usable) {
    warm_ = sol.primal;
    phase_warm = sol.primal;
    phase_dual = sol.dual_stacked;
    cmd.dp.resize(fleet_.size());
    cmd.dq.resize(fleet_.size());
    for (size_t d = 0; d < fleet_.size(); ++d) {
      double lvl0 = channels_[d].lvl_held;
      if (!L.due.empty() && L.due[0] == 0)
        lvl0 = sol.primal(L.lvl(0, static_cast<int>(d)));
      cmd.dp(d) = sol.primal(L.u_p(0, static_cast<int>(d))) + lvl0;
      cmd.dq(d) = sol.primal(L.u_q(0, static_cast<int>(d)));
    }
    for (int j = 1; j <= L.h; ++j)
      for (int c = 0; c < 8; ++c)
        cmd.slack_max = std::max(cmd.slack_max, sol.primal(L.slack(j, c)));
    cmd.solver_ok = true;
  } else {
    // Hold the most recent accepted command.
    cmd.solver_ok = false;
    if (has_last_cmd_) {
      cmd.dp = last_cmd_.dp;
      cmd.dq = last_cmd_.dq;
    } else {
      cmd.dp = Eigen::VectorXd::Zero(fleet_.size());
      cmd.dq = Eigen::VectorXd::Zero(fleet_.size());
    }
  }

  advance_attribution(cmd);
  if (cmd.solver_ok) {
    last_cmd_ = cmd;
    has_last_cmd_ = true;
  }

  nlohmann::json diag{
      {"k", inputs.step_index},
      {"status", to_string(cmd.status)},
      {"iterations", cmd.iterations},
      {"solve_time_s", cmd.solve_time_s},
      {"objective", cmd.objective},
      {"slack_max", cmd.slack_max},
      {"targets",
       {{"pfc_0", targets_.pfc.empty() ? 0.0 : targets_.pfc.front()},
        {"sfc", targets_.sfc},
        {"vc", targets_.vc},
        {"rho_p", targets_.rho_p},
        {"rho_q", targets_.rho_q}}},
      {"slow_instant", config_.schedule.is_slow_instant(inputs.step_index)},
  };
  diagnostics_ = diag.dump();
  return cmd;
}

void MpcController::advance_attribution(const ControlCommand& cmd) {
  const double ts = config_.schedule.t_fast;
  const bool slow_now = layout_ && !layout_->due.empty() && layout_->due[0] == 0;
  for (size_t d = 0; d < fleet_.size(); ++d) {
    const DerUnit& u = fleet_[d];
    ChannelState& ch = channels_[d];
    if (cmd.solver_ok && slow_now && warm_.size() == problem_.num_vars())
      ch.lvl_held = warm_(layout_->lvl(0, static_cast<int>(d)));
    ch.u_fast = cmd.dp(d) - ch.lvl_held;
    ch.u_q = cmd.dq(d);
    switch (u.kind) {
      case DerKind::dg: {
        const double a_p = 1.0 - std::exp(-ts / u.dg.governor_time_constant);
        const double a_q = 1.0 - std::exp(-ts / u.dg.exciter_time_constant);
        ch.p_fast += a_p * (ch.u_fast - ch.p_fast);
        ch.p_slow += a_p * (ch.lvl_held - ch.p_slow);
        ch.q += a_q * (ch.u_q - ch.q);
        break;
      }
      case DerKind::vshp: {
        const double pole = std::exp(-ts / u.vshp.time_constant);
        auto advance = [&](Eigen::Vector3d& nu, double in) {
          const Eigen::Vector3d prev = nu;
          nu(0) = pole * prev(0) + (1.0 - pole) * in;
          nu(1) = pole * prev(1) + (1.0 - pole) * prev(0);
          nu(2) = pole * prev(2) + (1.0 - pole) * prev(1);
        };
        advance(ch.nu_fast, ch.u_fast);
        advance(ch.nu_slow, ch.lvl_held);
        break;
      }
      case DerKind::bess:
        ch.soc -= ts * (u.p_set + cmd.dp(d)) / u.bess.energy_capacity;
        break;
      case DerKind::pv: break;
    }
  }
}

}  // namespace adn

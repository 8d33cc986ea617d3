#include "adn/der.hpp"

#include <cmath>

namespace adn {

namespace {
constexpr int kCirclePolygonSides = 12;

void append_row(std::vector<Eigen::Vector2d>& rows, std::vector<double>& rhs,
                double ax, double ay, double b) {
  const double nrm = std::hypot(ax, ay);
  rows.push_back({ax / nrm, ay / nrm});
  rhs.push_back(b / nrm);
}

double vshp_pole(const VshpParams& v, double t_s) {
  return std::exp(-t_s / v.time_constant);
}
}  // namespace

std::string to_string(DerKind kind) {
  switch (kind) {
    case DerKind::dg: return "dg";
    case DerKind::pv: return "pv";
    case DerKind::bess: return "bess";
    case DerKind::vshp: return "vshp";
  }
  return "?";
}

DerKind der_kind_from_string(const std::string& s) {
  if (s == "dg") return DerKind::dg;
  if (s == "pv") return DerKind::pv;
  if (s == "bess") return DerKind::bess;
  if (s == "vshp") return DerKind::vshp;
  throw ConfigError("unknown DER kind '" + s + "'");
}

bool CapabilityPolytope::contains(double p, double q, double tol) const {
  return violation(p, q) <= tol;
}

double CapabilityPolytope::violation(double p, double q) const {
  return (a * Eigen::Vector2d(p, q) - b).maxCoeff();
}

CapabilityPolytope build_capability(DerKind kind, double rating,
                                    const DgParams& dg, const PvParams& pv,
                                    const VshpParams& vshp) {
  if (rating <= 0.0) throw ConfigError("DER rating must be positive");
  std::vector<Eigen::Vector2d> rows;
  std::vector<double> rhs;
  const double apothem = std::cos(M_PI / kCirclePolygonSides);

  switch (kind) {
    case DerKind::dg: {
      // Stator current circle approximated by an inscribed regular polygon,
      // plus the minimum active power floor.
      for (int k = 0; k < kCirclePolygonSides; ++k) {
        const double th = 2.0 * M_PI * k / kCirclePolygonSides;
        append_row(rows, rhs, std::cos(th), std::sin(th), rating * apothem);
      }
      append_row(rows, rhs, -1.0, 0.0, -dg.p_min);
      if (dg.p_min >= rating * apothem)
        throw ConfigError("DG minimum power exceeds its current limit");
      break;
    }
    case DerKind::pv: {
      for (int k = 0; k < kCirclePolygonSides; ++k) {
        const double th = 2.0 * M_PI * k / kCirclePolygonSides;
        append_row(rows, rhs, std::cos(th), std::sin(th), rating * apothem);
      }
      const double p_avail = pv.available_factor * rating;
      if (p_avail < 0.0) throw ConfigError("PV available power negative");
      append_row(rows, rhs, 1.0, 0.0, p_avail);
      append_row(rows, rhs, -1.0, 0.0, 0.0);
      const double tan_phi = std::tan(std::acos(pv.min_power_factor));
      append_row(rows, rhs, -tan_phi, 1.0, 0.0);
      append_row(rows, rhs, -tan_phi, -1.0, 0.0);
      break;
    }
    case DerKind::bess: {
      append_row(rows, rhs, 1.0, 0.0, rating);
      append_row(rows, rhs, -1.0, 0.0, rating);
      append_row(rows, rhs, 0.0, 1.0, rating);
      append_row(rows, rhs, 0.0, -1.0, rating);
      break;
    }
    case DerKind::vshp: {
      // Segment on the constant power factor ray, generation-positive:
      // P in [-max_consumption, -min_consumption], Q = P tan(arccos(pf)).
      if (vshp.min_consumption > vshp.max_consumption)
        throw ConfigError("VSHP consumption range empty");
      const double tan_phi = std::tan(std::acos(vshp.power_factor));
      append_row(rows, rhs, 1.0, 0.0, -vshp.min_consumption);
      append_row(rows, rhs, -1.0, 0.0, vshp.max_consumption);
      append_row(rows, rhs, -tan_phi, 1.0, 0.0);
      append_row(rows, rhs, tan_phi, -1.0, 0.0);
      break;
    }
  }

  CapabilityPolytope cap;
  cap.a.resize(static_cast<int>(rows.size()), 2);
  cap.b.resize(static_cast<int>(rows.size()));
  for (int k = 0; k < cap.a.rows(); ++k) {
    cap.a.row(k) = rows[k].transpose();
    cap.b(k) = rhs[k];
  }
  return cap;
}

void step_der(DerUnit& unit, double dp, double dq, double t_s) {
  if (t_s <= 0.0) throw ConfigError("sampling period must be positive");
  const double p_target = unit.p_set + dp;
  const double q_target = unit.q_set + dq;
  switch (unit.kind) {
    case DerKind::pv:
      unit.p_out = p_target;
      unit.q_out = q_target;
      break;
    case DerKind::bess:
      unit.p_out = p_target;
      unit.q_out = q_target;
      unit.soc -= t_s * p_target / unit.bess.energy_capacity;
      break;
    case DerKind::dg: {
      const double a_p = 1.0 - std::exp(-t_s / unit.dg.governor_time_constant);
      const double a_q = 1.0 - std::exp(-t_s / unit.dg.exciter_time_constant);
      unit.p_out = a_p * p_target + (1.0 - a_p) * unit.p_out;
      unit.q_out = a_q * q_target + (1.0 - a_q) * unit.q_out;
      break;
    }
    case DerKind::vshp: {
      // Cascade of three identical first-order lags tracking the adjustment
      // level; output deviation is the last stage.
      const double pole = vshp_pole(unit.vshp, t_s);
      Eigen::Vector3d nu = unit.vshp_state;
      unit.vshp_state(0) = pole * nu(0) + (1.0 - pole) * dp;
      unit.vshp_state(1) = pole * nu(1) + (1.0 - pole) * nu(0);
      unit.vshp_state(2) = pole * nu(2) + (1.0 - pole) * nu(1);
      unit.p_out = unit.p_set + unit.vshp_state(2);
      unit.q_out =
          unit.p_out * std::tan(std::acos(unit.vshp.power_factor));
      break;
    }
  }
}

PredictionModel assemble_prediction_model(const std::vector<DerUnit>& fleet,
                                          double t_s) {
  if (fleet.empty()) throw ConfigError("fleet must not be empty");
  const int n_g = static_cast<int>(fleet.size());
  int n_b = 0, n_v = 0;
  for (const auto& u : fleet) {
    if (u.kind == DerKind::bess) ++n_b;
    if (u.kind == DerKind::vshp) ++n_v;
  }
  const int n_s = 2 * n_g + n_b + 3 * n_v;
  PredictionModel m;
  m.n_g = n_g;
  m.a = Eigen::MatrixXd::Zero(n_s, n_s);
  m.b = Eigen::MatrixXd::Zero(n_s, 2 * n_g);
  m.affine = Eigen::VectorXd::Zero(n_s);

  int soc_at = 2 * n_g;
  int nu_at = 2 * n_g + n_b;
  for (int d = 0; d < n_g; ++d) {
    const DerUnit& u = fleet[d];
    const int ip = d, iq = n_g + d;        // state rows
    const int up = d, uq = n_g + d;        // input columns
    switch (u.kind) {
      case DerKind::pv:
        m.b(ip, up) = 1.0;
        m.b(iq, uq) = 1.0;
        break;
      case DerKind::bess: {
        m.b(ip, up) = 1.0;
        m.b(iq, uq) = 1.0;
        const int ic = soc_at++;
        m.soc_index.push_back(ic);
        m.a(ic, ic) = 1.0;
        m.b(ic, up) = -t_s / u.bess.energy_capacity;
        m.affine(ic) = -t_s * u.p_set / u.bess.energy_capacity;
        break;
      }
      case DerKind::dg: {
        const double a_p = 1.0 - std::exp(-t_s / u.dg.governor_time_constant);
        const double a_q = 1.0 - std::exp(-t_s / u.dg.exciter_time_constant);
        m.a(ip, ip) = 1.0 - a_p;
        m.b(ip, up) = a_p;
        m.a(iq, iq) = 1.0 - a_q;
        m.b(iq, uq) = a_q;
        break;
      }
      case DerKind::vshp: {
        const double pole = vshp_pole(u.vshp, t_s);
        const int in = nu_at;
        nu_at += 3;
        m.nu_index.push_back(in);
        m.a(in + 0, in + 0) = pole;
        m.b(in + 0, up) = 1.0 - pole;
        m.a(in + 1, in + 1) = pole;
        m.a(in + 1, in + 0) = 1.0 - pole;
        m.a(in + 2, in + 2) = pole;
        m.a(in + 2, in + 1) = 1.0 - pole;
        // Output deviation rows follow the last cascade stage.
        m.a.row(ip) = m.a.row(in + 2);
        const double tan_phi = std::tan(std::acos(u.vshp.power_factor));
        m.a.row(iq) = tan_phi * m.a.row(in + 2);
        break;
      }
    }
  }
  return m;
}

DerUnit make_der_unit(DerKind kind, int node, double rating, double p_set,
                      double q_set, const DgParams& dg, const PvParams& pv,
                      const BessParams& bess, const VshpParams& vshp,
                      double initial_soc) {
  DerUnit u;
  u.kind = kind;
  u.node = node;
  u.rating = rating;
  u.p_set = p_set;
  u.q_set = q_set;
  u.p_out = p_set;
  u.q_out = q_set;
  u.dg = dg;
  u.pv = pv;
  u.bess = bess;
  u.vshp = vshp;
  u.soc = initial_soc;
  if (kind == DerKind::bess && bess.energy_capacity <= 0.0)
    throw ConfigError("BESS energy capacity must be positive");
  u.capability = build_capability(kind, rating, dg, pv, vshp);
  if (!u.capability.contains(p_set, q_set, 1e-7))
    throw ConfigError("baseline setpoint (" + std::to_string(p_set) + "," +
                      std::to_string(q_set) + ") outside the " +
                      to_string(kind) + " capability polytope");
  return u;
}

}  // namespace adn

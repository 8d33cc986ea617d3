#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "adn/common.hpp"

namespace adn {

enum class DerKind { dg, pv, bess, vshp };

std::string to_string(DerKind kind);
DerKind der_kind_from_string(const std::string& s);

struct DgParams {
  double governor_time_constant = 10.0;  // s
  double exciter_time_constant = 1.0;    // s
  double p_min = 0.0;                    // pu, minimum active output
};

struct PvParams {
  double available_factor = 0.9;  // fraction of peak power available
  double min_power_factor = 0.9;
};

struct BessParams {
  double energy_capacity = 0.0;  // pu * s
  double soc_min = 0.1;
  double soc_max = 0.9;
};

struct VshpParams {
  double power_factor = 1.0;        // cos(phi), 1 = unity
  double time_constant = 2.0;       // s, per stage of the third-order lag
  double min_consumption = 0.0;     // pu
  double max_consumption = 0.0;     // pu
};

/// Half-space representation A x <= b over (P, Q), rows normalized to unit
/// Euclidean norm so slack values are distances.
struct CapabilityPolytope {
  Eigen::MatrixXd a;  // m x 2
  Eigen::VectorXd b;  // m

  bool contains(double p, double q, double tol = 1e-9) const;
  /// Largest constraint violation at (p, q); <= 0 inside.
  double violation(double p, double q) const;
};

CapabilityPolytope build_capability(DerKind kind, double rating,
                                    const DgParams& dg, const PvParams& pv,
                                    const VshpParams& vshp);

/// One controllable unit. Setpoints are the schedule baseline; outputs carry
/// the simulated plant state. All powers are generation positive, so a VSHP
/// consuming 0.2 pu has p_set = -0.2.
struct DerUnit {
  DerKind kind = DerKind::pv;
  int node = 0;        // topological node index
  double rating = 0.0; // pu apparent power
  double p_set = 0.0;
  double q_set = 0.0;
  double p_out = 0.0;
  double q_out = 0.0;

  DgParams dg;
  PvParams pv;
  BessParams bess;
  VshpParams vshp;

  double soc = 0.5;                            // bess only
  Eigen::Vector3d vshp_state = Eigen::Vector3d::Zero();  // vshp only

  CapabilityPolytope capability;
};

/// Advance one unit by one sampling period under the adjustment levels
/// (dp, dq) relative to the baseline setpoints.
void step_der(DerUnit& unit, double dp, double dq, double t_s);

/// Deviation-coordinate prediction model x' = A x + B u + affine with state
/// (dP_1..n_g, dQ_1..n_g, soc_1..n_b, nu_1..3n_v) and input
/// (dP*_1..n_g, dQ*_1..n_g). n_s = 2 n_g + n_b + 3 n_v.
struct PredictionModel {
  Eigen::MatrixXd a;       // n_s x n_s
  Eigen::MatrixXd b;       // n_s x 2 n_g
  Eigen::VectorXd affine;  // n_s, drift from the baseline setpoints
  int n_g = 0;
  std::vector<int> soc_index;  // state index of each BESS soc, fleet order
  std::vector<int> nu_index;   // first nu state index of each VSHP
};

PredictionModel assemble_prediction_model(const std::vector<DerUnit>& fleet,
                                          double t_s);

/// Build a unit from its declaration, including capability and baseline
/// output initialization. Throws ConfigError when the capability polytope is
/// empty or the baseline setpoint falls outside it.
DerUnit make_der_unit(DerKind kind, int node, double rating, double p_set,
                      double q_set, const DgParams& dg, const PvParams& pv,
                      const BessParams& bess, const VshpParams& vshp,
                      double initial_soc = 0.5);

}  // namespace adn

#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "adn/bfs_matrices.hpp"

namespace adn {

/// Nodal power injections over non-slack nodes, generation positive.
struct InjectionVector {
  Eigen::VectorXd p;
  Eigen::VectorXd q;
};

/// Bus voltages, branch currents (oriented parent -> child, i.e. the current
/// supplied from the substation side) and the complex feeder power drawn from
/// the transmission grid (import positive).
struct NetworkState {
  Eigen::VectorXcd v;         // non-slack nodes, topo order
  Eigen::VectorXcd i_branch;  // branches, topo order
  cplx feeder_power;          // V_s * conj(I_feeder)
};

/// Change of branch currents and bus voltages caused by DER injection changes
/// via the superimposed circuit. Same orientation conventions as NetworkState.
struct SuperposedDelta {
  Eigen::VectorXcd delta_i;
  Eigen::VectorXcd delta_v;
};

/// One linearized BFS sweep about the voltages `vbar`.
NetworkState linear_bfs_step(const BfsMatrices& m, const InjectionVector& inj,
                             const Eigen::VectorXcd& vbar);

/// Superimposed-circuit response to DER injection changes (generation
/// positive, length n_g, ordered like `reduced.der_nodes`).
SuperposedDelta superposed_delta(const ReducedMatrices& reduced,
                                 const Eigen::VectorXd& delta_p,
                                 const Eigen::VectorXd& delta_q);

/// BFS iterated to convergence; the exact power-flow reference used as oracle
/// against the single-iteration linear model.
NetworkState nonlinear_powerflow(const NetworkTopology& topo,
                                 const InjectionVector& inj,
                                 double slack_voltage = 1.0, double tol = 1e-8,
                                 int max_iter = 100);

struct ErrorSurfacePoint {
  double k_p = 0.0;
  double k_q = 0.0;
  double rel_err_2norm = 0.0;
  double rel_err_max = 0.0;
  bool converged = false;
};

struct ErrorSurface {
  std::vector<ErrorSurfacePoint> points;
  double max_rel_err_2norm() const;
  std::string to_csv() const;
};

/// Continuation analysis of the linearization error: for each (k_p, k_q) on a
/// regular grid of the unit square, DER injections are ramped to
/// (k_p * p_max, k_q * q_max) and the superimposed linear prediction is
/// compared against the converged nonlinear solution. The error metric is the
/// 2-norm (and max-norm) of the elementwise relative voltage-magnitude error.
/// Grid points where the nonlinear solve diverges are flagged, not fatal.
ErrorSurface continuation_error_surface(const NetworkTopology& topo,
                                        const std::vector<int>& der_nodes,
                                        const Eigen::VectorXd& p_max,
                                        const Eigen::VectorXd& q_max,
                                        const InjectionVector& base_injections,
                                        double granularity = 0.01,
                                        double slack_voltage = 1.0,
                                        int threads = 0);

}  // namespace adn

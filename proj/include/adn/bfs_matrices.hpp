#pragma once

#include <Eigen/Dense>
#include <vector>

#include "adn/topology.hpp"

namespace adn {

/// Path-indicator and impedance-accumulation matrices of the radial feeder.
/// BIBC maps nodal current injections to branch currents, BCBV maps branch
/// currents to voltage drops, DLF = BCBV * BIBC.
struct BfsMatrices {
  Eigen::MatrixXd bibc;   // N x N, 0/1, unit upper triangular
  Eigen::MatrixXcd bcbv;  // N x N
  Eigen::MatrixXcd dlf;   // N x N
  double slack_voltage = 1.0;
};

BfsMatrices build_bfs_matrices(const NetworkTopology& topo,
                               double slack_voltage);

/// Column restriction of the BFS matrices to the DER injection nodes, used by
/// the superimposed-circuit map. Columns follow the order of `der_nodes`.
struct ReducedMatrices {
  Eigen::MatrixXd bibc_r;    // N x n_g
  Eigen::MatrixXcd dlf_r;    // N x n_g
  Eigen::VectorXcd v_bar_r;  // n_g, linearization voltages at DER nodes
  Eigen::RowVectorXd feeder_row;  // 1 x n_g, the main-feeder row of bibc_r
  double slack_voltage = 1.0;
  std::vector<int> der_nodes;  // topological node indices
};

/// `der_nodes` are topological node indices (1..N); `vbar_nodes` holds the
/// linearization voltages for all non-slack nodes (length N, node n at n-1).
ReducedMatrices reduce_for_ders(const BfsMatrices& m,
                                const std::vector<int>& der_nodes,
                                const Eigen::VectorXcd& vbar_nodes);

}  // namespace adn

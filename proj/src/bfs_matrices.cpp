#include "adn/bfs_matrices.hpp"

namespace adn {

BfsMatrices build_bfs_matrices(const NetworkTopology& topo,
                               double slack_voltage) {
  const int n = topo.branch_count();
  BfsMatrices m;
  m.slack_voltage = slack_voltage;
  m.bibc = Eigen::MatrixXd::Zero(n, n);
  m.bcbv = Eigen::MatrixXcd::Zero(n, n);
  for (int node = 1; node <= n; ++node) {
    for (int b : topo.path_branches(node)) {
      m.bibc(b, node - 1) = 1.0;
      m.bcbv(node - 1, b) = topo.branch_impedance(b);
    }
  }
  m.dlf = m.bcbv * m.bibc;
  return m;
}

ReducedMatrices reduce_for_ders(const BfsMatrices& m,
                                const std::vector<int>& der_nodes,
                                const Eigen::VectorXcd& vbar_nodes) {
  const int n = static_cast<int>(m.bibc.rows());
  const int n_g = static_cast<int>(der_nodes.size());
  if (vbar_nodes.size() != n)
    throw ConfigError("linearization voltage vector has wrong length");

  ReducedMatrices r;
  r.slack_voltage = m.slack_voltage;
  r.der_nodes = der_nodes;
  r.bibc_r.resize(n, n_g);
  r.dlf_r.resize(n, n_g);
  r.v_bar_r.resize(n_g);
  for (int j = 0; j < n_g; ++j) {
    const int node = der_nodes[j];
    if (node < 1 || node > n)
      throw ConfigError("DER node index " + std::to_string(node) +
                        " out of range");
    const cplx v = vbar_nodes(node - 1);
    if (std::abs(v) == 0.0)
      throw NumericsError("zero linearization voltage at node " +
                          std::to_string(node));
    if (std::abs(v) <= 0.5 || std::abs(v) >= 1.5)
      throw NumericsError("linearization voltage magnitude " +
                          std::to_string(std::abs(v)) + " at node " +
                          std::to_string(node) + " outside (0.5, 1.5) pu");
    r.bibc_r.col(j) = m.bibc.col(node - 1);
    r.dlf_r.col(j) = m.dlf.col(node - 1);
    r.v_bar_r(j) = v;
  }
  r.feeder_row = r.bibc_r.row(0);
  return r;
}

}  // namespace adn

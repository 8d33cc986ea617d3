#include "adn/estimation.hpp"

#include <random>

namespace adn {

Eigen::VectorXcd EstimatedState::voltages() const {
  const int n = static_cast<int>(x_hat.size()) / 2;
  Eigen::VectorXcd v(n);
  for (int k = 0; k < n; ++k) v(k) = cplx(x_hat(k), x_hat(n + k));
  return v;
}

EstimatedState wls_estimate(const MeasurementSet& m) {
  const int n_y = static_cast<int>(m.values.size());
  const int n_x = static_cast<int>(m.mapping.cols());
  if (m.mapping.rows() != n_y || m.offset.size() != n_y ||
      m.noise_var.size() != n_y)
    throw ConfigError("measurement set dimension mismatch");
  // Zero variance marks an exact (noise-free) channel; give it unit weight
  // so the clean-sensor configuration stays solvable.
  Eigen::VectorXd w_sqrt(n_y);
  for (int k = 0; k < n_y; ++k) {
    if (m.noise_var(k) < 0.0)
      throw ConfigError("noise covariance diagonal must be nonnegative");
    w_sqrt(k) = m.noise_var(k) > 0.0 ? 1.0 / std::sqrt(m.noise_var(k)) : 1.0;
  }
  const Eigen::MatrixXd hw = w_sqrt.asDiagonal() * m.mapping;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(hw);
  qr.setThreshold(1e-10);
  if (qr.rank() < n_x)
    throw NumericsError("measurement mapping rank deficient (" +
                        std::to_string(qr.rank()) + " < " +
                        std::to_string(n_x) + "): network unobservable");

  const Eigen::VectorXd rhs = w_sqrt.asDiagonal() * (m.values - m.offset);
  EstimatedState est;
  est.x_hat = qr.solve(rhs);
  est.residual_norm = (hw * est.x_hat - rhs).norm();
  return est;
}

MeasurementSet build_measurement_model(const NetworkTopology& topo,
                                       const SensorSuite& suite,
                                       double slack_voltage) {
  const int n = topo.branch_count();
  const int n_y = 2 * n + 2 * n;  // voltage pairs + branch current pairs
  MeasurementSet m;
  m.mapping = Eigen::MatrixXd::Zero(n_y, 2 * n);
  m.offset = Eigen::VectorXd::Zero(n_y);
  m.noise_var = Eigen::VectorXd::Zero(n_y);
  m.values = Eigen::VectorXd::Zero(n_y);

  int row = 0;
  for (int node = 1; node <= n; ++node) {  // Re V_node, Im V_node
    m.mapping(row, node - 1) = 1.0;
    m.noise_var(row++) = suite.sigma_v * suite.sigma_v;
    m.mapping(row, n + node - 1) = 1.0;
    m.noise_var(row++) = suite.sigma_v * suite.sigma_v;
  }
  for (int b = 0; b < n; ++b) {
    // I_b = (V_parent - V_child) / z_b with child = b + 1.
    const int child = b + 1;
    const int par = topo.parent(child);
    const cplx inv_z = 1.0 / topo.branch_impedance(b);
    // Re I = Re(inv_z)*dRe - Im(inv_z)*dIm ; Im I = Im(inv_z)*dRe + Re(inv_z)*dIm
    auto add = [&](int r, double c_re, double c_im) {
      if (par == 0) {
        m.offset(r) += c_re * slack_voltage;  // slack has zero imaginary part
      } else {
        m.mapping(r, par - 1) += c_re;
        m.mapping(r, n + par - 1) += c_im;
      }
      m.mapping(r, child - 1) -= c_re;
      m.mapping(r, n + child - 1) -= c_im;
    };
    add(row, inv_z.real(), -inv_z.imag());
    m.noise_var(row++) = suite.sigma_i * suite.sigma_i;
    add(row, inv_z.imag(), inv_z.real());
    m.noise_var(row++) = suite.sigma_i * suite.sigma_i;
  }
  return m;
}

MeasurementSet synthesize_measurements(const MeasurementSet& model,
                                       const Eigen::VectorXcd& true_voltages,
                                       std::uint64_t seed) {
  const int n = static_cast<int>(true_voltages.size());
  Eigen::VectorXd x(2 * n);
  for (int k = 0; k < n; ++k) {
    x(k) = true_voltages(k).real();
    x(n + k) = true_voltages(k).imag();
  }
  MeasurementSet out = model;
  out.values = model.mapping * x + model.offset;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  for (int k = 0; k < out.values.size(); ++k) {
    const double sigma = std::sqrt(model.noise_var(k));
    if (sigma > 0.0) out.values(k) += sigma * unit(rng);
  }
  return out;
}

}  // namespace adn

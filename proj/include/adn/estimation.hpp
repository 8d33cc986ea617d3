#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "adn/powerflow.hpp"

namespace adn {

/// Affine measurement model y = H x + offset + noise over the rectangular
/// voltage state x = (Re V_1..N, Im V_1..N), with independent Gaussian noise.
struct MeasurementSet {
  Eigen::VectorXd values;     // N_y
  Eigen::MatrixXd mapping;    // N_y x 2N
  Eigen::VectorXd offset;     // N_y
  Eigen::VectorXd noise_var;  // N_y, diagonal of the covariance
};

struct EstimatedState {
  Eigen::VectorXd x_hat;  // 2N rectangular voltage components
  double residual_norm = 0.0;

  Eigen::VectorXcd voltages() const;
};

/// Weighted least squares with W = diag(1/noise_var), solved via the normal
/// equations. Throws NumericsError when the mapping is rank deficient
/// (unobservable network).
EstimatedState wls_estimate(const MeasurementSet& m);

/// Sensor suite used by the simulator: voltage phasors at every non-slack node
/// plus branch current phasors (real/imaginary pairs each).
struct SensorSuite {
  double sigma_v = 0.001;  // pu, voltage phasor components
  double sigma_i = 0.01;   // pu, branch current phasor components
};

/// Build the affine mapping for the default sensor suite. Current rows use
/// I_b = (V_parent - V_child) / z_b, with the substation voltage folded into
/// the offset.
MeasurementSet build_measurement_model(const NetworkTopology& topo,
                                       const SensorSuite& suite,
                                       double slack_voltage);

/// Populate `values` from a true state plus seeded Gaussian noise. Pure in
/// (model, state, seed): the same seed reproduces the same draw.
MeasurementSet synthesize_measurements(const MeasurementSet& model,
                                       const Eigen::VectorXcd& true_voltages,
                                       std::uint64_t seed);

}  // namespace adn

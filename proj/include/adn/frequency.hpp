#pragma once

#include <Eigen/Dense>
#include <vector>

#include "adn/common.hpp"

namespace adn {

/// Proportional droop with saturation at the contracted reserve caps.
/// Used for PFC (gain in pu/Hz) and VC (gain in pu per pu-volt).
struct DroopRule {
  double gain = 0.0;
  double cap_up = 0.0;
  double cap_down = 0.0;

  double respond(double deviation) const;
  void validate() const;
};

/// Parameters of the second-order center-of-inertia frequency model.
struct FrequencyModelParams {
  double inertia = 10.0;            // M, s
  double turbine_time_constant = 8.0;  // T, s
  double damping = 1.0;             // D
  double droop_aggregate = 15.0;    // R_g
  double turbine_fraction = 0.8;    // F_g

  double natural_frequency() const;  // omega_n
  double damping_ratio() const;      // zeta
  void validate() const;
};

struct FrequencyState {
  double omega = 0.0;      // Hz deviation
  double omega_dot = 0.0;  // Hz/s
};

/// Exact zero-order-hold discretization of the frequency model, with the
/// power imbalance (positive = generation deficit) as input. A positive
/// constant imbalance dP settles at omega = -dP / (D + R_g).
struct DiscreteFrequencyModel {
  Eigen::Matrix2d a;
  Eigen::Vector2d b;
  double step = 0.0;

  FrequencyState advance(const FrequencyState& x, double imbalance) const;
};

DiscreteFrequencyModel discretize_frequency_model(
    const FrequencyModelParams& params, double step);

/// Frequency deviations at steps 1..horizon under a constant imbalance.
std::vector<double> predict_frequency(const DiscreteFrequencyModel& model,
                                      const FrequencyState& initial,
                                      double imbalance, int horizon);

/// PI emulation of the TSO's automatic generation control. Stateful; owned by
/// the simulation loop. The output is the SFC power adjustment requested from
/// the DN (import-deviation convention: negative under low frequency),
/// clamped to the contracted reserve.
class AgcEmulator {
 public:
  AgcEmulator(double kp, double ki, double bias, double output_cap);

  /// Advance by one step (trapezoidal integration of the area control error)
  /// and return the SFC request. `tieline_deviation` is export-positive.
  double step(double freq_deviation_hz, double tieline_deviation, double dt);

  double integral() const { return integral_; }
  void reset();

 private:
  double kp_, ki_, bias_, cap_;
  double integral_ = 0.0;
  double prev_error_ = 0.0;
  bool has_prev_ = false;
};

}  // namespace adn

#include "adn/frequency.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>

namespace adn {

double DroopRule::respond(double deviation) const {
  const double raw = gain * deviation;
  return deviation >= 0.0 ? std::min(cap_up, raw) : std::max(cap_down, raw);
}

void DroopRule::validate() const {
  if (gain < 0.0) throw ConfigError("droop gain must be nonnegative");
  if (cap_down > 0.0 || cap_up < 0.0)
    throw ConfigError("droop caps must satisfy cap_down <= 0 <= cap_up");
}

double FrequencyModelParams::natural_frequency() const {
  return std::sqrt((damping + droop_aggregate) /
                   (inertia * turbine_time_constant));
}

double FrequencyModelParams::damping_ratio() const {
  const double num =
      inertia + turbine_time_constant * (damping + turbine_fraction);
  const double den = 2.0 * std::sqrt(inertia * turbine_time_constant *
                                     (damping + droop_aggregate));
  return num / den;
}

void FrequencyModelParams::validate() const {
  if (inertia <= 0.0 || turbine_time_constant <= 0.0 || damping <= 0.0 ||
      droop_aggregate <= 0.0 || turbine_fraction <= 0.0)
    throw ConfigError("frequency model parameters must be positive");
}

FrequencyState DiscreteFrequencyModel::advance(const FrequencyState& x,
                                               double imbalance) const {
  const Eigen::Vector2d xv(x.omega, x.omega_dot);
  const Eigen::Vector2d next = a * xv + b * imbalance;
  return {next(0), next(1)};
}

DiscreteFrequencyModel discretize_frequency_model(
    const FrequencyModelParams& params, double step) {
  params.validate();
  if (step <= 0.0) throw ConfigError("discretization step must be positive");
  const double wn = params.natural_frequency();
  const double zeta = params.damping_ratio();
  // Continuous pair: omega'' = -wn^2 omega - 2 zeta wn omega' - dP/(T M).
  Eigen::Matrix3d aug = Eigen::Matrix3d::Zero();
  aug(0, 1) = 1.0;
  aug(1, 0) = -wn * wn;
  aug(1, 1) = -2.0 * zeta * wn;
  aug(1, 2) = -1.0 / (params.turbine_time_constant * params.inertia);
  const Eigen::Matrix3d expm = (aug * step).exp();
  DiscreteFrequencyModel d;
  d.a = expm.topLeftCorner<2, 2>();
  d.b = expm.topRightCorner<2, 1>();
  d.step = step;
  return d;
}

std::vector<double> predict_frequency(const DiscreteFrequencyModel& model,
                                      const FrequencyState& initial,
                                      double imbalance, int horizon) {
  if (horizon < 1) throw ConfigError("prediction horizon must be >= 1");
  std::vector<double> traj;
  traj.reserve(horizon);
  FrequencyState x = initial;
  for (int k = 0; k < horizon; ++k) {
    x = model.advance(x, imbalance);
    traj.push_back(x.omega);
  }
  return traj;
}

AgcEmulator::AgcEmulator(double kp, double ki, double bias, double output_cap)
    : kp_(kp), ki_(ki), bias_(bias), cap_(output_cap) {
  if (kp < 0.0 || ki < 0.0) throw ConfigError("AGC gains must be nonnegative");
  if (output_cap <= 0.0) throw ConfigError("AGC output cap must be positive");
}

double AgcEmulator::step(double freq_deviation_hz, double tieline_deviation,
                         double dt) {
  if (dt <= 0.0) throw ConfigError("AGC step must be positive");
  const double error = tieline_deviation + bias_ * freq_deviation_hz;
  const double prev = has_prev_ ? prev_error_ : error;
  const double candidate = integral_ + 0.5 * dt * (prev + error);
  const double unsat = kp_ * error + ki_ * candidate;
  // Anti-windup: freeze the integrator while the error keeps pushing the
  // already-saturated output further into the clamp.
  const bool winding = (unsat > cap_ && error > 0.0) ||
                       (unsat < -cap_ && error < 0.0);
  if (!winding) integral_ = candidate;
  const double out = std::clamp(unsat, -cap_, cap_);
  prev_error_ = error;
  has_prev_ = true;
  return out;
}

void AgcEmulator::reset() {
  integral_ = 0.0;
  prev_error_ = 0.0;
  has_prev_ = false;
}

}  // namespace adn

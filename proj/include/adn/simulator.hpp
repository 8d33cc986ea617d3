#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "adn/estimation.hpp"
#include "adn/frequency.hpp"
#include "adn/mpc.hpp"

namespace adn {

enum class EventKind { generation_loss, line_trip, setpoint_change };

std::string to_string(EventKind kind);
EventKind event_kind_from_string(const std::string& s);

/// One disturbance. generation_loss adds a pu power imbalance to the
/// frequency model, line_trip steps the Thevenin resistance, setpoint_change
/// shifts the plant-side baseline of one unit without telling the controller.
struct Event {
  double time = 0.0;
  EventKind kind = EventKind::generation_loss;
  double magnitude = 0.0;
  int unit = 0;  // fleet index, setpoint_change only
};

/// Upstream grid as seen from the feeder head: stiff source behind an
/// impedance, on its own MVA base.
struct TransmissionParams {
  double resistance = 0.01;  // pu on base_mva
  double reactance = 0.05;
  double base_mva = 10.0;
};

struct AgcParams {
  double kp = 0.0;
  double ki = 0.08;
  double bias = 16.0;  // pu per Hz, frequency-bias factor of the ACE
  double cap = 1.0;    // contracted SFC reserve
};

struct Scenario {
  std::string network_file;
  std::vector<DerUnit> fleet;
  MpcConfig controller;
  TransmissionParams transmission;
  AgcParams agc;
  SensorSuite sensors;
  /// Closed: the feeder's delivered deviation feeds back into the frequency
  /// model's imbalance. Open (default): frequency evolves externally.
  bool closed_frequency_coupling = false;
  /// Plant DER time constants scaled by this factor relative to the
  /// controller's prediction model; 1 means plant == model.
  double plant_mismatch = 1.0;
  std::vector<Event> events;
  double duration = 60.0;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Parse a scenario JSON file. Relative network paths resolve against the
/// scenario file's directory. `overrides` are (json-pointer-ish key, value)
/// pairs applied before construction; keys use '.' separators, values are
/// parsed as JSON literals with a string fallback.
Scenario load_scenario(
    const std::string& path,
    const std::vector<std::pair<std::string, std::string>>& overrides = {});

/// One fast step of the closed-loop record.
struct TraceRow {
  double time = 0.0;
  double freq = 0.0;   // Hz deviation
  double rocof = 0.0;  // Hz/s
  double slack_voltage = 0.0;
  double feeder_dp = 0.0;  // export-positive deviation from schedule
  double feeder_dq = 0.0;
  double ref_pfc = 0.0, ref_sfc = 0.0, ref_vc = 0.0;
  double att_pfc = 0.0, att_sfc = 0.0, att_q = 0.0;  // fleet-summed outputs
  Eigen::VectorXd der_p, der_q, der_soc;             // plant outputs
  Eigen::VectorXd cmd_dp, cmd_dq, cmd_slow;
  Eigen::VectorXd v_mag;    // non-slack nodes
  Eigen::VectorXd loading;  // |I| / I_max per branch
  cplx feeder_power;        // import-positive, plant bookkeeping
  cplx feeder_check;        // slack voltage x conj(head current)
  bool solver_ok = true;
  int iterations = 0;
  double solve_time_s = 0.0;
  double slack_max = 0.0;
};

struct ScenarioTrace {
  std::vector<TraceRow> rows;
  double t_fast = 1.0;
  int ratio = 10;
  std::uint64_t seed = 1;
  bool aborted = false;
  std::string abort_reason;
  std::vector<std::string> event_log;
  int solver_failures = 0;
  int voltage_violations = 0;  // steps with a node outside the band
  double peak_delta_q = 0.0;   // largest reactive feeder deviation (export)

  std::string to_csv() const;
  std::string summary_json() const;
};

/// Run the closed loop: frequency model + AGC upstream, quasi-static network
/// with a Thevenin-coupled slack voltage, plant DER dynamics, WLS estimation
/// from noisy phasor measurements, and the receding-horizon dispatcher at its
/// two rates. Power-flow divergence aborts with the trace so far.
ScenarioTrace run_scenario(const Scenario& scenario);

/// Write `content` to `path` via a temp file and atomic rename.
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace adn

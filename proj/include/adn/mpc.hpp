#pragma once

#include <memory>
#include <string>
#include <vector>

#include "adn/der.hpp"
#include "adn/estimation.hpp"
#include "adn/frequency.hpp"
#include "adn/powerflow.hpp"
#include "adn/qp.hpp"

namespace adn {

/// Two-rate input grid: fast commands every `t_fast` seconds, slow commands
/// every `t_slow = ratio * t_fast`. The prediction horizon spans `horizon`
/// fast steps.
struct MultirateSchedule {
  double t_fast = 1.0;
  double t_slow = 10.0;
  int horizon = 30;

  int ratio() const;  // t_slow / t_fast, validated integer
  bool is_slow_instant(long k) const { return k % ratio() == 0; }
  /// Number of scalar inputs decided over one horizon window that starts at
  /// a slow instant: 2 n_g fast inputs per step plus n_g slow inputs at each
  /// slow instant inside the window.
  int decision_length(int n_g) const;
  void validate() const;
};

/// Quadratic input weights. Per service, reactive adjustments are cheapest
/// and slow redispatch is dearest; per unit kind, solar curtails cheapest
/// and the synchronous machine is the most expensive to move.
struct CostProfile {
  double c_q = 1.0;  // reactive channel
  double c_p = 2.0;  // fast active channel
  double c_a = 4.0;  // slow active channel
  double scale_pv = 1.0;
  double scale_bess = 2.0;
  double scale_vshp = 5.0;
  double scale_dg = 10.0;
  double loss_weight = 0.1;
  /// "delta": penalize branch-current changes relative to the schedule (the
  /// unforced optimum is then exactly zero input). "absolute": penalize the
  /// full predicted currents.
  std::string loss_reference = "delta";
  /// Slack weight per unit of the dearest input cost. Large enough that a
  /// shortfall is never taken when delivery is possible, small enough not to
  /// wreck the conditioning of the solve.
  double slack_penalty_factor = 50.0;

  double kind_scale(DerKind kind) const;
  void validate() const;
};

struct ControllerLimits {
  double v_min = 0.9;
  double v_max = 1.1;
  double current_margin = 1.2;  // multiple of the scheduled branch loading
  double v_ref = 1.0;           // feeder-head voltage target of the VC droop
  /// A hit-the-iteration-cap solve is still applied when its optimality
  /// residuals are below this; otherwise the previous command is held.
  double accept_residual = 1e-4;
};

inline QpSettings default_mpc_qp_settings() {
  QpSettings s;
  // The controller's QPs mix pu physics with heavy penalty terms; a larger
  // initial step parameter converges much faster on the congested cases.
  s.rho = 10.0;
  // Relative-dominated termination: accept a plan once the residuals are
  // small against the problem's own scale rather than in absolute units.
  s.eps_abs = 1e-8;
  s.eps_rel = 1e-6;
  return s;
}

struct MpcConfig {
  MultirateSchedule schedule;
  CostProfile costs;
  ControllerLimits limits;
  DroopRule pfc_droop{5.0, 1.0, -1.0};   // pu per Hz, caps at the PFC reserve
  DroopRule vc_droop{10.0, 0.5, -0.5};   // pu per pu-volt, caps at the VC reserve
  FrequencyModelParams freq;
  QpSettings qp = default_mpc_qp_settings();
};

/// Feeder-delivery targets of one control step, all export-positive.
struct DeliveryTargets {
  std::vector<double> pfc;  // per prediction step 1..H
  double sfc = 0.0;
  double vc = 0.0;
  double rho_p = 0.0;  // unexplained feeder deviations folded into the targets
  double rho_q = 0.0;
};

/// Measurements handed to the controller at one fast step.
struct ControlInputs {
  Eigen::VectorXcd voltages;  // estimated non-slack voltages, topo order
  double slack_voltage = 1.0;
  cplx feeder_power;          // estimated import at the main feeder
  FrequencyState freq;
  double agc_level = 0.0;     // SFC request, export-positive
  long step_index = 0;
};

struct ControlCommand {
  Eigen::VectorXd dp;  // total active adjustment level per unit, fleet order
  Eigen::VectorXd dq;
  bool solver_ok = true;
  QpStatus status = QpStatus::optimal;
  int iterations = 0;
  double solve_time_s = 0.0;
  double objective = 0.0;
  double slack_max = 0.0;  // worst delivery shortfall in the plan
};

/// Receding-horizon dispatcher of the DER fleet. Owns the prediction model,
/// the per-channel output attribution and the slow-command hold; each call to
/// step() assembles and solves one QP.
class MpcController {
 public:
  MpcController(const NetworkTopology& topo, std::vector<DerUnit> fleet,
                MpcConfig config);

  ControlCommand step(const ControlInputs& inputs);

  const std::vector<DerUnit>& fleet() const { return fleet_; }
  const MpcConfig& config() const { return config_; }
  /// Scheduled operating point (baseline loads plus DER setpoints).
  const NetworkState& scheduled_state() const { return sched_; }
  const DeliveryTargets& last_targets() const { return targets_; }
  const QpProblem& last_problem() const { return problem_; }
  const QpSolution& last_solution() const { return last_sol_; }
  /// One JSON object describing the most recent step.
  std::string last_diagnostics() const { return diagnostics_; }

  /// Attributed output deviation of each unit on the fast / slow / reactive
  /// channels (controller bookkeeping, used by the delivery correction).
  Eigen::VectorXd attributed_fast() const;
  Eigen::VectorXd attributed_slow() const;
  Eigen::VectorXd attributed_q() const;

  /// Slow-channel command currently in force per unit (held between slow
  /// instants).
  Eigen::VectorXd slow_commands() const;

 private:
  struct ChannelState {
    double p_fast = 0.0;  // first-order outputs (dg)
    double p_slow = 0.0;
    double q = 0.0;
    Eigen::Vector3d nu_fast = Eigen::Vector3d::Zero();  // vshp cascades
    Eigen::Vector3d nu_slow = Eigen::Vector3d::Zero();
    double soc = 0.5;  // bess
    double lvl_held = 0.0;  // slow command currently in force
    double u_fast = 0.0;    // fast commands currently in force
    double u_q = 0.0;
  };

  DeliveryTargets compute_targets(const ControlInputs& inputs) const;
  void assemble(const ControlInputs& inputs, const DeliveryTargets& targets);
  void advance_attribution(const ControlCommand& cmd);

  NetworkTopology topo_;
  std::vector<DerUnit> fleet_;
  MpcConfig config_;
  DiscreteFrequencyModel freq_model_;
  NetworkState sched_;          // scheduled power flow
  InjectionVector sched_inj_;
  BfsMatrices bfs_;
  Eigen::VectorXd i_max_;       // per-branch current limits
  std::vector<int> der_nodes_;  // topo node per fleet entry
  std::vector<ChannelState> channels_;
  QpSolver solver_;
  QpProblem problem_;
  DeliveryTargets targets_;
  std::string diagnostics_;
  Eigen::VectorXd warm_;  // most recent accepted plan
  std::vector<Eigen::VectorXd> warm_by_phase_;
  std::vector<Eigen::VectorXd> warm_dual_by_phase_;
  ControlCommand last_cmd_;
  QpSolution last_sol_;
  bool has_last_cmd_ = false;

  // Variable layout of the most recent assembly.
  struct Layout;
  std::unique_ptr<Layout> layout_;

 public:
  ~MpcController();
  MpcController(MpcController&&) noexcept;
};

}  // namespace adn

#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <iosfwd>
#include <string>

#include "adn/common.hpp"

namespace adn {

/// Convex quadratic program
///   minimize    1/2 x' H x + f' x
///   subject to  A_eq x  = b_eq
///               A_in x <= b_in
///               lb <= x <= ub
/// H must be symmetric positive semidefinite. Bounds may be +/-infinity.
struct QpProblem {
  Eigen::SparseMatrix<double> hessian;
  Eigen::VectorXd linear;
  Eigen::SparseMatrix<double> a_eq;
  Eigen::VectorXd b_eq;
  Eigen::SparseMatrix<double> a_ineq;
  Eigen::VectorXd b_ineq;
  Eigen::VectorXd lb;
  Eigen::VectorXd ub;

  int num_vars() const { return static_cast<int>(linear.size()); }
  void validate() const;
};

enum class QpStatus { optimal, max_iterations, primal_infeasible, dual_infeasible };

std::string to_string(QpStatus s);

struct KktResiduals {
  double stationarity = 0.0;
  double primal = 0.0;
  double dual = 0.0;         // dual feasibility: max(0, -mu)
  double complementarity = 0.0;

  double worst() const;
};

struct QpSolution {
  QpStatus status = QpStatus::max_iterations;
  Eigen::VectorXd primal;
  Eigen::VectorXd dual_eq;     // free sign
  Eigen::VectorXd dual_ineq;   // >= 0 at optimum
  Eigen::VectorXd dual_lb;     // >= 0
  Eigen::VectorXd dual_ub;     // >= 0
  Eigen::VectorXd dual_stacked;  // multipliers for [A_eq; A_in; I] rows
  KktResiduals residuals;
  int iterations = 0;
  double solve_time_s = 0.0;
  double objective = 0.0;
};

struct QpSettings {
  int max_iterations = 20000;
  double eps_abs = 1e-7;
  double eps_rel = 1e-7;
  double eps_infeasible = 1e-9;
  double rho = 0.1;
  double sigma = 1e-6;
  double alpha = 1.6;            // over-relaxation
  int check_interval = 25;
  bool adaptive_rho = true;
  bool polish = true;
};

class QpSolver {
 public:
  explicit QpSolver(QpSettings settings = {}) : settings_(settings) {}

  QpSolution solve(const QpProblem& problem) const;
  QpSolution solve(const QpProblem& problem,
                   const Eigen::VectorXd& warm_primal) const;
  /// warm_dual uses the stacked row order of QpSolution::dual_stacked.
  QpSolution solve(const QpProblem& problem, const Eigen::VectorXd& warm_primal,
                   const Eigen::VectorXd& warm_dual) const;

  const QpSettings& settings() const { return settings_; }

 private:
  QpSettings settings_;
};

/// Residuals of the optimality conditions at an arbitrary candidate point;
/// independent of the solver internals so it can serve as a cross-check.
KktResiduals check_kkt(const QpProblem& problem, const QpSolution& solution);

void dump_qp(const QpProblem& problem, std::ostream& os);
QpProblem load_qp(std::istream& is);

}  // namespace adn

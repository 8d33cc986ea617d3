#include "adn/qp.hpp"

#include <Eigen/SparseCholesky>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <vector>

namespace adn {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Internal stacked form: l <= [A_eq; A_in; I] x <= u with per-row penalties.
struct Stacked {
  Eigen::SparseMatrix<double> a;  // m x n
  Eigen::VectorXd l, u;
  int n_eq = 0, n_in = 0, n = 0;
};

Stacked stack_constraints(const QpProblem& p) {
  Stacked s;
  s.n = p.num_vars();
  s.n_eq = static_cast<int>(p.b_eq.size());
  s.n_in = static_cast<int>(p.b_ineq.size());
  const int m = s.n_eq + s.n_in + s.n;
  s.a.resize(m, s.n);
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(p.a_eq.nonZeros() + p.a_ineq.nonZeros() + s.n);
  for (int k = 0; k < p.a_eq.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(p.a_eq, k); it; ++it)
      trip.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()),
                        it.value());
  for (int k = 0; k < p.a_ineq.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(p.a_ineq, k); it; ++it)
      trip.emplace_back(s.n_eq + static_cast<int>(it.row()),
                        static_cast<int>(it.col()), it.value());
  for (int j = 0; j < s.n; ++j)
    trip.emplace_back(s.n_eq + s.n_in + j, j, 1.0);
  s.a.setFromTriplets(trip.begin(), trip.end());

  s.l.resize(m);
  s.u.resize(m);
  s.l.head(s.n_eq) = p.b_eq;
  s.u.head(s.n_eq) = p.b_eq;
  s.l.segment(s.n_eq, s.n_in).setConstant(-kInf);
  s.u.segment(s.n_eq, s.n_in) = p.b_ineq;
  if (p.lb.size() > 0)
    s.l.tail(s.n) = p.lb;
  else
    s.l.tail(s.n).setConstant(-kInf);
  if (p.ub.size() > 0)
    s.u.tail(s.n) = p.ub;
  else
    s.u.tail(s.n).setConstant(kInf);
  return s;
}

Eigen::VectorXd row_penalties(const Stacked& s, double rho) {
  Eigen::VectorXd r(s.l.size());
  for (int i = 0; i < r.size(); ++i)
    r(i) = (s.l(i) == s.u(i)) ? rho * 1e3 : rho;
  return r;
}

Eigen::SparseMatrix<double> kkt_matrix(const Eigen::SparseMatrix<double>& p,
                                       const Stacked& s,
                                       const Eigen::VectorXd& rho,
                                       double sigma) {
  const int n = s.n;
  const int m = static_cast<int>(s.l.size());
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(p.nonZeros() + s.a.nonZeros() + n + m);
  for (int k = 0; k < p.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(p, k); it; ++it)
      trip.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()),
                        it.value());
  for (int j = 0; j < n; ++j) trip.emplace_back(j, j, sigma);
  for (int k = 0; k < s.a.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(s.a, k); it; ++it) {
      trip.emplace_back(n + static_cast<int>(it.row()),
                        static_cast<int>(it.col()), it.value());
      trip.emplace_back(static_cast<int>(it.col()),
                        n + static_cast<int>(it.row()), it.value());
    }
  for (int i = 0; i < m; ++i) trip.emplace_back(n + i, n + i, -1.0 / rho(i));
  Eigen::SparseMatrix<double> kkt(n + m, n + m);
  kkt.setFromTriplets(trip.begin(), trip.end());
  return kkt;
}

double inf_norm(const Eigen::VectorXd& v) {
  return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0;
}

/// Split stacked multipliers back into the problem's dual variables.
void split_duals(const Stacked& s, const Eigen::VectorXd& y, QpSolution* sol) {
  sol->dual_eq = y.head(s.n_eq);
  sol->dual_ineq = y.segment(s.n_eq, s.n_in).cwiseMax(0.0);
  Eigen::VectorXd yb = y.tail(s.n);
  sol->dual_ub = yb.cwiseMax(0.0);
  sol->dual_lb = (-yb).cwiseMax(0.0);
}

/// Equality-constrained solve on the active set to sharpen the ADMM iterate.
bool polish_solution(const QpProblem& p, const Stacked& s,
                     const Eigen::VectorXd& y, QpSolution* sol) {
  const int n = s.n;
  const Eigen::VectorXd ax = s.a * sol->primal;
  std::vector<int> low, upp;
  for (int i = 0; i < y.size(); ++i) {
    const double tol_l = 1e-6 * (1.0 + std::abs(s.l(i)));
    const double tol_u = 1e-6 * (1.0 + std::abs(s.u(i)));
    if (s.l(i) == s.u(i)) {
      upp.push_back(i);  // equality rows always active
    } else if (s.l(i) > -kInf &&
               (y(i) < 0.0 || ax(i) - s.l(i) < tol_l)) {
      low.push_back(i);
    } else if (s.u(i) < kInf &&
               (y(i) > 0.0 || s.u(i) - ax(i) < tol_u)) {
      upp.push_back(i);
    }
  }
  const double delta = 1e-6;
  const Eigen::SparseMatrix<double> at = s.a.transpose();
  Eigen::VectorXd x, yp;
  // The guessed working set may include rows that are merely grazed by the
  // ADMM iterate; those reveal themselves with a wrong-sign multiplier, so
  // drop them and re-solve (a few passes at most).
  for (int attempt = 0; attempt < 4; ++attempt) {
    const int ma = static_cast<int>(low.size() + upp.size());
    std::vector<Eigen::Triplet<double>> trip;
    for (int k = 0; k < p.hessian.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator it(p.hessian, k); it;
           ++it)
        trip.emplace_back(static_cast<int>(it.row()),
                          static_cast<int>(it.col()), it.value());
    for (int j = 0; j < n; ++j) trip.emplace_back(j, j, delta);
    Eigen::VectorXd rhs(n + ma);
    rhs.head(n) = -p.linear;
    int r = n;
    auto add_row = [&](int i, double bound) {
      for (Eigen::SparseMatrix<double>::InnerIterator it(at, i); it; ++it) {
        trip.emplace_back(r, static_cast<int>(it.row()), it.value());
        trip.emplace_back(static_cast<int>(it.row()), r, it.value());
      }
      trip.emplace_back(r, r, -delta);
      rhs(r) = bound;
      ++r;
    };
    for (int i : low) add_row(i, s.l(i));
    for (int i : upp) add_row(i, s.u(i));
    Eigen::SparseMatrix<double> kkt(n + ma, n + ma);
    kkt.setFromTriplets(trip.begin(), trip.end());
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
    ldlt.compute(kkt);
    if (ldlt.info() != Eigen::Success) return false;
    // Iterative refinement against the unregularized system. The active set
    // can contain redundant rows, in which case refinement may diverge, so
    // keep the best iterate seen instead of the last one.
    Eigen::VectorXd t = ldlt.solve(rhs);
    Eigen::VectorXd best = t;
    double best_resid = kInf;
    for (int it = 0; it < 10; ++it) {
      Eigen::VectorXd resid = rhs - kkt * t;
      resid.head(n) += delta * t.head(n);
      resid.tail(ma) -= delta * t.tail(ma);
      const double rn = inf_norm(resid);
      if (rn < best_resid) {
        best_resid = rn;
        best = t;
      }
      if (rn <= 1e-12 || rn > 10.0 * best_resid) break;
      t += ldlt.solve(resid);
    }
    t = best;
    if (!t.allFinite()) return false;

    x = t.head(n);
    yp = Eigen::VectorXd::Zero(y.size());
    r = n;
    for (int i : low) yp(i) = t(r++);
    for (int i : upp) yp(i) = t(r++);

    std::vector<int> keep_low, keep_upp;
    for (int i : low)
      if (yp(i) <= 1e-9) keep_low.push_back(i);
    for (int i : upp)
      if (s.l(i) == s.u(i) || yp(i) >= -1e-9) keep_upp.push_back(i);
    // Re-admit rows the trial point stepped across.
    const Eigen::VectorXd axp = s.a * x;
    for (int i = 0; i < axp.size(); ++i) {
      if (yp(i) != 0.0) continue;
      if (s.l(i) > -kInf && axp(i) < s.l(i) - 1e-9) keep_low.push_back(i);
      else if (s.u(i) < kInf && axp(i) > s.u(i) + 1e-9) keep_upp.push_back(i);
    }
    if (keep_low.size() == low.size() && keep_upp.size() == upp.size()) break;
    low.swap(keep_low);
    upp.swap(keep_upp);
  }

  QpSolution cand = *sol;
  cand.primal = x;
  split_duals(s, yp, &cand);
  cand.residuals = check_kkt(p, cand);
  // Accept only if no residual component degrades: the components live on
  // very different scales, so a drop in the largest one must not buy a
  // worse primal (or any other) residual.
  const KktResiduals& ca = cand.residuals;
  const KktResiduals& cb = sol->residuals;
  const double floor_r = 1e-8;
  if (ca.stationarity <= std::max(cb.stationarity, floor_r) &&
      ca.primal <= std::max(cb.primal, floor_r) &&
      ca.dual <= std::max(cb.dual, floor_r) &&
      ca.complementarity <= std::max(cb.complementarity, floor_r)) {
    *sol = cand;
    return true;
  }
  return false;
}

}  // namespace

void QpProblem::validate() const {
  const int n = num_vars();
  if (n == 0) throw ConfigError("QP has no variables");
  if (hessian.rows() != n || hessian.cols() != n)
    throw ConfigError("QP hessian dimension mismatch");
  if (a_eq.rows() != b_eq.size() || (a_eq.rows() > 0 && a_eq.cols() != n))
    throw ConfigError("QP equality block dimension mismatch");
  if (a_ineq.rows() != b_ineq.size() ||
      (a_ineq.rows() > 0 && a_ineq.cols() != n))
    throw ConfigError("QP inequality block dimension mismatch");
  if (lb.size() > 0 && lb.size() != n)
    throw ConfigError("QP lower bound dimension mismatch");
  if (ub.size() > 0 && ub.size() != n)
    throw ConfigError("QP upper bound dimension mismatch");
  if (lb.size() > 0 && ub.size() > 0 && (ub - lb).minCoeff() < 0.0)
    throw ConfigError("QP has lb > ub");
}

std::string to_string(QpStatus s) {
  switch (s) {
    case QpStatus::optimal: return "optimal";
    case QpStatus::max_iterations: return "max_iterations";
    case QpStatus::primal_infeasible: return "primal_infeasible";
    case QpStatus::dual_infeasible: return "dual_infeasible";
  }
  return "?";
}

double KktResiduals::worst() const {
  return std::max({stationarity, primal, dual, complementarity});
}

QpSolution QpSolver::solve(const QpProblem& problem) const {
  return solve(problem, Eigen::VectorXd());
}

QpSolution QpSolver::solve(const QpProblem& problem,
                           const Eigen::VectorXd& warm_primal) const {
  return solve(problem, warm_primal, Eigen::VectorXd());
}

QpSolution QpSolver::solve(const QpProblem& problem,
                           const Eigen::VectorXd& warm_primal,
                           const Eigen::VectorXd& warm_dual) const {
  const auto t0 = std::chrono::steady_clock::now();
  problem.validate();
  Stacked s = stack_constraints(problem);
  const int n = s.n;
  const int m = static_cast<int>(s.l.size());
  const Stacked unscaled = s;

  // Ruiz equilibration: symmetric diagonal scaling of [P A'; A 0] plus a
  // cost normalization, to make the ADMM step sizes meaningful on problems
  // mixing per-unit physics with large penalty weights.
  Eigen::VectorXd d = Eigen::VectorXd::Ones(n);
  Eigen::VectorXd e = Eigen::VectorXd::Ones(m);
  Eigen::SparseMatrix<double> p_s = problem.hessian;
  for (int pass = 0; pass < 10; ++pass) {
    Eigen::VectorXd cn = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd rn = Eigen::VectorXd::Zero(m);
    for (int k = 0; k < p_s.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator it(p_s, k); it; ++it)
        cn(it.col()) = std::max(cn(it.col()), std::abs(it.value()));
    for (int k = 0; k < s.a.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator it(s.a, k); it; ++it) {
        cn(it.col()) = std::max(cn(it.col()), std::abs(it.value()));
        rn(it.row()) = std::max(rn(it.row()), std::abs(it.value()));
      }
    Eigen::VectorXd dx(n), dz(m);
    for (int j = 0; j < n; ++j)
      dx(j) = cn(j) > 0.0 ? 1.0 / std::sqrt(cn(j)) : 1.0;
    for (int i = 0; i < m; ++i)
      dz(i) = rn(i) > 0.0 ? 1.0 / std::sqrt(rn(i)) : 1.0;
    p_s = dx.asDiagonal() * p_s * dx.asDiagonal();
    s.a = dz.asDiagonal() * s.a * dx.asDiagonal();
    d = d.cwiseProduct(dx);
    e = e.cwiseProduct(dz);
  }
  double cost_scale = 1.0;
  {
    Eigen::VectorXd cn = Eigen::VectorXd::Zero(n);
    for (int k = 0; k < p_s.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator it(p_s, k); it; ++it)
        cn(it.col()) = std::max(cn(it.col()), std::abs(it.value()));
    const double ref = std::max(
        cn.size() ? cn.mean() : 0.0,
        inf_norm(d.cwiseProduct(problem.linear)));
    if (ref > 0.0) cost_scale = 1.0 / ref;
  }
  p_s *= cost_scale;
  const Eigen::VectorXd q_s =
      cost_scale * d.cwiseProduct(problem.linear);
  for (int i = 0; i < m; ++i) {
    if (s.l(i) > -kInf) s.l(i) *= e(i);
    if (s.u(i) < kInf) s.u(i) *= e(i);
  }

  double rho_scale = settings_.rho;
  Eigen::VectorXd rho = row_penalties(s, rho_scale);
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
  ldlt.compute(kkt_matrix(p_s, s, rho, settings_.sigma));
  if (ldlt.info() != Eigen::Success)
    throw SolverError("QP KKT factorization failed");

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  if (warm_primal.size() == n) x = warm_primal.cwiseQuotient(d);
  Eigen::VectorXd z = (s.a * x).cwiseMax(s.l).cwiseMin(s.u);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(m);
  if (warm_dual.size() == m)
    y = cost_scale * warm_dual.cwiseQuotient(e);

  QpSolution sol;
  sol.status = QpStatus::max_iterations;
  Eigen::VectorXd rhs(n + m), x_prev(n), y_prev(m);

  int iter = 0;
  for (iter = 1; iter <= settings_.max_iterations; ++iter) {
    x_prev = x;
    y_prev = y;
    rhs.head(n) = settings_.sigma * x - q_s;
    rhs.tail(m) = z - y.cwiseQuotient(rho);
    Eigen::VectorXd sol_kkt = ldlt.solve(rhs);
    Eigen::VectorXd x_t = sol_kkt.head(n);
    Eigen::VectorXd z_t = z + (sol_kkt.tail(m) - y).cwiseQuotient(rho);

    x = settings_.alpha * x_t + (1.0 - settings_.alpha) * x;
    Eigen::VectorXd z_relax =
        settings_.alpha * z_t + (1.0 - settings_.alpha) * z;
    z = (z_relax + y.cwiseQuotient(rho)).cwiseMax(s.l).cwiseMin(s.u);
    y += rho.cwiseProduct(z_relax - z);

    if (iter % settings_.check_interval != 0 &&
        iter != settings_.max_iterations)
      continue;

    // Residuals are evaluated in the original (unscaled) problem space.
    const Eigen::VectorXd ax = (s.a * x).cwiseQuotient(e);
    const Eigen::VectorXd zu = z.cwiseQuotient(e);
    const Eigen::VectorXd px =
        (p_s * x).cwiseQuotient(d) / cost_scale;
    const Eigen::VectorXd aty =
        (s.a.transpose() * y).cwiseQuotient(d) / cost_scale;
    const double r_prim = inf_norm(ax - zu);
    const double r_dual = inf_norm(px + problem.linear + aty);
    const double eps_prim =
        settings_.eps_abs +
        settings_.eps_rel * std::max(inf_norm(ax), inf_norm(zu));
    const double eps_dual =
        settings_.eps_abs +
        settings_.eps_rel * std::max({inf_norm(px), inf_norm(aty),
                                      inf_norm(problem.linear)});
    if (r_prim <= eps_prim && r_dual <= eps_dual) {
      sol.status = QpStatus::optimal;
      break;
    }

    // Infeasibility certificates from the iterate differences, evaluated
    // against the original data.
    const Eigen::VectorXd dy = e.cwiseProduct(y - y_prev);
    const double dy_norm = inf_norm(dy);
    if (dy_norm > settings_.eps_infeasible) {
      double support = 0.0;
      bool bounded = true;
      for (int i = 0; i < m; ++i) {
        if (dy(i) > 0.0) {
          if (unscaled.u(i) >= kInf) { bounded = false; break; }
          support += unscaled.u(i) * dy(i);
        } else if (dy(i) < 0.0) {
          if (unscaled.l(i) <= -kInf) { bounded = false; break; }
          support += unscaled.l(i) * dy(i);
        }
      }
      if (bounded && inf_norm(unscaled.a.transpose() * dy) <=
                         settings_.eps_infeasible * dy_norm &&
          support < -settings_.eps_infeasible * dy_norm) {
        sol.status = QpStatus::primal_infeasible;
        break;
      }
    }
    const Eigen::VectorXd dx = d.cwiseProduct(x - x_prev);
    const double dx_norm = inf_norm(dx);
    if (dx_norm > settings_.eps_infeasible) {
      const Eigen::VectorXd adx = unscaled.a * dx;
      bool ray = inf_norm(problem.hessian * dx) <=
                     settings_.eps_infeasible * dx_norm &&
                 problem.linear.dot(dx) <
                     -settings_.eps_infeasible * dx_norm;
      for (int i = 0; ray && i < m; ++i) {
        if (adx(i) > settings_.eps_infeasible * dx_norm &&
            unscaled.u(i) < kInf)
          ray = false;
        if (adx(i) < -settings_.eps_infeasible * dx_norm &&
            unscaled.l(i) > -kInf)
          ray = false;
      }
      if (ray) {
        sol.status = QpStatus::dual_infeasible;
        break;
      }
    }

    if (settings_.adaptive_rho && r_prim > 0.0 && r_dual > 0.0) {
      const double ratio = std::sqrt((r_prim / std::max(eps_prim, 1e-30)) /
                                     (r_dual / std::max(eps_dual, 1e-30)));
      // Inequality rows sitting on their bound get the stiff (equality-like)
      // penalty; grazing rows of a degenerate active set otherwise dominate
      // the primal residual with an O(1/k) tail.
      Eigen::VectorXd rho_new = row_penalties(s, rho_scale);
      for (int i = 0; i < m; ++i)
        if (s.l(i) != s.u(i) && (z(i) <= s.l(i) || z(i) >= s.u(i)))
          rho_new(i) *= 1e2;
      const bool scale_move = ratio > 5.0 || ratio < 0.2;
      if (scale_move) {
        rho_scale *= std::clamp(ratio, 1e-2, 1e2);
        rho_scale = std::clamp(rho_scale, 1e-6, 1e6);
        rho_new = row_penalties(s, rho_scale);
        for (int i = 0; i < m; ++i)
          if (s.l(i) != s.u(i) && (z(i) <= s.l(i) || z(i) >= s.u(i)))
            rho_new(i) *= 1e2;
      }
      bool row_move = scale_move;
      for (int i = 0; !row_move && i < m; ++i) {
        const double f = rho_new(i) / rho(i);
        if (f > 5.0 || f < 0.2) row_move = true;
      }
      if (row_move) {
        rho = rho_new;
        ldlt.compute(kkt_matrix(p_s, s, rho, settings_.sigma));
        if (ldlt.info() != Eigen::Success)
          throw SolverError("QP KKT refactorization failed");
      }
    }
  }

  sol.iterations = std::min(iter, settings_.max_iterations);
  sol.primal = d.cwiseProduct(x);
  const Eigen::VectorXd y_u = e.cwiseProduct(y) / cost_scale;
  split_duals(unscaled, y_u, &sol);
  if (sol.status == QpStatus::optimal ||
      sol.status == QpStatus::max_iterations) {
    sol.residuals = check_kkt(problem, sol);
    if (settings_.polish && sol.status == QpStatus::optimal)
      polish_solution(problem, unscaled, y_u, &sol);
    sol.objective = 0.5 * sol.primal.dot(problem.hessian * sol.primal) +
                    problem.linear.dot(sol.primal);
  }
  sol.dual_stacked.resize(m);
  sol.dual_stacked.head(s.n_eq) = sol.dual_eq;
  sol.dual_stacked.segment(s.n_eq, s.n_in) = sol.dual_ineq;
  sol.dual_stacked.tail(n) = sol.dual_ub - sol.dual_lb;
  sol.solve_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return sol;
}

KktResiduals check_kkt(const QpProblem& p, const QpSolution& sol) {
  KktResiduals r;
  const Eigen::VectorXd& x = sol.primal;
  Eigen::VectorXd grad = p.hessian * x + p.linear;
  if (p.a_eq.rows() > 0) grad += p.a_eq.transpose() * sol.dual_eq;
  if (p.a_ineq.rows() > 0) grad += p.a_ineq.transpose() * sol.dual_ineq;
  if (sol.dual_ub.size() == x.size()) grad += sol.dual_ub;
  if (sol.dual_lb.size() == x.size()) grad -= sol.dual_lb;
  r.stationarity = inf_norm(grad);

  double prim = 0.0, comp = 0.0, dual = 0.0;
  if (p.a_eq.rows() > 0)
    prim = std::max(prim, inf_norm(p.a_eq * x - p.b_eq));
  if (p.a_ineq.rows() > 0) {
    Eigen::VectorXd slack = p.a_ineq * x - p.b_ineq;
    prim = std::max(prim, slack.maxCoeff());
    dual = std::max(dual, std::max(0.0, -sol.dual_ineq.minCoeff()));
    comp = std::max(comp, inf_norm(sol.dual_ineq.cwiseProduct(slack)));
  }
  if (p.lb.size() > 0 && sol.dual_lb.size() == x.size()) {
    for (int j = 0; j < x.size(); ++j) {
      if (p.lb(j) <= -kInf) continue;
      prim = std::max(prim, p.lb(j) - x(j));
      comp = std::max(comp, std::abs(sol.dual_lb(j) * (p.lb(j) - x(j))));
    }
    dual = std::max(dual, std::max(0.0, -sol.dual_lb.minCoeff()));
  }
  if (p.ub.size() > 0 && sol.dual_ub.size() == x.size()) {
    for (int j = 0; j < x.size(); ++j) {
      if (p.ub(j) >= kInf) continue;
      prim = std::max(prim, x(j) - p.ub(j));
      comp = std::max(comp, std::abs(sol.dual_ub(j) * (x(j) - p.ub(j))));
    }
    dual = std::max(dual, std::max(0.0, -sol.dual_ub.minCoeff()));
  }
  r.primal = std::max(prim, 0.0);
  r.dual = dual;
  r.complementarity = comp;
  return r;
}

namespace {

void dump_sparse(std::ostream& os, const char* tag,
                 const Eigen::SparseMatrix<double>& m) {
  os << tag << ' ' << m.rows() << ' ' << m.cols() << ' ' << m.nonZeros()
     << '\n';
  for (int k = 0; k < m.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(m, k); it; ++it)
      os << it.row() << ' ' << it.col() << ' ' << it.value() << '\n';
}

void dump_vector(std::ostream& os, const char* tag, const Eigen::VectorXd& v) {
  os << tag << ' ' << v.size() << '\n';
  for (int i = 0; i < v.size(); ++i) os << v(i) << '\n';
}

Eigen::SparseMatrix<double> read_sparse(std::istream& is, const char* tag) {
  std::string name;
  long rows, cols, nnz;
  if (!(is >> name >> rows >> cols >> nnz) || name != tag)
    throw ParseError(std::string("QP dump: expected matrix block '") + tag +
                     "'");
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<size_t>(nnz));
  for (long k = 0; k < nnz; ++k) {
    long r, c;
    double v;
    if (!(is >> r >> c >> v))
      throw ParseError(std::string("QP dump: truncated matrix '") + tag + "'");
    trip.emplace_back(static_cast<int>(r), static_cast<int>(c), v);
  }
  Eigen::SparseMatrix<double> m(rows, cols);
  m.setFromTriplets(trip.begin(), trip.end());
  return m;
}

Eigen::VectorXd read_vector(std::istream& is, const char* tag) {
  std::string name;
  long size;
  if (!(is >> name >> size) || name != tag)
    throw ParseError(std::string("QP dump: expected vector block '") + tag +
                     "'");
  Eigen::VectorXd v(size);
  std::string tok;
  for (long i = 0; i < size; ++i) {
    // std::istream rejects the "inf" spellings it wrote, so parse by token.
    if (!(is >> tok))
      throw ParseError(std::string("QP dump: truncated vector '") + tag + "'");
    try {
      v(i) = std::stod(tok);
    } catch (const std::exception&) {
      throw ParseError(std::string("QP dump: bad value in vector '") + tag +
                       "'");
    }
  }
  return v;
}

}  // namespace

void dump_qp(const QpProblem& p, std::ostream& os) {
  os << std::setprecision(17);
  os << "qp 1\n";
  dump_sparse(os, "hessian", p.hessian);
  dump_vector(os, "linear", p.linear);
  dump_sparse(os, "a_eq", p.a_eq);
  dump_vector(os, "b_eq", p.b_eq);
  dump_sparse(os, "a_ineq", p.a_ineq);
  dump_vector(os, "b_ineq", p.b_ineq);
  dump_vector(os, "lb", p.lb);
  dump_vector(os, "ub", p.ub);
}

QpProblem load_qp(std::istream& is) {
  std::string magic;
  int version;
  if (!(is >> magic >> version) || magic != "qp" || version != 1)
    throw ParseError("QP dump: bad header");
  QpProblem p;
  p.hessian = read_sparse(is, "hessian");
  p.linear = read_vector(is, "linear");
  p.a_eq = read_sparse(is, "a_eq");
  p.b_eq = read_vector(is, "b_eq");
  p.a_ineq = read_sparse(is, "a_ineq");
  p.b_ineq = read_vector(is, "b_ineq");
  p.lb = read_vector(is, "lb");
  p.ub = read_vector(is, "ub");
  p.validate();
  return p;
}

}  // namespace adn

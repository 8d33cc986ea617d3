#include "adn/powerflow.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <thread>

namespace adn {

namespace {

// Load-convention injection currents: current drawn at each node, so that
// branch currents (parent -> child) are BIBC * i and V = V_s - DLF * i.
Eigen::VectorXcd load_currents(const InjectionVector& inj,
                               const Eigen::VectorXcd& vbar) {
  const int n = static_cast<int>(inj.p.size());
  Eigen::VectorXcd i(n);
  for (int k = 0; k < n; ++k) {
    if (std::abs(vbar(k)) == 0.0)
      throw NumericsError("zero linearization voltage at node " +
                          std::to_string(k + 1));
    // generation-positive (p, q) consumed with a minus sign
    i(k) = -cplx(inj.p(k), -inj.q(k)) / std::conj(vbar(k));
  }
  return i;
}

}  // namespace

NetworkState linear_bfs_step(const BfsMatrices& m, const InjectionVector& inj,
                             const Eigen::VectorXcd& vbar) {
  const int n = static_cast<int>(m.bibc.rows());
  if (inj.p.size() != n || inj.q.size() != n || vbar.size() != n)
    throw ConfigError("injection/voltage vector length mismatch");
  const Eigen::VectorXcd i_inj = load_currents(inj, vbar);
  NetworkState s;
  s.i_branch = m.bibc * i_inj;
  s.v = Eigen::VectorXcd::Constant(n, cplx(m.slack_voltage, 0.0)) -
        m.dlf * i_inj;
  s.feeder_power = cplx(m.slack_voltage, 0.0) * std::conj(s.i_branch(0));
  return s;
}

SuperposedDelta superposed_delta(const ReducedMatrices& reduced,
                                 const Eigen::VectorXd& delta_p,
                                 const Eigen::VectorXd& delta_q) {
  const int n_g = static_cast<int>(reduced.v_bar_r.size());
  if (delta_p.size() != n_g || delta_q.size() != n_g)
    throw ConfigError("delta injection vector length mismatch");
  Eigen::VectorXcd c(n_g);
  for (int j = 0; j < n_g; ++j)
    c(j) = cplx(delta_p(j), -delta_q(j)) / std::conj(reduced.v_bar_r(j));
  SuperposedDelta d;
  // Generation-positive injection changes reduce the current supplied from
  // the substation side and raise downstream voltages.
  d.delta_i = -(reduced.bibc_r * c);
  d.delta_v = reduced.dlf_r * c;
  return d;
}

NetworkState nonlinear_powerflow(const NetworkTopology& topo,
                                 const InjectionVector& inj,
                                 double slack_voltage, double tol,
                                 int max_iter) {
  const int n = topo.branch_count();
  if (inj.p.size() != n || inj.q.size() != n)
    throw ConfigError("injection vector length mismatch");
  const BfsMatrices m = build_bfs_matrices(topo, slack_voltage);

  Eigen::VectorXcd v =
      Eigen::VectorXcd::Constant(n, cplx(slack_voltage, 0.0));
  NetworkState s;
  for (int it = 0; it < max_iter; ++it) {
    const Eigen::VectorXcd i_inj = load_currents(inj, v);
    Eigen::VectorXcd v_new =
        Eigen::VectorXcd::Constant(n, cplx(slack_voltage, 0.0)) -
        m.dlf * i_inj;
    const double step = (v_new - v).cwiseAbs().maxCoeff();
    v = v_new;
    if (!v.allFinite() || v.cwiseAbs().minCoeff() < 0.2)
      throw NumericsError("power flow diverged (voltage collapse), step " +
                          std::to_string(step));
    if (step < tol) {
      s.v = v;
      s.i_branch = m.bibc * load_currents(inj, v);
      s.feeder_power = cplx(slack_voltage, 0.0) * std::conj(s.i_branch(0));
      return s;
    }
  }
  const Eigen::VectorXcd i_inj = load_currents(inj, v);
  const double mismatch =
      (Eigen::VectorXcd::Constant(n, cplx(slack_voltage, 0.0)) - m.dlf * i_inj -
       v)
          .cwiseAbs()
          .maxCoeff();
  throw NumericsError("power flow did not converge after " +
                      std::to_string(max_iter) +
                      " iterations, final mismatch " + std::to_string(mismatch));
}

double ErrorSurface::max_rel_err_2norm() const {
  double m = 0.0;
  for (const auto& p : points)
    if (p.converged) m = std::max(m, p.rel_err_2norm);
  return m;
}

std::string ErrorSurface::to_csv() const {
  std::ostringstream out;
  out << "k_p,k_q,rel_err_2norm,rel_err_max,converged\n";
  out.precision(10);
  for (const auto& p : points)
    out << p.k_p << ',' << p.k_q << ',' << p.rel_err_2norm << ','
        << p.rel_err_max << ',' << (p.converged ? 1 : 0) << '\n';
  return out.str();
}

ErrorSurface continuation_error_surface(const NetworkTopology& topo,
                                        const std::vector<int>& der_nodes,
                                        const Eigen::VectorXd& p_max,
                                        const Eigen::VectorXd& q_max,
                                        const InjectionVector& base_injections,
                                        double granularity,
                                        double slack_voltage, int threads) {
  if (granularity <= 0.0 || granularity > 1.0)
    throw ConfigError("granularity must be in (0, 1]");
  const int n_g = static_cast<int>(der_nodes.size());
  if (p_max.size() != n_g || q_max.size() != n_g)
    throw ConfigError("p_max/q_max length mismatch");

  const NetworkState base =
      nonlinear_powerflow(topo, base_injections, slack_voltage);
  const BfsMatrices m = build_bfs_matrices(topo, slack_voltage);
  const ReducedMatrices reduced = reduce_for_ders(m, der_nodes, base.v);

  const int steps = static_cast<int>(std::llround(1.0 / granularity)) + 1;
  ErrorSurface surf;
  surf.points.resize(static_cast<size_t>(steps) * steps);

  auto eval = [&](int idx) {
    const int ip = idx / steps, iq = idx % steps;
    ErrorSurfacePoint pt;
    pt.k_p = std::min(1.0, ip * granularity);
    pt.k_q = std::min(1.0, iq * granularity);
    const Eigen::VectorXd dp = pt.k_p * p_max;
    const Eigen::VectorXd dq = pt.k_q * q_max;
    const SuperposedDelta d = superposed_delta(reduced, dp, dq);
    InjectionVector inj = base_injections;
    for (int j = 0; j < n_g; ++j) {
      inj.p(der_nodes[j] - 1) += dp(j);
      inj.q(der_nodes[j] - 1) += dq(j);
    }
    try {
      const NetworkState exact = nonlinear_powerflow(topo, inj, slack_voltage);
      const Eigen::VectorXd lin_mag = (base.v + d.delta_v).cwiseAbs();
      const Eigen::VectorXd rel =
          (lin_mag - exact.v.cwiseAbs()).cwiseQuotient(exact.v.cwiseAbs());
      pt.rel_err_2norm = rel.norm();
      pt.rel_err_max = rel.cwiseAbs().maxCoeff();
      pt.converged = true;
    } catch (const NumericsError&) {
      pt.converged = false;
    }
    surf.points[idx] = pt;
  };

  int n_threads = threads > 0
                      ? threads
                      : static_cast<int>(std::thread::hardware_concurrency());
  n_threads = std::max(1, std::min(n_threads, steps * steps));
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  for (int t = 0; t < n_threads; ++t)
    pool.emplace_back([&] {
      for (int idx = next.fetch_add(1); idx < steps * steps;
           idx = next.fetch_add(1))
        eval(idx);
    });
  for (auto& t : pool) t.join();
  return surf;
}

}  // namespace adn

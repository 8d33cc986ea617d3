#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "adn/powerflow.hpp"

using namespace adn;

namespace {

NetworkTopology ieee33() {
  return load_feeder(std::string(ADN_DATA_DIR) + "/ieee33.feeder");
}

InjectionVector load_injections(const NetworkTopology& topo) {
  const int n = topo.node_count() - 1;
  InjectionVector inj{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)};
  for (int k = 1; k <= n; ++k) {
    inj.p(k - 1) = -topo.load_p(k);
    inj.q(k - 1) = -topo.load_q(k);
  }
  return inj;
}

}  // namespace

TEST_CASE("single branch against the closed-form fixed point") {
  // One branch z = 0.05 + 0.10j feeding a 0.3 + 0.2j pu load. The BFS fixed
  // point solves V = 1 - z * conj(S/V); iterate independently here.
  std::vector<BranchSpec> br = {{0, 1, {0.05, 0.10}}};
  NetworkTopology topo(br, {0, 0.3}, {0, 0.2}, 1.0, 12.66);
  cplx s(0.3, 0.2), z(0.05, 0.10);
  cplx v = 1.0;
  for (int it = 0; it < 200; ++it) v = 1.0 - z * std::conj(s / v);

  auto state = nonlinear_powerflow(topo, load_injections(topo));
  CHECK(std::abs(state.v(0) - v) < 1e-9);
  CHECK(std::abs(state.i_branch(0) - (1.0 - v) / z) < 1e-9);
  // Feeder power = load + series loss.
  cplx i = (1.0 - v) / z;
  CHECK(std::abs(state.feeder_power - (s + z * std::norm(i))) < 1e-9);
}

TEST_CASE("33-node base case matches the published solution") {
  auto topo = ieee33();
  auto state = nonlinear_powerflow(topo, load_injections(topo));

  double vmin = 1e9;
  int argmin = -1;
  for (int k = 0; k < state.v.size(); ++k) {
    if (std::abs(state.v(k)) < vmin) {
      vmin = std::abs(state.v(k));
      argmin = k + 1;
    }
  }
  // Canonical result for this feeder: minimum voltage ~0.9131 pu at node 18
  // (original numbering, substation = 1).
  CHECK(topo.node_id(argmin) == 17);
  CHECK(vmin == doctest::Approx(0.9131).epsilon(5e-4));
  // Real losses ~202.7 kW.
  double loss = state.feeder_power.real() - 3.715;
  CHECK(loss == doctest::Approx(0.2027).epsilon(0.02));
}

TEST_CASE("linear step reproduces the nonlinear solution at its own voltages") {
  auto topo = ieee33();
  auto inj = load_injections(topo);
  auto exact = nonlinear_powerflow(topo, inj);
  auto m = build_bfs_matrices(topo, 1.0);
  auto lin = linear_bfs_step(m, inj, exact.v);
  // With vbar set to the converged voltages the linear sweep is exact.
  CHECK((lin.v - exact.v).lpNorm<Eigen::Infinity>() < 1e-7);
  CHECK((lin.i_branch - exact.i_branch).lpNorm<Eigen::Infinity>() < 1e-7);
  CHECK(std::abs(lin.feeder_power - exact.feeder_power) < 1e-7);
}

TEST_CASE("superimposed circuit equals the difference of linear solutions") {
  auto topo = ieee33();
  auto inj = load_injections(topo);
  auto m = build_bfs_matrices(topo, 1.0);
  auto base_state = nonlinear_powerflow(topo, inj);
  const Eigen::VectorXcd vbar = base_state.v;

  std::vector<int> ders = {topo.topo_index(3), topo.topo_index(18),
                           topo.topo_index(25), topo.topo_index(30)};
  auto red = reduce_for_ders(m, ders, vbar);

  Eigen::VectorXd dp(4), dq(4);
  dp << 0.15, 0.30, 0.40, -0.20;
  dq << 0.05, -0.10, 0.20, 0.10;

  InjectionVector bumped = inj;
  for (int c = 0; c < 4; ++c) {
    bumped.p(ders[static_cast<size_t>(c)] - 1) += dp(c);
    bumped.q(ders[static_cast<size_t>(c)] - 1) += dq(c);
  }
  auto lin0 = linear_bfs_step(m, inj, vbar);
  auto lin1 = linear_bfs_step(m, bumped, vbar);
  auto delta = superposed_delta(red, dp, dq);

  CHECK((delta.delta_v - (lin1.v - lin0.v)).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK((delta.delta_i - (lin1.i_branch - lin0.i_branch))
            .lpNorm<Eigen::Infinity>() < 1e-12);
  // The map is linear: doubling the injection change doubles the response.
  auto delta2 = superposed_delta(red, 2 * dp, 2 * dq);
  CHECK((delta2.delta_v - 2 * delta.delta_v).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("linearization error stays small over the DER operating range") {
  auto topo = ieee33();
  auto inj = load_injections(topo);
  std::vector<int> ders = {topo.topo_index(3), topo.topo_index(18),
                           topo.topo_index(25)};
  Eigen::VectorXd p_max(3), q_max(3);
  p_max << 0.30, 0.50, 0.67;
  q_max << 0.15, 0.25, 0.33;

  auto surf = continuation_error_surface(topo, ders, p_max, q_max, inj, 0.1);
  CHECK(surf.points.size() == 11 * 11);
  for (const auto& pt : surf.points) CHECK(pt.converged);
  CHECK(surf.max_rel_err_2norm() < 0.05);
  // Zero ramp has no linearization error at all.
  CHECK(surf.points.front().k_p == doctest::Approx(0.0));
  CHECK(surf.points.front().rel_err_2norm < 1e-10);

  auto csv = surf.to_csv();
  CHECK(csv.rfind("k_p,k_q,", 0) == 0);
}

TEST_CASE("error surface is deterministic across thread counts") {
  auto topo = ieee33();
  auto inj = load_injections(topo);
  std::vector<int> ders = {topo.topo_index(3), topo.topo_index(25)};
  Eigen::VectorXd p_max(2), q_max(2);
  p_max << 0.3, 0.67;
  q_max << 0.1, 0.3;
  auto a = continuation_error_surface(topo, ders, p_max, q_max, inj, 0.25, 1.0, 1);
  auto b = continuation_error_surface(topo, ders, p_max, q_max, inj, 0.25, 1.0, 4);
  REQUIRE(a.points.size() == b.points.size());
  for (size_t k = 0; k < a.points.size(); ++k)
    CHECK(a.points[k].rel_err_2norm == b.points[k].rel_err_2norm);
}

TEST_CASE("divergent loading is reported, not silently returned") {
  auto topo = ieee33();
  const int n = topo.node_count() - 1;
  InjectionVector huge{Eigen::VectorXd::Constant(n, -100.0),
                       Eigen::VectorXd::Constant(n, -100.0)};
  CHECK_THROWS_AS(nonlinear_powerflow(topo, huge), NumericsError);
}

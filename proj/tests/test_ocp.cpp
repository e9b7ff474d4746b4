#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "empc/model.hpp"
#include "empc/ocp.hpp"
#include "empc/sop.hpp"
#include "test_util.hpp"

using namespace empc;
using test_util::Rng;
using test_util::vec1;
using test_util::vec2;

namespace {

const PlantModel& reactor() {
  static const PlantModel m = reactor_model();
  return m;
}

const SteadyState& steady() {
  static const SteadyState s = solve_sop(reactor());
  return s;
}

}  // namespace

TEST_CASE("terminal-equality scheme from the steady state stays put") {
  for (int n : {1, 5}) {
    const OcpSolution sol = solve_ocp(
        reactor(), SchemeConfig::terminal_equality(steady()), n, steady().x);
    REQUIRE(sol.converged());
    for (int k = 0; k <= n; ++k)
      CHECK(test_util::max_abs_diff(sol.x.row(k).transpose(), steady().x) <= 1e-7);
    for (int k = 0; k < n; ++k)
      CHECK(std::abs(sol.u(k, 0) - 12.0) <= 1e-6);
    CHECK(sol.objective == doctest::Approx(-6.0 * n).epsilon(1e-7));
  }
}

TEST_CASE("linear-penalty scheme pins the adjoint at the steady value") {
  const OcpSolution sol = solve_ocp(
      reactor(), SchemeConfig::linear_penalty(steady()), 1, steady().x);
  REQUIRE(sol.converged());
  CHECK(std::abs(sol.u(0, 0) - 12.0) <= 1e-6);
  CHECK(test_util::max_abs_diff(sol.lambda.row(0).transpose(), steady().lambda) <= 1e-5);
  CHECK(test_util::max_abs_diff(sol.lambda.row(1).transpose(), steady().lambda) <= 1e-5);
}

TEST_CASE("unconstrained scheme forces the adjoint to leave") {
  const OcpSolution sol = solve_ocp(
      reactor(), SchemeConfig::make(SchemeKind::Unconstrained, steady()), 5,
      steady().x);
  REQUIRE(sol.converged());
  // boundary condition lambda_N = g_x' mu_N; interior tail, so lambda_N = 0
  CHECK(sol.lambda.row(5).cwiseAbs().maxCoeff() <= 1e-8);
  // the feedback must deviate from the steady input
  CHECK(std::abs(sol.u(0, 0) - 12.0) > 1e-6);
}

TEST_CASE("euler-lagrange residuals vanish on converged solutions") {
  const OcpSolution sol = solve_ocp(
      reactor(), SchemeConfig::linear_penalty(steady()), 8, vec2(0.2, 0.8));
  REQUIRE(sol.converged());
  const ElReport el = euler_lagrange_residual(
      reactor(), SchemeConfig::linear_penalty(steady()), sol);
  CHECK(el.max() <= 1e-6);
}

TEST_CASE("steady solution satisfies the steady-state optimality system") {
  const OcpSolution sol = solve_ocp(
      reactor(), SchemeConfig::terminal_equality(steady()), 4, steady().x);
  REQUIRE(sol.converged());
  // at the turnpike the Euler-Lagrange system coincides with the SOP KKT
  for (int k = 0; k < 4; ++k) {
    CHECK(test_util::max_abs_diff(sol.lambda.row(k).transpose(), steady().lambda) <= 1e-5);
  }
  CHECK(sol.el.max_dynamics <= 1e-10);
  CHECK(sol.el.max_adjoint <= 1e-6);
  CHECK(sol.el.max_stationarity <= 1e-6);
}

TEST_CASE("perturbing one adjoint shifts the residual linearly") {
  const SchemeConfig scheme = SchemeConfig::linear_penalty(steady());
  OcpSolution sol = solve_ocp(reactor(), scheme, 6, vec2(0.3, 0.6));
  REQUIRE(sol.converged());
  const ElReport base = euler_lagrange_residual(reactor(), scheme, sol);
  REQUIRE(base.max() <= 1e-8);

  const Vec delta = vec2(0.01, 0.0);
  sol.lambda.row(2) += delta.transpose();
  const ElReport bumped = euler_lagrange_residual(reactor(), scheme, sol);
  // row k: lambda_k enters with identity
  CHECK(bumped.adjoint(2) == doctest::Approx(0.01).epsilon(1e-4));
  // row k-1: lambda_k enters through f_x'
  const Vec expect_prev =
      reactor().f_x(sol.x.row(1).transpose(), sol.u.row(1).transpose()).transpose() * delta;
  CHECK(bumped.adjoint(1) ==
        doctest::Approx(expect_prev.cwiseAbs().maxCoeff()).epsilon(1e-4));
  // stationarity row k-1 sees it through f_u'
  CHECK(bumped.stationarity(1) > 1e-5);
  CHECK(bumped.adjoint(4) <= 1e-8);  // untouched rows stay clean
}

TEST_CASE("terminal penalty values") {
  const SchemeConfig grad = SchemeConfig::linear_penalty(steady());
  const TerminalPenalty at_steady = terminal_penalty(grad, vec2(0.5, 0.5));
  CHECK(at_steady.value == doctest::Approx(-150.0).epsilon(1e-6));
  CHECK(test_util::max_abs_diff(at_steady.gradient, steady().lambda) == 0.0);

  const TerminalPenalty at_origin = terminal_penalty(grad, vec2(0.0, 0.0));
  CHECK(at_origin.value == 0.0);
  CHECK(test_util::max_abs_diff(at_origin.gradient, steady().lambda) == 0.0);

  const SchemeConfig plain = SchemeConfig::make(SchemeKind::Unconstrained, steady());
  CHECK(terminal_penalty(plain, vec2(0.7, 0.1)).value == 0.0);
  CHECK(terminal_penalty(plain, vec2(0.7, 0.1)).gradient.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("probe_feasibility: schemes without terminal constraints always pass") {
  Rng rng(11);
  for (int trial = 0; trial < 8; ++trial) {
    const Vec x0 = rng.uniform_vec(2, 0.0, 1.0);
    const int n = rng.uniform_int(1, 8);
    CHECK(probe_feasibility(reactor(),
                            SchemeConfig::make(SchemeKind::Unconstrained, steady()),
                            n, x0));
  }
}

TEST_CASE("probe_feasibility: terminal scheme from the steady state") {
  CHECK(probe_feasibility(reactor(), SchemeConfig::terminal_equality(steady()), 1,
                          steady().x));
}

TEST_CASE("probe_feasibility: one step from the origin cannot reach") {
  // reachable set from (0,0) in one step is {(0.01u, 0)}, which misses xbar
  CHECK_FALSE(probe_feasibility(reactor(),
                                SchemeConfig::terminal_equality(steady()), 1,
                                vec2(0.0, 0.0)));
}

TEST_CASE("solve_ocp reports terminal-equality infeasibility explicitly") {
  const OcpSolution sol = solve_ocp(
      reactor(), SchemeConfig::terminal_equality(steady()), 1, vec2(0.0, 0.0));
  CHECK_FALSE(sol.converged());
  CHECK(sol.status == NlpStatus::InfeasibleDetected);
}

TEST_CASE("feasible-set inclusion over sampled initial conditions") {
  Rng rng(505);
  const SchemeConfig term = SchemeConfig::terminal_equality(steady());
  const SchemeConfig plain = SchemeConfig::make(SchemeKind::Unconstrained, steady());
  const SchemeConfig grad = SchemeConfig::linear_penalty(steady());
  for (int trial = 0; trial < 20; ++trial) {
    const Vec x0 = rng.uniform_vec(2, 0.0, 1.0);
    const int n = rng.uniform_int(1, 8);
    const bool f_term = probe_feasibility(reactor(), term, n, x0);
    const bool f_plain = probe_feasibility(reactor(), plain, n, x0);
    const bool f_grad = probe_feasibility(reactor(), grad, n, x0);
    if (f_term) CHECK(f_plain);
    CHECK(f_plain == f_grad);
  }
}

TEST_CASE("objective relation between the penalty variants") {
  const SchemeConfig plain = SchemeConfig::make(SchemeKind::Unconstrained, steady());
  const SchemeConfig grad = SchemeConfig::linear_penalty(steady());
  const OcpSolution sol = solve_ocp(reactor(), plain, 6, vec2(0.1, 0.9));
  REQUIRE(sol.converged());
  const double v_plain = evaluate_objective(reactor(), plain, sol.x, sol.u);
  const double v_grad = evaluate_objective(reactor(), grad, sol.x, sol.u);
  const double penalty = steady().lambda.dot(sol.x.row(6).transpose());
  CHECK(v_grad - v_plain == doctest::Approx(penalty).epsilon(1e-12));
  CHECK(v_plain == doctest::Approx(sol.objective).epsilon(1e-12));
}

TEST_CASE("adjoint recovery at the turnpike start") {
  const OcpSolution sol = solve_ocp(
      reactor(), SchemeConfig::terminal_equality(steady()), 7, steady().x);
  REQUIRE(sol.converged());
  for (int k = 0; k < 7; ++k) {
    CHECK(test_util::max_abs_diff(sol.lambda.row(k).transpose(), steady().lambda) <= 1e-6);
  }
}

TEST_CASE("warm-started re-solve converges immediately") {
  const SchemeConfig scheme = SchemeConfig::linear_penalty(steady());
  const Vec x0 = vec2(0.25, 0.75);
  const OcpSolution first = solve_ocp(reactor(), scheme, 10, x0);
  REQUIRE(first.converged());
  const OcpSolution again = solve_ocp(reactor(), scheme, 10, x0, &first);
  REQUIRE(again.converged());
  CHECK(again.iterations <= 2);
  CHECK(test_util::max_abs_diff(again.x, first.x) <= 1e-9);
}

TEST_CASE("solve_ocp validates its preconditions") {
  CHECK_THROWS_AS(solve_ocp(reactor(), SchemeConfig::linear_penalty(steady()), 0,
                            steady().x),
                  std::invalid_argument);
  CHECK_THROWS_AS(solve_ocp(reactor(), SchemeConfig::linear_penalty(steady()), 3,
                            vec1(0.5)),
                  std::invalid_argument);
  SchemeConfig bad;
  bad.kind = SchemeKind::TerminalEquality;  // no xbar attached
  CHECK_THROWS_AS(solve_ocp(reactor(), bad, 3, steady().x), std::invalid_argument);
}

TEST_CASE("scheme name round trip") {
  for (SchemeKind kind : {SchemeKind::TerminalEquality, SchemeKind::Unconstrained,
                          SchemeKind::LinearPenalty}) {
    CHECK(scheme_from_string(to_string(kind)) == kind);
  }
  CHECK_FALSE(scheme_from_string("bogus").has_value());
}

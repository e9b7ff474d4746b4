#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "empc/model.hpp"
#include "empc/sop.hpp"
#include "test_util.hpp"

using namespace empc;
using test_util::vec1;
using test_util::vec2;

namespace {

// f = 0.5 x + u, l = x^2 + u^2: the origin is the optimal steady state with
// zero adjoint.
PlantModel lq_toy_model() {
  PlantModel m;
  m.name = "lq_toy";
  m.n_x = 1;
  m.n_u = 1;
  m.bounds.x_lo = vec1(-2.0);
  m.bounds.x_hi = vec1(2.0);
  m.bounds.u_lo = vec1(-2.0);
  m.bounds.u_hi = vec1(2.0);
  m.f = [](const Vec& x, const Vec& u) -> Vec { return 0.5 * x + u; };
  m.l = [](const Vec& x, const Vec& u) { return x.squaredNorm() + u.squaredNorm(); };
  m.f_x = [](const Vec&, const Vec&) { return Mat::Constant(1, 1, 0.5); };
  m.f_u = [](const Vec&, const Vec&) { return Mat::Constant(1, 1, 1.0); };
  m.l_x = [](const Vec& x, const Vec&) -> Vec { return 2.0 * x; };
  m.l_u = [](const Vec&, const Vec& u) -> Vec { return 2.0 * u; };
  m.hess = [](const Vec&, const Vec&, const Vec&) {
    StageHessian h;
    h.xx = Mat::Constant(1, 1, 2.0);
    h.xu = Mat::Zero(1, 1);
    h.uu = Mat::Constant(1, 1, 2.0);
    return h;
  };
  attach_box_constraints(m);
  return m;
}

PlantModel scaled_cost_reactor(double scale, double shift) {
  PlantModel m = reactor_model();
  const auto base_l = m.l;
  const auto base_lx = m.l_x;
  const auto base_lu = m.l_u;
  const auto base_h = m.hess;
  m.l = [=](const Vec& x, const Vec& u) { return scale * base_l(x, u) + shift; };
  m.l_x = [=](const Vec& x, const Vec& u) -> Vec { return scale * base_lx(x, u); };
  m.l_u = [=](const Vec& x, const Vec& u) -> Vec { return scale * base_lu(x, u); };
  // stage Lagrangian hessian: scale*l + lambda'f = scale*(l + (lambda/scale)'f)
  m.hess = [=](const Vec& x, const Vec& u, const Vec& lambda) {
    StageHessian h = base_h(x, u, lambda / scale);
    h.xx *= scale;
    h.xu *= scale;
    h.uu *= scale;
    return h;
  };
  return m;
}

}  // namespace

TEST_CASE("solve_sop reproduces the reactor steady state and adjoint") {
  const PlantModel m = reactor_model();
  const SteadyState s = solve_sop(m);
  CHECK(test_util::max_abs_diff(s.x, vec2(0.5, 0.5)) <= 1e-7);
  CHECK(std::abs(s.u(0) - 12.0) <= 1e-7);
  CHECK(test_util::max_abs_diff(s.lambda, vec2(-100.0, -200.0)) <= 1e-5);
  CHECK(s.mu.cwiseAbs().maxCoeff() <= 1e-8);
  CHECK(s.cost == doctest::Approx(-6.0).epsilon(1e-8));
  CHECK(s.interior);
  CHECK(s.converged_starts >= 1);
}

TEST_CASE("solve_sop satisfies the SteadyState invariants") {
  const PlantModel m = reactor_model();
  const SteadyState s = solve_sop(m);
  CHECK((m.f(s.x, s.u) - s.x).cwiseAbs().maxCoeff() <= 1e-8);
  const SopKktReport kkt = verify_sop_kkt(m, s);
  CHECK(kkt.max() <= 1e-8);
  CHECK(s.mu.minCoeff() >= -1e-12);
  CHECK(s.mu.cwiseProduct(m.g(s.x, s.u)).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("solve_sop on the LQ toy model finds the origin") {
  const PlantModel m = lq_toy_model();
  const SteadyState s = solve_sop(m);
  CHECK(std::abs(s.x(0)) <= 1e-8);
  CHECK(std::abs(s.u(0)) <= 1e-8);
  CHECK(s.lambda.cwiseAbs().maxCoeff() <= 1e-7);
}

TEST_CASE("shift invariance: adding a constant moves only the cost") {
  const PlantModel shifted = scaled_cost_reactor(1.0, 5.0);
  const SteadyState s = solve_sop(shifted);
  CHECK(test_util::max_abs_diff(s.x, vec2(0.5, 0.5)) <= 1e-7);
  CHECK(std::abs(s.u(0) - 12.0) <= 1e-7);
  CHECK(test_util::max_abs_diff(s.lambda, vec2(-100.0, -200.0)) <= 1e-5);
  CHECK(s.cost == doctest::Approx(-1.0).epsilon(1e-8));  // -6 + 5
}

TEST_CASE("scaling the cost scales the multipliers") {
  const PlantModel scaled = scaled_cost_reactor(3.0, 0.0);
  const SteadyState s = solve_sop(scaled);
  CHECK(test_util::max_abs_diff(s.x, vec2(0.5, 0.5)) <= 1e-7);
  CHECK(std::abs(s.u(0) - 12.0) <= 1e-7);
  CHECK(test_util::max_abs_diff(s.lambda, vec2(-300.0, -600.0)) <= 1e-4);
  CHECK(s.mu.cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("solve_sop is idempotent under warm start at its own solution") {
  const PlantModel m = reactor_model();
  const SteadyState s = solve_sop(m);
  const SteadyState again = solve_sop(m, {}, 16, 0, &s);
  CHECK(again.iterations == 0);
  CHECK(again.x(0) == s.x(0));
  CHECK(again.x(1) == s.x(1));
  CHECK(again.u(0) == s.u(0));
}

TEST_CASE("verify_sop_kkt quantifies a hand-computable perturbation") {
  const PlantModel m = reactor_model();
  SteadyState s = solve_sop(m);
  // residual map is linear in lambda: (I - f_x') * [1, 0]' = [0.24, 0]
  s.lambda += vec2(1.0, 0.0);
  const SopKktReport kkt = verify_sop_kkt(m, s);
  CHECK(kkt.adjoint_residual == doctest::Approx(0.24).epsilon(1e-5));
  CHECK(kkt.steady_residual <= 1e-8);
}

TEST_CASE("degenerate zero model: stationary but multiplier not unique") {
  PlantModel m;
  m.name = "zero";
  m.n_x = 1;
  m.n_u = 1;
  m.bounds.x_lo = vec1(-1.0);
  m.bounds.x_hi = vec1(1.0);
  m.bounds.u_lo = vec1(-1.0);
  m.bounds.u_hi = vec1(1.0);
  m.f = [](const Vec& x, const Vec&) -> Vec { return x; };
  m.l = [](const Vec&, const Vec&) { return 0.0; };
  m.f_x = [](const Vec&, const Vec&) { return Mat::Identity(1, 1); };
  m.f_u = [](const Vec&, const Vec&) { return Mat::Zero(1, 1); };
  m.l_x = [](const Vec&, const Vec&) { return Vec::Zero(1); };
  m.l_u = [](const Vec&, const Vec&) { return Vec::Zero(1); };
  attach_box_constraints(m);

  SteadyState s;
  s.x = vec1(0.3);
  s.u = vec1(0.0);
  s.lambda = vec1(0.0);
  s.mu = Vec::Zero(m.n_g);
  const SopKktReport kkt = verify_sop_kkt(m, s);
  CHECK(kkt.max() <= 1e-12);
  CHECK_FALSE(kkt.multiplier_unique);  // I - f_x' is singular
}

TEST_CASE("multiplier uniqueness holds for the reactor") {
  const PlantModel m = reactor_model();
  const SteadyState s = solve_sop(m);
  const MultiplierUniquenessReport rep = check_multiplier_uniqueness(m, s);
  CHECK(rep.unique);
  CHECK(rep.active_constraints == 0);
  CHECK(rep.singular_values.size() == 2);
}

TEST_CASE("duplicated active constraint rows break uniqueness") {
  // Steady state pinned to the x upper bound, with the bound row duplicated:
  // the active-multiplier Jacobian has two identical columns.
  PlantModel m;
  m.name = "duplicated";
  m.n_x = 1;
  m.n_u = 1;
  m.bounds.x_lo = vec1(-1.0);
  m.bounds.x_hi = vec1(1.0);
  m.bounds.u_lo = vec1(-2.0);
  m.bounds.u_hi = vec1(2.0);
  m.f = [](const Vec& x, const Vec& u) -> Vec { return 0.5 * x + u; };
  m.l = [](const Vec& x, const Vec& u) {
    return -2.0 * x(0) + u.squaredNorm();
  };
  m.f_x = [](const Vec&, const Vec&) { return Mat::Constant(1, 1, 0.5); };
  m.f_u = [](const Vec&, const Vec&) { return Mat::Identity(1, 1); };
  m.l_x = [](const Vec&, const Vec&) { return vec1(-2.0); };
  m.l_u = [](const Vec&, const Vec& u) -> Vec { return 2.0 * u; };
  m.n_g = 2;
  m.n_g_state = 2;
  m.g = [](const Vec& x, const Vec&) -> Vec {
    return vec2(x(0) - 1.0, x(0) - 1.0);
  };
  m.g_x = [](const Vec&, const Vec&) { return Mat::Constant(2, 1, 1.0); };
  m.g_u = [](const Vec&, const Vec&) { return Mat::Zero(2, 1); };

  SteadyState s;
  s.x = vec1(1.0);  // on the duplicated bound
  s.u = vec1(0.5);
  s.lambda = vec1(0.0);
  s.mu = Vec::Zero(2);
  const MultiplierUniquenessReport rep = check_multiplier_uniqueness(m, s);
  CHECK(rep.active_constraints == 2);
  CHECK_FALSE(rep.unique);
}

TEST_CASE("unconstrained nonsingular steady system is unique") {
  const PlantModel m = lq_toy_model();
  const SteadyState s = solve_sop(m);
  CHECK(check_multiplier_uniqueness(m, s).unique);
}

TEST_CASE("solve_sop rejects bad multistart counts") {
  CHECK_THROWS_AS(solve_sop(reactor_model(), {}, 0), std::invalid_argument);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <limits>
#include <vector>

#include "empc/model.hpp"
#include "empc/nlp.hpp"
#include "test_util.hpp"

using namespace empc;
using test_util::Rng;
using test_util::vec1;
using test_util::vec2;

namespace {

// Brute-force reference for small convex QPs: enumerate every active set of
// the inequalities, solve the equality-constrained KKT system with plain
// dense LU, and keep the best feasible candidate with valid signs.
struct EnumeratedQp {
  Vec z;
  Vec mu;
  double objective = std::numeric_limits<double>::infinity();
  bool found = false;
};

EnumeratedQp enumerate_qp(const Mat& H, const Vec& c, const Mat& A_in,
                          const Vec& b_in) {
  const int n = static_cast<int>(H.rows());
  const int m = static_cast<int>(A_in.rows());
  EnumeratedQp best;
  for (int mask = 0; mask < (1 << m); ++mask) {
    std::vector<int> act;
    for (int i = 0; i < m; ++i)
      if (mask & (1 << i)) act.push_back(i);
    const int k = static_cast<int>(act.size());
    Mat kkt = Mat::Zero(n + k, n + k);
    kkt.topLeftCorner(n, n) = H;
    Vec rhs(n + k);
    rhs.head(n) = -c;
    for (int i = 0; i < k; ++i) {
      kkt.block(i + n, 0, 1, n) = A_in.row(act[i]);
      kkt.block(0, i + n, n, 1) = A_in.row(act[i]).transpose();
      rhs(n + i) = b_in(act[i]);
    }
    Eigen::FullPivLU<Mat> lu(kkt);
    if (!lu.isInvertible()) continue;
    const Vec sol = lu.solve(rhs);
    const Vec z = sol.head(n);
    const Vec mu_act = sol.tail(k);
    if (k > 0 && mu_act.minCoeff() < -1e-10) continue;
    if (m > 0 && (A_in * z - b_in).maxCoeff() > 1e-9) continue;
    const double obj = 0.5 * z.dot(H * z) + c.dot(z);
    if (obj < best.objective) {
      best.objective = obj;
      best.z = z;
      best.mu = Vec::Zero(m);
      for (int i = 0; i < k; ++i) best.mu(act[i]) = mu_act(i);
      best.found = true;
    }
  }
  return best;
}

Nlp quadratic_with_first_coordinate_pinned(int n) {
  Nlp p;
  p.dim = n;
  p.objective = [](const Vec& z) { return 0.5 * z.squaredNorm(); };
  p.gradient = [](const Vec& z) -> Vec { return z; };
  p.n_eq = 1;
  p.eq = [](const Vec& z) -> Vec { return Vec::Constant(1, z(0) - 1.0); };
  p.eq_jac = [n](const Vec&) {
    Mat j = Mat::Zero(1, n);
    j(0, 0) = 1.0;
    return j;
  };
  p.lag_hess = [n](const Vec&, const Vec&, const Vec&) -> Mat {
    return Mat::Identity(n, n);
  };
  return p;
}

}  // namespace

TEST_CASE("solve_qp: projection onto a single equality") {
  Mat H = Mat::Identity(2, 2);
  Vec c = Vec::Zero(2);
  Mat a_eq(1, 2);
  a_eq << 1.0, 1.0;
  Vec b_eq = vec1(2.0);
  const QpResult r = solve_qp(H, c, a_eq, b_eq, Mat(0, 2), Vec());
  REQUIRE(r.status == QpStatus::Optimal);
  CHECK(test_util::max_abs_diff(r.z, vec2(1.0, 1.0)) <= 1e-12);
}

TEST_CASE("solve_qp: active bound with multiplier 2") {
  Mat H = Mat::Identity(2, 2);
  Vec c = vec2(-3.0, 0.0);
  Mat a_in(1, 2);
  a_in << 1.0, 0.0;
  Vec b_in = vec1(1.0);
  const QpResult r = solve_qp(H, c, Mat(0, 2), Vec(), a_in, b_in);
  REQUIRE(r.status == QpStatus::Optimal);
  CHECK(test_util::max_abs_diff(r.z, vec2(1.0, 0.0)) <= 1e-12);
  CHECK(r.mu(0) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(r.active_set == std::vector<int>{0});
}

TEST_CASE("solve_qp matches active-set enumeration on random strictly convex QPs") {
  Rng rng(2024);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 5;
    Mat m(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) m(i, j) = rng.uniform(-1.0, 1.0);
    Mat H = m.transpose() * m + Mat::Identity(n, n);
    Vec c = rng.uniform_vec(n, -2.0, 2.0);
    Mat a_in(2, n);
    for (int j = 0; j < n; ++j) {
      a_in(0, j) = rng.uniform(-1.0, 1.0);
      a_in(1, j) = rng.uniform(-1.0, 1.0);
    }
    Vec b_in = rng.uniform_vec(2, -0.5, 0.5);

    const EnumeratedQp ref = enumerate_qp(H, c, a_in, b_in);
    REQUIRE(ref.found);
    const QpResult r = solve_qp(H, c, Mat(0, n), Vec(), a_in, b_in);
    REQUIRE(r.status == QpStatus::Optimal);
    CHECK(test_util::max_abs_diff(r.z, ref.z) <= 1e-8);
    CHECK(test_util::max_abs_diff(r.mu, ref.mu) <= 1e-7);
  }
}

TEST_CASE("solve_qp flags inconsistent equalities as infeasible") {
  Mat H = Mat::Identity(1, 1);
  Vec c = Vec::Zero(1);
  Mat a_eq(2, 1);
  a_eq << 1.0, 1.0;
  Vec b_eq = vec2(1.0, 2.0);
  const QpResult r = solve_qp(H, c, a_eq, b_eq, Mat(0, 1), Vec());
  CHECK(r.status == QpStatus::Infeasible);
  CHECK(r.infeasibility > 0.1);
}

TEST_CASE("solve_qp flags inconsistent inequalities as infeasible") {
  Mat H = Mat::Identity(1, 1);
  Vec c = Vec::Zero(1);
  Mat a_in(2, 1);
  a_in << 1.0, -1.0;  // z <= -1 and -z <= -1: empty
  Vec b_in = vec2(-1.0, -1.0);
  const QpResult r = solve_qp(H, c, Mat(0, 1), Vec(), a_in, b_in);
  CHECK(r.status == QpStatus::Infeasible);
  CHECK(r.infeasibility > 0.5);
}

TEST_CASE("solve_nlp: norm minimization with pinned coordinate") {
  const Nlp p = quadratic_with_first_coordinate_pinned(3);
  const NlpResult r = solve_nlp(p, Vec::Zero(3));
  REQUIRE(r.converged());
  CHECK(test_util::max_abs_diff(r.z, Eigen::Vector3d(1.0, 0.0, 0.0)) <= 1e-10);
  CHECK(r.lambda(0) == doctest::Approx(-1.0).epsilon(1e-10));
}

TEST_CASE("solve_nlp: linear objective over the half line") {
  Nlp p;
  p.dim = 1;
  p.objective = [](const Vec& z) { return z(0); };
  p.gradient = [](const Vec&) { return vec1(1.0); };
  p.n_ineq = 1;
  p.ineq = [](const Vec& z) -> Vec { return -z; };
  p.ineq_jac = [](const Vec&) { return Mat::Constant(1, 1, -1.0); };
  p.lag_hess = [](const Vec&, const Vec&, const Vec&) { return Mat::Zero(1, 1); };
  const NlpResult r = solve_nlp(p, vec1(1.0));
  REQUIRE(r.converged());
  CHECK(std::abs(r.z(0)) <= 1e-9);
  CHECK(r.mu(0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(r.mu(0) >= -1e-12);
}

namespace {

Nlp reactor_sop_nlp(const PlantModel& m) {
  Nlp p;
  p.dim = 3;
  p.objective = [&m](const Vec& z) { return m.l(z.head(2), z.tail(1)); };
  p.gradient = [&m](const Vec& z) {
    Vec g(3);
    g.head(2) = m.l_x(z.head(2), z.tail(1));
    g.tail(1) = m.l_u(z.head(2), z.tail(1));
    return g;
  };
  p.n_eq = 2;
  p.eq = [&m](const Vec& z) -> Vec {
    return m.f(z.head(2), z.tail(1)) - z.head(2);
  };
  p.eq_jac = [&m](const Vec& z) {
    Mat j(2, 3);
    j.leftCols(2) = m.f_x(z.head(2), z.tail(1)) - Mat::Identity(2, 2);
    j.rightCols(1) = m.f_u(z.head(2), z.tail(1));
    return j;
  };
  p.n_ineq = m.n_g;
  p.ineq = [&m](const Vec& z) { return m.g(z.head(2), z.tail(1)); };
  p.ineq_jac = [&m](const Vec& z) {
    Mat j(m.n_g, 3);
    j.leftCols(2) = m.g_x(z.head(2), z.tail(1));
    j.rightCols(1) = m.g_u(z.head(2), z.tail(1));
    return j;
  };
  p.lag_hess = [&m](const Vec& z, const Vec& lambda, const Vec&) {
    const StageHessian h = m.hess(z.head(2), z.tail(1), lambda);
    Mat full(3, 3);
    full.topLeftCorner(2, 2) = h.xx;
    full.topRightCorner(2, 1) = h.xu;
    full.bottomLeftCorner(1, 2) = h.xu.transpose();
    full.bottomRightCorner(1, 1) = h.uu;
    return full;
  };
  return p;
}

}  // namespace

TEST_CASE("solve_nlp reproduces the reactor steady state from a cold start") {
  const PlantModel m = reactor_model();
  const Nlp p = reactor_sop_nlp(m);
  Vec z0(3);
  z0 << 0.3, 0.3, 10.0;
  const NlpResult r = solve_nlp(p, z0);
  REQUIRE(r.converged());
  CHECK(test_util::max_abs_diff(r.z, Eigen::Vector3d(0.5, 0.5, 12.0)) <= 1e-7);
  CHECK(test_util::max_abs_diff(r.lambda, vec2(-100.0, -200.0)) <= 1e-5);
  CHECK(r.mu.cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("converged results satisfy the KKT invariants") {
  const PlantModel m = reactor_model();
  const Nlp p = reactor_sop_nlp(m);
  Vec z0(3);
  z0 << 0.8, 0.1, 3.0;
  const NlpResult r = solve_nlp(p, z0);
  REQUIRE(r.converged());
  CHECK(r.kkt.stationarity <= 1e-8);
  CHECK(r.kkt.feasibility <= 1e-8);
  CHECK(r.kkt.complementarity <= 1e-8);
  CHECK(r.mu.minCoeff() >= -1e-12);
}

TEST_CASE("solve_nlp detects inconsistent equalities") {
  Nlp p;
  p.dim = 1;
  p.objective = [](const Vec& z) { return z(0) * z(0); };
  p.gradient = [](const Vec& z) -> Vec { return 2.0 * z; };
  p.n_eq = 2;
  p.eq = [](const Vec& z) -> Vec { return vec2(z(0) - 1.0, z(0) - 2.0); };
  p.eq_jac = [](const Vec&) { return Mat::Constant(2, 1, 1.0); };
  p.lag_hess = [](const Vec&, const Vec&, const Vec&) {
    return Mat::Constant(1, 1, 2.0);
  };
  const NlpResult r = solve_nlp(p, vec1(0.0));
  CHECK(r.status == NlpStatus::InfeasibleDetected);
}

TEST_CASE("solve_nlp aborts on non-finite evaluations") {
  Nlp p;
  p.dim = 1;
  p.objective = [](const Vec&) { return std::numeric_limits<double>::quiet_NaN(); };
  p.gradient = [](const Vec&) { return vec1(0.0); };
  const NlpResult r = solve_nlp(p, vec1(0.0));
  CHECK(r.status == NlpStatus::Aborted);
  CHECK(!r.message.empty());
}

TEST_CASE("solve_nlp agrees with solve_qp on convex QPs") {
  Rng rng(99);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 4;
    Mat m(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) m(i, j) = rng.uniform(-1.0, 1.0);
    const Mat H = m.transpose() * m + Mat::Identity(n, n);
    const Vec c = rng.uniform_vec(n, -1.0, 1.0);
    Mat a_in(2, n);
    for (int j = 0; j < n; ++j) {
      a_in(0, j) = rng.uniform(-1.0, 1.0);
      a_in(1, j) = rng.uniform(-1.0, 1.0);
    }
    const Vec b_in = rng.uniform_vec(2, 0.1, 0.6);

    Nlp p;
    p.dim = n;
    p.objective = [&](const Vec& z) { return 0.5 * z.dot(H * z) + c.dot(z); };
    p.gradient = [&](const Vec& z) -> Vec { return H * z + c; };
    p.n_ineq = 2;
    p.ineq = [&](const Vec& z) -> Vec { return a_in * z - b_in; };
    p.ineq_jac = [&](const Vec&) { return a_in; };
    p.lag_hess = [&](const Vec&, const Vec&, const Vec&) { return H; };

    const NlpResult nlp_res = solve_nlp(p, Vec::Zero(n));
    const QpResult qp_res = solve_qp(H, c, Mat(0, n), Vec(), a_in, b_in);
    REQUIRE(nlp_res.converged());
    REQUIRE(qp_res.status == QpStatus::Optimal);
    CHECK(test_util::max_abs_diff(nlp_res.z, qp_res.z) <= 1e-8);
    CHECK(test_util::max_abs_diff(nlp_res.mu, qp_res.mu) <= 1e-8);
  }
}

TEST_CASE("identical inputs give bitwise-identical results") {
  const PlantModel m = reactor_model();
  const Nlp p = reactor_sop_nlp(m);
  Vec z0(3);
  z0 << 0.3, 0.3, 10.0;
  const NlpResult a = solve_nlp(p, z0);
  const NlpResult b = solve_nlp(p, z0);
  REQUIRE(a.converged());
  REQUIRE(b.converged());
  CHECK(a.iterations == b.iterations);
  for (int i = 0; i < 3; ++i) CHECK(a.z(i) == b.z(i));
  for (int i = 0; i < 2; ++i) CHECK(a.lambda(i) == b.lambda(i));
}

TEST_CASE("both Hessian modes reach the constrained Rosenbrock solution") {
  Nlp p;
  p.dim = 2;
  p.objective = [](const Vec& z) {
    const double a = 1.0 - z(0);
    const double b = z(1) - z(0) * z(0);
    return a * a + 100.0 * b * b;
  };
  p.gradient = [](const Vec& z) -> Vec {
    const double b = z(1) - z(0) * z(0);
    return vec2(-2.0 * (1.0 - z(0)) - 400.0 * z(0) * b, 200.0 * b);
  };
  p.n_ineq = 1;
  p.ineq = [](const Vec& z) -> Vec { return vec1(z(0) + z(1) - 3.0); };
  p.ineq_jac = [](const Vec&) { return Mat::Constant(1, 2, 1.0); };
  p.lag_hess = [](const Vec& z, const Vec&, const Vec&) {
    Mat h(2, 2);
    h << 2.0 - 400.0 * (z(1) - 3.0 * z(0) * z(0)), -400.0 * z(0), -400.0 * z(0),
        200.0;
    return h;
  };

  NlpSettings exact;
  exact.hessian_mode = HessianMode::ExactRegularized;
  NlpSettings quasi;
  quasi.hessian_mode = HessianMode::DampedQuasiNewton;
  quasi.max_iterations = 500;

  const NlpResult re = solve_nlp(p, vec2(-1.2, 1.0), exact);
  const NlpResult rq = solve_nlp(p, vec2(-1.2, 1.0), quasi);
  REQUIRE(re.converged());
  REQUIRE(rq.converged());
  CHECK(test_util::max_abs_diff(re.z, vec2(1.0, 1.0)) <= 1e-6);
  CHECK(test_util::max_abs_diff(rq.z, vec2(1.0, 1.0)) <= 1e-6);
}

TEST_CASE("solve_eqp returns the stationary point of an indefinite EQP") {
  // min -x^2 + 2y^2 s.t. x + y = 1: the Hessian is indefinite but the
  // reduced Hessian on the constraint null space is positive, so the KKT
  // system is nonsingular. Hand solution: (x, y) = (2, -1), lambda = 4.
  Mat H(2, 2);
  H << -2.0, 0.0, 0.0, 4.0;
  Mat A(1, 2);
  A << 1.0, 1.0;
  const EqpResult r = solve_eqp(H, Vec::Zero(2), A, vec1(1.0));
  REQUIRE(r.solved);
  CHECK(test_util::max_abs_diff(r.z, vec2(2.0, -1.0)) <= 1e-12);
  CHECK(r.lambda(0) == doctest::Approx(4.0).epsilon(1e-12));
  CHECK((H * r.z + A.transpose() * r.lambda).cwiseAbs().maxCoeff() <= 1e-12);
}

#include "empc/lq.hpp"

#include <cmath>
#include <stdexcept>

namespace empc {

namespace {

double spectral_radius_of(const Mat& m) {
  return m.eigenvalues().cwiseAbs().maxCoeff();
}

bool rank_deficient(const Mat& m, int required_rank) {
  Eigen::JacobiSVD<Mat> svd(m);
  const Vec sv = svd.singularValues();
  if (sv.size() < required_rank) return true;
  return sv(required_rank - 1) <= 1e-8 * sv(0);
}

Mat controllability_matrix(const Mat& A, const Mat& B) {
  const int n = static_cast<int>(A.rows());
  Mat ctrb(n, n * B.cols());
  Mat block = B;
  for (int i = 0; i < n; ++i) {
    ctrb.middleCols(i * B.cols(), B.cols()) = block;
    block = A * block;
  }
  return ctrb;
}

}  // namespace

LqData build_lq(const PlantModel& model, const SteadyState& s,
                const SchemeConfig& scheme) {
  if (!s.interior)
    throw std::invalid_argument(
        "build_lq: steady state must be interior (the LQ construction "
        "presumes inactive path constraints)");
  LqData lq;
  lq.n_x = model.n_x;
  lq.n_u = model.n_u;
  lq.A = model.f_x(s.x, s.u);
  lq.B = model.f_u(s.x, s.u);
  lq.C = model.g_x(s.x, s.u);
  lq.D = model.g_u(s.x, s.u);
  const StageHessian h = model.hess(s.x, s.u, s.lambda);
  lq.Q = h.xx;
  lq.S = h.xu;
  lq.R = h.uu;
  lq.q = model.l_x(s.x, s.u);
  lq.r = model.l_u(s.x, s.u);
  lq.g_offset = model.g(s.x, s.u);
  lq.lambdabar = s.lambda;
  lq.P_N = Mat::Zero(model.n_x, model.n_x);
  if (scheme.kind == SchemeKind::LinearPenalty) {
    lq.p_N = scheme.lambdabar;
  } else {
    lq.p_N = Vec::Zero(model.n_x);
  }
  return lq;
}

RiccatiReport check_local_stabilization(const LqData& lq, int N) {
  if (N < 1)
    throw std::invalid_argument("check_local_stabilization: N >= 1 required");
  RiccatiReport rep;

  Eigen::JacobiSVD<Mat> svd_r(lq.R);
  const Vec sv = svd_r.singularValues();
  if (sv.size() == 0 || sv(sv.size() - 1) <= 1e-12 * std::max(1.0, sv(0))) {
    rep.singular_r = true;
    rep.message =
        "singular OCP: det R = 0, the stationarity conditions do not "
        "determine the input";
    return rep;
  }

  Mat P = lq.P_N;
  rep.gains.assign(N, Mat());
  for (int k = N - 1; k >= 0; --k) {
    const Mat r_tilde = lq.R + lq.B.transpose() * P * lq.B;
    Eigen::LDLT<Mat> ldlt(r_tilde);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
      rep.indefinite = true;
      rep.message = "indefinite Riccati iterate: R + B'PB not positive "
                    "definite at stage " + std::to_string(k);
      return rep;
    }
    const Mat cross = lq.S + lq.A.transpose() * P * lq.B;  // n_x x n_u
    const Mat K = -ldlt.solve(cross.transpose());  // -(R+B'PB)^{-1}(S'+B'PA)
    rep.gains[k] = K;
    P = lq.Q + lq.A.transpose() * P * lq.A + cross * K;
    P = 0.5 * (P + P.transpose()).eval();
  }
  rep.K0 = rep.gains[0];
  rep.spectral_radius = spectral_radius_of(lq.A + lq.B * rep.K0);
  rep.stabilizing = rep.spectral_radius < 1.0;
  return rep;
}

bool check_nstep_reachability(const LqData& lq) {
  const Mat ctrb = controllability_matrix(lq.A, lq.B);
  return !rank_deficient(ctrb, lq.n_x);
}

AdjointBoundaryReport adjoint_boundary_analysis(const LqData& lq,
                                                const SteadyState& s, int N) {
  if (N < 1)
    throw std::invalid_argument("adjoint_boundary_analysis: N >= 1 required");
  Eigen::JacobiSVD<Mat> svd_r(lq.R);
  const Vec sv = svd_r.singularValues();
  if (sv.size() == 0 || sv(sv.size() - 1) <= 1e-12 * std::max(1.0, sv(0)))
    throw std::invalid_argument("adjoint_boundary_analysis: singular R");

  AdjointBoundaryReport rep;
  const int n_x = lq.n_x;
  const Mat eye = Mat::Identity(n_x, n_x);
  const Mat at = lq.A.transpose();

  Eigen::FullPivLU<Mat> lu(eye - at);
  rep.fixed_point_unique = lu.isInvertible();
  if (rep.fixed_point_unique) {
    rep.implied_fixed_point = lu.solve(lq.q);
    rep.fixed_point_gap =
        (rep.implied_fixed_point - s.lambda).cwiseAbs().maxCoeff();
  }
  // Observability of (A', B') is controllability of (A, B) transposed.
  rep.observable = check_nstep_reachability(lq);

  const Eigen::LDLT<Mat> r_ldlt(lq.R);
  auto propagate = [&](const Vec& lambda_N, Mat& lambda_seq, Mat& input_seq) {
    lambda_seq.resize(N + 1, n_x);
    input_seq.resize(N + 1, lq.n_u);
    lambda_seq.row(N) = lambda_N.transpose();
    for (int k = N - 1; k >= 0; --k) {
      lambda_seq.row(k) =
          (at * lambda_seq.row(k + 1).transpose() + lq.q).transpose();
    }
    for (int k = 0; k <= N; ++k) {
      const Vec lam = lambda_seq.row(k).transpose();
      input_seq.row(k) =
          (-r_ldlt.solve(lq.B.transpose() * lam + lq.r)).transpose();
    }
  };

  propagate(Vec::Zero(n_x), rep.lambda_from_zero, rep.input_from_zero);
  propagate(s.lambda, rep.lambda_from_bar, rep.input_from_bar);
  rep.dist0_from_zero =
      (rep.lambda_from_zero.row(0).transpose() - s.lambda).cwiseAbs().maxCoeff();
  rep.dist0_from_bar =
      (rep.lambda_from_bar.row(0).transpose() - s.lambda).cwiseAbs().maxCoeff();
  return rep;
}

}  // namespace empc

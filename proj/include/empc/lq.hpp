#pragma once

#include <string>
#include <vector>

#include "empc/model.hpp"
#include "empc/ocp.hpp"
#include "empc/sop.hpp"

namespace empc {

/// LQ approximation data at the steady primal-dual point, in deviation
/// coordinates (dx, du) = (x - xbar, u - ubar). A, B, C, D are Jacobians at
/// (xbar, ubar); Q, S, R the steady-Lagrangian Hessian blocks; q, r the cost
/// gradients; P_N, p_N the terminal penalty quadratic/linear parts.
struct LqData {
  int n_x = 0;
  int n_u = 0;
  Mat A, B, C, D;
  Mat Q, S, R;
  Vec q, r;
  Mat P_N;
  Vec p_N;
  Vec g_offset;  // g(xbar, ubar)
  Vec lambdabar;
};

/// Requires an interior steady state (mu = 0); the construction presumes
/// inactive path constraints.
LqData build_lq(const PlantModel& model, const SteadyState& s,
                const SchemeConfig& scheme);

struct RiccatiReport {
  std::vector<Mat> gains;  // K_k for k = 0..N-1
  Mat K0;
  double spectral_radius = 0.0;  // of A + B K0
  bool stabilizing = false;
  bool singular_r = false;   // det R = 0: singular OCP, no recursion run
  bool indefinite = false;   // R + B'P B lost positive definiteness
  std::string message;
};

/// Finite-horizon Riccati backward recursion with cross terms, terminal
/// weight lq.P_N; passes iff the time-0 closed loop is contractive.
RiccatiReport check_local_stabilization(const LqData& lq, int N);

/// rank [B, AB, ..., A^{n_x-1} B] == n_x with relative singular-value
/// threshold 1e-8.
bool check_nstep_reachability(const LqData& lq);

struct AdjointBoundaryReport {
  bool fixed_point_unique = false;  // I - A' nonsingular
  Vec implied_fixed_point;          // solves lambda = A'lambda + q
  double fixed_point_gap = 0.0;     // ||implied - lambdabar||_inf
  bool observable = false;          // (A', B') observable
  Mat lambda_from_zero;  // (N+1) x n_x, backward from lambda_N = 0
  Mat lambda_from_bar;   // backward from lambda_N = lambdabar
  Mat input_from_zero;   // (N+1) x n_u, via u_k = -R^{-1}(B'lambda_k + r)
  Mat input_from_bar;
  double dist0_from_zero = 0.0;  // ||lambda_0 - lambdabar||_inf
  double dist0_from_bar = 0.0;
};

/// Backward propagation of the steady adjoint recursion
/// lambda_k = A'lambda_{k+1} + q (deviation coordinates, state pinned at
/// the steady point) under both terminal conditions of interest.
AdjointBoundaryReport adjoint_boundary_analysis(const LqData& lq,
                                                const SteadyState& s, int N);

}  // namespace empc

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "empc/model.hpp"

namespace empc {

/// Dense smooth nonlinear program
///   min f(z)  s.t.  h(z) = 0,  g(z) <= 0,
/// with multiplier convention L = f + lambda' h + mu' g, mu >= 0.
struct Nlp {
  int dim = 0;
  std::function<double(const Vec&)> objective;
  std::function<Vec(const Vec&)> gradient;

  int n_eq = 0;
  std::function<Vec(const Vec&)> eq;
  std::function<Mat(const Vec&)> eq_jac;

  int n_ineq = 0;
  std::function<Vec(const Vec&)> ineq;
  std::function<Mat(const Vec&)> ineq_jac;

  // Hessian of the Lagrangian at (z, lambda, mu); optional. Without it the
  // solver falls back to damped quasi-Newton.
  std::function<Mat(const Vec&, const Vec&, const Vec&)> lag_hess;
};

enum class HessianMode { ExactRegularized, DampedQuasiNewton };

struct NlpSettings {
  double tol = 1e-8;
  int max_iterations = 200;
  HessianMode hessian_mode = HessianMode::ExactRegularized;
  double reg_floor = 1e-8;
  double armijo_c = 1e-4;
  double backtrack_factor = 0.5;
  // Restoration declares the problem infeasible when it stalls above this.
  double infeasibility_tol = 1e-6;
  bool allow_restoration = true;
};

enum class NlpStatus { Converged, InfeasibleDetected, IterationLimit, Aborted };

const char* to_string(NlpStatus status);

struct KktResidual {
  double stationarity = 0.0;
  double feasibility = 0.0;      // max of ||h||_inf and max_j g_j
  double complementarity = 0.0;  // ||mu .* g||_inf
  double max() const;
};

struct NlpResult {
  Vec z;
  Vec lambda;  // equality multipliers
  Vec mu;      // inequality multipliers, >= 0
  double objective = 0.0;
  KktResidual kkt;
  NlpStatus status = NlpStatus::Aborted;
  int iterations = 0;
  std::string message;
  bool converged() const { return status == NlpStatus::Converged; }
};

struct NlpWarmStart {
  Vec lambda;
  Vec mu;
};

NlpResult solve_nlp(const Nlp& problem, const Vec& initial_guess,
                    const NlpSettings& settings = {},
                    const NlpWarmStart* warm = nullptr);

KktResidual kkt_residual(const Nlp& problem, const Vec& z, const Vec& lambda,
                         const Vec& mu);

enum class QpStatus { Optimal, Infeasible, IterationLimit };

struct QpResult {
  Vec z;
  Vec lambda;
  Vec mu;
  std::vector<int> active_set;  // active inequality rows, ascending
  QpStatus status = QpStatus::IterationLimit;
  double infeasibility = 0.0;  // phase-1 residual when status == Infeasible
};

/// Convex QP  min 1/2 z'Hz + c'z  s.t.  A_eq z = b_eq, A_in z <= b_in,
/// solved by a primal active-set iteration with an elastic phase 1.
/// H must be symmetric and positive definite on the null space of A_eq.
/// A feasible start hint skips the phase-1 work when it checks out.
QpResult solve_qp(const Mat& H, const Vec& c, const Mat& A_eq, const Vec& b_eq,
                  const Mat& A_in, const Vec& b_in,
                  const std::vector<int>* warm_active = nullptr,
                  const Vec* start_hint = nullptr);

struct EqpResult {
  Vec z;
  Vec lambda;
  bool solved = false;
};

/// Equality-constrained QP via one dense KKT factorization. Returns the
/// stationary point; no inertia requirement, so indefinite Hessians are
/// acceptable as long as the KKT matrix is nonsingular.
EqpResult solve_eqp(const Mat& H, const Vec& c, const Mat& A, const Vec& b);

}  // namespace empc

#pragma once

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace empc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Componentwise box on states and inputs. The box is realized as affine
/// rows of the path constraint g, in fixed order: state lower, state upper,
/// input lower, input upper.
struct BoxBounds {
  Vec x_lo, x_hi;
  Vec u_lo, u_hi;

  bool valid() const {
    return (x_lo.array() <= x_hi.array()).all() &&
           (u_lo.array() <= u_hi.array()).all();
  }
  bool contains_state(const Vec& x, double tol = 0.0) const {
    return (x.array() >= x_lo.array() - tol).all() &&
           (x.array() <= x_hi.array() + tol).all();
  }
  bool contains_input(const Vec& u, double tol = 0.0) const {
    return (u.array() >= u_lo.array() - tol).all() &&
           (u.array() <= u_hi.array() + tol).all();
  }
};

/// Second derivatives of the stage Lagrangian l(x,u) + lambda' f(x,u),
/// taken with respect to (x, u) at fixed multiplier.
struct StageHessian {
  Mat xx;  // n_x by n_x
  Mat xu;  // n_x by n_u
  Mat uu;  // n_u by n_u
};

/// Discrete-time plant: dynamics x+ = f(x,u), economic stage cost l(x,u),
/// and path constraints g(x,u) <= 0 with first derivatives. The leading
/// n_g_state rows of g must depend on the state only; they are the rows
/// enforced at the end of the prediction horizon.
struct PlantModel {
  std::string name;
  int n_x = 0;
  int n_u = 0;
  int n_g = 0;
  int n_g_state = 0;
  BoxBounds bounds;

  std::function<Vec(const Vec&, const Vec&)> f;
  std::function<double(const Vec&, const Vec&)> l;
  std::function<Vec(const Vec&, const Vec&)> g;

  std::function<Mat(const Vec&, const Vec&)> f_x;
  std::function<Mat(const Vec&, const Vec&)> f_u;
  std::function<Vec(const Vec&, const Vec&)> l_x;
  std::function<Vec(const Vec&, const Vec&)> l_u;
  std::function<Mat(const Vec&, const Vec&)> g_x;
  std::function<Mat(const Vec&, const Vec&)> g_u;

  // Stage Lagrangian Hessian at (x, u, lambda). Affine constraint rows
  // contribute nothing, so multipliers of g do not enter.
  std::function<StageHessian(const Vec&, const Vec&, const Vec&)> hess;
};

Vec eval_dynamics(const PlantModel& model, const Vec& x, const Vec& u);
double eval_stage_cost(const PlantModel& model, const Vec& x, const Vec& u);
Vec eval_constraints(const PlantModel& model, const Vec& x, const Vec& u);

/// Installs g, g_x, g_u (and n_g, n_g_state) from model.bounds using the
/// fixed row order; multiplier indices are then deterministic.
void attach_box_constraints(PlantModel& model);

/// Replaces the analytic stage Hessian by central differences of the first
/// derivatives; fallback for models without handwritten second derivatives.
void attach_fd_hessian(PlantModel& model, double step = 1e-6);

struct DerivativeCheckEntry {
  std::string evaluator;
  double max_rel_error = 0.0;
};

struct DerivativeCheckReport {
  std::vector<DerivativeCheckEntry> entries;
  double tolerance = 1e-5;
  bool pass = false;
  double worst() const;
};

/// Compares every analytic derivative evaluator against central finite
/// differences (step 1e-6) at random interior points of the box.
DerivativeCheckReport derivative_check(const PlantModel& model, int samples,
                                       std::uint64_t seed);

/// The chemical reactor benchmark: n_x = 2, n_u = 1, x in [0,1]^2,
/// u in [0,20], stage cost l(x,u) = -2 u x_B + 0.5 u + 0.1 (u-12)^2.
/// The x_B update uses -0.01 u x_B (see README on the sign of this term);
/// with it, x = [0.5, 0.5], u = 12 is an exact fixed point and the steady
/// adjoint [-100, -200] solves the stationarity conditions exactly.
PlantModel reactor_model();

/// Registry lookup used by the CLI ("reactor"). Custom models are defined
/// in code only.
std::optional<PlantModel> find_model(const std::string& name);
std::vector<std::string> model_names();

// Finite-difference utilities (central differences). Shared by the
// derivative checker and by tests that wrap NLP evaluators.
Mat fd_jacobian(const std::function<Vec(const Vec&)>& fn, const Vec& at,
                double step = 1e-6);
Vec fd_gradient(const std::function<double(const Vec&)>& fn, const Vec& at,
                double step = 1e-6);

}  // namespace empc

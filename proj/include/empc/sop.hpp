#pragma once

#include <cstdint>

#include "empc/model.hpp"
#include "empc/nlp.hpp"

namespace empc {

/// Optimal steady primal-dual point of the steady-state optimization
/// problem  min l(x,u) s.t. x = f(x,u), g(x,u) <= 0.
struct SteadyState {
  Vec x;       // xbar
  Vec u;       // ubar
  Vec lambda;  // steady adjoint, multiplier of x = f(x,u)
  Vec mu;      // path multipliers, >= 0
  double cost = 0.0;
  bool interior = false;  // (xbar, ubar) strictly inside Z

  // solver diagnostics
  int iterations = 0;
  int start_index = 0;
  int converged_starts = 0;
};

/// Multistart SOP solve (Latin hypercube starts over the box). Throws
/// std::runtime_error with per-start diagnostics when no start converges.
SteadyState solve_sop(const PlantModel& model, const NlpSettings& settings = {},
                      int multistart = 16, std::uint64_t seed = 0,
                      const SteadyState* warm = nullptr);

struct SopKktReport {
  double steady_residual = 0.0;      // ||x - f(x,u)||_inf
  double adjoint_residual = 0.0;     // ||lambda - (f_x'lambda + l_x + g_x'mu)||_inf
  double stationarity_residual = 0.0;  // ||f_u'lambda + l_u + g_u'mu||_inf
  bool multiplier_unique = true;
  double max() const;
};

SopKktReport verify_sop_kkt(const PlantModel& model, const SteadyState& s);

struct MultiplierUniquenessReport {
  bool unique = false;
  Vec singular_values;
  double threshold = 1e-8;  // relative to the largest singular value
  int active_constraints = 0;
};

/// LICQ surrogate: full column rank of the steady KKT Jacobian with respect
/// to (lambda, active mu).
MultiplierUniquenessReport check_multiplier_uniqueness(const PlantModel& model,
                                                       const SteadyState& s);

}  // namespace empc

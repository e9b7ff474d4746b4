#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "empc/model.hpp"
#include "empc/ocp.hpp"
#include "empc/sop.hpp"

namespace empc {

/// Closed-loop record: applied states/inputs, per-step optimal value,
/// stage cost, first adjoint, and solver status.
struct ClosedLoopTrace {
  Mat states;   // (T+1) x n_x
  Mat inputs;   // T x n_u
  Vec values;   // T, V_N at each applied state
  Vec stage_costs;
  Mat lambda0;  // T x n_x
  std::vector<NlpStatus> statuses;
  bool aborted = false;
  int abort_step = -1;
  int steps() const { return static_cast<int>(inputs.rows()); }
};

struct StorageCandidate {
  std::function<double(const Vec&)> value;
  std::string tag;
};

/// lambdabar'(x - xbar) plus the constant offset making it non-negative on
/// the state box; the default candidate for dissipation checks.
StorageCandidate linear_storage(const PlantModel& model, const SteadyState& s);

/// One receding-horizon step: u_0* and the full solution for warm starting.
std::pair<Vec, OcpSolution> mpc_feedback(const PlantModel& model,
                                         const SchemeConfig& scheme, int N,
                                         const Vec& x,
                                         const OcpSolution* warm = nullptr,
                                         const NlpSettings& settings = {});

/// Simulates T closed-loop steps with shift-initialized warm starts. The
/// plant is stepped with the model map exactly. Infeasibility mid-loop
/// truncates the trace and sets the abort marker.
ClosedLoopTrace simulate_closed_loop(const PlantModel& model,
                                     const SchemeConfig& scheme, int N,
                                     const Vec& x0, int T,
                                     const NlpSettings& settings = {});

/// Max of ||x_i - xbar||_2 over the trailing tail_fraction of the trace.
double eventual_deviation(const ClosedLoopTrace& trace, const SteadyState& s,
                          double tail_fraction);

struct DissipationReport {
  Vec residuals;  // S(f(x,u)) - S(x) - l(x,u) + l(xbar,ubar), per pair
  double max_residual = 0.0;
  int violations = 0;
  bool pass = false;
  // strict variant with alpha(d) = c d^2, filled when requested
  bool strict_checked = false;
  double alpha_coefficient = 0.0;
  Vec strict_residuals;
  double max_strict_residual = 0.0;
  int strict_violations = 0;
  bool strict_pass = false;
};

DissipationReport check_dissipation(
    const PlantModel& model, const SteadyState& s,
    const StorageCandidate& storage,
    const std::vector<std::pair<Vec, Vec>>& pairs,
    std::optional<double> strictness_coefficient = std::nullopt);

/// Number of stages with ||(x_k, u_k) - (xbar, ubar)||_2 > eps.
int turnpike_metric(const OcpSolution& sol, const SteadyState& s, double eps);

}  // namespace empc

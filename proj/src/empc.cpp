#include "empc/empc.hpp"

#include <cmath>
#include <stdexcept>

namespace empc {

StorageCandidate linear_storage(const PlantModel& model, const SteadyState& s) {
  const Vec lambda = s.lambda;
  const Vec xbar = s.x;
  // min over the box of lambda'(x - xbar), attained at a vertex
  double lowest = 0.0;
  for (int i = 0; i < model.n_x; ++i) {
    lowest += std::min(lambda(i) * (model.bounds.x_lo(i) - xbar(i)),
                       lambda(i) * (model.bounds.x_hi(i) - xbar(i)));
  }
  StorageCandidate c;
  c.tag = "linear";
  c.value = [lambda, xbar, lowest](const Vec& x) {
    return lambda.dot(x - xbar) - lowest;
  };
  return c;
}

std::pair<Vec, OcpSolution> mpc_feedback(const PlantModel& model,
                                         const SchemeConfig& scheme, int N,
                                         const Vec& x, const OcpSolution* warm,
                                         const NlpSettings& settings) {
  OcpSolution sol = solve_ocp(model, scheme, N, x, warm, settings);
  Vec u;
  if (sol.converged()) u = sol.u.row(0).transpose();
  return {u, std::move(sol)};
}

namespace {

// Shift the previous solution one stage forward and append the steady pair;
// mirrors the recursive-feasibility construction and accelerates the SQP.
OcpSolution shift_warm_start(const PlantModel& model, const OcpSolution& sol,
                             const Vec& ubar) {
  const int N = sol.horizon();
  OcpSolution shifted = sol;
  for (int k = 0; k < N; ++k) {
    shifted.x.row(k) = sol.x.row(k + 1);
    if (k < N - 1) {
      shifted.u.row(k) = sol.u.row(k + 1);
      shifted.mu.row(k) = sol.mu.row(k + 1);
    }
    shifted.lambda.row(k) = sol.lambda.row(std::min(k + 1, N));
  }
  const Vec u_last = ubar.size() == model.n_u
                         ? ubar
                         : Vec(0.5 * (model.bounds.u_lo + model.bounds.u_hi));
  shifted.u.row(N - 1) = u_last.transpose();
  shifted.x.row(N) =
      model.f(shifted.x.row(N - 1).transpose(), u_last).transpose();
  shifted.lambda.row(N) = sol.lambda.row(N);
  shifted.mu.row(N - 1).setZero();
  shifted.mu.row(N - 1).head(model.n_g_state) =
      sol.mu.row(N).head(model.n_g_state);
  return shifted;
}

}  // namespace

ClosedLoopTrace simulate_closed_loop(const PlantModel& model,
                                     const SchemeConfig& scheme, int N,
                                     const Vec& x0, int T,
                                     const NlpSettings& settings) {
  if (T < 1) throw std::invalid_argument("simulate_closed_loop: T >= 1");
  ClosedLoopTrace trace;
  trace.states.resize(T + 1, model.n_x);
  trace.inputs.resize(T, model.n_u);
  trace.values.resize(T);
  trace.stage_costs.resize(T);
  trace.lambda0.resize(T, model.n_x);
  trace.statuses.reserve(T);

  Vec x = x0;
  trace.states.row(0) = x.transpose();
  OcpSolution previous;
  bool have_warm = false;

  for (int i = 0; i < T; ++i) {
    OcpSolution sol =
        solve_ocp(model, scheme, N, x, have_warm ? &previous : nullptr, settings);
    if (!sol.converged() && have_warm) {
      sol = solve_ocp(model, scheme, N, x, nullptr, settings);  // cold retry
    }
    trace.statuses.push_back(sol.status);
    if (!sol.converged()) {
      trace.aborted = true;
      trace.abort_step = i;
      trace.states.conservativeResize(i + 1, Eigen::NoChange);
      trace.inputs.conservativeResize(i, Eigen::NoChange);
      trace.values.conservativeResize(i);
      trace.stage_costs.conservativeResize(i);
      trace.lambda0.conservativeResize(i, Eigen::NoChange);
      return trace;
    }
    const Vec u = sol.u.row(0).transpose();
    trace.inputs.row(i) = u.transpose();
    trace.values(i) = sol.objective;
    trace.stage_costs(i) = model.l(x, u);
    trace.lambda0.row(i) = sol.lambda.row(0);

    x = model.f(x, u);
    trace.states.row(i + 1) = x.transpose();
    previous = shift_warm_start(model, sol, scheme.ubar);
    have_warm = true;
  }
  return trace;
}

double eventual_deviation(const ClosedLoopTrace& trace, const SteadyState& s,
                          double tail_fraction) {
  if (trace.aborted)
    throw std::invalid_argument("eventual_deviation: trace aborted");
  if (!(tail_fraction > 0.0 && tail_fraction <= 1.0))
    throw std::invalid_argument("eventual_deviation: tail_fraction in (0,1]");
  const int count = static_cast<int>(trace.states.rows());
  const int tail = std::max(1, static_cast<int>(std::ceil(tail_fraction * count)));
  double worst = 0.0;
  for (int i = count - tail; i < count; ++i) {
    worst = std::max(worst, (trace.states.row(i).transpose() - s.x).norm());
  }
  return worst;
}

DissipationReport check_dissipation(
    const PlantModel& model, const SteadyState& s,
    const StorageCandidate& storage,
    const std::vector<std::pair<Vec, Vec>>& pairs,
    std::optional<double> strictness_coefficient) {
  DissipationReport rep;
  const int n = static_cast<int>(pairs.size());
  rep.residuals.resize(n);
  const double steady_cost = model.l(s.x, s.u);

  for (int i = 0; i < n; ++i) {
    const auto& [x, u] = pairs[i];
    rep.residuals(i) = storage.value(model.f(x, u)) - storage.value(x) -
                       model.l(x, u) + steady_cost;
  }
  rep.max_residual = n > 0 ? rep.residuals.maxCoeff() : 0.0;
  for (int i = 0; i < n; ++i)
    if (rep.residuals(i) > 1e-10) ++rep.violations;
  rep.pass = rep.violations == 0;

  if (strictness_coefficient.has_value()) {
    rep.strict_checked = true;
    rep.alpha_coefficient = *strictness_coefficient;
    rep.strict_residuals.resize(n);
    for (int i = 0; i < n; ++i) {
      const auto& [x, u] = pairs[i];
      const double d2 = (x - s.x).squaredNorm() + (u - s.u).squaredNorm();
      rep.strict_residuals(i) = rep.residuals(i) + rep.alpha_coefficient * d2;
    }
    rep.max_strict_residual = n > 0 ? rep.strict_residuals.maxCoeff() : 0.0;
    for (int i = 0; i < n; ++i)
      if (rep.strict_residuals(i) > 1e-10) ++rep.strict_violations;
    rep.strict_pass = rep.strict_violations == 0;
  }
  return rep;
}

int turnpike_metric(const OcpSolution& sol, const SteadyState& s, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("turnpike_metric: eps > 0");
  int count = 0;
  for (int k = 0; k < sol.horizon(); ++k) {
    const double d2 = (sol.x.row(k).transpose() - s.x).squaredNorm() +
                      (sol.u.row(k).transpose() - s.u).squaredNorm();
    if (std::sqrt(d2) > eps) ++count;
  }
  return count;
}

}  // namespace empc

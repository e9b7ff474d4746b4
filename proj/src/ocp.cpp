#include "empc/ocp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace empc {

namespace {

// Decision vector layout: [x_0, u_0, x_1, u_1, ..., x_{N-1}, u_{N-1}, x_N].
struct Layout {
  int n_x, n_u, n_g, n_g_state, N;
  int stage() const { return n_x + n_u; }
  int dim() const { return N * stage() + n_x; }
  int x_off(int k) const { return k * stage(); }
  int u_off(int k) const { return k * stage() + n_x; }
  int n_eq(bool terminal_eq) const {
    return (N + 1) * n_x + (terminal_eq ? n_x : 0);
  }
  int n_ineq() const { return N * n_g + n_g_state; }
};

Layout make_layout(const PlantModel& model, int N) {
  return Layout{model.n_x, model.n_u, model.n_g, model.n_g_state, N};
}

Vec dynamics_residuals(const PlantModel& model, const Layout& lo, const Vec& z,
                       const Vec& x0, bool terminal_eq, const Vec& xbar) {
  Vec h(lo.n_eq(terminal_eq));
  h.head(lo.n_x) = x0 - z.segment(lo.x_off(0), lo.n_x);
  for (int k = 0; k < lo.N; ++k) {
    h.segment((k + 1) * lo.n_x, lo.n_x) =
        model.f(z.segment(lo.x_off(k), lo.n_x), z.segment(lo.u_off(k), lo.n_u)) -
        z.segment(lo.x_off(k + 1), lo.n_x);
  }
  if (terminal_eq) {
    h.tail(lo.n_x) = z.segment(lo.x_off(lo.N), lo.n_x) - xbar;
  }
  return h;
}

Mat dynamics_jacobian(const PlantModel& model, const Layout& lo, const Vec& z,
                      bool terminal_eq) {
  Mat jac = Mat::Zero(lo.n_eq(terminal_eq), lo.dim());
  jac.block(0, lo.x_off(0), lo.n_x, lo.n_x) = -Mat::Identity(lo.n_x, lo.n_x);
  for (int k = 0; k < lo.N; ++k) {
    const Vec xk = z.segment(lo.x_off(k), lo.n_x);
    const Vec uk = z.segment(lo.u_off(k), lo.n_u);
    const int row = (k + 1) * lo.n_x;
    jac.block(row, lo.x_off(k), lo.n_x, lo.n_x) = model.f_x(xk, uk);
    jac.block(row, lo.u_off(k), lo.n_x, lo.n_u) = model.f_u(xk, uk);
    jac.block(row, lo.x_off(k + 1), lo.n_x, lo.n_x) =
        -Mat::Identity(lo.n_x, lo.n_x);
  }
  if (terminal_eq) {
    jac.block((lo.N + 1) * lo.n_x, lo.x_off(lo.N), lo.n_x, lo.n_x) =
        Mat::Identity(lo.n_x, lo.n_x);
  }
  return jac;
}

Vec path_constraints(const PlantModel& model, const Layout& lo, const Vec& z) {
  Vec g(lo.n_ineq());
  for (int k = 0; k < lo.N; ++k) {
    g.segment(k * lo.n_g, lo.n_g) = model.g(z.segment(lo.x_off(k), lo.n_x),
                                            z.segment(lo.u_off(k), lo.n_u));
  }
  // Stage N carries the state rows only; u_N is not a decision variable.
  const Vec g_end =
      model.g(z.segment(lo.x_off(lo.N), lo.n_x), Vec::Zero(lo.n_u));
  g.tail(lo.n_g_state) = g_end.head(lo.n_g_state);
  return g;
}

Mat path_jacobian(const PlantModel& model, const Layout& lo, const Vec& z) {
  Mat jac = Mat::Zero(lo.n_ineq(), lo.dim());
  for (int k = 0; k < lo.N; ++k) {
    const Vec xk = z.segment(lo.x_off(k), lo.n_x);
    const Vec uk = z.segment(lo.u_off(k), lo.n_u);
    jac.block(k * lo.n_g, lo.x_off(k), lo.n_g, lo.n_x) = model.g_x(xk, uk);
    jac.block(k * lo.n_g, lo.u_off(k), lo.n_g, lo.n_u) = model.g_u(xk, uk);
  }
  const Vec xN = z.segment(lo.x_off(lo.N), lo.n_x);
  jac.block(lo.N * lo.n_g, lo.x_off(lo.N), lo.n_g_state, lo.n_x) =
      model.g_x(xN, Vec::Zero(lo.n_u)).topRows(lo.n_g_state);
  return jac;
}

Vec initial_guess(const PlantModel& model, const SchemeConfig& scheme,
                  const Layout& lo, const Vec& x0) {
  Vec u_ref;
  if (scheme.ubar.size() == lo.n_u) {
    u_ref = scheme.ubar;
  } else {
    u_ref = 0.5 * (model.bounds.u_lo + model.bounds.u_hi);
  }
  Vec z(lo.dim());
  Vec xk = x0;
  for (int k = 0; k < lo.N; ++k) {
    z.segment(lo.x_off(k), lo.n_x) = xk;
    z.segment(lo.u_off(k), lo.n_u) = u_ref;
    xk = model.f(xk, u_ref);
  }
  z.segment(lo.x_off(lo.N), lo.n_x) = xk;
  return z;
}

}  // namespace

const char* to_string(SchemeKind kind) {
  switch (kind) {
    case SchemeKind::TerminalEquality: return "terminal";
    case SchemeKind::Unconstrained: return "plain";
    case SchemeKind::LinearPenalty: return "gradcorr";
  }
  return "unknown";
}

std::optional<SchemeKind> scheme_from_string(const std::string& name) {
  if (name == "terminal") return SchemeKind::TerminalEquality;
  if (name == "plain") return SchemeKind::Unconstrained;
  if (name == "gradcorr") return SchemeKind::LinearPenalty;
  return std::nullopt;
}

SchemeConfig SchemeConfig::terminal_equality(const SteadyState& s) {
  return make(SchemeKind::TerminalEquality, s);
}

SchemeConfig SchemeConfig::unconstrained() {
  SchemeConfig c;
  c.kind = SchemeKind::Unconstrained;
  return c;
}

SchemeConfig SchemeConfig::linear_penalty(const SteadyState& s) {
  return make(SchemeKind::LinearPenalty, s);
}

SchemeConfig SchemeConfig::make(SchemeKind kind, const SteadyState& s) {
  SchemeConfig c;
  c.kind = kind;
  c.xbar = s.x;
  c.lambdabar = s.lambda;
  c.ubar = s.u;
  return c;
}

void SchemeConfig::validate() const {
  if (kind == SchemeKind::TerminalEquality && xbar.size() == 0)
    throw std::invalid_argument("terminal-equality scheme needs xbar");
  if (kind == SchemeKind::LinearPenalty && lambdabar.size() == 0)
    throw std::invalid_argument("linear-penalty scheme needs lambdabar");
}

TerminalPenalty terminal_penalty(const SchemeConfig& scheme, const Vec& xN) {
  TerminalPenalty p;
  if (scheme.kind == SchemeKind::LinearPenalty) {
    p.value = scheme.lambdabar.dot(xN);
    p.gradient = scheme.lambdabar;
  } else {
    p.gradient = Vec::Zero(xN.size());
  }
  return p;
}

double evaluate_objective(const PlantModel& model, const SchemeConfig& scheme,
                          const Mat& x, const Mat& u) {
  double total = 0.0;
  for (int k = 0; k < u.rows(); ++k)
    total += model.l(x.row(k).transpose(), u.row(k).transpose());
  total += terminal_penalty(scheme, x.row(x.rows() - 1).transpose()).value;
  return total;
}

OcpSolution solve_ocp(const PlantModel& model, const SchemeConfig& scheme,
                      int N, const Vec& x0, const OcpSolution* warm,
                      const NlpSettings& settings) {
  if (N < 1) throw std::invalid_argument("solve_ocp: N >= 1 required");
  if (x0.size() != model.n_x || !x0.allFinite())
    throw std::invalid_argument("solve_ocp: bad initial state");
  scheme.validate();

  const Layout lo = make_layout(model, N);
  const bool terminal_eq = scheme.kind == SchemeKind::TerminalEquality;

  Nlp p;
  p.dim = lo.dim();
  p.objective = [&, lo](const Vec& z) {
    double total = 0.0;
    for (int k = 0; k < lo.N; ++k)
      total += model.l(z.segment(lo.x_off(k), lo.n_x),
                       z.segment(lo.u_off(k), lo.n_u));
    return total + terminal_penalty(scheme, z.segment(lo.x_off(lo.N), lo.n_x)).value;
  };
  p.gradient = [&, lo](const Vec& z) {
    Vec grad = Vec::Zero(lo.dim());
    for (int k = 0; k < lo.N; ++k) {
      const Vec xk = z.segment(lo.x_off(k), lo.n_x);
      const Vec uk = z.segment(lo.u_off(k), lo.n_u);
      grad.segment(lo.x_off(k), lo.n_x) = model.l_x(xk, uk);
      grad.segment(lo.u_off(k), lo.n_u) = model.l_u(xk, uk);
    }
    grad.segment(lo.x_off(lo.N), lo.n_x) =
        terminal_penalty(scheme, z.segment(lo.x_off(lo.N), lo.n_x)).gradient;
    return grad;
  };
  p.n_eq = lo.n_eq(terminal_eq);
  p.eq = [&, lo](const Vec& z) {
    return dynamics_residuals(model, lo, z, x0, terminal_eq, scheme.xbar);
  };
  p.eq_jac = [&, lo](const Vec& z) {
    return dynamics_jacobian(model, lo, z, terminal_eq);
  };
  p.n_ineq = lo.n_ineq();
  p.ineq = [&, lo](const Vec& z) { return path_constraints(model, lo, z); };
  p.ineq_jac = [&, lo](const Vec& z) { return path_jacobian(model, lo, z); };
  if (model.hess) {
    p.lag_hess = [&, lo](const Vec& z, const Vec& lambda, const Vec&) {
      Mat H = Mat::Zero(lo.dim(), lo.dim());
      for (int k = 0; k < lo.N; ++k) {
        const StageHessian h =
            model.hess(z.segment(lo.x_off(k), lo.n_x),
                       z.segment(lo.u_off(k), lo.n_u),
                       lambda.segment((k + 1) * lo.n_x, lo.n_x));
        H.block(lo.x_off(k), lo.x_off(k), lo.n_x, lo.n_x) = h.xx;
        H.block(lo.x_off(k), lo.u_off(k), lo.n_x, lo.n_u) = h.xu;
        H.block(lo.u_off(k), lo.x_off(k), lo.n_u, lo.n_x) = h.xu.transpose();
        H.block(lo.u_off(k), lo.u_off(k), lo.n_u, lo.n_u) = h.uu;
      }
      return H;
    };
  }

  Vec z0;
  NlpWarmStart ws;
  const NlpWarmStart* ws_ptr = nullptr;
  if (warm != nullptr && warm->horizon() == N &&
      warm->x.cols() == model.n_x && warm->mu.cols() == model.n_g) {
    z0 = Vec(lo.dim());
    for (int k = 0; k < N; ++k) {
      z0.segment(lo.x_off(k), lo.n_x) = warm->x.row(k).transpose();
      z0.segment(lo.u_off(k), lo.n_u) = warm->u.row(k).transpose();
    }
    z0.segment(lo.x_off(N), lo.n_x) = warm->x.row(N).transpose();
    ws.lambda = Vec::Zero(p.n_eq);
    for (int k = 0; k <= N; ++k)
      ws.lambda.segment(k * lo.n_x, lo.n_x) = warm->lambda.row(k).transpose();
    if (terminal_eq) {
      ws.lambda.tail(lo.n_x) =
          warm->terminal_multiplier.size() == lo.n_x
              ? warm->terminal_multiplier
              : Vec::Zero(lo.n_x);
    }
    ws.mu = Vec::Zero(p.n_ineq);
    for (int k = 0; k < N; ++k)
      ws.mu.segment(k * lo.n_g, lo.n_g) = warm->mu.row(k).transpose();
    ws.mu.tail(lo.n_g_state) =
        warm->mu.row(N).head(lo.n_g_state).transpose();
    ws_ptr = &ws;
  } else {
    z0 = initial_guess(model, scheme, lo, x0);
  }

  const NlpResult res = solve_nlp(p, z0, settings, ws_ptr);

  OcpSolution sol;
  sol.x.resize(N + 1, lo.n_x);
  sol.u.resize(N, lo.n_u);
  sol.lambda.resize(N + 1, lo.n_x);
  sol.mu = Mat::Zero(N + 1, lo.n_g);
  for (int k = 0; k < N; ++k) {
    sol.x.row(k) = res.z.segment(lo.x_off(k), lo.n_x).transpose();
    sol.u.row(k) = res.z.segment(lo.u_off(k), lo.n_u).transpose();
    sol.mu.row(k) = res.mu.segment(k * lo.n_g, lo.n_g).transpose();
  }
  sol.x.row(N) = res.z.segment(lo.x_off(N), lo.n_x).transpose();
  sol.mu.row(N).head(lo.n_g_state) = res.mu.tail(lo.n_g_state).transpose();
  for (int k = 0; k <= N; ++k)
    sol.lambda.row(k) = res.lambda.segment(k * lo.n_x, lo.n_x).transpose();
  if (terminal_eq) sol.terminal_multiplier = res.lambda.tail(lo.n_x);
  sol.objective = res.objective;
  sol.status = res.status;
  sol.iterations = res.iterations;
  sol.message = res.message;
  if (sol.converged()) sol.el = euler_lagrange_residual(model, scheme, sol);
  return sol;
}

double ElReport::max() const {
  return std::max({max_dynamics, max_adjoint, max_stationarity, boundary});
}

ElReport euler_lagrange_residual(const PlantModel& model,
                                 const SchemeConfig& scheme,
                                 const OcpSolution& sol) {
  const int N = sol.horizon();
  ElReport rep;
  rep.dynamics.resize(N);
  rep.adjoint.resize(N);
  rep.stationarity.resize(N);

  for (int k = 0; k < N; ++k) {
    const Vec xk = sol.x.row(k).transpose();
    const Vec uk = sol.u.row(k).transpose();
    const Vec lam_next = sol.lambda.row(k + 1).transpose();
    const Vec lam_k = sol.lambda.row(k).transpose();
    const Vec mu_k = sol.mu.row(k).transpose();

    rep.dynamics(k) =
        (sol.x.row(k + 1).transpose() - model.f(xk, uk)).cwiseAbs().maxCoeff();
    Vec adj = lam_k - model.f_x(xk, uk).transpose() * lam_next -
              model.l_x(xk, uk) - model.g_x(xk, uk).transpose() * mu_k;
    Vec stat = model.f_u(xk, uk).transpose() * lam_next + model.l_u(xk, uk) +
               model.g_u(xk, uk).transpose() * mu_k;
    rep.adjoint(k) = adj.cwiseAbs().maxCoeff();
    rep.stationarity(k) = stat.cwiseAbs().maxCoeff();
  }

  const Vec xN = sol.x.row(N).transpose();
  const Vec lam_N = sol.lambda.row(N).transpose();
  const Vec mu_N_state = sol.mu.row(N).head(model.n_g_state).transpose();
  const Mat gx_state =
      model.g_x(xN, Vec::Zero(model.n_u)).topRows(model.n_g_state);
  switch (scheme.kind) {
    case SchemeKind::TerminalEquality:
      rep.boundary = (xN - scheme.xbar).cwiseAbs().maxCoeff();
      break;
    case SchemeKind::Unconstrained:
      rep.boundary =
          (lam_N - gx_state.transpose() * mu_N_state).cwiseAbs().maxCoeff();
      break;
    case SchemeKind::LinearPenalty:
      rep.boundary = (lam_N - scheme.lambdabar - gx_state.transpose() * mu_N_state)
                         .cwiseAbs()
                         .maxCoeff();
      break;
  }

  rep.max_dynamics = N > 0 ? rep.dynamics.maxCoeff() : 0.0;
  rep.max_adjoint = N > 0 ? rep.adjoint.maxCoeff() : 0.0;
  rep.max_stationarity = N > 0 ? rep.stationarity.maxCoeff() : 0.0;
  return rep;
}

FeasibilityProbe probe_feasibility_report(const PlantModel& model,
                                          const SchemeConfig& scheme, int N,
                                          const Vec& x0,
                                          const NlpSettings& settings) {
  if (N < 1) throw std::invalid_argument("probe_feasibility: N >= 1 required");
  scheme.validate();
  const Layout lo = make_layout(model, N);
  const bool terminal_eq = scheme.kind == SchemeKind::TerminalEquality;

  auto residual = [&, lo](const Vec& z) {
    return dynamics_residuals(model, lo, z, x0, terminal_eq, scheme.xbar);
  };
  auto jacobian = [&, lo](const Vec& z) {
    return dynamics_jacobian(model, lo, z, terminal_eq);
  };

  // Gauss-Newton feasibility problem: the path constraints stay hard, the
  // equality violation is minimized.
  Nlp p;
  p.dim = lo.dim();
  p.objective = [&](const Vec& z) { return 0.5 * residual(z).squaredNorm(); };
  p.gradient = [&](const Vec& z) -> Vec {
    return jacobian(z).transpose() * residual(z);
  };
  p.n_ineq = lo.n_ineq();
  p.ineq = [&, lo](const Vec& z) { return path_constraints(model, lo, z); };
  p.ineq_jac = [&, lo](const Vec& z) { return path_jacobian(model, lo, z); };
  p.lag_hess = [&](const Vec& z, const Vec&, const Vec&) -> Mat {
    const Mat J = jacobian(z);
    return J.transpose() * J;
  };

  auto violation_at = [&, lo](const Vec& z) {
    double v = residual(z).cwiseAbs().maxCoeff();
    const Vec g = path_constraints(model, lo, z);
    if (g.size() > 0) v = std::max(v, g.maxCoeff());
    return v;
  };

  const Vec u_mid = 0.5 * (model.bounds.u_lo + model.bounds.u_hi);
  const Vec u_ref = scheme.ubar.size() == lo.n_u ? scheme.ubar : u_mid;
  const Vec x_target = scheme.xbar.size() == lo.n_x
                           ? scheme.xbar
                           : Vec(0.5 * (model.bounds.x_lo + model.bounds.x_hi));

  std::vector<Vec> starts;
  {
    Vec z(lo.dim());
    Vec xk = x0;
    for (int k = 0; k < N; ++k) {
      z.segment(lo.x_off(k), lo.n_x) = xk;
      z.segment(lo.u_off(k), lo.n_u) = u_ref;
      xk = model.f(xk, u_ref);
    }
    z.segment(lo.x_off(N), lo.n_x) = xk;
    starts.push_back(z);
  }
  {
    Vec z(lo.dim());
    Vec xk = x0;
    for (int k = 0; k < N; ++k) {
      z.segment(lo.x_off(k), lo.n_x) = xk;
      z.segment(lo.u_off(k), lo.n_u) = model.bounds.u_hi;
      xk = model.f(xk, model.bounds.u_hi);
    }
    z.segment(lo.x_off(N), lo.n_x) = xk;
    starts.push_back(z);
  }
  {
    Vec z(lo.dim());
    for (int k = 0; k <= N; ++k) {
      const double t = static_cast<double>(k) / N;
      z.segment(lo.x_off(k), lo.n_x) = (1.0 - t) * x0 + t * x_target;
      if (k < N) z.segment(lo.u_off(k), lo.n_u) = u_ref;
    }
    starts.push_back(z);
  }

  FeasibilityProbe probe;
  probe.violation = std::numeric_limits<double>::infinity();
  const double feas_tol = 1e-6;
  bool saw_non_verdict = false;
  for (const Vec& z0 : starts) {
    const double direct = violation_at(z0);
    probe.violation = std::min(probe.violation, direct);
    if (direct <= feas_tol) {
      probe.feasible = true;
      return probe;
    }
    const NlpResult res = solve_nlp(p, z0, settings);
    const double v = violation_at(res.z);
    probe.violation = std::min(probe.violation, v);
    if (v <= feas_tol) {
      probe.feasible = true;
      return probe;
    }
    if (!res.converged()) saw_non_verdict = true;
  }
  probe.unresolved = saw_non_verdict;
  return probe;
}

bool probe_feasibility(const PlantModel& model, const SchemeConfig& scheme,
                       int N, const Vec& x0, const NlpSettings& settings) {
  return probe_feasibility_report(model, scheme, N, x0, settings).feasible;
}

}  // namespace empc

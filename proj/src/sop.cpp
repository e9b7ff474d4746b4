#include "empc/sop.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace empc {

namespace {

double uniform01(std::mt19937_64& rng) {
  return std::ldexp(static_cast<double>(rng() >> 11), -53);
}

Nlp build_sop_nlp(const PlantModel& model) {
  const int n_x = model.n_x;
  const int n_u = model.n_u;
  Nlp p;
  p.dim = n_x + n_u;
  p.objective = [&model, n_x, n_u](const Vec& z) {
    return model.l(z.head(n_x), z.tail(n_u));
  };
  p.gradient = [&model, n_x, n_u](const Vec& z) {
    Vec g(n_x + n_u);
    g.head(n_x) = model.l_x(z.head(n_x), z.tail(n_u));
    g.tail(n_u) = model.l_u(z.head(n_x), z.tail(n_u));
    return g;
  };
  p.n_eq = n_x;
  p.eq = [&model, n_x, n_u](const Vec& z) -> Vec {
    return model.f(z.head(n_x), z.tail(n_u)) - z.head(n_x);
  };
  p.eq_jac = [&model, n_x, n_u](const Vec& z) {
    Mat jac(n_x, n_x + n_u);
    jac.leftCols(n_x) =
        model.f_x(z.head(n_x), z.tail(n_u)) - Mat::Identity(n_x, n_x);
    jac.rightCols(n_u) = model.f_u(z.head(n_x), z.tail(n_u));
    return jac;
  };
  p.n_ineq = model.n_g;
  p.ineq = [&model, n_x, n_u](const Vec& z) {
    return model.g(z.head(n_x), z.tail(n_u));
  };
  p.ineq_jac = [&model, n_x, n_u](const Vec& z) {
    Mat jac(model.n_g, n_x + n_u);
    jac.leftCols(n_x) = model.g_x(z.head(n_x), z.tail(n_u));
    jac.rightCols(n_u) = model.g_u(z.head(n_x), z.tail(n_u));
    return jac;
  };
  if (model.hess) {
    p.lag_hess = [&model, n_x, n_u](const Vec& z, const Vec& lambda,
                                    const Vec&) {
      // The -lambda'x term of the steady Lagrangian is linear and drops out.
      const StageHessian h = model.hess(z.head(n_x), z.tail(n_u), lambda);
      Mat H(n_x + n_u, n_x + n_u);
      H.topLeftCorner(n_x, n_x) = h.xx;
      H.topRightCorner(n_x, n_u) = h.xu;
      H.bottomLeftCorner(n_u, n_x) = h.xu.transpose();
      H.bottomRightCorner(n_u, n_u) = h.uu;
      return H;
    };
  }
  return p;
}

// Latin hypercube over the (x, u) box: one stratum per start and dimension,
// strata order permuted independently per dimension.
std::vector<Vec> latin_hypercube_starts(const PlantModel& model, int count,
                                        std::uint64_t seed) {
  const int dim = model.n_x + model.n_u;
  Vec lo(dim), hi(dim);
  lo << model.bounds.x_lo, model.bounds.u_lo;
  hi << model.bounds.x_hi, model.bounds.u_hi;

  std::mt19937_64 rng(seed);
  std::vector<std::vector<int>> perms(dim);
  for (int d = 0; d < dim; ++d) {
    perms[d].resize(count);
    std::iota(perms[d].begin(), perms[d].end(), 0);
    for (int i = count - 1; i > 0; --i) {
      const int j = static_cast<int>(rng() % static_cast<std::uint64_t>(i + 1));
      std::swap(perms[d][i], perms[d][j]);
    }
  }
  std::vector<Vec> starts(count, Vec(dim));
  for (int i = 0; i < count; ++i) {
    for (int d = 0; d < dim; ++d) {
      const double t = (perms[d][i] + uniform01(rng)) / count;
      starts[i](d) = lo(d) + t * (hi(d) - lo(d));
    }
  }
  return starts;
}

SteadyState from_result(const PlantModel& model, const NlpResult& res) {
  SteadyState s;
  s.x = res.z.head(model.n_x);
  s.u = res.z.tail(model.n_u);
  s.lambda = res.lambda;
  s.mu = res.mu;
  s.cost = res.objective;
  s.iterations = res.iterations;
  const Vec gv = model.g(s.x, s.u);
  s.interior = gv.size() == 0 || gv.maxCoeff() < -1e-6;
  return s;
}

}  // namespace

SteadyState solve_sop(const PlantModel& model, const NlpSettings& settings,
                      int multistart, std::uint64_t seed,
                      const SteadyState* warm) {
  if (multistart < 1) throw std::invalid_argument("solve_sop: multistart >= 1");
  const Nlp p = build_sop_nlp(model);

  if (warm != nullptr) {
    Vec z0(p.dim);
    z0 << warm->x, warm->u;
    NlpWarmStart ws{warm->lambda, warm->mu};
    const NlpResult res = solve_nlp(p, z0, settings, &ws);
    if (res.converged()) {
      SteadyState s = from_result(model, res);
      s.converged_starts = 1;
      return s;
    }
  }

  const std::vector<Vec> starts = latin_hypercube_starts(model, multistart, seed);
  std::vector<NlpResult> results(starts.size());
  for (std::size_t i = 0; i < starts.size(); ++i)
    results[i] = solve_nlp(p, starts[i], settings);

  int best = -1;
  int converged = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (!results[i].converged()) continue;
    ++converged;
    if (best < 0 || results[i].objective < results[best].objective) {
      best = static_cast<int>(i);
    }
  }
  if (best < 0) {
    std::ostringstream msg;
    msg << "solve_sop: no start converged (" << starts.size() << " starts):";
    for (std::size_t i = 0; i < results.size(); ++i) {
      msg << "\n  start " << i << ": " << to_string(results[i].status)
          << " kkt=" << results[i].kkt.max();
    }
    throw std::runtime_error(msg.str());
  }

  SteadyState s = from_result(model, results[best]);
  s.start_index = best;
  s.converged_starts = converged;
  return s;
}

double SopKktReport::max() const {
  return std::max({steady_residual, adjoint_residual, stationarity_residual});
}

SopKktReport verify_sop_kkt(const PlantModel& model, const SteadyState& s) {
  SopKktReport report;
  const Vec steady = s.x - model.f(s.x, s.u);
  report.steady_residual = steady.cwiseAbs().maxCoeff();

  Vec adjoint = s.lambda - model.f_x(s.x, s.u).transpose() * s.lambda -
                model.l_x(s.x, s.u);
  Vec stationarity =
      model.f_u(s.x, s.u).transpose() * s.lambda + model.l_u(s.x, s.u);
  if (model.n_g > 0 && s.mu.size() == model.n_g) {
    adjoint -= model.g_x(s.x, s.u).transpose() * s.mu;
    stationarity += model.g_u(s.x, s.u).transpose() * s.mu;
  }
  report.adjoint_residual = adjoint.cwiseAbs().maxCoeff();
  report.stationarity_residual = stationarity.cwiseAbs().maxCoeff();
  report.multiplier_unique = check_multiplier_uniqueness(model, s).unique;
  return report;
}

MultiplierUniquenessReport check_multiplier_uniqueness(const PlantModel& model,
                                                       const SteadyState& s) {
  MultiplierUniquenessReport report;
  const Mat fx = model.f_x(s.x, s.u);
  const Mat fu = model.f_u(s.x, s.u);

  std::vector<int> active;
  Vec gv;
  if (model.n_g > 0) {
    gv = model.g(s.x, s.u);
    for (int j = 0; j < model.n_g; ++j)
      if (gv(j) >= -1e-8) active.push_back(j);
  }
  report.active_constraints = static_cast<int>(active.size());

  // Columns: coefficient of lambda and of each active mu in the steady
  // stationarity system.
  const int n_x = model.n_x;
  const int n_u = model.n_u;
  Mat m(n_x + n_u, n_x + static_cast<int>(active.size()));
  m.topLeftCorner(n_x, n_x) = fx.transpose() - Mat::Identity(n_x, n_x);
  m.bottomLeftCorner(n_u, n_x) = fu.transpose();
  if (!active.empty()) {
    const Mat gx = model.g_x(s.x, s.u);
    const Mat gu = model.g_u(s.x, s.u);
    for (std::size_t a = 0; a < active.size(); ++a) {
      m.block(0, n_x + static_cast<int>(a), n_x, 1) =
          gx.row(active[a]).transpose();
      m.block(n_x, n_x + static_cast<int>(a), n_u, 1) =
          gu.row(active[a]).transpose();
    }
  }

  Eigen::JacobiSVD<Mat> svd(m);
  report.singular_values = svd.singularValues();
  const double smax = report.singular_values.size() > 0
                          ? report.singular_values(0)
                          : 0.0;
  const double smin =
      report.singular_values.size() > 0
          ? report.singular_values(report.singular_values.size() - 1)
          : 0.0;
  report.unique = m.cols() <= m.rows() && smax > 0.0 &&
                  smin > report.threshold * smax;
  return report;
}

}  // namespace empc

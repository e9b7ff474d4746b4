#include "empc/nlp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <cstdio>
#include <cstdlib>

namespace empc {

namespace {

constexpr double kStepTol = 1e-12;
constexpr double kMuSignTol = 1e-12;
constexpr double kDirTol = 1e-12;  // ratio-test direction threshold

double inf_norm(const Vec& v) {
  return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff();
}

bool all_finite(const Vec& v) { return v.allFinite(); }

struct KktSolve {
  Vec primal;
  Vec dual;
  bool ok = false;
};

// Solves [[H, A'], [A, 0]] [p; nu] = [rhs1; rhs2].
KktSolve solve_kkt(const Mat& H, const Mat& A, const Vec& rhs1,
                   const Vec& rhs2) {
  const int n = static_cast<int>(H.rows());
  const int m = static_cast<int>(A.rows());
  Mat kkt = Mat::Zero(n + m, n + m);
  kkt.topLeftCorner(n, n) = H;
  if (m > 0) {
    kkt.topRightCorner(n, m) = A.transpose();
    kkt.bottomLeftCorner(m, n) = A;
  }
  Vec rhs(n + m);
  rhs.head(n) = rhs1;
  rhs.tail(m) = rhs2;

  Eigen::FullPivLU<Mat> lu(kkt);
  KktSolve out;
  if (!lu.isInvertible()) {
    if (std::getenv("EMPC_AS_DEBUG")) {
      const Mat& lumat = lu.matrixLU();
      double minpiv = 1e300, maxpiv = 0;
      for (int i = 0; i < lumat.rows() && i < lumat.cols(); ++i) {
        const double piv = std::abs(lumat(i, i));
        minpiv = std::min(minpiv, piv);
        maxpiv = std::max(maxpiv, piv);
      }
      std::fprintf(stderr, "KKT singular: size=%ld rank=%ld minpiv=%.3e maxpiv=%.3e thresh=%.3e\n",
                   (long)kkt.rows(), (long)lu.rank(), minpiv, maxpiv,
                   lu.threshold() * maxpiv);
    }
    return out;
  }
  Vec sol = lu.solve(rhs);
  if (!sol.allFinite()) return out;
  out.primal = sol.head(n);
  out.dual = sol.tail(m);
  out.ok = true;
  return out;
}

// Core primal active-set iteration. Assumes x_init satisfies the equalities
// and the inequalities up to a small tolerance.
QpResult active_set_core(const Mat& H, const Vec& c, const Mat& A_eq,
                         const Vec& b_eq, const Mat& A_in, const Vec& b_in,
                         Vec x, std::vector<int> working) {
  const int n = static_cast<int>(H.rows());
  const int m_eq = static_cast<int>(A_eq.rows());
  const int m_in = static_cast<int>(A_in.rows());
  const int max_changes = 100 + 10 * (n + m_eq + m_in);

  QpResult result;
  result.mu = Vec::Zero(m_in);
  result.lambda = Vec::Zero(m_eq);

  for (int it = 0; it < max_changes; ++it) {
    const int m_w = static_cast<int>(working.size());
    Mat A_w(m_eq + m_w, n);
    Vec resid(m_eq + m_w);  // restores active rows onto their exact boundary
    if (m_eq > 0) {
      A_w.topRows(m_eq) = A_eq;
      resid.head(m_eq) = b_eq - A_eq * x;
    }
    for (int i = 0; i < m_w; ++i) {
      A_w.row(m_eq + i) = A_in.row(working[i]);
      resid(m_eq + i) = b_in(working[i]) - A_in.row(working[i]).dot(x);
    }

    const Vec grad = H * x + c;
    KktSolve step = solve_kkt(H, A_w, -grad, resid);
    if (!step.ok) {
      if (std::getenv("EMPC_AS_DEBUG"))
        std::fprintf(stderr, "AS it=%d |W|=%d SINGULAR KKT (n=%d m_eq=%d)\n",
                     it, m_w, n, m_eq);
      result.status = QpStatus::IterationLimit;
      result.z = x;
      return result;
    }

    const double p_norm = inf_norm(step.primal);
    if (std::getenv("EMPC_AS_DEBUG"))
      std::fprintf(stderr, "AS it=%d |W|=%d pnorm=%.3e kktok=%d\n", it,
                   m_w, p_norm, int(step.ok));
    if (p_norm <= 1e-11 * std::max(1.0, inf_norm(x))) {
      // Stationary on the working set; check multiplier signs.
      int drop = -1;
      double most_negative = -kMuSignTol;
      for (int i = 0; i < m_w; ++i) {
        const double mu_i = step.dual(m_eq + i);
        if (mu_i < most_negative) {
          most_negative = mu_i;
          drop = i;
        }
      }
      if (drop < 0) {
        result.z = x;
        result.lambda = step.dual.head(m_eq);
        for (int i = 0; i < m_w; ++i)
          result.mu(working[i]) = std::max(0.0, step.dual(m_eq + i));
        result.active_set = working;
        result.status = QpStatus::Optimal;
        return result;
      }
      working.erase(working.begin() + drop);
      continue;
    }

    // Ratio test against rows outside the working set. With a full working
    // set (degenerate vertex) no further row may be added.
    double alpha = 1.0;
    int blocker = -1;
    const bool may_add = m_eq + m_w < n;
    for (int i = 0; i < m_in; ++i) {
      if (std::binary_search(working.begin(), working.end(), i)) continue;
      const double dir = A_in.row(i).dot(step.primal);
      if (dir <= kDirTol) continue;
      const double slack = b_in(i) - A_in.row(i).dot(x);
      const double ratio = std::max(0.0, slack) / dir;
      if (ratio < alpha) {
        alpha = ratio;
        if (may_add) blocker = i;
      }
    }
    if (std::getenv("EMPC_AS_DEBUG"))
      std::fprintf(stderr, "AS it=%d alpha=%.3e blocker=%d\n", it, alpha, blocker);
    x += alpha * step.primal;
    if (blocker >= 0) {
      auto pos = std::lower_bound(working.begin(), working.end(), blocker);
      working.insert(pos, blocker);
    }
  }

  result.status = QpStatus::IterationLimit;
  result.z = x;
  return result;
}

// Greedy selection of independent rows among the candidates (ascending).
std::vector<int> independent_active_rows(const Mat& A_in,
                                         const std::vector<int>& candidates,
                                         const Mat& A_eq) {
  std::vector<int> kept;
  const int n = static_cast<int>(A_in.cols());
  Mat rows(A_eq.rows() + candidates.size(), n);
  int used = static_cast<int>(A_eq.rows());
  if (used > 0) rows.topRows(used) = A_eq;
  for (int idx : candidates) {
    rows.row(used) = A_in.row(idx);
    Eigen::ColPivHouseholderQR<Mat> qr(rows.topRows(used + 1).transpose());
    if (qr.rank() == used + 1 && used + 1 <= n) {
      kept.push_back(idx);
      ++used;
    }
  }
  return kept;
}

}  // namespace

const char* to_string(NlpStatus status) {
  switch (status) {
    case NlpStatus::Converged: return "converged";
    case NlpStatus::InfeasibleDetected: return "infeasible-detected";
    case NlpStatus::IterationLimit: return "iteration-limit";
    case NlpStatus::Aborted: return "aborted";
  }
  return "unknown";
}

double KktResidual::max() const {
  return std::max({stationarity, feasibility, complementarity});
}

EqpResult solve_eqp(const Mat& H, const Vec& c, const Mat& A, const Vec& b) {
  KktSolve s = solve_kkt(H, A, -c, b);
  EqpResult out;
  out.solved = s.ok;
  if (s.ok) {
    out.z = s.primal;
    out.lambda = s.dual;
  }
  return out;
}

QpResult solve_qp(const Mat& H, const Vec& c, const Mat& A_eq, const Vec& b_eq,
                  const Mat& A_in, const Vec& b_in,
                  const std::vector<int>* warm_active, const Vec* start_hint) {
  const int n = static_cast<int>(H.rows());
  if (H.cols() != n || c.size() != n)
    throw std::invalid_argument("solve_qp: H/c dimension mismatch");
  const int m_eq = static_cast<int>(A_eq.rows());
  const int m_in = static_cast<int>(A_in.rows());
  if ((m_eq > 0 && A_eq.cols() != n) || (m_in > 0 && A_in.cols() != n))
    throw std::invalid_argument("solve_qp: constraint row width mismatch");

  if (start_hint != nullptr && start_hint->size() == n) {
    const bool eq_ok =
        m_eq == 0 || inf_norm(A_eq * *start_hint - b_eq) <=
                         1e-9 * std::max(1.0, inf_norm(b_eq));
    const bool in_ok =
        m_in == 0 || (A_in * *start_hint - b_in).maxCoeff() <= 1e-9;
    if (eq_ok && in_ok) {
      std::vector<int> working;
      for (int i = 0; i < m_in; ++i) {
        if (A_in.row(i).dot(*start_hint) >= b_in(i) - 1e-9) working.push_back(i);
      }
      working = independent_active_rows(A_in, working, A_eq);
      return active_set_core(H, c, A_eq, b_eq, A_in, b_in, *start_hint, working);
    }
  }

  // Starting point: minimum-norm solution of the equalities.
  Vec x = Vec::Zero(n);
  if (m_eq > 0) {
    x = A_eq.completeOrthogonalDecomposition().solve(b_eq);
    const double eq_res = inf_norm(A_eq * x - b_eq);
    if (eq_res > 1e-8 * std::max(1.0, inf_norm(b_eq))) {
      if (std::getenv("EMPC_QP_DEBUG"))
        std::fprintf(stderr, "QP: eq LS residual %.3e (b norm %.3e)\n", eq_res,
                     inf_norm(b_eq));
      QpResult out;
      out.z = x;
      out.status = QpStatus::Infeasible;
      out.infeasibility = eq_res;
      out.lambda = Vec::Zero(m_eq);
      out.mu = Vec::Zero(m_in);
      return out;
    }
  }

  const double feas_tol = 1e-9;
  Vec violation = m_in > 0 ? Vec((A_in * x - b_in).cwiseMax(0.0)) : Vec();
  if (m_in > 0 && violation.maxCoeff() > feas_tol) {
    // Phase 1: min 1/2 eps ||d - x||^2 + 1/2 ||s||^2 over (d, s)
    // s.t. A_eq d = b_eq, A_in d - s <= b_in, -s <= 0.
    const double eps = 1e-8;
    const int n1 = n + m_in;
    Mat H1 = Mat::Zero(n1, n1);
    H1.topLeftCorner(n, n) = eps * Mat::Identity(n, n);
    H1.bottomRightCorner(m_in, m_in) = Mat::Identity(m_in, m_in);
    Vec c1 = Vec::Zero(n1);
    c1.head(n) = -eps * x;
    Mat A_eq1 = Mat::Zero(m_eq, n1);
    if (m_eq > 0) A_eq1.leftCols(n) = A_eq;
    Mat A_in1 = Mat::Zero(2 * m_in, n1);
    A_in1.topLeftCorner(m_in, n) = A_in;
    A_in1.topRightCorner(m_in, m_in) = -Mat::Identity(m_in, m_in);
    A_in1.bottomRightCorner(m_in, m_in) = -Mat::Identity(m_in, m_in);
    Vec b_in1(2 * m_in);
    b_in1.head(m_in) = b_in;
    b_in1.tail(m_in).setZero();

    Vec start(n1);
    start.head(n) = x;
    start.tail(m_in) = violation;
    std::vector<int> active;
    for (int i = 0; i < 2 * m_in; ++i) {
      if (A_in1.row(i).dot(start) >= b_in1(i) - 1e-12) active.push_back(i);
    }
    active = independent_active_rows(A_in1, active, A_eq1);
    QpResult phase1 =
        active_set_core(H1, c1, A_eq1, b_eq, A_in1, b_in1, start, active);
    const double rest = phase1.z.size() == n1
                            ? inf_norm(phase1.z.tail(m_in))
                            : std::numeric_limits<double>::infinity();
    if (std::getenv("EMPC_QP_DEBUG"))
      std::fprintf(stderr, "QP: phase1 status=%d rest=%.3e viol_at_ls=%.3e\n",
                   int(phase1.status), rest, violation.maxCoeff());
    if (phase1.status != QpStatus::Optimal || rest > 1e-7) {
      QpResult out;
      out.z = phase1.z.size() == n1 ? Vec(phase1.z.head(n)) : x;
      out.status = QpStatus::Infeasible;
      out.infeasibility = rest;
      out.lambda = Vec::Zero(m_eq);
      out.mu = Vec::Zero(m_in);
      return out;
    }
    x = phase1.z.head(n);
  }

  std::vector<int> working;
  if (warm_active != nullptr) {
    for (int i : *warm_active) {
      if (i >= 0 && i < m_in &&
          A_in.row(i).dot(x) >= b_in(i) - 1e-9 * std::max(1.0, std::abs(b_in(i))))
        working.push_back(i);
    }
    std::sort(working.begin(), working.end());
  } else if (m_in > 0) {
    for (int i = 0; i < m_in; ++i) {
      if (A_in.row(i).dot(x) >= b_in(i) - 1e-9) working.push_back(i);
    }
  }
  working = independent_active_rows(A_in, working, A_eq);
  return active_set_core(H, c, A_eq, b_eq, A_in, b_in, x, working);
}

KktResidual kkt_residual(const Nlp& p, const Vec& z, const Vec& lambda,
                         const Vec& mu) {
  KktResidual r;
  Vec stat = p.gradient(z);
  if (p.n_eq > 0) stat += p.eq_jac(z).transpose() * lambda;
  Vec g;
  if (p.n_ineq > 0) {
    g = p.ineq(z);
    stat += p.ineq_jac(z).transpose() * mu;
    r.complementarity = inf_norm(mu.cwiseProduct(g));
  }
  r.stationarity = inf_norm(stat);
  double feas = 0.0;
  if (p.n_eq > 0) feas = inf_norm(p.eq(z));
  if (p.n_ineq > 0) feas = std::max(feas, g.maxCoeff());
  r.feasibility = std::max(0.0, feas);
  return r;
}

namespace {

double constraint_violation_l1(const Nlp& p, const Vec& z) {
  double v = 0.0;
  if (p.n_eq > 0) v += p.eq(z).cwiseAbs().sum();
  if (p.n_ineq > 0) v += p.ineq(z).cwiseMax(0.0).sum();
  return v;
}

double constraint_violation_inf(const Nlp& p, const Vec& z) {
  double v = 0.0;
  if (p.n_eq > 0) v = inf_norm(p.eq(z));
  if (p.n_ineq > 0) v = std::max(v, std::max(0.0, p.ineq(z).maxCoeff()));
  return v;
}

// Inertia correction: symmetrize, then add tau*I (tau doubled from the
// floor) until the Hessian is positive definite on the null space of the
// equality Jacobian.
Mat regularize_hessian(const Mat& H, const Mat& eq_jac, double floor_val) {
  Mat Hs = 0.5 * (H + H.transpose());
  const int n = static_cast<int>(Hs.rows());

  Mat Z;
  if (eq_jac.rows() == 0) {
    Z = Mat::Identity(n, n);
  } else {
    Eigen::FullPivLU<Mat> lu(eq_jac);
    if (lu.dimensionOfKernel() == 0) return Hs;  // fully pinned by equalities
    const Mat kernel = lu.kernel();
    // orthonormal basis, so the tau*I shift acts with its nominal size
    Eigen::HouseholderQR<Mat> qr(kernel);
    Z = qr.householderQ() * Mat::Identity(n, static_cast<int>(kernel.cols()));
  }

  auto min_eig = [&](const Mat& M) {
    Eigen::SelfAdjointEigenSolver<Mat> es(Z.transpose() * M * Z);
    return es.eigenvalues().minCoeff();
  };

  if (min_eig(Hs) >= floor_val) return Hs;
  double tau = floor_val;
  for (int k = 0; k < 64; ++k) {
    Mat cand = Hs + tau * Mat::Identity(n, n);
    if (min_eig(cand) >= floor_val) return cand;
    tau *= 2.0;
  }
  return Hs + tau * Mat::Identity(n, n);
}

// l1-relaxed equality rows:
//   min 1/2 d'Hd + c'd + rho 1'(s+ + s-)
//   s.t. Jh d + s+ - s- = -h,  Jg d <= -g,  s+ >= 0, s- >= 0.
// Always feasible with full-row-rank equalities, so it absorbs the
// rank-deficient and inconsistent linearizations a terminal equality
// constraint can produce (for instance when the linearized system loses
// controllability along the steady trajectory).
QpResult solve_elastic_qp(const Mat& H, const Vec& c, const Mat& Jh,
                          const Vec& h, const Mat& Jg, const Vec& g,
                          double rho, double reg_floor) {
  const int n = static_cast<int>(H.rows());
  const int m_eq = static_cast<int>(Jh.rows());
  const int m_in = static_cast<int>(Jg.rows());
  const int ne = n + 2 * m_eq;
  const double eps_slack = 1e-8;  // keeps the reduced Hessian nonsingular

  Mat He = Mat::Zero(ne, ne);
  He.topLeftCorner(n, n) = H;
  He.bottomRightCorner(2 * m_eq, 2 * m_eq) =
      eps_slack * Mat::Identity(2 * m_eq, 2 * m_eq);
  Vec ce(ne);
  ce.head(n) = c;
  ce.tail(2 * m_eq).setConstant(rho);

  Mat Ae = Mat::Zero(m_eq, ne);
  Ae.leftCols(n) = Jh;
  Ae.middleCols(n, m_eq) = Mat::Identity(m_eq, m_eq);
  Ae.rightCols(m_eq) = -Mat::Identity(m_eq, m_eq);
  const Vec be = -h;

  Mat Aie = Mat::Zero(m_in + 2 * m_eq, ne);
  Vec bie = Vec::Zero(m_in + 2 * m_eq);
  if (m_in > 0) {
    Aie.topLeftCorner(m_in, n) = Jg;
    bie.head(m_in) = -g;
  }
  Aie.block(m_in, n, 2 * m_eq, 2 * m_eq) =
      -Mat::Identity(2 * m_eq, 2 * m_eq);

  He = regularize_hessian(He, Ae, reg_floor);

  Vec start = Vec::Zero(ne);
  for (int i = 0; i < m_eq; ++i) {
    start(n + i) = std::max(-h(i), 0.0);
    start(n + m_eq + i) = std::max(h(i), 0.0);
  }

  const QpResult raw = solve_qp(He, ce, Ae, be, Aie, bie, nullptr, &start);
  if (std::getenv("EMPC_QP_DEBUG"))
    std::fprintf(stderr, "elastic: n=%d m_eq=%d m_in=%d status=%d slack=%.3e\n",
                 n, m_eq, m_in, int(raw.status),
                 raw.status == QpStatus::Optimal
                     ? raw.z.tail(2 * m_eq).cwiseAbs().maxCoeff()
                     : -1.0);
  QpResult out;
  out.status = raw.status;
  out.infeasibility = raw.infeasibility;
  if (raw.status == QpStatus::Optimal) {
    out.z = raw.z.head(n);
    out.lambda = raw.lambda;
    out.mu = m_in > 0 ? Vec(raw.mu.head(m_in)) : Vec(Vec::Zero(0));
    for (int i : raw.active_set)
      if (i < m_in) out.active_set.push_back(i);
  } else {
    out.z = Vec::Zero(n);
    out.lambda = Vec::Zero(m_eq);
    out.mu = Vec::Zero(m_in);
  }
  return out;
}

NlpResult make_abort(const Vec& z, int n_eq, int n_ineq, int iters,
                     const std::string& msg) {
  NlpResult r;
  r.z = z;
  r.lambda = Vec::Zero(n_eq);
  r.mu = Vec::Zero(n_ineq);
  r.status = NlpStatus::Aborted;
  r.iterations = iters;
  r.message = msg;
  return r;
}

// Feasibility restoration: Gauss-Newton on 1/2 ||h(z)||^2 subject to the
// inequalities only. Used both by the SQP stall handling and by the
// feasibility probes in the OCP layer.
Nlp restoration_problem(const Nlp& p) {
  Nlp r;
  r.dim = p.dim;
  r.objective = [&p](const Vec& z) { return 0.5 * p.eq(z).squaredNorm(); };
  r.gradient = [&p](const Vec& z) -> Vec {
    return p.eq_jac(z).transpose() * p.eq(z);
  };
  r.n_ineq = p.n_ineq;
  r.ineq = p.ineq;
  r.ineq_jac = p.ineq_jac;
  r.lag_hess = [&p](const Vec& z, const Vec&, const Vec&) -> Mat {
    const Mat J = p.eq_jac(z);
    return J.transpose() * J;
  };
  return r;
}

}  // namespace

NlpResult solve_nlp(const Nlp& p, const Vec& initial_guess,
                    const NlpSettings& settings, const NlpWarmStart* warm) {
  if (initial_guess.size() != p.dim)
    throw std::invalid_argument("solve_nlp: initial guess dimension mismatch");
  if (!p.objective || !p.gradient)
    throw std::invalid_argument("solve_nlp: objective evaluators missing");
  if (p.n_eq > 0 && (!p.eq || !p.eq_jac))
    throw std::invalid_argument("solve_nlp: equality evaluators missing");
  if (p.n_ineq > 0 && (!p.ineq || !p.ineq_jac))
    throw std::invalid_argument("solve_nlp: inequality evaluators missing");

  Vec z = initial_guess;
  Vec lambda = Vec::Zero(p.n_eq);
  Vec mu = Vec::Zero(p.n_ineq);
  if (warm != nullptr) {
    if (warm->lambda.size() == p.n_eq && p.n_eq > 0) lambda = warm->lambda;
    if (warm->mu.size() == p.n_ineq && p.n_ineq > 0)
      mu = warm->mu.cwiseMax(0.0);
  }

  const bool exact_hessian =
      settings.hessian_mode == HessianMode::ExactRegularized &&
      static_cast<bool>(p.lag_hess);
  Mat bfgs = Mat::Identity(p.dim, p.dim);
  bool bfgs_initialized = false;

  double sigma = 1.0;  // l1 merit penalty
  int restorations = 0;
  std::vector<int> warm_active;

  auto run_restoration = [&](NlpResult& failure_out) -> bool {
    // Returns true when the main loop may continue from a restored point.
    if (!settings.allow_restoration || p.n_eq == 0 || restorations >= 3)
      return false;
    ++restorations;
    Nlp rest = restoration_problem(p);
    NlpSettings rs = settings;
    rs.allow_restoration = false;
    rs.max_iterations = 100;
    rs.tol = std::min(1e-10, settings.tol);
    NlpResult rres = solve_nlp(rest, z, rs);
    const double viol = constraint_violation_inf(p, rres.z);
    if (viol > settings.infeasibility_tol) {
      failure_out = rres;
      failure_out.status = NlpStatus::InfeasibleDetected;
      failure_out.lambda = Vec::Zero(p.n_eq);
      failure_out.mu = Vec::Zero(p.n_ineq);
      failure_out.kkt = kkt_residual(p, rres.z, failure_out.lambda, failure_out.mu);
      failure_out.objective = p.objective(rres.z);
      failure_out.message =
          "restoration stalled with constraint violation " + std::to_string(viol);
      return false;
    }
    z = rres.z;
    lambda.setZero();
    mu.setZero();
    return true;
  };

  NlpResult result;
  for (int iter = 0; iter <= settings.max_iterations; ++iter) {
    const double f = p.objective(z);
    Vec grad = p.gradient(z);
    Vec h, g;
    Mat Jh(0, p.dim), Jg(0, p.dim);
    if (p.n_eq > 0) {
      h = p.eq(z);
      Jh = p.eq_jac(z);
    }
    if (p.n_ineq > 0) {
      g = p.ineq(z);
      Jg = p.ineq_jac(z);
    }
    if (!std::isfinite(f) || !all_finite(grad) ||
        (p.n_eq > 0 && (!all_finite(h) || !Jh.allFinite())) ||
        (p.n_ineq > 0 && (!all_finite(g) || !Jg.allFinite()))) {
      return make_abort(z, p.n_eq, p.n_ineq, iter,
                        "evaluator returned a non-finite value");
    }

    result.kkt = kkt_residual(p, z, lambda, mu);
    if (result.kkt.max() <= settings.tol) {
      result.z = z;
      result.lambda = lambda;
      result.mu = mu;
      result.objective = f;
      result.status = NlpStatus::Converged;
      result.iterations = iter;
      return result;
    }
    if (iter == settings.max_iterations) break;

    Mat hess;
    if (exact_hessian) {
      hess = p.lag_hess(z, lambda, mu);
      if (!hess.allFinite())
        return make_abort(z, p.n_eq, p.n_ineq, iter, "non-finite Hessian");
    } else {
      if (!bfgs_initialized) {
        bfgs = std::max(1.0, inf_norm(grad)) * Mat::Identity(p.dim, p.dim);
        bfgs_initialized = true;
      }
      hess = bfgs;
    }
    hess = regularize_hessian(hess, Jh, settings.reg_floor);

    QpResult qp = solve_qp(hess, grad, Jh, p.n_eq > 0 ? Vec(-h) : Vec(),
                           Jg, p.n_ineq > 0 ? Vec(-g) : Vec(),
                           warm_active.empty() ? nullptr : &warm_active);
    if (qp.status != QpStatus::Optimal && p.n_eq > 0) {
      // Elastic retry: relaxing the equality rows absorbs rank-deficient
      // and near-inconsistent linearizations.
      const double rho = std::max(100.0 * sigma, 1e4);
      QpResult elastic =
          solve_elastic_qp(hess, grad, Jh, h, Jg, g, rho, settings.reg_floor);
      if (elastic.status == QpStatus::Optimal) qp = elastic;
    }
    if (qp.status == QpStatus::Infeasible) {
      NlpResult failure = make_abort(z, p.n_eq, p.n_ineq, iter,
                                     "inconsistent constraint linearization");
      if (run_restoration(failure)) continue;
      if (failure.status != NlpStatus::InfeasibleDetected &&
          constraint_violation_inf(p, z) > settings.infeasibility_tol) {
        failure.status = NlpStatus::InfeasibleDetected;
        failure.message = "linearized constraints infeasible";
      }
      failure.kkt = kkt_residual(p, failure.z, failure.lambda, failure.mu);
      failure.objective = p.objective(failure.z);
      return failure;
    }
    if (qp.status == QpStatus::IterationLimit) {
      return make_abort(z, p.n_eq, p.n_ineq, iter,
                        "QP active-set change limit exceeded");
    }
    warm_active = qp.active_set;

    // Multiplier refresh: the QP duals may already certify optimality.
    KktResidual fresh = kkt_residual(p, z, qp.lambda, qp.mu);
    if (fresh.max() <= settings.tol) {
      result.z = z;
      result.lambda = qp.lambda;
      result.mu = qp.mu;
      result.objective = f;
      result.kkt = fresh;
      result.status = NlpStatus::Converged;
      result.iterations = iter + 1;
      return result;
    }

    const Vec step = qp.z;
    double mult_norm = 0.0;
    if (p.n_eq > 0) mult_norm = inf_norm(qp.lambda);
    if (p.n_ineq > 0) mult_norm = std::max(mult_norm, inf_norm(qp.mu));
    sigma = std::max(sigma, mult_norm + 1.0);

    const double viol0 = constraint_violation_l1(p, z);
    const double merit0 = f + sigma * viol0;
    const double directional = grad.dot(step) - sigma * viol0;

    double alpha = 1.0;
    bool accepted = false;
    while (alpha >= kStepTol) {
      const Vec trial = z + alpha * step;
      const double ft = p.objective(trial);
      const double merit_t =
          std::isfinite(ft) ? ft + sigma * constraint_violation_l1(p, trial)
                            : std::numeric_limits<double>::infinity();
      // The noise allowance keeps rounding in f from rejecting steps whose
      // predicted decrease is below double precision.
      const double noise = 1e-14 * (1.0 + std::abs(merit0));
      if (merit_t <= merit0 + settings.armijo_c * alpha * directional + noise) {
        accepted = true;
        break;
      }
      alpha *= settings.backtrack_factor;
    }

    if (const char* dbg = std::getenv("EMPC_NLP_DEBUG"); dbg != nullptr) {
      std::fprintf(stderr,
                   "it=%d f=%.16e viol=%.3e D=%.3e accepted=%d alpha=%.3e pnorm=%.3e sigma=%.3e kkt=%.3e\n",
                   iter, f, viol0, directional, int(accepted), alpha,
                   step.cwiseAbs().maxCoeff(), sigma, result.kkt.max());
    }
    if (!accepted) {
      NlpResult failure = make_abort(z, p.n_eq, p.n_ineq, iter,
                                     "line search failed");
      if (constraint_violation_inf(p, z) > settings.infeasibility_tol) {
        if (run_restoration(failure)) continue;
        if (failure.status == NlpStatus::InfeasibleDetected) return failure;
      }
      failure.status = NlpStatus::IterationLimit;
      failure.lambda = lambda;
      failure.mu = mu;
      failure.kkt = result.kkt;
      failure.objective = f;
      return failure;
    }

    const Vec z_old = z;
    const Vec grad_old = grad;
    z += alpha * step;
    lambda += alpha * (qp.lambda - lambda);
    mu += alpha * (qp.mu - mu);
    mu = mu.cwiseMax(0.0);

    if (!exact_hessian) {
      // Powell-damped BFGS on the Lagrangian gradient.
      Vec grad_l_new = p.gradient(z);
      Vec grad_l_old = grad_old;
      if (p.n_eq > 0) {
        grad_l_new += p.eq_jac(z).transpose() * lambda;
        grad_l_old += Jh.transpose() * lambda;
      }
      if (p.n_ineq > 0) {
        grad_l_new += p.ineq_jac(z).transpose() * mu;
        grad_l_old += Jg.transpose() * mu;
      }
      const Vec s = z - z_old;
      Vec y = grad_l_new - grad_l_old;
      const double sBs = s.dot(bfgs * s);
      const double sy = s.dot(y);
      if (s.squaredNorm() > 1e-16 && sBs > 0.0) {
        if (sy < 0.2 * sBs) {
          const double theta = 0.8 * sBs / (sBs - sy);
          y = theta * y + (1.0 - theta) * (bfgs * s);
        }
        const double sy_d = s.dot(y);
        if (sy_d > 1e-14) {
          const Vec Bs = bfgs * s;
          bfgs += y * y.transpose() / sy_d - Bs * Bs.transpose() / sBs;
        }
      }
    }
  }

  result.z = z;
  result.lambda = lambda;
  result.mu = mu;
  result.objective = p.objective(z);
  result.kkt = kkt_residual(p, z, lambda, mu);
  result.status = NlpStatus::IterationLimit;
  result.iterations = settings.max_iterations;
  result.message = "iteration limit reached";
  return result;
}

}  // namespace empc

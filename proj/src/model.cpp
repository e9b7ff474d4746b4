#include "empc/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace empc {

namespace {

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void check_dims(const PlantModel& model, const Vec& x, const Vec& u) {
  require(x.size() == model.n_x, "state dimension mismatch");
  require(u.size() == model.n_u, "input dimension mismatch");
}

// Deterministic uniform in [0,1) built from raw 64-bit draws so results do
// not depend on the standard library's distribution implementation.
double uniform01(std::mt19937_64& rng) {
  return std::ldexp(static_cast<double>(rng() >> 11), -53);
}

}  // namespace

Vec eval_dynamics(const PlantModel& model, const Vec& x, const Vec& u) {
  check_dims(model, x, u);
  return model.f(x, u);
}

double eval_stage_cost(const PlantModel& model, const Vec& x, const Vec& u) {
  check_dims(model, x, u);
  return model.l(x, u);
}

Vec eval_constraints(const PlantModel& model, const Vec& x, const Vec& u) {
  check_dims(model, x, u);
  return model.g(x, u);
}

void attach_box_constraints(PlantModel& model) {
  const int n_x = model.n_x;
  const int n_u = model.n_u;
  const BoxBounds bounds = model.bounds;
  require(bounds.x_lo.size() == n_x && bounds.x_hi.size() == n_x &&
              bounds.u_lo.size() == n_u && bounds.u_hi.size() == n_u,
          "box bounds dimension mismatch");
  require(bounds.valid(), "box bounds must satisfy lower <= upper");

  model.n_g = 2 * (n_x + n_u);
  model.n_g_state = 2 * n_x;

  model.g = [bounds, n_x, n_u](const Vec& x, const Vec& u) {
    Vec out(2 * (n_x + n_u));
    out.segment(0, n_x) = bounds.x_lo - x;
    out.segment(n_x, n_x) = x - bounds.x_hi;
    out.segment(2 * n_x, n_u) = bounds.u_lo - u;
    out.segment(2 * n_x + n_u, n_u) = u - bounds.u_hi;
    return out;
  };
  model.g_x = [n_x, n_u](const Vec&, const Vec&) {
    Mat out = Mat::Zero(2 * (n_x + n_u), n_x);
    out.topRows(n_x) = -Mat::Identity(n_x, n_x);
    out.middleRows(n_x, n_x) = Mat::Identity(n_x, n_x);
    return out;
  };
  model.g_u = [n_x, n_u](const Vec&, const Vec&) {
    Mat out = Mat::Zero(2 * (n_x + n_u), n_u);
    out.middleRows(2 * n_x, n_u) = -Mat::Identity(n_u, n_u);
    out.bottomRows(n_u) = Mat::Identity(n_u, n_u);
    return out;
  };
}

void attach_fd_hessian(PlantModel& model, double step) {
  const PlantModel base = model;  // capture evaluators by value
  model.hess = [base, step](const Vec& x, const Vec& u, const Vec& lambda) {
    auto grad_x = [&](const Vec& xx, const Vec& uu) -> Vec {
      return base.l_x(xx, uu) + base.f_x(xx, uu).transpose() * lambda;
    };
    auto grad_u = [&](const Vec& xx, const Vec& uu) -> Vec {
      return base.l_u(xx, uu) + base.f_u(xx, uu).transpose() * lambda;
    };
    StageHessian h;
    h.xx = fd_jacobian([&](const Vec& xx) { return grad_x(xx, u); }, x, step);
    h.xu = fd_jacobian([&](const Vec& uu) { return grad_x(x, uu); }, u, step);
    h.uu = fd_jacobian([&](const Vec& uu) { return grad_u(x, uu); }, u, step);
    h.xx = 0.5 * (h.xx + h.xx.transpose()).eval();
    h.uu = 0.5 * (h.uu + h.uu.transpose()).eval();
    return h;
  };
}

Mat fd_jacobian(const std::function<Vec(const Vec&)>& fn, const Vec& at,
                double step) {
  const Vec f0 = fn(at);
  Mat jac(f0.size(), at.size());
  Vec p = at;
  for (int j = 0; j < at.size(); ++j) {
    p(j) = at(j) + step;
    const Vec fp = fn(p);
    p(j) = at(j) - step;
    const Vec fm = fn(p);
    p(j) = at(j);
    jac.col(j) = (fp - fm) / (2.0 * step);
  }
  return jac;
}

Vec fd_gradient(const std::function<double(const Vec&)>& fn, const Vec& at,
                double step) {
  Vec grad(at.size());
  Vec p = at;
  for (int j = 0; j < at.size(); ++j) {
    p(j) = at(j) + step;
    const double fp = fn(p);
    p(j) = at(j) - step;
    const double fm = fn(p);
    p(j) = at(j);
    grad(j) = (fp - fm) / (2.0 * step);
  }
  return grad;
}

double DerivativeCheckReport::worst() const {
  double w = 0.0;
  for (const auto& e : entries) w = std::max(w, e.max_rel_error);
  return w;
}

DerivativeCheckReport derivative_check(const PlantModel& model, int samples,
                                       std::uint64_t seed) {
  require(samples >= 1, "derivative_check needs samples >= 1");
  std::mt19937_64 rng(seed);
  const double step = 1e-6;

  auto interior = [&](const Vec& lo, const Vec& hi) {
    Vec p(lo.size());
    for (int i = 0; i < lo.size(); ++i) {
      const double t = 0.1 + 0.8 * uniform01(rng);
      p(i) = lo(i) + t * (hi(i) - lo(i));
    }
    return p;
  };

  auto rel_err = [](const Mat& analytic, const Mat& numeric) {
    const double scale = std::max(1.0, analytic.cwiseAbs().maxCoeff());
    return (analytic - numeric).cwiseAbs().maxCoeff() / scale;
  };

  DerivativeCheckReport report;
  report.entries = {{"f_x", 0}, {"f_u", 0}, {"l_x", 0}, {"l_u", 0},
                    {"g_x", 0}, {"g_u", 0}, {"hess", 0}};

  for (int s = 0; s < samples; ++s) {
    const Vec x = interior(model.bounds.x_lo, model.bounds.x_hi);
    const Vec u = interior(model.bounds.u_lo, model.bounds.u_hi);
    Vec lambda(model.n_x);
    for (int i = 0; i < model.n_x; ++i) lambda(i) = 2.0 * uniform01(rng) - 1.0;

    auto& e = report.entries;
    e[0].max_rel_error = std::max(
        e[0].max_rel_error,
        rel_err(model.f_x(x, u),
                fd_jacobian([&](const Vec& p) { return model.f(p, u); }, x, step)));
    e[1].max_rel_error = std::max(
        e[1].max_rel_error,
        rel_err(model.f_u(x, u),
                fd_jacobian([&](const Vec& p) { return model.f(x, p); }, u, step)));
    e[2].max_rel_error = std::max(
        e[2].max_rel_error,
        rel_err(model.l_x(x, u),
                fd_gradient([&](const Vec& p) { return model.l(p, u); }, x, step)));
    e[3].max_rel_error = std::max(
        e[3].max_rel_error,
        rel_err(model.l_u(x, u),
                fd_gradient([&](const Vec& p) { return model.l(x, p); }, u, step)));
    e[4].max_rel_error = std::max(
        e[4].max_rel_error,
        rel_err(model.g_x(x, u),
                fd_jacobian([&](const Vec& p) { return model.g(p, u); }, x, step)));
    e[5].max_rel_error = std::max(
        e[5].max_rel_error,
        rel_err(model.g_u(x, u),
                fd_jacobian([&](const Vec& p) { return model.g(x, p); }, u, step)));

    if (model.hess) {
      const StageHessian h = model.hess(x, u, lambda);
      auto grad_x = [&](const Vec& xx, const Vec& uu) -> Vec {
        return model.l_x(xx, uu) + model.f_x(xx, uu).transpose() * lambda;
      };
      auto grad_u = [&](const Vec& xx, const Vec& uu) -> Vec {
        return model.l_u(xx, uu) + model.f_u(xx, uu).transpose() * lambda;
      };
      const Mat hxx =
          fd_jacobian([&](const Vec& p) { return grad_x(p, u); }, x, step);
      const Mat hxu =
          fd_jacobian([&](const Vec& p) { return grad_x(x, p); }, u, step);
      const Mat huu =
          fd_jacobian([&](const Vec& p) { return grad_u(x, p); }, u, step);
      double err = std::max({rel_err(h.xx, hxx), rel_err(h.xu, hxu),
                             rel_err(h.uu, huu)});
      e[6].max_rel_error = std::max(e[6].max_rel_error, err);
    }
  }

  report.pass = report.worst() <= report.tolerance;
  return report;
}

PlantModel reactor_model() {
  PlantModel m;
  m.name = "reactor";
  m.n_x = 2;
  m.n_u = 1;
  m.bounds.x_lo = Vec::Zero(2);
  m.bounds.x_hi = Vec::Ones(2);
  m.bounds.u_lo = Vec::Zero(1);
  m.bounds.u_hi = Vec::Constant(1, 20.0);

  m.f = [](const Vec& x, const Vec& u) {
    Vec out(2);
    out(0) = x(0) + 0.01 * u(0) * (1.0 - x(0)) - 0.12 * x(0);
    out(1) = x(1) - 0.01 * u(0) * x(1) + 0.12 * x(0);
    return out;
  };
  m.l = [](const Vec& x, const Vec& u) {
    return -2.0 * u(0) * x(1) + 0.5 * u(0) + 0.1 * (u(0) - 12.0) * (u(0) - 12.0);
  };
  m.f_x = [](const Vec&, const Vec& u) {
    Mat out(2, 2);
    out << 1.0 - 0.01 * u(0) - 0.12, 0.0, 0.12, 1.0 - 0.01 * u(0);
    return out;
  };
  m.f_u = [](const Vec& x, const Vec&) {
    Mat out(2, 1);
    out << 0.01 * (1.0 - x(0)), -0.01 * x(1);
    return out;
  };
  m.l_x = [](const Vec&, const Vec& u) {
    Vec out(2);
    out << 0.0, -2.0 * u(0);
    return out;
  };
  m.l_u = [](const Vec& x, const Vec& u) {
    Vec out(1);
    out << -2.0 * x(1) + 0.5 + 0.2 * (u(0) - 12.0);
    return out;
  };
  m.hess = [](const Vec&, const Vec&, const Vec& lambda) {
    StageHessian h;
    h.xx = Mat::Zero(2, 2);
    h.xu = Mat(2, 1);
    h.xu << -0.01 * lambda(0), -2.0 - 0.01 * lambda(1);
    h.uu = Mat::Constant(1, 1, 0.2);
    return h;
  };
  attach_box_constraints(m);
  return m;
}

std::optional<PlantModel> find_model(const std::string& name) {
  if (name == "reactor") return reactor_model();
  return std::nullopt;
}

std::vector<std::string> model_names() { return {"reactor"}; }

}  // namespace empc

#include "empc/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "empc/empc.hpp"
#include "empc/horizon.hpp"
#include "empc/lq.hpp"
#include "empc/ocp.hpp"

namespace empc {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string fmt_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

json vec_to_json(const Vec& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

json mat_to_json(const Mat& m) {
  json rows = json::array();
  for (int i = 0; i < m.rows(); ++i) rows.push_back(vec_to_json(m.row(i).transpose()));
  return rows;
}

Vec vec_from_json(const json& a) {
  Vec v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<int>(i)) = a[i].get<double>();
  return v;
}

// Rows of deterministic %.17g cells; the one CSV writer every command uses.
class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header) : header_(std::move(header)) {}
  void add_row(const std::vector<std::string>& cells) { rows_.push_back(cells); }
  static std::string cell(double v) { return fmt_num(v); }
  static std::string cell(int v) { return std::to_string(v); }

  void write(const fs::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string());
    for (std::size_t i = 0; i < header_.size(); ++i)
      out << (i ? "," : "") << header_[i];
    out << "\n";
    for (const auto& row : rows_) {
      for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
      out << "\n";
    }
  }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << j.dump(2) << "\n";
}

// Timestamps live here and only here; artifacts stay byte-reproducible.
void append_run_log(const fs::path& dir, const std::vector<std::string>& args) {
  std::ofstream out(dir / "run.log", std::ios::app);
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char stamp[64];
  std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%S", std::gmtime(&t));
  out << stamp << "Z empclab";
  for (const auto& a : args) out << " " << a;
  out << "\n";
}

std::vector<std::string> state_headers(const std::string& prefix, int n_x) {
  std::vector<std::string> h;
  if (n_x == 2) {
    h.push_back(prefix + "_A");
    h.push_back(prefix + "_B");
  } else {
    for (int i = 0; i < n_x; ++i) h.push_back(prefix + "_" + std::to_string(i));
  }
  return h;
}

struct Environment {
  PlantModel model;
  RunConfig cfg;
  fs::path out;
};

SteadyState obtain_steady(const Environment& env, const std::string& steady_file) {
  if (!steady_file.empty()) {
    std::ifstream in(steady_file);
    if (!in) throw std::invalid_argument("cannot read steady file " + steady_file);
    json j;
    in >> j;
    return steady_from_json(j);
  }
  return solve_sop(env.model, env.cfg.nlp_settings(), env.cfg.multistart,
                   env.cfg.seed);
}

int cmd_steady(const Environment& env) {
  const SteadyState s = solve_sop(env.model, env.cfg.nlp_settings(),
                                  env.cfg.multistart, env.cfg.seed);
  const SopKktReport kkt = verify_sop_kkt(env.model, s);
  json summary = steady_to_json(s);
  summary["command"] = "steady";
  summary["model"] = env.model.name;
  summary["kkt"] = {{"steady_residual", kkt.steady_residual},
                    {"adjoint_residual", kkt.adjoint_residual},
                    {"stationarity_residual", kkt.stationarity_residual}};
  summary["multiplier_unique"] = kkt.multiplier_unique;
  write_json(env.out / "steady_summary.json", summary);

  std::cout << "steady state of " << env.model.name << "\n"
            << "  xbar = [" << s.x.transpose() << "]\n"
            << "  ubar = [" << s.u.transpose() << "]\n"
            << "  lambdabar = [" << s.lambda.transpose() << "]\n"
            << "  mubar = [" << s.mu.transpose() << "]\n"
            << "  cost = " << s.cost << "\n";
  return 0;
}

int cmd_solve(const Environment& env, const std::string& steady_file) {
  const SteadyState s = obtain_steady(env, steady_file);
  const SchemeConfig scheme =
      SchemeConfig::make(*scheme_from_string(env.cfg.scheme), s);
  const OcpSolution sol = solve_ocp(env.model, scheme, env.cfg.horizon,
                                    env.cfg.x0_vec(), nullptr,
                                    env.cfg.nlp_settings());

  json summary;
  summary["command"] = "solve";
  summary["model"] = env.model.name;
  summary["scheme"] = env.cfg.scheme;
  summary["horizon"] = env.cfg.horizon;
  summary["x0"] = vec_to_json(env.cfg.x0_vec());
  summary["status"] = to_string(sol.status);
  summary["objective"] = sol.objective;
  summary["iterations"] = sol.iterations;
  summary["residuals"] = {{"dynamics", sol.el.max_dynamics},
                          {"adjoint", sol.el.max_adjoint},
                          {"stationarity", sol.el.max_stationarity},
                          {"boundary", sol.el.boundary}};
  write_json(env.out / "solve_summary.json", summary);

  if (!sol.converged()) {
    std::cerr << "solve failed: " << to_string(sol.status) << " "
              << sol.message << "\n";
    return 3;
  }

  std::vector<std::string> header = {"k"};
  for (const auto& h : state_headers("x", env.model.n_x)) header.push_back(h);
  for (int i = 0; i < env.model.n_u; ++i) header.push_back("u_" + std::to_string(i));
  for (const auto& h : state_headers("lambda", env.model.n_x)) header.push_back(h);
  for (int i = 0; i < env.model.n_g; ++i) header.push_back("mu_" + std::to_string(i));
  header.push_back("stage_cost");

  CsvWriter csv(header);
  for (int k = 0; k <= sol.horizon(); ++k) {
    std::vector<std::string> row = {CsvWriter::cell(k)};
    for (int i = 0; i < env.model.n_x; ++i) row.push_back(fmt_num(sol.x(k, i)));
    for (int i = 0; i < env.model.n_u; ++i)
      row.push_back(k < sol.horizon() ? fmt_num(sol.u(k, i)) : "");
    for (int i = 0; i < env.model.n_x; ++i) row.push_back(fmt_num(sol.lambda(k, i)));
    for (int i = 0; i < env.model.n_g; ++i) row.push_back(fmt_num(sol.mu(k, i)));
    row.push_back(k < sol.horizon()
                      ? fmt_num(env.model.l(sol.x.row(k).transpose(),
                                            sol.u.row(k).transpose()))
                      : "");
    csv.add_row(row);
  }
  csv.write(env.out / "solve_trajectory.csv");
  std::cout << "V_N = " << sol.objective << " (" << sol.iterations
            << " iterations)\n";
  return 0;
}

int cmd_simulate(const Environment& env, const std::string& steady_file) {
  const SteadyState s = obtain_steady(env, steady_file);
  const SchemeConfig scheme =
      SchemeConfig::make(*scheme_from_string(env.cfg.scheme), s);
  const ClosedLoopTrace trace =
      simulate_closed_loop(env.model, scheme, env.cfg.horizon, env.cfg.x0_vec(),
                           env.cfg.steps, env.cfg.nlp_settings());

  json summary;
  summary["command"] = "simulate";
  summary["model"] = env.model.name;
  summary["scheme"] = env.cfg.scheme;
  summary["horizon"] = env.cfg.horizon;
  summary["steps"] = env.cfg.steps;
  summary["x0"] = vec_to_json(env.cfg.x0_vec());
  summary["aborted"] = trace.aborted;
  summary["abort_step"] = trace.abort_step;

  if (!trace.aborted) {
    const double dev = eventual_deviation(trace, s, env.cfg.tail_fraction);
    summary["eventual_deviation"] = dev;
    summary["tail_fraction"] = env.cfg.tail_fraction;
    int convergence_step = -1;
    for (int i = 0; i < trace.states.rows(); ++i) {
      if ((trace.states.row(i).transpose() - s.x).norm() <= 1e-6) {
        convergence_step = i;
        break;
      }
    }
    summary["convergence_step"] = convergence_step;
  }
  write_json(env.out / "simulate_summary.json", summary);

  std::vector<std::string> header = {"i"};
  for (const auto& h : state_headers("x", env.model.n_x)) header.push_back(h);
  for (int i = 0; i < env.model.n_u; ++i) header.push_back("u_" + std::to_string(i));
  header.push_back("V_N");
  header.push_back("stage_cost");
  CsvWriter csv(header);
  for (int i = 0; i < trace.states.rows(); ++i) {
    std::vector<std::string> row = {CsvWriter::cell(i)};
    for (int d = 0; d < env.model.n_x; ++d) row.push_back(fmt_num(trace.states(i, d)));
    const bool has_input = i < trace.inputs.rows();
    for (int d = 0; d < env.model.n_u; ++d)
      row.push_back(has_input ? fmt_num(trace.inputs(i, d)) : "");
    row.push_back(has_input ? fmt_num(trace.values(i)) : "");
    row.push_back(has_input ? fmt_num(trace.stage_costs(i)) : "");
    csv.add_row(row);
  }
  csv.write(env.out / "simulate_trace.csv");

  if (trace.aborted) {
    std::cerr << "closed loop aborted at step " << trace.abort_step << "\n";
    return 3;
  }
  std::cout << "simulated " << env.cfg.steps << " steps, eventual deviation "
            << summary["eventual_deviation"].get<double>() << "\n";
  return 0;
}

int cmd_lqcheck(const Environment& env, const std::string& steady_file) {
  const SteadyState s = obtain_steady(env, steady_file);
  const SchemeConfig scheme =
      SchemeConfig::make(*scheme_from_string(env.cfg.scheme), s);
  const LqData lq = build_lq(env.model, s, scheme);
  const RiccatiReport riccati = check_local_stabilization(lq, env.cfg.horizon);
  const bool reachable = check_nstep_reachability(lq);
  const AdjointBoundaryReport adj =
      adjoint_boundary_analysis(lq, s, env.cfg.horizon);

  json summary;
  summary["command"] = "lqcheck";
  summary["model"] = env.model.name;
  summary["scheme"] = env.cfg.scheme;
  summary["horizon"] = env.cfg.horizon;
  summary["A"] = mat_to_json(lq.A);
  summary["B"] = mat_to_json(lq.B);
  summary["Q"] = mat_to_json(lq.Q);
  summary["R"] = mat_to_json(lq.R);
  summary["q"] = vec_to_json(lq.q);
  summary["r"] = vec_to_json(lq.r);
  summary["p_N"] = vec_to_json(lq.p_N);
  summary["spectral_radius"] = riccati.spectral_radius;
  summary["stabilizing"] = riccati.stabilizing;
  summary["singular_r"] = riccati.singular_r;
  if (riccati.K0.size() > 0) summary["K0"] = mat_to_json(riccati.K0);
  summary["nstep_reachable"] = reachable;
  summary["adjoint_fixed_point_unique"] = adj.fixed_point_unique;
  summary["adjoint_fixed_point_gap"] = adj.fixed_point_gap;
  summary["dist0_from_zero"] = adj.dist0_from_zero;
  summary["dist0_from_bar"] = adj.dist0_from_bar;
  write_json(env.out / "lqcheck_summary.json", summary);

  std::vector<std::string> header = {"k"};
  for (const auto& h : state_headers("lambda_zero", env.model.n_x)) header.push_back(h);
  for (const auto& h : state_headers("lambda_bar", env.model.n_x)) header.push_back(h);
  for (int i = 0; i < env.model.n_u; ++i) header.push_back("u_zero_" + std::to_string(i));
  for (int i = 0; i < env.model.n_u; ++i) header.push_back("u_bar_" + std::to_string(i));
  CsvWriter csv(header);
  for (int k = 0; k < adj.lambda_from_zero.rows(); ++k) {
    std::vector<std::string> row = {CsvWriter::cell(k)};
    for (int d = 0; d < env.model.n_x; ++d) row.push_back(fmt_num(adj.lambda_from_zero(k, d)));
    for (int d = 0; d < env.model.n_x; ++d) row.push_back(fmt_num(adj.lambda_from_bar(k, d)));
    for (int d = 0; d < env.model.n_u; ++d) row.push_back(fmt_num(adj.input_from_zero(k, d)));
    for (int d = 0; d < env.model.n_u; ++d) row.push_back(fmt_num(adj.input_from_bar(k, d)));
    csv.add_row(row);
  }
  csv.write(env.out / "lqcheck_adjoints.csv");

  std::cout << "A =\n" << lq.A << "\nB =\n" << lq.B << "\n"
            << "spectral radius of A+B K0: " << riccati.spectral_radius
            << (riccati.stabilizing ? " (stabilizing)" : " (NOT stabilizing)")
            << "\nn_x-step reachable: " << (reachable ? "yes" : "no") << "\n";
  return 0;
}

void write_horizon_map_csv(const Environment& env, const HorizonMap& map,
                           const std::string& filename) {
  std::vector<std::string> header = state_headers("x0", env.model.n_x);
  header.push_back("N");
  CsvWriter csv(header);
  for (int j = 0; j < map.grid.size(); ++j) {
    std::vector<std::string> row;
    for (int d = 0; d < env.model.n_x; ++d) row.push_back(fmt_num(map.grid.points(j, d)));
    row.push_back(CsvWriter::cell(map.values[j]));
    csv.add_row(row);
  }
  csv.write(env.out / filename);
}

json horizon_map_summary(const HorizonMap& map) {
  return json{{"scheme", map.scheme_tag},
              {"aggregate", map.aggregate},
              {"infeasible_count", map.infeasible_count},
              {"unresolved_count", map.unresolved_count},
              {"n_max", map.n_max},
              {"rho", map.rho},
              {"n_cl", map.n_cl},
              {"grid", map.grid.descriptor},
              {"samples", map.grid.size()}};
}

// Achieved accuracy as a function of N from the reference initial state;
// the data behind the rho-vs-N curve for the plain scheme.
CsvWriter rho_curve(const Environment& env, const SteadyState& s,
                    const SchemeConfig& scheme, int n_max) {
  CsvWriter csv({"N", "achieved_rho"});
  for (int n = 1; n <= n_max; ++n) {
    const ClosedLoopTrace trace = simulate_closed_loop(
        env.model, scheme, n, env.cfg.x0_vec(), env.cfg.n_cl,
        env.cfg.nlp_settings());
    if (trace.aborted) {
      csv.add_row({CsvWriter::cell(n), ""});
      continue;
    }
    const double final_dist =
        (trace.states.row(trace.states.rows() - 1).transpose() - s.x).norm();
    csv.add_row({CsvWriter::cell(n), fmt_num(final_dist)});
  }
  return csv;
}

int cmd_horizon(const Environment& env, const std::string& steady_file) {
  const SteadyState s = obtain_steady(env, steady_file);
  const SampleGrid grid = uniform_grid(env.model.bounds, env.cfg.grid_spacing);
  const SchemeKind kind = *scheme_from_string(env.cfg.scheme);
  const SchemeConfig scheme = SchemeConfig::make(kind, s);

  HorizonMap map;
  if (kind == SchemeKind::TerminalEquality) {
    map = horizon_map_terminal(env.model, s, grid, env.cfg.n_max,
                               env.cfg.nlp_settings());
  } else {
    map = horizon_map_closed_loop(env.model, s, scheme, grid, env.cfg.rho,
                                  env.cfg.n_cl, env.cfg.n_max,
                                  env.cfg.nlp_settings());
  }
  write_horizon_map_csv(env, map, "horizon_map_" + env.cfg.scheme + ".csv");
  if (kind == SchemeKind::Unconstrained) {
    rho_curve(env, s, scheme, env.cfg.n_max).write(env.out / "horizon_rho_curve.csv");
  }

  json summary = horizon_map_summary(map);
  summary["command"] = "horizon";
  summary["model"] = env.model.name;
  write_json(env.out / "horizon_summary.json", summary);

  std::cout << "scheme " << env.cfg.scheme << ": aggregate N = " << map.aggregate
            << " over " << map.grid.size() << " samples ("
            << map.infeasible_count << " infeasible, " << map.unresolved_count
            << " unresolved)\n";
  return 0;
}

int cmd_report(const Environment& env) {
  const SteadyState s = solve_sop(env.model, env.cfg.nlp_settings(),
                                  env.cfg.multistart, env.cfg.seed);
  json summary = steady_to_json(s);
  summary["command"] = "report";
  summary["model"] = env.model.name;

  const SchemeConfig terminal = SchemeConfig::terminal_equality(s);
  const SchemeConfig plain = SchemeConfig::make(SchemeKind::Unconstrained, s);
  const SchemeConfig gradcorr = SchemeConfig::linear_penalty(s);

  const LqData lq = build_lq(env.model, s, gradcorr);
  const RiccatiReport riccati = check_local_stabilization(lq, env.cfg.horizon);
  summary["lq"] = {{"spectral_radius", riccati.spectral_radius},
                   {"stabilizing", riccati.stabilizing},
                   {"nstep_reachable", check_nstep_reachability(lq)}};

  const SampleGrid grid = uniform_grid(env.model.bounds, env.cfg.grid_spacing);
  const NlpSettings settings = env.cfg.nlp_settings();
  const HorizonMap map_i =
      horizon_map_terminal(env.model, s, grid, env.cfg.n_max, settings);
  const HorizonMap map_ii =
      horizon_map_closed_loop(env.model, s, plain, grid, env.cfg.rho,
                              env.cfg.n_cl, env.cfg.n_max, settings);
  const HorizonMap map_iii =
      horizon_map_closed_loop(env.model, s, gradcorr, grid, env.cfg.rho,
                              env.cfg.n_cl, env.cfg.n_max, settings);
  write_horizon_map_csv(env, map_i, "horizon_map_terminal.csv");
  write_horizon_map_csv(env, map_ii, "horizon_map_plain.csv");
  write_horizon_map_csv(env, map_iii, "horizon_map_gradcorr.csv");
  summary["horizon_maps"] = {{"terminal", horizon_map_summary(map_i)},
                             {"plain", horizon_map_summary(map_ii)},
                             {"gradcorr", horizon_map_summary(map_iii)}};
  const OrderingReport ordering = ordering_check(map_i, map_ii, map_iii);
  summary["ordering"] = {{"holds", ordering.holds},
                         {"violations", ordering.violations},
                         {"excluded", ordering.excluded}};

  // Deviation sweep for the plain scheme: data behind the decay envelope.
  CsvWriter sweep({"N", "eventual_deviation"});
  std::vector<double> ns, log_devs;
  for (int n = 4; n <= 15; ++n) {
    const ClosedLoopTrace trace = simulate_closed_loop(
        env.model, plain, n, env.cfg.x0_vec(), env.cfg.steps, settings);
    if (trace.aborted) {
      sweep.add_row({CsvWriter::cell(n), ""});
      continue;
    }
    const double dev = eventual_deviation(trace, s, env.cfg.tail_fraction);
    sweep.add_row({CsvWriter::cell(n), fmt_num(dev)});
    if (dev > 0.0) {
      ns.push_back(n);
      log_devs.push_back(std::log(dev));
    }
  }
  sweep.write(env.out / "deviation_sweep.csv");
  rho_curve(env, s, plain, env.cfg.n_max).write(env.out / "horizon_rho_curve.csv");

  double fit_c = 0.0, fit_rate = 0.0;
  if (ns.size() >= 2) {
    // least squares log(dev) = log(c) - rate * N
    const int m = static_cast<int>(ns.size());
    double sn = 0, sl = 0, snn = 0, snl = 0;
    for (int i = 0; i < m; ++i) {
      sn += ns[i];
      sl += log_devs[i];
      snn += ns[i] * ns[i];
      snl += ns[i] * log_devs[i];
    }
    const double slope = (m * snl - sn * sl) / (m * snn - sn * sn);
    const double intercept = (sl - slope * sn) / m;
    fit_rate = -slope;
    fit_c = std::exp(intercept);
  }
  summary["deviation_fit"] = {{"c", fit_c}, {"rate", fit_rate}};

  auto measured_deviation = [&](const SchemeConfig& scheme, int n) -> double {
    const ClosedLoopTrace trace = simulate_closed_loop(
        env.model, scheme, std::max(1, n), env.cfg.x0_vec(), env.cfg.steps,
        settings);
    if (trace.aborted) return std::nan("");
    return eventual_deviation(trace, s, env.cfg.tail_fraction);
  };

  CsvWriter table({"scheme", "terminal_penalty", "terminal_set",
                   "minimal_horizon", "eventual_deviation"});
  table.add_row({"terminal", "0", "{xbar}", CsvWriter::cell(map_i.aggregate),
                 fmt_num(measured_deviation(terminal, map_i.aggregate))});
  table.add_row({"plain", "0", "R^n", CsvWriter::cell(map_ii.aggregate),
                 fmt_num(measured_deviation(plain, map_ii.aggregate))});
  table.add_row({"gradcorr", "lambdabar'x", "R^n",
                 CsvWriter::cell(map_iii.aggregate),
                 fmt_num(measured_deviation(gradcorr, map_iii.aggregate))});
  table.write(env.out / "report_table.csv");

  write_json(env.out / "report_summary.json", summary);
  std::cout << "report written to " << env.out.string() << "\n"
            << "  terminal: N = " << map_i.aggregate << "\n"
            << "  plain:    N = " << map_ii.aggregate << " (rho = "
            << env.cfg.rho << ")\n"
            << "  gradcorr: N = " << map_iii.aggregate << "\n";
  return 0;
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  if (j.contains("model")) c.model = j["model"].get<std::string>();
  if (j.contains("scheme")) c.scheme = j["scheme"].get<std::string>();
  if (j.contains("horizon")) c.horizon = j["horizon"].get<int>();
  if (j.contains("x0")) c.x0 = j["x0"].get<std::vector<double>>();
  if (j.contains("steps")) c.steps = j["steps"].get<int>();
  if (j.contains("grid_spacing")) c.grid_spacing = j["grid_spacing"].get<double>();
  if (j.contains("rho")) c.rho = j["rho"].get<double>();
  if (j.contains("n_cl")) c.n_cl = j["n_cl"].get<int>();
  if (j.contains("n_max")) c.n_max = j["n_max"].get<int>();
  if (j.contains("out_dir")) c.out_dir = j["out_dir"].get<std::string>();
  if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("jobs")) c.jobs = j["jobs"].get<int>();
  if (j.contains("tol")) c.tol = j["tol"].get<double>();
  if (j.contains("max_iterations")) c.max_iterations = j["max_iterations"].get<int>();
  if (j.contains("multistart")) c.multistart = j["multistart"].get<int>();
  if (j.contains("tail_fraction")) c.tail_fraction = j["tail_fraction"].get<double>();
  return c;
}

json RunConfig::to_json() const {
  return json{{"model", model},
              {"scheme", scheme},
              {"horizon", horizon},
              {"x0", x0},
              {"steps", steps},
              {"grid_spacing", grid_spacing},
              {"rho", rho},
              {"n_cl", n_cl},
              {"n_max", n_max},
              {"out_dir", out_dir},
              {"seed", seed},
              {"jobs", jobs},
              {"tol", tol},
              {"max_iterations", max_iterations},
              {"multistart", multistart},
              {"tail_fraction", tail_fraction}};
}

void RunConfig::validate() const {
  const auto m = find_model(model);
  if (!m.has_value()) throw std::invalid_argument("unknown model: " + model);
  if (!scheme_from_string(scheme).has_value())
    throw std::invalid_argument("unknown scheme: " + scheme);
  if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
  if (static_cast<int>(x0.size()) != m->n_x)
    throw std::invalid_argument("x0 must have dimension " +
                                std::to_string(m->n_x));
  for (double v : x0)
    if (!std::isfinite(v)) throw std::invalid_argument("x0 must be finite");
  if (steps < 1) throw std::invalid_argument("steps must be >= 1");
  if (!(grid_spacing > 0.0)) throw std::invalid_argument("grid-spacing must be > 0");
  if (!(rho > 0.0)) throw std::invalid_argument("rho must be > 0");
  if (n_cl < 1) throw std::invalid_argument("ncl must be >= 1");
  if (n_max < 1) throw std::invalid_argument("nmax must be >= 1");
  if (!(tol > 0.0)) throw std::invalid_argument("tol must be > 0");
  if (max_iterations < 1) throw std::invalid_argument("max-iterations must be >= 1");
  if (multistart < 1) throw std::invalid_argument("multistart must be >= 1");
  if (!(tail_fraction > 0.0 && tail_fraction <= 1.0))
    throw std::invalid_argument("tail-fraction must be in (0, 1]");
  if (jobs < 0) throw std::invalid_argument("jobs must be >= 0");
}

NlpSettings RunConfig::nlp_settings() const {
  NlpSettings s;
  s.tol = tol;
  s.max_iterations = max_iterations;
  return s;
}

Vec RunConfig::x0_vec() const {
  Vec v(static_cast<int>(x0.size()));
  for (std::size_t i = 0; i < x0.size(); ++i) v(static_cast<int>(i)) = x0[i];
  return v;
}

json steady_to_json(const SteadyState& s) {
  return json{{"xbar", vec_to_json(s.x)},
              {"ubar", vec_to_json(s.u)},
              {"lambdabar", vec_to_json(s.lambda)},
              {"mubar", vec_to_json(s.mu)},
              {"steady_cost", s.cost},
              {"interior", s.interior},
              {"iterations", s.iterations},
              {"start_index", s.start_index},
              {"converged_starts", s.converged_starts}};
}

SteadyState steady_from_json(const json& j) {
  SteadyState s;
  s.x = vec_from_json(j.at("xbar"));
  s.u = vec_from_json(j.at("ubar"));
  s.lambda = vec_from_json(j.at("lambdabar"));
  s.mu = vec_from_json(j.at("mubar"));
  s.cost = j.at("steady_cost").get<double>();
  s.interior = j.at("interior").get<bool>();
  return s;
}

int run_command(const std::vector<std::string>& args) {
  RunConfig cfg;
  // The config file seeds the defaults; flags override.
  for (std::size_t i = 0; i + 1 < args.size(); ++i) {
    if (args[i] == "--config") {
      std::ifstream in(args[i + 1]);
      if (!in) {
        std::cerr << "cannot read config file " << args[i + 1] << "\n";
        return 2;
      }
      try {
        json j;
        in >> j;
        cfg = RunConfig::from_json(j);
      } catch (const std::exception& e) {
        std::cerr << "bad config file: " << e.what() << "\n";
        return 2;
      }
    }
  }

  CLI::App app{"economic MPC laboratory: terminal-ingredient comparison"};
  app.name("empclab");
  std::string config_path, steady_file;
  app.add_option("--config", config_path, "JSON config file with defaults");

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--model", cfg.model, "model registry name");
    sub->add_option("--out", cfg.out_dir, "output directory");
    sub->add_option("--seed", cfg.seed, "RNG seed");
    sub->add_option("--jobs", cfg.jobs, "worker threads (0 = logical cores)");
    sub->add_option("--tol", cfg.tol, "KKT tolerance");
    sub->add_option("--max-iterations", cfg.max_iterations, "SQP iteration cap");
    sub->add_option("--config", config_path, "JSON config file (already applied)");
  };

  CLI::App* steady = app.add_subcommand("steady", "solve the steady-state problem");
  add_common(steady);
  steady->add_option("--multistart", cfg.multistart, "number of starts");

  std::string x0_text;
  CLI::App* solve = app.add_subcommand("solve", "solve one open-loop OCP");
  add_common(solve);
  solve->add_option("--scheme", cfg.scheme, "terminal|plain|gradcorr");
  solve->add_option("--horizon", cfg.horizon, "prediction horizon N");
  solve->add_option("--x0", x0_text, "initial state, comma separated");
  solve->add_option("--steady", steady_file, "steady-state JSON artifact");

  CLI::App* simulate = app.add_subcommand("simulate", "closed-loop simulation");
  add_common(simulate);
  simulate->add_option("--scheme", cfg.scheme, "terminal|plain|gradcorr");
  simulate->add_option("--horizon", cfg.horizon, "prediction horizon N");
  simulate->add_option("--x0", x0_text, "initial state, comma separated");
  simulate->add_option("--steps", cfg.steps, "closed-loop steps");
  simulate->add_option("--tail-fraction", cfg.tail_fraction, "deviation tail");
  simulate->add_option("--steady", steady_file, "steady-state JSON artifact");

  CLI::App* lqcheck = app.add_subcommand("lqcheck", "local LQ analysis");
  add_common(lqcheck);
  lqcheck->add_option("--scheme", cfg.scheme, "terminal|plain|gradcorr");
  lqcheck->add_option("--horizon", cfg.horizon, "Riccati horizon");
  lqcheck->add_option("--steady", steady_file, "steady-state JSON artifact");

  CLI::App* horizon = app.add_subcommand("horizon", "minimal-horizon maps");
  add_common(horizon);
  horizon->add_option("--scheme", cfg.scheme, "terminal|plain|gradcorr");
  horizon->add_option("--grid-spacing", cfg.grid_spacing, "sample grid spacing");
  horizon->add_option("--rho", cfg.rho, "convergence ball radius");
  horizon->add_option("--ncl", cfg.n_cl, "closed-loop simulation length");
  horizon->add_option("--nmax", cfg.n_max, "horizon search cap");
  horizon->add_option("--x0", x0_text, "reference state for the rho curve");
  horizon->add_option("--steady", steady_file, "steady-state JSON artifact");

  CLI::App* report = app.add_subcommand("report", "full comparison report");
  add_common(report);
  report->add_option("--grid-spacing", cfg.grid_spacing, "sample grid spacing");
  report->add_option("--rho", cfg.rho, "convergence ball radius");
  report->add_option("--ncl", cfg.n_cl, "closed-loop simulation length");
  report->add_option("--nmax", cfg.n_max, "horizon search cap");
  report->add_option("--steps", cfg.steps, "deviation sweep simulation length");
  report->add_option("--x0", x0_text, "reference state for sweeps");
  report->add_option("--multistart", cfg.multistart, "number of SOP starts");

  app.require_subcommand(0, 1);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ExtrasError& e) {
    std::cerr << e.what() << "\n" << app.help() << "\n";
    return 1;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }

  CLI::App* chosen = nullptr;
  for (CLI::App* sub : {steady, solve, simulate, lqcheck, horizon, report}) {
    if (sub->parsed()) chosen = sub;
  }
  if (chosen == nullptr) {
    std::cerr << app.help() << "\n";
    return 1;
  }

  if (!x0_text.empty()) {
    cfg.x0.clear();
    std::stringstream ss(x0_text);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        cfg.x0.push_back(std::stod(item));
      } catch (const std::exception&) {
        std::cerr << "cannot parse --x0 component '" << item << "'\n";
        return 2;
      }
    }
  }
  if (cfg.out_dir.empty()) {
    const char* env_dir = std::getenv("EMPCLAB_OUT");
    cfg.out_dir = env_dir != nullptr ? env_dir : "out";
  }

  try {
    cfg.validate();
  } catch (const std::exception& e) {
    std::cerr << "invalid configuration: " << e.what() << "\n";
    return 2;
  }

#ifdef _OPENMP
  if (cfg.jobs > 0) omp_set_num_threads(cfg.jobs);
#endif

  Environment env{*find_model(cfg.model), cfg, fs::path(cfg.out_dir)};
  std::error_code ec;
  fs::create_directories(env.out, ec);
  if (ec) {
    std::cerr << "cannot create output directory " << cfg.out_dir << "\n";
    return 2;
  }
  append_run_log(env.out, args);

  try {
    if (chosen == steady) return cmd_steady(env);
    if (chosen == solve) return cmd_solve(env, steady_file);
    if (chosen == simulate) return cmd_simulate(env, steady_file);
    if (chosen == lqcheck) return cmd_lqcheck(env, steady_file);
    if (chosen == horizon) return cmd_horizon(env, steady_file);
    if (chosen == report) return cmd_report(env);
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid configuration: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return 3;
  }
  return 1;
}

}  // namespace empc

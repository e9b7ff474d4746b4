#include "empc/horizon.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace empc {

namespace {

struct SampleOutcome {
  int value = kHorizonInfeasible;
  int unresolved = 0;
};

// Shared driver for the grid sweeps: per-sample computations are
// independent; results are merged by sample index, so the parallel and
// serial paths produce identical maps.
HorizonMap run_map(const SampleGrid& grid,
                   const std::function<SampleOutcome(const Vec&)>& per_sample,
                   bool parallel) {
  const int m = grid.size();
  std::vector<SampleOutcome> outcomes(m);

  if (parallel) {
#pragma omp parallel for schedule(dynamic)
    for (int j = 0; j < m; ++j) {
      try {
        outcomes[j] = per_sample(grid.points.row(j).transpose());
      } catch (...) {
        outcomes[j].value = kHorizonInfeasible;
        outcomes[j].unresolved = 1;
      }
    }
  } else {
    for (int j = 0; j < m; ++j) {
      try {
        outcomes[j] = per_sample(grid.points.row(j).transpose());
      } catch (...) {
        outcomes[j].value = kHorizonInfeasible;
        outcomes[j].unresolved = 1;
      }
    }
  }

  HorizonMap map;
  map.grid = grid;
  map.values.resize(m);
  for (int j = 0; j < m; ++j) {
    map.values[j] = outcomes[j].value;
    map.unresolved_count += outcomes[j].unresolved;
    if (outcomes[j].value == kHorizonInfeasible) {
      ++map.infeasible_count;
    } else {
      map.aggregate = std::max(map.aggregate, outcomes[j].value);
    }
  }
  return map;
}

}  // namespace

SampleGrid uniform_grid(const BoxBounds& bounds, double spacing) {
  if (!(spacing > 0.0)) throw std::invalid_argument("uniform_grid: spacing > 0");
  const int n_x = static_cast<int>(bounds.x_lo.size());
  std::vector<std::vector<double>> axes(n_x);
  for (int d = 0; d < n_x; ++d) {
    const double width = bounds.x_hi(d) - bounds.x_lo(d);
    const int count = static_cast<int>(std::round(width / spacing)) + 1;
    for (int i = 0; i < count; ++i) {
      axes[d].push_back(
          std::min(bounds.x_hi(d), bounds.x_lo(d) + i * spacing));
    }
  }
  int total = 1;
  for (const auto& axis : axes) total *= static_cast<int>(axis.size());

  SampleGrid grid;
  grid.points.resize(total, n_x);
  std::vector<int> idx(n_x, 0);
  for (int row = 0; row < total; ++row) {
    for (int d = 0; d < n_x; ++d) grid.points(row, d) = axes[d][idx[d]];
    for (int d = n_x - 1; d >= 0; --d) {
      if (++idx[d] < static_cast<int>(axes[d].size())) break;
      idx[d] = 0;
    }
  }
  std::ostringstream desc;
  desc << "uniform spacing " << spacing;
  for (int d = 0; d < n_x; ++d) desc << (d == 0 ? " (" : " x ") << axes[d].size();
  desc << ")";
  grid.descriptor = desc.str();
  return grid;
}

MinTimeResult min_time_to_steady(const PlantModel& model, const SteadyState& s,
                                 const Vec& x0, int N_max,
                                 const NlpSettings& settings) {
  if (N_max < 1) throw std::invalid_argument("min_time_to_steady: N_max >= 1");
  MinTimeResult result;
  if ((x0 - s.x).cwiseAbs().maxCoeff() <= 1e-9) {
    result.value = 0;
    return result;
  }
  const SchemeConfig scheme = SchemeConfig::terminal_equality(s);

  auto probe = [&](int n) {
    const FeasibilityProbe p =
        probe_feasibility_report(model, scheme, n, x0, settings);
    if (p.unresolved) ++result.unresolved_probes;
    return p.feasible;
  };

  if (!probe(N_max)) return result;  // infeasible up to the cap
  int lo = 1, hi = N_max;
  while (lo < hi) {
    const int mid = lo + (hi - lo) / 2;
    if (probe(mid)) {
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  result.value = lo;
  return result;
}

static HorizonMap horizon_map_terminal_impl(const PlantModel& model,
                                     const SteadyState& s,
                                     const SampleGrid& grid, int N_max,
                                     const NlpSettings& settings,
                                     bool parallel) {
  if (grid.size() < 1)
    throw std::invalid_argument("horizon_map_terminal: empty grid");
  HorizonMap map = run_map(
      grid,
      [&](const Vec& x0) {
        const MinTimeResult r = min_time_to_steady(model, s, x0, N_max, settings);
        return SampleOutcome{r.value, r.unresolved_probes};
      },
      parallel);
  map.scheme_tag = to_string(SchemeKind::TerminalEquality);
  map.n_max = N_max;
  return map;
}

HorizonMap horizon_map_terminal(const PlantModel& model, const SteadyState& s,
                                const SampleGrid& grid, int N_max,
                                const NlpSettings& settings) {
  return horizon_map_terminal_impl(model, s, grid, N_max, settings, true);
}

HorizonMap horizon_map_terminal_serial(const PlantModel& model,
                                       const SteadyState& s,
                                       const SampleGrid& grid, int N_max,
                                       const NlpSettings& settings) {
  return horizon_map_terminal_impl(model, s, grid, N_max, settings, false);
}

ClosedLoopHorizonResult min_horizon_closed_loop(
    const PlantModel& model, const SteadyState& s, const SchemeConfig& scheme,
    const Vec& x0, double rho, int N_cl, int N_max,
    const NlpSettings& settings) {
  if (scheme.kind == SchemeKind::TerminalEquality)
    throw std::invalid_argument(
        "min_horizon_closed_loop: schemes without primal terminal "
        "constraints only");
  if (!(rho > 0.0)) throw std::invalid_argument("rho > 0 required");
  if (N_cl < 1 || N_max < 1)
    throw std::invalid_argument("N_cl and N_max must be >= 1");

  ClosedLoopHorizonResult result;
  for (int n = 1; n <= N_max; ++n) {
    const ClosedLoopTrace trace =
        simulate_closed_loop(model, scheme, n, x0, N_cl, settings);
    if (trace.aborted) {
      ++result.unresolved_probes;
      continue;
    }
    const double final_dist =
        (trace.states.row(trace.states.rows() - 1).transpose() - s.x).norm();
    if (final_dist <= rho) {
      result.value = n;
      return result;
    }
  }
  return result;
}

static HorizonMap horizon_map_closed_loop_impl(const PlantModel& model,
                                        const SteadyState& s,
                                        const SchemeConfig& scheme,
                                        const SampleGrid& grid, double rho,
                                        int N_cl, int N_max,
                                        const NlpSettings& settings,
                                        bool parallel) {
  if (grid.size() < 1)
    throw std::invalid_argument("horizon_map_closed_loop: empty grid");
  HorizonMap map = run_map(
      grid,
      [&](const Vec& x0) {
        const ClosedLoopHorizonResult r = min_horizon_closed_loop(
            model, s, scheme, x0, rho, N_cl, N_max, settings);
        return SampleOutcome{r.value, r.unresolved_probes};
      },
      parallel);
  map.scheme_tag = to_string(scheme.kind);
  map.n_max = N_max;
  map.rho = rho;
  map.n_cl = N_cl;
  return map;
}

HorizonMap horizon_map_closed_loop(const PlantModel& model,
                                   const SteadyState& s,
                                   const SchemeConfig& scheme,
                                   const SampleGrid& grid, double rho, int N_cl,
                                   int N_max, const NlpSettings& settings) {
  return horizon_map_closed_loop_impl(model, s, scheme, grid, rho, N_cl, N_max,
                                      settings, true);
}

HorizonMap horizon_map_closed_loop_serial(const PlantModel& model,
                                          const SteadyState& s,
                                          const SchemeConfig& scheme,
                                          const SampleGrid& grid, double rho,
                                          int N_cl, int N_max,
                                          const NlpSettings& settings) {
  return horizon_map_closed_loop_impl(model, s, scheme, grid, rho, N_cl, N_max,
                                      settings, false);
}

OrderingReport ordering_check(const HorizonMap& terminal,
                              const HorizonMap& plain,
                              const HorizonMap& gradcorr) {
  const int m = terminal.grid.size();
  if (plain.grid.size() != m || gradcorr.grid.size() != m ||
      terminal.grid.points != plain.grid.points ||
      terminal.grid.points != gradcorr.grid.points)
    throw std::invalid_argument("ordering_check: grids differ");

  OrderingReport rep;
  rep.terminal_aggregate = terminal.aggregate;
  rep.plain_aggregate = plain.aggregate;
  rep.gradcorr_aggregate = gradcorr.aggregate;
  for (int j = 0; j < m; ++j) {
    const int nt = terminal.values[j];
    const int ng = gradcorr.values[j];
    if (nt == 0) {
      // xbar itself: the terminal map reports 0 while any closed-loop map
      // reports at least 1, so the sample is excluded by convention.
      ++rep.excluded;
      continue;
    }
    if (nt == kHorizonInfeasible) continue;  // N_terminal = infinity
    if (ng == kHorizonInfeasible || ng > nt) {
      ++rep.violations;
      rep.violating_samples.push_back(j);
    }
  }
  rep.holds = rep.violations == 0;
  return rep;
}

}  // namespace empc

#pragma once

#include <string>
#include <vector>

#include "empc/empc.hpp"
#include "empc/model.hpp"
#include "empc/ocp.hpp"
#include "empc/sop.hpp"

namespace empc {

/// Marker for "no feasible horizon up to the cap" in per-sample values.
inline constexpr int kHorizonInfeasible = -1;

struct SampleGrid {
  Mat points;  // M x n_x, deterministic ordering
  std::string descriptor;
  int size() const { return static_cast<int>(points.rows()); }
};

/// Uniform grid over the state box with the given spacing, endpoints
/// included (spacing 0.05 on [0,1]^2 gives the 21 x 21 default).
SampleGrid uniform_grid(const BoxBounds& bounds, double spacing);

struct MinTimeResult {
  int value = kHorizonInfeasible;  // 0 when x0 is the steady state
  int unresolved_probes = 0;
};

/// Smallest N in [1, N_max] for which the terminal-equality transcription
/// is feasible from x0, found by binary search (feasibility is monotone in
/// N: append the steady pair). Unresolved probes count as infeasible, which
/// can only inflate the result.
MinTimeResult min_time_to_steady(const PlantModel& model, const SteadyState& s,
                                 const Vec& x0, int N_max,
                                 const NlpSettings& settings = {});

struct HorizonMap {
  SampleGrid grid;
  std::vector<int> values;  // kHorizonInfeasible marks infinity
  int aggregate = 0;        // max over finite entries
  int infeasible_count = 0;
  int unresolved_count = 0;
  std::string scheme_tag;
  int n_max = 0;
  double rho = 0.0;  // closed-loop maps only
  int n_cl = 0;      // closed-loop maps only
};

HorizonMap horizon_map_terminal(const PlantModel& model, const SteadyState& s,
                                const SampleGrid& grid, int N_max,
                                const NlpSettings& settings = {});
/// Reference implementation of the parallel sweep above; identical output.
HorizonMap horizon_map_terminal_serial(const PlantModel& model,
                                       const SteadyState& s,
                                       const SampleGrid& grid, int N_max,
                                       const NlpSettings& settings = {});

struct ClosedLoopHorizonResult {
  int value = kHorizonInfeasible;
  int unresolved_probes = 0;
};

/// Smallest N in [1, N_max] whose receding-horizon loop of length N_cl ends
/// inside the rho-ball around xbar. Schemes without primal terminal
/// constraints only (plain, gradcorr).
ClosedLoopHorizonResult min_horizon_closed_loop(
    const PlantModel& model, const SteadyState& s, const SchemeConfig& scheme,
    const Vec& x0, double rho, int N_cl, int N_max,
    const NlpSettings& settings = {});

HorizonMap horizon_map_closed_loop(const PlantModel& model,
                                   const SteadyState& s,
                                   const SchemeConfig& scheme,
                                   const SampleGrid& grid, double rho, int N_cl,
                                   int N_max, const NlpSettings& settings = {});
HorizonMap horizon_map_closed_loop_serial(const PlantModel& model,
                                          const SteadyState& s,
                                          const SchemeConfig& scheme,
                                          const SampleGrid& grid, double rho,
                                          int N_cl, int N_max,
                                          const NlpSettings& settings = {});

struct OrderingReport {
  bool holds = false;
  int violations = 0;
  int excluded = 0;  // samples where the terminal map is 0 (xbar itself)
  std::vector<int> violating_samples;
  int terminal_aggregate = 0;
  int plain_aggregate = 0;
  int gradcorr_aggregate = 0;
};

/// Per-sample check N_gradcorr(x0) <= N_terminal(x0). The plain-scheme
/// values are carried along for reporting; the paper-level equality
/// concerns feasibility-only horizons, not closed-loop convergence.
OrderingReport ordering_check(const HorizonMap& terminal,
                              const HorizonMap& plain,
                              const HorizonMap& gradcorr);

}  // namespace empc

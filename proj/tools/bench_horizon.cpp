// Compares the serial reference implementation of the horizon-map sweeps
// against the OpenMP kernels on the reactor benchmark. The two must produce
// identical maps; the table reports wall time and speedup.

#include <chrono>
#include <cstdio>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "empc/horizon.hpp"
#include "empc/model.hpp"
#include "empc/sop.hpp"

using namespace empc;

namespace {

double time_ms(const std::function<HorizonMap()>& fn, HorizonMap& out) {
  const auto t0 = std::chrono::steady_clock::now();
  out = fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

void row(const char* name, double serial_ms, double parallel_ms, bool identical) {
  std::printf("%-28s %10.1f %12.1f %8.2fx %10s\n", name, serial_ms, parallel_ms,
              serial_ms / parallel_ms, identical ? "identical" : "DIFFER");
}

}  // namespace

int main(int argc, char** argv) {
  double spacing = 0.25;
  int n_max = 12;
  int n_cl = 60;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string flag = argv[i];
    if (flag == "--grid-spacing") spacing = std::stod(argv[i + 1]);
    if (flag == "--nmax") n_max = std::stoi(argv[i + 1]);
    if (flag == "--ncl") n_cl = std::stoi(argv[i + 1]);
  }

  const PlantModel model = reactor_model();
  const SteadyState s = solve_sop(model);
  const SampleGrid grid = uniform_grid(model.bounds, spacing);

#ifdef _OPENMP
  std::printf("OpenMP: %d threads, ", omp_get_max_threads());
#else
  std::printf("OpenMP: disabled, ");
#endif
  std::printf("grid %s, N_max %d\n\n", grid.descriptor.c_str(), n_max);
  std::printf("%-28s %10s %12s %9s %10s\n", "kernel", "serial/ms", "parallel/ms",
              "speedup", "check");

  {
    HorizonMap a, b;
    const double ts = time_ms(
        [&] { return horizon_map_terminal_serial(model, s, grid, n_max); }, a);
    const double tp = time_ms(
        [&] { return horizon_map_terminal(model, s, grid, n_max); }, b);
    row("terminal min-time map", ts, tp, a.values == b.values);
  }
  {
    const SchemeConfig scheme = SchemeConfig::linear_penalty(s);
    HorizonMap a, b;
    const double ts = time_ms(
        [&] {
          return horizon_map_closed_loop_serial(model, s, scheme, grid, 1e-3,
                                                n_cl, 4);
        },
        a);
    const double tp = time_ms(
        [&] {
          return horizon_map_closed_loop(model, s, scheme, grid, 1e-3, n_cl, 4);
        },
        b);
    row("gradcorr closed-loop map", ts, tp, a.values == b.values);
  }
  return 0;
}

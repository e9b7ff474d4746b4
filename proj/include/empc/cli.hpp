#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "empc/model.hpp"
#include "empc/nlp.hpp"
#include "empc/sop.hpp"

namespace empc {

/// Everything a run needs, parseable from a JSON document (--config) and
/// overridable by flags. Validated against module preconditions before any
/// solve starts.
struct RunConfig {
  std::string model = "reactor";
  std::string scheme = "gradcorr";
  int horizon = 10;
  std::vector<double> x0 = {0.2, 0.8};
  int steps = 200;
  double grid_spacing = 0.05;
  double rho = 1e-3;
  int n_cl = 200;
  int n_max = 30;
  std::string out_dir;
  std::uint64_t seed = 0;
  int jobs = 0;  // 0 keeps the OpenMP default (logical cores)
  double tol = 1e-8;
  int max_iterations = 200;
  int multistart = 16;
  double tail_fraction = 0.25;

  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;  // throws std::invalid_argument
  NlpSettings nlp_settings() const;
  Vec x0_vec() const;
};

nlohmann::json steady_to_json(const SteadyState& s);
SteadyState steady_from_json(const nlohmann::json& j);

/// CLI entry point: argv without the program name. Exit codes: 0 success,
/// 1 unknown command, 2 validation error, 3 solver failure.
int run_command(const std::vector<std::string>& args);

}  // namespace empc

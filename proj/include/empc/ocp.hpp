#pragma once

#include <optional>

#include "empc/model.hpp"
#include "empc/nlp.hpp"
#include "empc/sop.hpp"

namespace empc {

/// Terminal ingredients distinguishing the three schemes:
///   TerminalEquality  : V_f = 0,           X_f = {xbar}
///   Unconstrained     : V_f = 0,           X_f = R^n
///   LinearPenalty     : V_f = lambdabar'x, X_f = R^n
enum class SchemeKind { TerminalEquality, Unconstrained, LinearPenalty };

const char* to_string(SchemeKind kind);
std::optional<SchemeKind> scheme_from_string(const std::string& name);

struct SchemeConfig {
  SchemeKind kind = SchemeKind::Unconstrained;
  Vec xbar;       // required for TerminalEquality
  Vec lambdabar;  // required for LinearPenalty
  Vec ubar;       // optional; seeds initial guesses

  static SchemeConfig terminal_equality(const SteadyState& s);
  static SchemeConfig unconstrained();
  static SchemeConfig linear_penalty(const SteadyState& s);
  static SchemeConfig make(SchemeKind kind, const SteadyState& s);
  void validate() const;  // throws std::invalid_argument
};

/// Per-stage infinity norms of the discrete Euler-Lagrange residuals and
/// the scheme-specific boundary residual.
struct ElReport {
  Vec dynamics;       // k = 0..N-1
  Vec adjoint;        // k = 0..N-1
  Vec stationarity;   // k = 0..N-1
  double boundary = 0.0;
  double max_dynamics = 0.0;
  double max_adjoint = 0.0;
  double max_stationarity = 0.0;
  double max() const;
};

struct OcpSolution {
  Mat x;       // (N+1) x n_x, row k = x_k
  Mat u;       // N x n_u
  Mat lambda;  // (N+1) x n_x, adjoints of the dynamics rows
  Mat mu;      // (N+1) x n_g; row N carries only the state rows, rest zero
  Vec terminal_multiplier;  // scheme (i) only
  double objective = 0.0;   // V_N
  NlpStatus status = NlpStatus::Aborted;
  int iterations = 0;
  std::string message;
  ElReport el;

  int horizon() const { return static_cast<int>(u.rows()); }
  bool converged() const { return status == NlpStatus::Converged; }
};

OcpSolution solve_ocp(const PlantModel& model, const SchemeConfig& scheme,
                      int N, const Vec& x0,
                      const OcpSolution* warm = nullptr,
                      const NlpSettings& settings = {});

ElReport euler_lagrange_residual(const PlantModel& model,
                                 const SchemeConfig& scheme,
                                 const OcpSolution& sol);

struct TerminalPenalty {
  double value = 0.0;
  Vec gradient;
};

TerminalPenalty terminal_penalty(const SchemeConfig& scheme, const Vec& xN);

/// Objective of the transcription evaluated on a given trajectory
/// (stage costs plus the scheme's terminal penalty).
double evaluate_objective(const PlantModel& model, const SchemeConfig& scheme,
                          const Mat& x, const Mat& u);

struct FeasibilityProbe {
  bool feasible = false;
  bool unresolved = false;  // solver aborted without a verdict
  double violation = 0.0;   // best constraint violation found
};

FeasibilityProbe probe_feasibility_report(const PlantModel& model,
                                          const SchemeConfig& scheme, int N,
                                          const Vec& x0,
                                          const NlpSettings& settings = {});

/// Membership in the feasible set of the scheme's OCP, decided by a
/// feasibility NLP minimizing the equality violation.
bool probe_feasibility(const PlantModel& model, const SchemeConfig& scheme,
                       int N, const Vec& x0, const NlpSettings& settings = {});

}  // namespace empc

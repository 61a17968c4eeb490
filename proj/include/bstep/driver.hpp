#pragma once

// Boosted steering exact penalty DCA: the outer loop, penalty steering,
// nonmonotone line search, tolerance and trial-step strategies, stopping tests.

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bstep/penalty.hpp"
#include "bstep/problem.hpp"
#include "bstep/subsolver.hpp"

namespace bstep {

struct NuStrategy {
  enum class Kind { kS1, kS2, kS3 };
  Kind kind = Kind::kS3;
  /// S1: prescribed values; past the end each value is half the previous one.
  std::vector<double> sequence;
  /// S2
  double delta_min = 0.5;
  double nu0 = 1.0;
  /// S3: gamma_k = gamma0 / (k + 1)
  double gamma0 = 0.1;
};

struct TrialStep {
  enum class Kind { kConstant, kPrevious, kSelfAdaptive };
  Kind kind = Kind::kSelfAdaptive;
  /// Constant trial step, or the first trial step for the other rules.
  double alpha = 1.0;
  double gamma = 0.5;
};

enum class StoppingRule { kCriterion1, kCriterion2 };

struct SolverConfig {
  double eta1 = 0.1;
  double eta2 = 0.1;
  double zeta = 0.5;
  double sigma = 0.1;
  double eps_phi = 0.1;
  double eps_feas = 0.01;
  double eps_f = 1e-3;
  std::optional<double> eps_x;
  NuStrategy nu;
  TrialStep trial;
  StoppingRule stopping = StoppingRule::kCriterion1;
  int max_outer_iters = 200;
  int line_search_max_j = 60;
  bool check_assumption5 = false;
  /// Subproblem tolerance eps_k = eps_sub * eps_sub_ratio^k.
  double eps_sub = 1e-6;
  double eps_sub_ratio = 1.0;
  int sub_max_iter = 200;

  void check() const;
};

struct IterationRecord {
  int k = 0;
  double c_k = 0.0;
  double c_next = 0.0;
  double Phi_base = 0.0;  // Phi_{c_{k+1}}(x_k)
  double Phi_next = 0.0;  // Phi_{c_{k+1}}(x_{k+1})
  double J_next = 0.0;
  double phi_next = 0.0;
  double Gamma_base = 0.0;
  double Gamma_cand = 0.0;
  double Gamma_hat = 0.0;  // NaN when Step 2 did not run
  double Q_base = 0.0;     // Q_{c_{k+1}}(x_k; x_k)
  double Q_cand = 0.0;     // Q_{c_{k+1}}(x_k[c_{k+1}]; x_k)
  double rho = 0.0;        // L2 norm of candidate - base
  double alpha_bar = 0.0;
  double alpha = 0.0;
  int j = 0;
  double nu = 0.0;
  int inner_Q_solves = 0;
  int penalty_increases = 0;
  bool step2_executed = false;
  bool step3_executed = false;
  bool penalty_term_critical = false;
  bool assumption2_triggered = false;
  bool line_search_capped = false;
  bool nu_fallback = false;
  double eps_k = 0.0;
  double max_certified_gap = 0.0;
  std::string statuses;
};

enum class Termination { kConverged, kCMaxHit, kMaxIters, kAssumption2Critical };

std::string termination_name(Termination t);

struct RunSummary {
  Termination termination = Termination::kMaxIters;
  DiscreteTrajectory traj;
  double c = 0.0;
  double J = 0.0;
  double phi = 0.0;
  int iterations = 0;
  int total_inner_solves = 0;
  int penalty_increases = 0;
  double wall_time = 0.0;
  std::vector<IterationRecord> records;
};

/// Values a nu strategy may depend on.
struct NuHistory {
  int k = 0;
  double rho_sq = 0.0;           // squared step norm at iteration k
  double previous_nu = 0.0;      // nu_{k-1}
  double previous_decrease = 0;  // Phi_{c_k}(x_{k-1}) - Phi_{c_k}(x_k)
};

struct NuChoice {
  double nu = 0.0;
  bool fallback = false;
};

NuChoice choose_nu(const NuStrategy& strategy, const NuHistory& history);

struct TrialHistory {
  int k = 0;
  /// (alpha_bar, alpha) of earlier iterations, oldest first.
  std::vector<std::pair<double, double>> steps;
};

double choose_trial_step(const TrialStep& strategy, const TrialHistory& history);

struct StoppingValues {
  double Phi_next = 0.0;
  double Phi_base = 0.0;
  double phi_next = 0.0;
  double Q_base = 0.0;
  double Q_cand = 0.0;
  double Gamma_cand = 0.0;
  double rho = 0.0;
};

bool check_stopping(StoppingRule rule, const StoppingValues& v, double eps_f, double eps_phi,
                    std::optional<double> eps_x);

using IterationObserver = std::function<void(const IterationRecord&)>;

RunSummary run(const ProblemSpec& spec, const X0Spec& base_set, const Grid& grid, const PenaltyConfig& pcfg,
               const SolverConfig& scfg, const DiscreteTrajectory& initial, const IterationObserver& observer = {});

void write_iteration_csv_header(std::ostream& out);
void write_iteration_csv_row(std::ostream& out, const IterationRecord& r);
nlohmann::json to_json(const RunSummary& summary, bool include_wall_time = true);

}  // namespace bstep

#pragma once

// Certificates of (generalized) epsilon-criticality and of criticality for the
// penalty term, obtained by solving the convex subproblems built at the candidate.

#include <string>

#include <nlohmann/json.hpp>

#include "bstep/penalty.hpp"
#include "bstep/problem.hpp"
#include "bstep/subsolver.hpp"

namespace bstep {

enum class Verdict { kEpsCritical, kGeneralizedEpsCritical, kPenaltyTermCritical, kNotCritical };

std::string verdict_name(Verdict v);

struct CriticalityReport {
  DiscreteTrajectory candidate;
  double c_used = 0.0;
  double eps = 0.0;
  /// Q at the candidate minus the certified lower bound of min Q over X0
  /// (infinite when the solver could not certify a bound).
  double Q_gap = 0.0;
  /// Gamma at the candidate minus the certified lower bound of min Gamma over X0
  /// (infinite when the solver could not certify a bound).
  double Gamma_gap = 0.0;
  double phi_value = 0.0;
  Verdict verdict = Verdict::kNotCritical;
  SubproblemStatus Q_status = SubproblemStatus::kMaxIter;
  SubproblemStatus Gamma_status = SubproblemStatus::kMaxIter;
};

struct CriticalityOptions {
  /// Feasibility threshold separating eps_critical from generalized_eps_critical.
  double eps_phi = 0.1;
  double solver_eps = 1e-9;
  int max_iter = 400;
};

CriticalityReport verify_criticality(const DiscreteTrajectory& candidate, const ProblemSpec& spec,
                                     const X0Spec& base_set, const Grid& grid, const PenaltyConfig& pcfg, double c,
                                     double eps, const CriticalityOptions& opts = {});

nlohmann::json to_json(const CriticalityReport& report);

}  // namespace bstep

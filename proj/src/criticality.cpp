#include "bstep/criticality.hpp"

#include <limits>
#include <stdexcept>

namespace bstep {

std::string verdict_name(Verdict v) {
  switch (v) {
    case Verdict::kEpsCritical: return "eps_critical";
    case Verdict::kGeneralizedEpsCritical: return "generalized_eps_critical";
    case Verdict::kPenaltyTermCritical: return "penalty_term_critical";
    case Verdict::kNotCritical: return "not_critical";
  }
  return "unknown";
}

CriticalityReport verify_criticality(const DiscreteTrajectory& candidate, const ProblemSpec& spec,
                                     const X0Spec& base_set, const Grid& grid, const PenaltyConfig& pcfg, double c,
                                     double eps, const CriticalityOptions& opts) {
  if (!(eps >= 0.0)) throw std::invalid_argument("eps must be nonnegative");
  const SubgradientBundle bundle = collect_subgradients(candidate, spec, grid, pcfg);
  SubsolverOptions sub;
  sub.eps = opts.solver_eps;
  sub.max_iter = opts.max_iter;
  const SubproblemResult q = solve_Q(bundle, spec, base_set, grid, pcfg, c, sub);
  const SubproblemResult g = solve_Gamma(bundle, spec, base_set, grid, pcfg, sub);
  if (q.status == SubproblemStatus::kInfeasibleBaseSet || g.status == SubproblemStatus::kInfeasibleBaseSet)
    throw std::runtime_error("subproblem reported an infeasible base set");

  CriticalityReport r;
  r.candidate = candidate;
  r.c_used = c;
  r.eps = eps;
  constexpr double kUnknown = std::numeric_limits<double>::infinity();
  r.Q_gap = q.bound_valid ? eval_Q(candidate, bundle, spec, grid, pcfg, c) - q.lower_bound : kUnknown;
  r.Gamma_gap = g.bound_valid ? eval_Gamma(candidate, bundle, spec, grid, pcfg) - g.lower_bound : kUnknown;
  r.phi_value = eval_phi(candidate, spec, grid, pcfg);
  r.Q_status = q.status;
  r.Gamma_status = g.status;
  if (r.Q_gap <= eps)
    r.verdict = r.phi_value <= opts.eps_phi ? Verdict::kEpsCritical : Verdict::kGeneralizedEpsCritical;
  else if (r.Gamma_gap <= eps)
    r.verdict = Verdict::kPenaltyTermCritical;
  else
    r.verdict = Verdict::kNotCritical;
  return r;
}

nlohmann::json to_json(const CriticalityReport& report) {
  nlohmann::json doc;
  doc["c_used"] = report.c_used;
  doc["eps"] = report.eps;
  doc["Q_gap"] = report.Q_gap;
  doc["Gamma_gap"] = report.Gamma_gap;
  doc["phi"] = report.phi_value;
  doc["verdict"] = verdict_name(report.verdict);
  doc["Q_status"] = status_name(report.Q_status);
  doc["Gamma_status"] = status_name(report.Gamma_status);
  return doc;
}

}  // namespace bstep

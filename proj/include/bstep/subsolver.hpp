#pragma once

// Certified epsilon-optimal solves of the two convex subproblems
//
//   minimize Q_c(. ; base; V) over X0      and      minimize Gamma(. ; base; V) over X0
//
// by epigraph reduction into a sparse convex program.

#include <iosfwd>
#include <string>

#include "bstep/convex_program.hpp"
#include "bstep/penalty.hpp"
#include "bstep/problem.hpp"

namespace bstep {

enum class SubproblemStatus { kOptimal, kEpsOptimal, kMaxIter, kInfeasibleBaseSet };

std::string status_name(SubproblemStatus status);

struct SubsolverOptions {
  double eps = 1e-6;
  int max_iter = 200;
  /// When non-empty, the reduced program is written here before solving.
  std::string dump_path;
  /// Interior-point progress lines when set.
  std::ostream* trace = nullptr;
};

struct SubproblemResult {
  DiscreteTrajectory traj;
  /// Exact subproblem objective at traj.
  double objective = 0.0;
  /// objective minus the solver's lower bound on the optimal value
  double certified_gap = 0.0;
  double lower_bound = 0.0;
  /// The lower bound comes from a near-stationary, near-feasible primal-dual pair.
  bool bound_valid = false;
  SubproblemStatus status = SubproblemStatus::kMaxIter;
  /// The solver's point was worse than the base point and was replaced by it.
  bool replaced_by_base = false;
  int iterations = 0;
  double dual_residual = 0.0;
};

/// omega_weight * omega + gamma_weight * Gamma as a convex program whose first
/// variables are the flattened trajectory.
ConvexProgram build_subproblem(const SubgradientBundle& bundle, const ProblemSpec& spec, const X0Spec& base_set,
                               const Grid& grid, const PenaltyConfig& cfg, double omega_weight,
                               double gamma_weight);

SubproblemResult solve_Q(const SubgradientBundle& bundle, const ProblemSpec& spec, const X0Spec& base_set,
                         const Grid& grid, const PenaltyConfig& cfg, double c, const SubsolverOptions& opts = {});

SubproblemResult solve_Gamma(const SubgradientBundle& bundle, const ProblemSpec& spec, const X0Spec& base_set,
                             const Grid& grid, const PenaltyConfig& cfg, const SubsolverOptions& opts = {});

}  // namespace bstep

#pragma once

// Continuous-time DC optimal control problem and the convex base set X0.
//
// Running functions take y = (x, u) in R^{n+m}; endpoint functions take
// e = (x(0), x(T)) in R^{2n}.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bstep/expr.hpp"
#include "bstep/transcription.hpp"

namespace bstep {

enum class ControlBoxMode { kInX0, kPenalizeL1, kPenalizeLinf };

std::string mode_name(ControlBoxMode mode);
ControlBoxMode mode_from_name(const std::string& name);

struct ControlBounds {
  std::vector<double> lower;
  std::vector<double> upper;
};

struct ProblemSpec {
  std::size_t n = 0;
  std::size_t m = 0;
  double T = 0.0;
  /// Grid the time tables were built for, if any.
  std::optional<std::size_t> grid_intervals;

  DCPair running_cost;
  DCPair terminal_cost;
  /// One entry per state row; empty where the row is taken exactly in X0.
  std::vector<std::optional<DCPair>> dynamics;
  std::vector<DCPair> endpoint_ineq;  // f_i(e) <= 0
  std::vector<DCPair> endpoint_eq;    // f_j(e) == 0
  std::vector<DCPair> mixed;          // p_s(y) - q_s(y) <= 0
  /// Control box handled by the penalty term (when the penalty mode is not in_X0).
  std::optional<ControlBounds> control_bounds;
};

/// Row `row` of the dynamics taken exactly: xdot_row = rhs(x, u), rhs affine.
struct LinearDynamicsRow {
  std::size_t row = 0;
  ConvexExpr rhs;
};

struct X0Spec {
  /// Per-component fixed values; nullopt components are free. Empty = no constraint.
  std::vector<std::optional<double>> fixed_initial_state;
  std::vector<std::optional<double>> fixed_terminal_state;
  std::vector<LinearDynamicsRow> linear_dynamics;
  std::optional<ControlBounds> control_box;
};

struct ProblemFile {
  ProblemSpec spec;
  X0Spec base;
  std::optional<ControlBoxMode> control_box_mode;
};

/// Human-readable invariant violations; empty when the pair is well formed.
std::vector<std::string> validate(const ProblemSpec& spec, const X0Spec& base);

/// True iff X0 is affine (no control box).
bool line_search_admissible(const X0Spec& base);

/// Throws when time tables do not match the transcription grid.
void check_grid(const ProblemSpec& spec, const X0Spec& base, const Grid& grid);

/// Euclidean projection onto the affine part of X0 followed by clipping into
/// the control box.
DiscreteTrajectory project_onto_base(const DiscreteTrajectory& traj, const ProblemSpec& spec,
                                     const X0Spec& base, const Grid& grid);

/// Largest violation of the X0 constraints.
double base_violation(const DiscreteTrajectory& traj, const ProblemSpec& spec, const X0Spec& base,
                      const Grid& grid);

nlohmann::json to_json(const ProblemFile& file);
ProblemFile problem_from_json(const nlohmann::json& doc);
ProblemFile load_problem(const std::string& path);

}  // namespace bstep

#pragma once

// Built-in train control benchmark: drive 200 units in time 48 from rest to
// rest under a position-dependent speed limit while minimizing traction energy.

#include <string>
#include <vector>

#include "bstep/driver.hpp"

namespace bstep::train {

inline constexpr double kP = 0.78e-4;
inline constexpr double kQ = 0.28e-3;
inline constexpr double kHorizon = 48.0;
inline constexpr double kDistance = 200.0;
inline constexpr double kUMax = 2.0 / 3.0;

struct Instance {
  std::string variant;
  ProblemSpec spec;
  X0Spec base;
  PenaltyConfig penalty;
  SolverConfig solver;
  Grid grid;
  DiscreteTrajectory initial;
};

/// step0, step_l1, bstep_l1, step_linf, bstep_linf.
const std::vector<std::string>& variants();

/// Throws std::invalid_argument on an unknown variant or N < 2.
Instance build(const std::string& variant, std::size_t N);

/// Every constraint, including endpoints and both dynamics rows, in the penalty term.
Instance build_fully_penalized(std::size_t N);

/// Forward simulation that accelerates at full traction and tracks `margin`
/// below a braking envelope of the speed limit and of the stop at the destination.
DiscreteTrajectory warm_start(const Grid& grid, double margin = 0.2);

// Direct evaluations of the three nonsmooth ingredients.
double cost_integrand(double x2, double u);
double drag(double x2);  // x2 |x2|
/// Right-hand side of the velocity equation.
double acceleration(double x2, double u);
double speed_limit(double x1);

DCPair cost_pair();
DCPair acceleration_pair();
DCPair speed_pair();

}  // namespace bstep::train

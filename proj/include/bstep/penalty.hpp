#pragma once

// Exact penalty machinery on discretized trajectories: penalty term phi,
// penalty function Phi_c = J + c phi, the convexified cost omega, the convex
// majorant Q_c = omega + c Gamma and the infeasibility majorant Gamma.

#include <cstddef>
#include <vector>

#include "bstep/problem.hpp"
#include "bstep/transcription.hpp"

namespace bstep {

struct PenaltyConfig {
  ControlBoxMode control_box_mode = ControlBoxMode::kInX0;
  double c0 = 10.0;
  double c_max = 1e6;
  double rho = 10.0;

  /// Throws std::invalid_argument unless c0 > 0, c_max >= c0, rho > 1.
  void check() const;
};

// Subgradients of the subtracted (and, for two-sided rows, the leading) convex
// parts at the base point, together with the base values they are paired with.
struct SubgradientBundle {
  DiscreteTrajectory base;

  RowMatrix V0;                // N x (n+m), subgradients of H0
  std::vector<double> v0;      // 2n, subgradient of h0
  std::vector<RowMatrix> V;    // per dynamics row: subgradients of H_i (empty for exact rows)
  std::vector<RowMatrix> W;    // per dynamics row: subgradients of G_i
  RowMatrix G_base, H_base;    // N x n values of G_i, H_i at base samples
  std::vector<std::vector<double>> v_ineq, v_eq, w_eq;
  std::vector<double> h_ineq_base, g_eq_base, h_eq_base;
  std::vector<RowMatrix> z;    // per mixed constraint: N x (n+m) subgradients of q_s
  RowMatrix q_base;            // N x l_M values of q_s

  /// Integral of (H0 - <V0, y>) at base plus h0 - <v0, e> at base.
  double correction = 0.0;
};

double eval_J(const DiscreteTrajectory& traj, const ProblemSpec& spec, const Grid& grid);

/// Control-box part of phi (zero in in_X0 mode or without penalized bounds).
double control_box_term(const DiscreteTrajectory& traj, const ProblemSpec& spec, const Grid& grid,
                        const PenaltyConfig& cfg);

double eval_phi(const DiscreteTrajectory& traj, const ProblemSpec& spec, const Grid& grid,
                const PenaltyConfig& cfg);

double eval_Phi(const DiscreteTrajectory& traj, const ProblemSpec& spec, const Grid& grid,
                const PenaltyConfig& cfg, double c);

SubgradientBundle collect_subgradients(const DiscreteTrajectory& base, const ProblemSpec& spec,
                                       const Grid& grid, const PenaltyConfig& cfg);

double eval_omega(const DiscreteTrajectory& traj, const SubgradientBundle& bundle, const ProblemSpec& spec,
                  const Grid& grid);

double eval_Gamma(const DiscreteTrajectory& traj, const SubgradientBundle& bundle, const ProblemSpec& spec,
                  const Grid& grid, const PenaltyConfig& cfg);

double eval_Q(const DiscreteTrajectory& traj, const SubgradientBundle& bundle, const ProblemSpec& spec,
              const Grid& grid, const PenaltyConfig& cfg, double c);

}  // namespace bstep

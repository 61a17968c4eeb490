#pragma once

// Uniform time grid, nodal states / piecewise-constant controls, left Riemann
// sums and forward differences.

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace bstep {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Grid {
  Grid(double horizon, std::size_t intervals);

  std::size_t N;
  double T;
  double h;

  double node(std::size_t j) const { return static_cast<double>(j) * h; }
};

struct DiscreteTrajectory {
  RowMatrix x;  // (N+1) x n
  RowMatrix u;  // N x m

  static DiscreteTrajectory zeros(std::size_t n, std::size_t m, std::size_t N);

  std::size_t n() const { return static_cast<std::size_t>(x.cols()); }
  std::size_t m() const { return static_cast<std::size_t>(u.cols()); }
  std::size_t intervals() const { return static_cast<std::size_t>(u.rows()); }

  /// (x_j, u_j) for j < N.
  std::vector<double> sample(std::size_t j) const;
  /// (x_0, x_N).
  std::vector<double> endpoints() const;

  /// All states row by row, then all controls row by row.
  std::vector<double> flatten() const;
  static DiscreteTrajectory unflatten(std::span<const double> values, std::size_t n, std::size_t m,
                                      std::size_t N);
  /// Position of x_j[i] and u_j[c] in flatten().
  static std::size_t state_index(std::size_t n, std::size_t j, std::size_t i) { return j * n + i; }
  static std::size_t control_index(std::size_t n, std::size_t m, std::size_t N, std::size_t j,
                                   std::size_t c) {
    return (N + 1) * n + j * m + c;
  }

  bool same_shape(const DiscreteTrajectory& other) const;
  DiscreteTrajectory operator-(const DiscreteTrajectory& other) const;
  DiscreteTrajectory operator+(const DiscreteTrajectory& other) const;
  DiscreteTrajectory scaled(double factor) const;
};

/// Row j is (x_{j+1} - x_j) / h.
RowMatrix forward_diff(const DiscreteTrajectory& traj, const Grid& grid);

/// h * sum of values.
double riemann_sum(std::span<const double> values, const Grid& grid);

/// h * sum_{j<N} (|x_j|^2 + |u_j|^2).
double l2_norm_sq(const DiscreteTrajectory& diff, const Grid& grid);

void check_shape(const DiscreteTrajectory& traj, std::size_t n, std::size_t m, const Grid& grid);

/// Columns t, x1..xn, u1..um; u is blank on the final node.
void write_trajectory_csv(std::ostream& out, const DiscreteTrajectory& traj, const Grid& grid);

}  // namespace bstep

#include "bstep/transcription.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

#include <fmt/format.h>

namespace bstep {

Grid::Grid(double horizon, std::size_t intervals) : N(intervals), T(horizon), h(0.0) {
  if (intervals < 2) throw std::invalid_argument("grid needs at least two subintervals");
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw std::invalid_argument("horizon must be positive");
  h = horizon / static_cast<double>(intervals);
}

DiscreteTrajectory DiscreteTrajectory::zeros(std::size_t n, std::size_t m, std::size_t N) {
  DiscreteTrajectory t;
  t.x = RowMatrix::Zero(static_cast<Eigen::Index>(N + 1), static_cast<Eigen::Index>(n));
  t.u = RowMatrix::Zero(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(m));
  return t;
}

std::vector<double> DiscreteTrajectory::sample(std::size_t j) const {
  std::vector<double> y(n() + m());
  const auto jj = static_cast<Eigen::Index>(j);
  for (std::size_t i = 0; i < n(); ++i) y[i] = x(jj, static_cast<Eigen::Index>(i));
  for (std::size_t c = 0; c < m(); ++c) y[n() + c] = u(jj, static_cast<Eigen::Index>(c));
  return y;
}

std::vector<double> DiscreteTrajectory::endpoints() const {
  std::vector<double> e(2 * n());
  const Eigen::Index last = x.rows() - 1;
  for (std::size_t i = 0; i < n(); ++i) {
    e[i] = x(0, static_cast<Eigen::Index>(i));
    e[n() + i] = x(last, static_cast<Eigen::Index>(i));
  }
  return e;
}

std::vector<double> DiscreteTrajectory::flatten() const {
  std::vector<double> out(static_cast<std::size_t>(x.size() + u.size()));
  std::copy(x.data(), x.data() + x.size(), out.begin());
  std::copy(u.data(), u.data() + u.size(), out.begin() + x.size());
  return out;
}

DiscreteTrajectory DiscreteTrajectory::unflatten(std::span<const double> values, std::size_t n,
                                                 std::size_t m, std::size_t N) {
  auto t = zeros(n, m, N);
  if (values.size() < static_cast<std::size_t>(t.x.size() + t.u.size()))
    throw std::invalid_argument("too few values for trajectory");
  std::copy(values.begin(), values.begin() + t.x.size(), t.x.data());
  std::copy(values.begin() + t.x.size(), values.begin() + t.x.size() + t.u.size(), t.u.data());
  return t;
}

bool DiscreteTrajectory::same_shape(const DiscreteTrajectory& other) const {
  return x.rows() == other.x.rows() && x.cols() == other.x.cols() && u.rows() == other.u.rows() &&
         u.cols() == other.u.cols();
}

DiscreteTrajectory DiscreteTrajectory::operator-(const DiscreteTrajectory& other) const {
  if (!same_shape(other)) throw std::invalid_argument("trajectory shapes differ");
  return DiscreteTrajectory{x - other.x, u - other.u};
}

DiscreteTrajectory DiscreteTrajectory::operator+(const DiscreteTrajectory& other) const {
  if (!same_shape(other)) throw std::invalid_argument("trajectory shapes differ");
  return DiscreteTrajectory{x + other.x, u + other.u};
}

DiscreteTrajectory DiscreteTrajectory::scaled(double factor) const {
  return DiscreteTrajectory{factor * x, factor * u};
}

RowMatrix forward_diff(const DiscreteTrajectory& traj, const Grid& grid) {
  const Eigen::Index N = static_cast<Eigen::Index>(grid.N);
  if (traj.x.rows() != N + 1) throw std::invalid_argument("trajectory does not match grid");
  return (traj.x.bottomRows(N) - traj.x.topRows(N)) / grid.h;
}

double riemann_sum(std::span<const double> values, const Grid& grid) {
  if (values.size() != grid.N)
    throw std::invalid_argument(fmt::format("riemann_sum needs {} values, got {}", grid.N, values.size()));
  double s = 0.0;
  for (double v : values) s += v;
  return grid.h * s;
}

double l2_norm_sq(const DiscreteTrajectory& diff, const Grid& grid) {
  const Eigen::Index N = static_cast<Eigen::Index>(grid.N);
  if (diff.x.rows() != N + 1 || diff.u.rows() != N)
    throw std::invalid_argument("trajectory does not match grid");
  return grid.h * (diff.x.topRows(N).squaredNorm() + diff.u.squaredNorm());
}

void check_shape(const DiscreteTrajectory& traj, std::size_t n, std::size_t m, const Grid& grid) {
  if (traj.x.rows() != static_cast<Eigen::Index>(grid.N + 1) || traj.x.cols() != static_cast<Eigen::Index>(n) ||
      traj.u.rows() != static_cast<Eigen::Index>(grid.N) || traj.u.cols() != static_cast<Eigen::Index>(m))
    throw std::invalid_argument(fmt::format("trajectory shape {}x{} / {}x{} does not match n={}, m={}, N={}",
                                            traj.x.rows(), traj.x.cols(), traj.u.rows(), traj.u.cols(), n,
                                            m, grid.N));
}

void write_trajectory_csv(std::ostream& out, const DiscreteTrajectory& traj, const Grid& grid) {
  out << "t";
  for (std::size_t i = 0; i < traj.n(); ++i) out << ",x" << i + 1;
  for (std::size_t c = 0; c < traj.m(); ++c) out << ",u" << c + 1;
  out << "\n";
  for (std::size_t j = 0; j <= grid.N; ++j) {
    out << fmt::format("{:.17g}", grid.node(j));
    for (std::size_t i = 0; i < traj.n(); ++i)
      out << fmt::format(",{:.17g}", traj.x(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)));
    for (std::size_t c = 0; c < traj.m(); ++c) {
      out << ",";
      if (j < grid.N) out << fmt::format("{:.17g}", traj.u(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c)));
    }
    out << "\n";
  }
}

}  // namespace bstep

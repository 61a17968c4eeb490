#include "bstep/penalty.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace bstep {

void PenaltyConfig::check() const {
  if (!(c0 > 0.0)) throw std::invalid_argument("c0 must be positive");
  if (!(c_max >= c0)) throw std::invalid_argument("c_max must be at least c0");
  if (!(rho > 1.0)) throw std::invalid_argument("rho must exceed 1");
}

namespace {

double dot_diff(const double* g, const std::vector<double>& y, const std::vector<double>& ybar) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += g[i] * (y[i] - ybar[i]);
  return s;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void check_inputs(const DiscreteTrajectory& traj, const ProblemSpec& spec, const Grid& grid) {
  check_shape(traj, spec.n, spec.m, grid);
}

}  // namespace

double eval_J(const DiscreteTrajectory& traj, const ProblemSpec& spec, const Grid& grid) {
  check_inputs(traj, spec, grid);
  std::vector<double> vals(grid.N);
  for (std::size_t j = 0; j < grid.N; ++j) vals[j] = eval(spec.running_cost, traj.sample(j), j);
  return riemann_sum(vals, grid) + eval(spec.terminal_cost, traj.endpoints());
}

double control_box_term(const DiscreteTrajectory& traj, const ProblemSpec& spec, const Grid& grid,
                        const PenaltyConfig& cfg) {
  if (cfg.control_box_mode == ControlBoxMode::kInX0 || !spec.control_bounds) return 0.0;
  const auto& box = *spec.control_bounds;
  const Eigen::Index N = traj.u.rows();
  if (cfg.control_box_mode == ControlBoxMode::kPenalizeL1) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < N; ++j)
      for (std::size_t c = 0; c < spec.m; ++c) {
        const double u = traj.u(j, static_cast<Eigen::Index>(c));
        s += std::max({u - box.upper[c], 0.0, box.lower[c] - u});
      }
    return grid.h * s;
  }
  double worst = 0.0;
  for (Eigen::Index j = 0; j < N; ++j)
    for (std::size_t c = 0; c < spec.m; ++c) {
      const double u = traj.u(j, static_cast<Eigen::Index>(c));
      worst = std::max({worst, u - box.upper[c], box.lower[c] - u});
    }
  return worst;
}

double eval_phi(const DiscreteTrajectory& traj, const ProblemSpec& spec, const Grid& grid,
                const PenaltyConfig& cfg) {
  check_inputs(traj, spec, grid);
  const RowMatrix xdot = forward_diff(traj, grid);
  double integral = 0.0;
  for (std::size_t j = 0; j < grid.N; ++j) {
    const auto y = traj.sample(j);
    for (std::size_t i = 0; i < spec.n; ++i) {
      if (!spec.dynamics[i]) continue;
      integral += std::abs(xdot(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) -
                           eval(*spec.dynamics[i], y, j));
    }
    for (const auto& mix : spec.mixed) integral += std::max(0.0, eval(mix, y, j));
  }
  double total = grid.h * integral;
  const auto e = traj.endpoints();
  for (const auto& f : spec.endpoint_ineq) total += std::max(0.0, eval(f, e));
  for (const auto& f : spec.endpoint_eq) total += std::abs(eval(f, e));
  total += control_box_term(traj, spec, grid, cfg);
  return total;
}

double eval_Phi(const DiscreteTrajectory& traj, const ProblemSpec& spec, const Grid& grid,
                const PenaltyConfig& cfg, double c) {
  if (!(c > 0.0)) throw std::invalid_argument("penalty parameter must be positive");
  return eval_J(traj, spec, grid) + c * eval_phi(traj, spec, grid, cfg);
}

SubgradientBundle collect_subgradients(const DiscreteTrajectory& base, const ProblemSpec& spec,
                                       const Grid& grid, const PenaltyConfig& cfg) {
  check_inputs(base, spec, grid);
  cfg.check();
  const std::size_t n = spec.n, m = spec.m, N = grid.N, k = n + m;
  const auto Ni = static_cast<Eigen::Index>(N);
  const auto ki = static_cast<Eigen::Index>(k);
  SubgradientBundle b;
  b.base = base;
  b.V0 = RowMatrix::Zero(Ni, ki);
  b.V.assign(n, RowMatrix());
  b.W.assign(n, RowMatrix());
  b.G_base = RowMatrix::Zero(Ni, static_cast<Eigen::Index>(n));
  b.H_base = RowMatrix::Zero(Ni, static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    if (!spec.dynamics[i]) continue;
    b.V[i] = RowMatrix::Zero(Ni, ki);
    b.W[i] = RowMatrix::Zero(Ni, ki);
  }
  b.z.assign(spec.mixed.size(), RowMatrix::Zero(Ni, ki));
  b.q_base = RowMatrix::Zero(Ni, static_cast<Eigen::Index>(spec.mixed.size()));

  std::vector<double> grad(k);
  double corr_integral = 0.0;
  for (std::size_t j = 0; j < N; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    const auto y = base.sample(j);
    const double h0 = eval_with_subgradient(spec.running_cost.concave_part, y, grad, j);
    std::copy(grad.begin(), grad.end(), b.V0.row(jj).data());
    corr_integral += h0 - dot(grad, y);
    for (std::size_t i = 0; i < n; ++i) {
      if (!spec.dynamics[i]) continue;
      const auto ii = static_cast<Eigen::Index>(i);
      b.H_base(jj, ii) = eval_with_subgradient(spec.dynamics[i]->concave_part, y, grad, j);
      std::copy(grad.begin(), grad.end(), b.V[i].row(jj).data());
      b.G_base(jj, ii) = eval_with_subgradient(spec.dynamics[i]->convex_part, y, grad, j);
      std::copy(grad.begin(), grad.end(), b.W[i].row(jj).data());
    }
    for (std::size_t s = 0; s < spec.mixed.size(); ++s) {
      b.q_base(jj, static_cast<Eigen::Index>(s)) = eval_with_subgradient(spec.mixed[s].concave_part, y, grad, j);
      std::copy(grad.begin(), grad.end(), b.z[s].row(jj).data());
    }
  }
  const auto e = base.endpoints();
  std::vector<double> eg(2 * n);
  const double h0e = eval_with_subgradient(spec.terminal_cost.concave_part, e, eg);
  b.v0 = eg;
  b.correction = grid.h * corr_integral + h0e - dot(eg, e);
  for (const auto& f : spec.endpoint_ineq) {
    b.h_ineq_base.push_back(eval_with_subgradient(f.concave_part, e, eg));
    b.v_ineq.push_back(eg);
  }
  for (const auto& f : spec.endpoint_eq) {
    b.h_eq_base.push_back(eval_with_subgradient(f.concave_part, e, eg));
    b.v_eq.push_back(eg);
    b.g_eq_base.push_back(eval_with_subgradient(f.convex_part, e, eg));
    b.w_eq.push_back(eg);
  }
  return b;
}

double eval_omega(const DiscreteTrajectory& traj, const SubgradientBundle& bundle, const ProblemSpec& spec,
                  const Grid& grid) {
  check_inputs(traj, spec, grid);
  double integral = 0.0;
  for (std::size_t j = 0; j < grid.N; ++j) {
    const auto y = traj.sample(j);
    double lin = 0.0;
    const double* v = bundle.V0.row(static_cast<Eigen::Index>(j)).data();
    for (std::size_t i = 0; i < y.size(); ++i) lin += v[i] * y[i];
    integral += eval(spec.running_cost.convex_part, y, j) - lin;
  }
  const auto e = traj.endpoints();
  return grid.h * integral + eval(spec.terminal_cost.convex_part, e) - dot(bundle.v0, e);
}

double eval_Gamma(const DiscreteTrajectory& traj, const SubgradientBundle& bundle, const ProblemSpec& spec,
                  const Grid& grid, const PenaltyConfig& cfg) {
  check_inputs(traj, spec, grid);
  const RowMatrix xdot = forward_diff(traj, grid);
  double integral = 0.0;
  for (std::size_t j = 0; j < grid.N; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    const auto y = traj.sample(j);
    const auto ybar = bundle.base.sample(j);
    for (std::size_t i = 0; i < spec.n; ++i) {
      if (!spec.dynamics[i]) continue;
      const auto ii = static_cast<Eigen::Index>(i);
      const double d = xdot(jj, ii);
      const double up = d + eval(spec.dynamics[i]->concave_part, y, j) - bundle.G_base(jj, ii) -
                        dot_diff(bundle.W[i].row(jj).data(), y, ybar);
      const double down = -d + eval(spec.dynamics[i]->convex_part, y, j) - bundle.H_base(jj, ii) -
                          dot_diff(bundle.V[i].row(jj).data(), y, ybar);
      integral += std::max(up, down);
    }
    for (std::size_t s = 0; s < spec.mixed.size(); ++s) {
      const double v = eval(spec.mixed[s].convex_part, y, j) - bundle.q_base(jj, static_cast<Eigen::Index>(s)) -
                       dot_diff(bundle.z[s].row(jj).data(), y, ybar);
      integral += std::max(0.0, v);
    }
  }
  double total = grid.h * integral;
  const auto e = traj.endpoints();
  const auto ebar = bundle.base.endpoints();
  for (std::size_t i = 0; i < spec.endpoint_ineq.size(); ++i) {
    const double v = eval(spec.endpoint_ineq[i].convex_part, e) - bundle.h_ineq_base[i] -
                     dot_diff(bundle.v_ineq[i].data(), e, ebar);
    total += std::max(0.0, v);
  }
  for (std::size_t i = 0; i < spec.endpoint_eq.size(); ++i) {
    const double up = eval(spec.endpoint_eq[i].convex_part, e) - bundle.h_eq_base[i] -
                      dot_diff(bundle.v_eq[i].data(), e, ebar);
    const double down = eval(spec.endpoint_eq[i].concave_part, e) - bundle.g_eq_base[i] -
                        dot_diff(bundle.w_eq[i].data(), e, ebar);
    total += std::max(up, down);
  }
  total += control_box_term(traj, spec, grid, cfg);
  return total;
}

double eval_Q(const DiscreteTrajectory& traj, const SubgradientBundle& bundle, const ProblemSpec& spec,
              const Grid& grid, const PenaltyConfig& cfg, double c) {
  if (!(c > 0.0)) throw std::invalid_argument("penalty parameter must be positive");
  return eval_omega(traj, bundle, spec, grid) + c * eval_Gamma(traj, bundle, spec, grid, cfg);
}

}  // namespace bstep

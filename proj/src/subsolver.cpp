#include "bstep/subsolver.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <fmt/format.h>

namespace bstep {

std::string status_name(SubproblemStatus status) {
  switch (status) {
    case SubproblemStatus::kOptimal: return "optimal";
    case SubproblemStatus::kEpsOptimal: return "eps_optimal";
    case SubproblemStatus::kMaxIter: return "max_iter";
    case SubproblemStatus::kInfeasibleBaseSet: return "infeasible_base_set";
  }
  return "?";
}

namespace {

struct Layout {
  std::size_t n, m, N;
  int x(std::size_t j, std::size_t i) const { return static_cast<int>(DiscreteTrajectory::state_index(n, j, i)); }
  int u(std::size_t j, std::size_t c) const {
    return static_cast<int>(DiscreteTrajectory::control_index(n, m, N, j, c));
  }
  std::vector<LinearForm> sample(std::size_t j) const {
    std::vector<LinearForm> args;
    for (std::size_t i = 0; i < n; ++i) args.push_back(LinearForm::variable(x(j, i)));
    for (std::size_t c = 0; c < m; ++c) args.push_back(LinearForm::variable(u(j, c)));
    return args;
  }
  std::vector<LinearForm> endpoints() const {
    std::vector<LinearForm> args;
    for (std::size_t i = 0; i < n; ++i) args.push_back(LinearForm::variable(x(0, i)));
    for (std::size_t i = 0; i < n; ++i) args.push_back(LinearForm::variable(x(N, i)));
    return args;
  }
};

// sum_k g_k (args_k - point_k)
LinearForm linear_increment(const double* g, const std::vector<LinearForm>& args, const std::vector<double>& point) {
  LinearForm out;
  for (std::size_t k = 0; k < args.size(); ++k) {
    if (g[k] == 0.0) continue;
    out += g[k] * args[k];
    out += -g[k] * point[k];
  }
  return out;
}

}  // namespace

ConvexProgram build_subproblem(const SubgradientBundle& bundle, const ProblemSpec& spec, const X0Spec& base_set,
                               const Grid& grid, const PenaltyConfig& cfg, double omega_weight,
                               double gamma_weight) {
  const Layout L{spec.n, spec.m, grid.N};
  ProgramBuilder b;
  b.add_primary(static_cast<int>((grid.N + 1) * spec.n + grid.N * spec.m));

  // X0
  if (base_set.control_box)
    for (std::size_t j = 0; j < grid.N; ++j)
      for (std::size_t c = 0; c < spec.m; ++c)
        b.set_bounds(L.u(j, c), base_set.control_box->lower[c], base_set.control_box->upper[c]);
  for (std::size_t i = 0; i < base_set.fixed_initial_state.size(); ++i)
    if (base_set.fixed_initial_state[i])
      b.add_equality(LinearForm::variable(L.x(0, i)) + LinearForm::constant_form(-*base_set.fixed_initial_state[i]));
  for (std::size_t i = 0; i < base_set.fixed_terminal_state.size(); ++i)
    if (base_set.fixed_terminal_state[i])
      b.add_equality(LinearForm::variable(L.x(grid.N, i)) +
                     LinearForm::constant_form(-*base_set.fixed_terminal_state[i]));
  for (const auto& row : base_set.linear_dynamics) {
    for (std::size_t j = 0; j < grid.N; ++j) {
      const auto args = L.sample(j);
      LinearForm eq = LinearForm::variable(L.x(j + 1, row.row)) - LinearForm::variable(L.x(j, row.row));
      eq -= grid.h * reduce_epigraph(row.rhs, args, b, j).linear();
      b.add_equality(eq);
    }
  }

  const auto ebar = bundle.base.endpoints();
  const auto eargs = L.endpoints();

  if (omega_weight > 0.0) {
    const double w = omega_weight * grid.h;
    for (std::size_t j = 0; j < grid.N; ++j) {
      const auto args = L.sample(j);
      add_to_objective(spec.running_cost.convex_part, w, args, b, j);
      const double* v = bundle.V0.row(static_cast<Eigen::Index>(j)).data();
      for (std::size_t k = 0; k < args.size(); ++k)
        if (v[k] != 0.0) b.add_linear_objective(args[k], -w * v[k]);
    }
    add_to_objective(spec.terminal_cost.convex_part, omega_weight, eargs, b);
    for (std::size_t k = 0; k < eargs.size(); ++k)
      if (bundle.v0[k] != 0.0) b.add_linear_objective(eargs[k], -omega_weight * bundle.v0[k]);
  }

  if (gamma_weight > 0.0) {
    const double w = gamma_weight * grid.h;
    for (std::size_t j = 0; j < grid.N; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      const auto args = L.sample(j);
      const auto ybar = bundle.base.sample(j);
      for (std::size_t i = 0; i < spec.n; ++i) {
        if (!spec.dynamics[i]) continue;
        const auto ii = static_cast<Eigen::Index>(i);
        const LinearForm xdot =
            (1.0 / grid.h) * (LinearForm::variable(L.x(j + 1, i)) - LinearForm::variable(L.x(j, i)));
        QuadForm up = xdot + reduce_epigraph(spec.dynamics[i]->concave_part, args, b, j);
        up += -bundle.G_base(jj, ii);
        up -= linear_increment(bundle.W[i].row(jj).data(), args, ybar);
        QuadForm down = -1.0 * xdot + reduce_epigraph(spec.dynamics[i]->convex_part, args, b, j);
        down += -bundle.H_base(jj, ii);
        down -= linear_increment(bundle.V[i].row(jj).data(), args, ybar);
        const int t = b.add_epigraph_variable({up, down});
        b.add_linear_objective(LinearForm::variable(t), w);
      }
      for (std::size_t s = 0; s < spec.mixed.size(); ++s) {
        QuadForm v = reduce_epigraph(spec.mixed[s].convex_part, args, b, j);
        v += -bundle.q_base(jj, static_cast<Eigen::Index>(s));
        v -= linear_increment(bundle.z[s].row(jj).data(), args, ybar);
        const int t = b.add_epigraph_variable({LinearForm{}, v});
        b.add_linear_objective(LinearForm::variable(t), w);
      }
    }
    for (std::size_t i = 0; i < spec.endpoint_ineq.size(); ++i) {
      QuadForm v = reduce_epigraph(spec.endpoint_ineq[i].convex_part, eargs, b);
      v += -bundle.h_ineq_base[i];
      v -= linear_increment(bundle.v_ineq[i].data(), eargs, ebar);
      const int t = b.add_epigraph_variable({LinearForm{}, v});
      b.add_linear_objective(LinearForm::variable(t), gamma_weight);
    }
    for (std::size_t i = 0; i < spec.endpoint_eq.size(); ++i) {
      QuadForm up = reduce_epigraph(spec.endpoint_eq[i].convex_part, eargs, b);
      up += -bundle.h_eq_base[i];
      up -= linear_increment(bundle.v_eq[i].data(), eargs, ebar);
      QuadForm down = reduce_epigraph(spec.endpoint_eq[i].concave_part, eargs, b);
      down += -bundle.g_eq_base[i];
      down -= linear_increment(bundle.w_eq[i].data(), eargs, ebar);
      const int t = b.add_epigraph_variable({up, down});
      b.add_linear_objective(LinearForm::variable(t), gamma_weight);
    }
    if (cfg.control_box_mode != ControlBoxMode::kInX0 && spec.control_bounds) {
      const auto& box = *spec.control_bounds;
      if (cfg.control_box_mode == ControlBoxMode::kPenalizeL1) {
        for (std::size_t j = 0; j < grid.N; ++j)
          for (std::size_t c = 0; c < spec.m; ++c) {
            const LinearForm u = LinearForm::variable(L.u(j, c));
            const int t = b.add_epigraph_variable(
                {u + LinearForm::constant_form(-box.upper[c]), LinearForm{}, LinearForm::constant_form(box.lower[c]) - u});
            b.add_linear_objective(LinearForm::variable(t), w);
          }
      } else {
        std::vector<QuadForm> lows{LinearForm{}};
        for (std::size_t j = 0; j < grid.N; ++j)
          for (std::size_t c = 0; c < spec.m; ++c) {
            const LinearForm u = LinearForm::variable(L.u(j, c));
            lows.push_back(u + LinearForm::constant_form(-box.upper[c]));
            lows.push_back(LinearForm::constant_form(box.lower[c]) - u);
          }
        const int t = b.add_epigraph_variable(std::move(lows));
        b.add_linear_objective(LinearForm::variable(t), gamma_weight);
      }
    }
  }
  return b.build();
}

namespace {

constexpr double kCertificateResidual = 1e-6;

template <class Exact>
SubproblemResult solve_program_for(const ConvexProgram& program, const SubgradientBundle& bundle,
                                   const ProblemSpec& spec, const X0Spec& base_set, const Grid& grid,
                                   const SubsolverOptions& opts, Exact&& exact) {
  SubproblemResult result;
  DiscreteTrajectory start;
  try {
    start = project_onto_base(bundle.base, spec, base_set, grid);
  } catch (const std::runtime_error&) {
    result.traj = bundle.base;
    result.status = SubproblemStatus::kInfeasibleBaseSet;
    result.objective = exact(bundle.base);
    return result;
  }
  if (!opts.dump_path.empty()) {
    std::ofstream out(opts.dump_path);
    write_program(out, program);
  }
  IpmOptions ipm;
  ipm.gap_tol = 0.1 * opts.eps;
  ipm.feas_tol = 1e-9;
  ipm.max_iter = opts.max_iter;
  ipm.certificate_feas_tol = kCertificateResidual;
  ipm.trace = opts.trace;
  const auto flat = start.flatten();
  const IpmResult sol = solve_program(program, flat, ipm);
  auto traj = DiscreteTrajectory::unflatten(sol.z, spec.n, spec.m, grid.N);
  traj = project_onto_base(traj, spec, base_set, grid);
  result.traj = traj;
  result.objective = exact(traj);
  result.lower_bound = sol.lower_bound;
  result.certified_gap = std::max(0.0, result.objective - sol.lower_bound);
  result.iterations = sol.iterations;
  result.dual_residual = sol.dual_residual;
  // the Lagrangian bound is only trusted at a near-stationary, near-feasible
  // pair, and it can never exceed the value of a feasible point
  const bool trusted = sol.scaled_dual_residual <= ipm.dual_tol && sol.primal_residual <= kCertificateResidual &&
                       sol.lower_bound <= result.objective + opts.eps;
  result.bound_valid = trusted;
  if (trusted && result.certified_gap <= opts.eps)
    result.status = sol.status == IpmStatus::kOptimal ? SubproblemStatus::kOptimal : SubproblemStatus::kEpsOptimal;
  else
    result.status = SubproblemStatus::kMaxIter;
  return result;
}

void enforce_base_bound(SubproblemResult& result, const SubgradientBundle& bundle, double base_value) {
  if (result.status == SubproblemStatus::kInfeasibleBaseSet) return;
  if (result.objective > base_value) {
    result.traj = bundle.base;
    result.objective = base_value;
    result.certified_gap = std::max(0.0, base_value - result.lower_bound);
    result.replaced_by_base = true;
  }
}

}  // namespace

SubproblemResult solve_Q(const SubgradientBundle& bundle, const ProblemSpec& spec, const X0Spec& base_set,
                         const Grid& grid, const PenaltyConfig& cfg, double c, const SubsolverOptions& opts) {
  if (!(c > 0.0)) throw std::invalid_argument("penalty parameter must be positive");
  if (!(opts.eps > 0.0)) throw std::invalid_argument("subproblem tolerance must be positive");
  const auto program = build_subproblem(bundle, spec, base_set, grid, cfg, 1.0, c);
  auto result = solve_program_for(program, bundle, spec, base_set, grid, opts, [&](const DiscreteTrajectory& t) {
    return eval_Q(t, bundle, spec, grid, cfg, c);
  });
  enforce_base_bound(result, bundle, eval_Q(bundle.base, bundle, spec, grid, cfg, c));
  return result;
}

SubproblemResult solve_Gamma(const SubgradientBundle& bundle, const ProblemSpec& spec, const X0Spec& base_set,
                             const Grid& grid, const PenaltyConfig& cfg, const SubsolverOptions& opts) {
  if (!(opts.eps > 0.0)) throw std::invalid_argument("subproblem tolerance must be positive");
  const auto program = build_subproblem(bundle, spec, base_set, grid, cfg, 0.0, 1.0);
  auto result = solve_program_for(program, bundle, spec, base_set, grid, opts, [&](const DiscreteTrajectory& t) {
    return eval_Gamma(t, bundle, spec, grid, cfg);
  });
  enforce_base_bound(result, bundle, eval_Gamma(bundle.base, bundle, spec, grid, cfg));
  return result;
}

}  // namespace bstep

#include "bstep/train.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace bstep::train {

namespace {

constexpr std::size_t kArity = 3;  // (x1, x2, u)

ConvexExpr x1(double coeff = 1.0, double offset = 0.0) { return ConvexExpr::coordinate(kArity, 0, coeff, offset); }
ConvexExpr x2(double coeff = 1.0, double offset = 0.0) { return ConvexExpr::coordinate(kArity, 1, coeff, offset); }
ConvexExpr u(double coeff = 1.0, double offset = 0.0) { return ConvexExpr::coordinate(kArity, 2, coeff, offset); }
ConvexExpr pos(ConvexExpr e) { return ConvexExpr::positive_part(std::move(e)); }
ConvexExpr half_square(ConvexExpr e) { return ConvexExpr::scaled(0.5, ConvexExpr::square(std::move(e))); }

ConvexExpr upper_envelope() {
  return ConvexExpr::max_of({x1(-0.3, 7.0 + 27.0), ConvexExpr::constant(kArity, 4.0), x1(0.3, 4.0 - 36.0)});
}

ProblemSpec base_spec() {
  ProblemSpec spec;
  spec.n = 2;
  spec.m = 1;
  spec.T = kHorizon;
  spec.running_cost = cost_pair();
  spec.terminal_cost = {ConvexExpr::constant(4, 0.0), ConvexExpr::constant(4, 0.0)};
  spec.dynamics = {std::nullopt, acceleration_pair()};
  spec.mixed = {speed_pair()};
  return spec;
}

ControlBounds box() { return {{-kUMax}, {kUMax}}; }

SolverConfig default_solver() {
  SolverConfig s;
  s.eta1 = 0.1;
  s.eta2 = 0.1;
  s.sigma = 0.1;
  s.zeta = 0.5;
  s.eps_phi = 0.1;
  s.eps_feas = 0.01;
  s.eps_f = 1e-3;
  s.nu.kind = NuStrategy::Kind::kS3;
  s.nu.gamma0 = 0.1;
  s.trial.kind = TrialStep::Kind::kSelfAdaptive;
  s.trial.gamma = 0.5;
  s.trial.alpha = 1.0;
  s.stopping = StoppingRule::kCriterion1;
  return s;
}

}  // namespace

const std::vector<std::string>& variants() {
  static const std::vector<std::string> names{"step0", "step_l1", "bstep_l1", "step_linf", "bstep_linf"};
  return names;
}

double cost_integrand(double v, double w) { return v * std::max(w, 0.0); }
double drag(double v) { return v * std::abs(v); }
double acceleration(double v, double w) { return w - kP * drag(v) - kQ * v; }

double speed_limit(double s) {
  return std::min(7.0, std::max({7.0 - 0.3 * (s - 90.0), 4.0, 4.0 + 0.3 * (s - 120.0)}));
}

DCPair cost_pair() {
  // x2 [u]+ = ((a + b)^2 + c^2 - (c + b)^2 - a^2) / 2 with a = [x2]+, b = [u]+, c = [-x2]+
  ConvexExpr g = ConvexExpr::sum({half_square(ConvexExpr::sum({pos(x2()), pos(u())})), half_square(pos(x2(-1.0)))});
  ConvexExpr h = ConvexExpr::sum({half_square(ConvexExpr::sum({pos(x2(-1.0)), pos(u())})), half_square(pos(x2()))});
  return {g, h};
}

DCPair acceleration_pair() {
  // x2 |x2| = [x2]+^2 - [-x2]+^2
  ConvexExpr g = ConvexExpr::sum(
      {ConvexExpr::affine({0.0, -kQ, 1.0}, 0.0), ConvexExpr::scaled(kP, ConvexExpr::square(pos(x2(-1.0))))});
  ConvexExpr h = ConvexExpr::scaled(kP, ConvexExpr::square(pos(x2())));
  return {g, h};
}

DCPair speed_pair() {
  // min{7, M} = M - max{0, M - 7}
  ConvexExpr excess = ConvexExpr::max_of({ConvexExpr::constant(kArity, 0.0), x1(-0.3, 27.0), x1(0.3, -3.0 - 36.0)});
  return {ConvexExpr::sum({x2(), excess}), upper_envelope()};
}

Instance build(const std::string& variant, std::size_t N) {
  const auto& names = variants();
  if (std::find(names.begin(), names.end(), variant) == names.end())
    throw std::invalid_argument(fmt::format("unknown train variant '{}'", variant));
  if (N < 2) throw std::invalid_argument("grid needs at least 2 intervals");
  Instance inst{variant, base_spec(), {}, {}, default_solver(), Grid(kHorizon, N), {}};
  inst.base.fixed_initial_state = {0.0, 0.0};
  inst.base.fixed_terminal_state = {kDistance, 0.0};
  inst.base.linear_dynamics = {{0, x2()}};
  if (variant == "step0") {
    inst.base.control_box = box();
    inst.penalty.control_box_mode = ControlBoxMode::kInX0;
  } else {
    inst.spec.control_bounds = box();
    inst.penalty.control_box_mode =
        variant.ends_with("l1") ? ControlBoxMode::kPenalizeL1 : ControlBoxMode::kPenalizeLinf;
  }
  if (!variant.starts_with("bstep")) {
    inst.solver.trial.kind = TrialStep::Kind::kConstant;
    inst.solver.trial.alpha = 0.0;
  }
  inst.initial = DiscreteTrajectory::zeros(2, 1, N);
  return inst;
}

Instance build_fully_penalized(std::size_t N) {
  Instance inst = build("bstep_l1", N);
  inst.variant = "fully_penalized";
  inst.base = X0Spec{};
  inst.spec.dynamics[0] = DCPair{x2(), ConvexExpr::constant(kArity, 0.0)};
  const auto endpoint = [](std::size_t i, double target) {
    std::vector<double> a(4, 0.0);
    a[i] = 1.0;
    return DCPair{ConvexExpr::affine(a, -target), ConvexExpr::constant(4, 0.0)};
  };
  inst.spec.endpoint_eq = {endpoint(0, 0.0), endpoint(1, 0.0), endpoint(2, kDistance), endpoint(3, 0.0)};
  return inst;
}

namespace {

// Largest speed at position s from which full braking keeps below the limit
// (less margin) for the rest of the way and stops at the destination.
double braking_envelope(double s, double margin) {
  const double decel = 0.9 * kUMax;
  double best = std::sqrt(2.0 * decel * std::max(0.0, kDistance - s));
  for (double ahead = s; ahead < kDistance; ahead += 0.5) {
    const double cap = std::max(0.0, speed_limit(ahead) - margin);
    best = std::min(best, std::sqrt(cap * cap + 2.0 * decel * (ahead - s)));
  }
  return best;
}

}  // namespace

DiscreteTrajectory warm_start(const Grid& grid, double margin) {
  DiscreteTrajectory t = DiscreteTrajectory::zeros(2, 1, grid.N);
  double s = 0.0, v = 0.0;
  for (std::size_t j = 0; j < grid.N; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    t.x(jj, 0) = s;
    t.x(jj, 1) = v;
    const double target = braking_envelope(s + v * grid.h, margin);
    const double w = std::clamp((target - v) / grid.h + kP * drag(v) + kQ * v, -kUMax, kUMax);
    t.u(jj, 0) = w;
    s += grid.h * v;
    v = std::max(0.0, v + grid.h * acceleration(v, w));
  }
  const auto N = static_cast<Eigen::Index>(grid.N);
  t.x(N, 0) = s;
  t.x(N, 1) = v;
  return t;
}

}  // namespace bstep::train

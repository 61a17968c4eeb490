#include <cmath>

#include <gtest/gtest.h>

#include "bstep/criticality.hpp"
#include "bstep/driver.hpp"
#include "instances.hpp"

using namespace bstep;
using bstep::testing::from_controls;
using bstep::testing::grid_minimum;
using bstep::testing::two_node;

TEST(Criticality, GapMatchesBruteForceOnTwoNodes) {
  const auto in = two_node();
  ASSERT_TRUE(validate(in.spec, in.base).empty());
  const Grid g(1.0, 2);
  const double c = 10.0;
  for (auto [u0, u1] : {std::pair{0.3, -0.5}, std::pair{1.5, 1.9}, std::pair{-2.0, 0.0}}) {
    const auto cand = from_controls(u0, u1, g);
    ASSERT_LT(base_violation(cand, in.spec, in.base, g), 1e-12);
    const auto report = verify_criticality(cand, in.spec, in.base, g, in.penalty, c, 1e-6);
    const auto bundle = collect_subgradients(cand, in.spec, g, in.penalty);
    const double q_cand = eval_Q(cand, bundle, in.spec, g, in.penalty, c);
    const double q_min = grid_minimum([&](double a, double b) {
      return eval_Q(from_controls(a, b, g), bundle, in.spec, g, in.penalty, c);
    });
    EXPECT_NEAR(report.Q_gap, q_cand - q_min, 1e-4) << u0 << ' ' << u1;
    const double g_min = grid_minimum([&](double a, double b) {
      return eval_Gamma(from_controls(a, b, g), bundle, in.spec, g, in.penalty);
    });
    EXPECT_NEAR(report.Gamma_gap, eval_Gamma(cand, bundle, in.spec, g, in.penalty) - g_min, 1e-4);
  }
}

TEST(Criticality, FeasiblePointIsPenaltyTermCritical) {
  const auto in = bstep::testing::scalar_dc();
  const Grid g(1.0, 10);
  auto t = DiscreteTrajectory::zeros(1, 1, 10);
  for (std::size_t j = 0; j <= 10; ++j) t.x(j, 0) = g.node(j);
  for (std::size_t j = 0; j < 10; ++j) t.u(j, 0) = 1.0 + t.x(j, 0) * t.x(j, 0);
  const auto r = verify_criticality(t, in.spec, in.base, g, in.penalty, 10.0, 1e-6);
  EXPECT_LT(r.phi_value, 1e-12);
  EXPECT_NEAR(r.Gamma_gap, 0.0, 1e-6);
  EXPECT_GT(r.Q_gap, 1e-3);
  EXPECT_EQ(r.verdict, Verdict::kPenaltyTermCritical);
}

TEST(Criticality, ConvexMinimizerIsEpsCritical) {
  const auto in = bstep::testing::lq_toy();
  const Grid g(1.0, 16);
  const auto start = project_onto_base(DiscreteTrajectory::zeros(1, 1, 16), in.spec, in.base, g);
  SubsolverOptions o;
  o.eps = 1e-10;
  const auto opt = solve_Q(collect_subgradients(start, in.spec, g, in.penalty), in.spec, in.base, g, in.penalty,
                           10.0, o);
  const auto r = verify_criticality(opt.traj, in.spec, in.base, g, in.penalty, 10.0, 1e-8);
  EXPECT_EQ(r.verdict, Verdict::kEpsCritical);
  EXPECT_LE(r.Q_gap, 1e-8);
  // a looser tolerance keeps the verdict
  EXPECT_EQ(verify_criticality(opt.traj, in.spec, in.base, g, in.penalty, 10.0, 1e-3).verdict,
            Verdict::kEpsCritical);
}

TEST(Criticality, DriverTerminalPointIsGeneralizedCritical) {
  const auto in = bstep::testing::scalar_dc(2.0);
  const Grid g(2.0, 20);
  SolverConfig scfg;
  const auto s = run(in.spec, in.base, g, in.penalty, scfg, DiscreteTrajectory::zeros(1, 1, 20));
  ASSERT_EQ(s.termination, Termination::kConverged);
  const double eps = scfg.eps_f + scfg.eps_sub;
  const auto r = verify_criticality(s.traj, in.spec, in.base, g, in.penalty, s.c, eps);
  EXPECT_TRUE(r.verdict == Verdict::kEpsCritical || r.verdict == Verdict::kGeneralizedEpsCritical)
      << verdict_name(r.verdict) << " gap " << r.Q_gap;
}

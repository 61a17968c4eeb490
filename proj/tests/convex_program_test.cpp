#include <cmath>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "bstep/convex_program.hpp"

using bstep::LinearForm;
using bstep::ProgramBuilder;

TEST(ConvexProgram, EqualityConstrainedQuadratic) {
  // min x^2 + y^2 s.t. x + y = 2  ->  (1, 1), value 2
  ProgramBuilder b;
  const int x = b.add_primary(2);
  b.add_square_objective(LinearForm::variable(x), 1.0);
  b.add_square_objective(LinearForm::variable(x + 1), 1.0);
  b.add_equality(LinearForm::variable(x) + LinearForm::variable(x + 1) + LinearForm::constant_form(-2.0));
  const auto p = b.build();
  const auto res = bstep::solve_program(p, std::vector<double>{0.0, 0.0});
  EXPECT_EQ(res.status, bstep::IpmStatus::kOptimal);
  EXPECT_NEAR(res.z[0], 1.0, 1e-7);
  EXPECT_NEAR(res.z[1], 1.0, 1e-7);
  EXPECT_NEAR(res.objective, 2.0, 1e-7);
}

TEST(ConvexProgram, BoxedLinearProgram) {
  // min -x - 2y + 4 [x + y - 1.5]+ over the unit box  ->  (0.5, 1), value -2.5
  ProgramBuilder b;
  const int x = b.add_primary(2);
  b.set_bounds(x, 0.0, 1.0);
  b.set_bounds(x + 1, 0.0, 1.0);
  // exact penalty for x + y <= 1.5
  const int t = b.add_epigraph_variable(
      {LinearForm{}, LinearForm::variable(x) + LinearForm::variable(x + 1) + LinearForm::constant_form(-1.5)});
  b.add_linear_objective(LinearForm::variable(t), 4.0);
  b.add_linear_objective(LinearForm::variable(x), -1.0);
  b.add_linear_objective(LinearForm::variable(x + 1), -2.0);
  const auto p = b.build();
  const auto res = bstep::solve_program(p, std::vector<double>{0.0, 0.0});
  EXPECT_EQ(res.status, bstep::IpmStatus::kOptimal);
  EXPECT_NEAR(res.objective, -2.5, 1e-7);
  EXPECT_LE(res.gap, 1e-8);
}

TEST(ConvexProgram, QuadraticRowsAndGapBound) {
  // min w - 2x with w >= x^2  ->  x = 1, value -1
  ProgramBuilder b;
  const int x = b.add_primary(1);
  const int w = b.add_epigraph_variable({});
  b.add_square_lower_bound(w, x, 1.0);
  b.add_linear_objective(LinearForm::variable(w), 1.0);
  b.add_linear_objective(LinearForm::variable(x), -2.0);
  const auto p = b.build();
  const auto res = bstep::solve_program(p, std::vector<double>{5.0});
  EXPECT_EQ(res.status, bstep::IpmStatus::kOptimal);
  EXPECT_NEAR(res.z[0], 1.0, 1e-4);
  EXPECT_NEAR(res.objective, -1.0, 1e-8);
  EXPECT_LE(res.objective - res.gap, -1.0 + 1e-12);
}

TEST(ConvexProgram, InitialPointIsStrictlyFeasible) {
  ProgramBuilder b;
  const int x = b.add_primary(1);
  b.set_bounds(x, 0.0, 1.0);
  const int s = b.add_epigraph_variable({LinearForm::variable(x) + LinearForm::constant_form(3.0), LinearForm{}});
  const int w = b.add_epigraph_variable({});
  b.add_square_lower_bound(w, s, 2.0);
  const auto p = b.build();
  const auto z = bstep::initial_point(p, std::vector<double>{7.0}, 1.0);
  EXPECT_GT(z[static_cast<std::size_t>(x)], 0.0);
  EXPECT_LT(z[static_cast<std::size_t>(x)], 1.0);
  EXPECT_GT(z[static_cast<std::size_t>(s)], z[static_cast<std::size_t>(x)] + 3.0);
  EXPECT_GT(z[static_cast<std::size_t>(w)], 2.0 * z[static_cast<std::size_t>(s)] * z[static_cast<std::size_t>(s)]);
}

TEST(ConvexProgram, DumpListsEveryBlock) {
  ProgramBuilder b;
  const int x = b.add_primary(1);
  b.set_bounds(x, -1.0, 1.0);
  b.add_square_objective(LinearForm::variable(x), 1.0);
  const int w = b.add_epigraph_variable({LinearForm::variable(x)});
  b.add_square_lower_bound(w, x, 1.0);
  b.add_equality(LinearForm::variable(w) + LinearForm::constant_form(-0.5));
  std::ostringstream os;
  bstep::write_program(os, b.build());
  const std::string text = os.str();
  for (const char* key : {"# vars", "P 0 0", "ineq 0", "0^2:1", "eq 0", "bounds 0"})
    EXPECT_NE(text.find(key), std::string::npos) << key;
}

#include <cmath>
#include <functional>
#include <vector>

#include <gtest/gtest.h>

#include "bstep/convex_program.hpp"
#include "bstep/expr.hpp"
#include "random_expr.hpp"

using bstep::ConvexExpr;
using bstep::ExprError;

namespace {

ConvexExpr x_of(std::size_t arity, std::size_t i) { return ConvexExpr::coordinate(arity, i); }

// Minimum of a convex function on [lo, hi] by ternary search.
double ternary_min(const std::function<double(double)>& f, double lo, double hi) {
  for (int it = 0; it < 200; ++it) {
    const double a = lo + (hi - lo) / 3.0, b = hi - (hi - lo) / 3.0;
    if (f(a) <= f(b))
      hi = b;
    else
      lo = a;
  }
  return f(0.5 * (lo + hi));
}

double reduced_minimum(const ConvexExpr& e, double lo, double hi) {
  bstep::ProgramBuilder builder;
  const int first = builder.add_primary(static_cast<int>(e.arity()));
  std::vector<bstep::LinearForm> args;
  for (std::size_t i = 0; i < e.arity(); ++i) {
    builder.set_bounds(first + static_cast<int>(i), lo, hi);
    args.push_back(bstep::LinearForm::variable(first + static_cast<int>(i)));
  }
  bstep::add_to_objective(e, 1.0, args, builder);
  const auto program = builder.build();
  std::vector<double> start(e.arity(), 0.0);
  bstep::IpmOptions opt;
  opt.gap_tol = 1e-10;
  const auto res = bstep::solve_program(program, start, opt);
  EXPECT_LT(program.max_violation(res.z), 1e-8);
  return res.objective;
}

}  // namespace

TEST(ExprEval, AffineValue) {
  const auto e = ConvexExpr::affine({2.0, -1.0}, 3.0);
  EXPECT_DOUBLE_EQ(bstep::eval(e, std::vector<double>{1.0, 1.0}), 4.0);
}

TEST(ExprEval, PositivePartOfNegative) {
  const auto e = ConvexExpr::positive_part(x_of(1, 0));
  EXPECT_DOUBLE_EQ(bstep::eval(e, std::vector<double>{-5.0}), 0.0);
}

TEST(ExprEval, SquaredSumOfPositiveParts) {
  const auto e = ConvexExpr::square(
      ConvexExpr::sum({ConvexExpr::positive_part(x_of(2, 0)), ConvexExpr::positive_part(x_of(2, 1))}));
  EXPECT_DOUBLE_EQ(bstep::eval(e, std::vector<double>{1.0, 2.0}), 9.0);
}

TEST(ExprEval, DimensionMismatchThrows) {
  const auto e = ConvexExpr::affine({1.0, 1.0}, 0.0);
  EXPECT_THROW(bstep::eval(e, std::vector<double>{1.0}), ExprError);
}

TEST(ExprBuild, RejectsNegativeScaleAndSignedSquare) {
  EXPECT_THROW(ConvexExpr::scaled(-1.0, x_of(1, 0)), ExprError);
  EXPECT_THROW(ConvexExpr::square(x_of(1, 0)), ExprError);
  EXPECT_NO_THROW(ConvexExpr::square(ConvexExpr::max_of({ConvexExpr::constant(1, 0.0), x_of(1, 0)})));
}

TEST(ExprBuild, TimeTableNeedsSample) {
  const auto e = ConvexExpr::affine_table({{1.0}, {2.0}, {3.0}}, {0.0, 0.0, 1.0});
  EXPECT_EQ(e.table_length(), 3u);
  EXPECT_THROW(bstep::eval(e, std::vector<double>{1.0}), ExprError);
  EXPECT_DOUBLE_EQ(bstep::eval(e, std::vector<double>{1.0}, 2), 4.0);
  EXPECT_THROW(bstep::eval(e, std::vector<double>{1.0}, 3), ExprError);
}

TEST(ExprSubgradient, TieBreaksToFirstBranch) {
  const auto e = ConvexExpr::max_of({ConvexExpr::constant(1, 0.0), x_of(1, 0)});
  EXPECT_DOUBLE_EQ(bstep::subgradient(e, std::vector<double>{0.0})[0], 0.0);
  const auto pos = ConvexExpr::positive_part(x_of(1, 0));
  EXPECT_DOUBLE_EQ(bstep::subgradient(pos, std::vector<double>{0.0})[0], 0.0);
}

TEST(ExprSubgradient, SquaredPositivePart) {
  const auto e = ConvexExpr::square(ConvexExpr::positive_part(x_of(1, 0)));
  EXPECT_DOUBLE_EQ(bstep::subgradient(e, std::vector<double>{3.0})[0], 6.0);
}

TEST(ExprSubgradient, SpeedLimitPlateau) {
  const auto e = ConvexExpr::max_of({ConvexExpr::coordinate(1, 0, -0.3, 7.0 + 27.0),
                                     ConvexExpr::constant(1, 4.0),
                                     ConvexExpr::coordinate(1, 0, 0.3, 4.0 - 36.0)});
  const std::vector<double> x{110.0};
  EXPECT_NEAR(bstep::eval(e, x), 4.0, 1e-12);
  EXPECT_DOUBLE_EQ(bstep::subgradient(e, x)[0], 0.0);
}

TEST(ExprSubgradient, RandomInequality) {
  bstep::testing::RandomExpr gen(7);
  int checked = 0;
  for (int t = 0; t < 10000; ++t) {
    const std::size_t arity = static_cast<std::size_t>(gen.pick(1, 3));
    const auto e = gen.expr(arity, 3);
    const auto p = gen.point(arity);
    const auto y = gen.point(arity);
    const auto g = bstep::subgradient(e, p);
    double lin = bstep::eval(e, p);
    for (std::size_t i = 0; i < arity; ++i) lin += g[i] * (y[i] - p[i]);
    const double scale = std::max(1.0, std::abs(bstep::eval(e, y)));
    ASSERT_GE(bstep::eval(e, y) - lin, -1e-12 * scale) << bstep::to_json(e).dump();
    ++checked;
  }
  EXPECT_EQ(checked, 10000);
}

TEST(ExprSubgradient, DeterministicRepeat) {
  bstep::testing::RandomExpr gen(11);
  for (int t = 0; t < 200; ++t) {
    const auto e = gen.expr(2, 3);
    const std::vector<double> p{0.0, 0.0};
    EXPECT_EQ(bstep::subgradient(e, p), bstep::subgradient(e, p));
  }
}

TEST(ExprSubgradient, FiniteDifferenceAtSmoothPoints) {
  bstep::testing::RandomExpr gen(13);
  const double h = 1e-6;
  int compared = 0;
  for (int t = 0; t < 3000 && compared < 1000; ++t) {
    const std::size_t arity = static_cast<std::size_t>(gen.pick(1, 3));
    const auto e = gen.expr(arity, 3);
    const auto p = gen.point(arity);
    const auto g = bstep::subgradient(e, p);
    // smooth where the subgradient is locally constant-to-first-order in every direction
    bool smooth = true;
    for (std::size_t i = 0; i < arity && smooth; ++i) {
      for (double d : {-1e-4, 1e-4}) {
        auto q = p;
        q[i] += d;
        const auto gq = bstep::subgradient(e, q);
        for (std::size_t j = 0; j < arity; ++j)
          if (std::abs(gq[j] - g[j]) > 1e-2 * (1.0 + std::abs(g[j]))) smooth = false;
      }
    }
    if (!smooth) continue;
    for (std::size_t i = 0; i < arity; ++i) {
      auto a = p, b = p;
      a[i] += h;
      b[i] -= h;
      const double fd = (bstep::eval(e, a) - bstep::eval(e, b)) / (2 * h);
      EXPECT_NEAR(fd, g[i], 1e-4);
    }
    ++compared;
  }
  EXPECT_GT(compared, 500);
}

TEST(ExprProperties, ConvexAlongSegments) {
  bstep::testing::RandomExpr gen(17);
  for (int t = 0; t < 2000; ++t) {
    const std::size_t arity = static_cast<std::size_t>(gen.pick(1, 3));
    const auto e = gen.expr(arity, 3);
    const auto a = gen.point(arity), b = gen.point(arity);
    const double lam = gen.uniform(0.0, 1.0);
    std::vector<double> mid(arity);
    for (std::size_t i = 0; i < arity; ++i) mid[i] = lam * a[i] + (1 - lam) * b[i];
    EXPECT_LE(bstep::eval(e, mid), lam * bstep::eval(e, a) + (1 - lam) * bstep::eval(e, b) + 1e-10);
  }
}

TEST(ExprJson, RoundTrip) {
  bstep::testing::RandomExpr gen(19);
  for (int t = 0; t < 200; ++t) {
    const auto e = gen.expr(3, 4);
    const auto back = bstep::expr_from_json(nlohmann::json::parse(bstep::to_json(e).dump()));
    for (int s = 0; s < 5; ++s) {
      const auto p = gen.point(3);
      EXPECT_NEAR(bstep::eval(e, p), bstep::eval(back, p), 1e-12);
    }
  }
  EXPECT_THROW(bstep::expr_from_json(nlohmann::json{{"kind", "exp"}}), ExprError);
  EXPECT_THROW(bstep::expr_from_json(nlohmann::json::parse(R"({"kind":"square","children":[{"kind":"affine","coeffs":[1],"offset":0}]})")),
               ExprError);
}

TEST(ExprEpigraph, MaxBecomesTwoRows) {
  bstep::ProgramBuilder builder;
  const int first = builder.add_primary(2);
  std::vector<bstep::LinearForm> args{bstep::LinearForm::variable(first), bstep::LinearForm::variable(first + 1)};
  const auto t = bstep::reduce_epigraph(ConvexExpr::max_of({x_of(2, 0), x_of(2, 1)}), args, builder);
  const auto program = builder.build();
  EXPECT_EQ(program.num_ineq(), 2);
  EXPECT_EQ(program.num_vars, 3);
  ASSERT_TRUE(t.is_linear());
  EXPECT_EQ(t.lin.terms.size(), 1u);
}

TEST(ExprEpigraph, SquaredPositivePartShape) {
  bstep::ProgramBuilder builder;
  const int first = builder.add_primary(1);
  std::vector<bstep::LinearForm> args{bstep::LinearForm::variable(first)};
  const auto q = bstep::reduce_epigraph(ConvexExpr::square(ConvexExpr::positive_part(x_of(1, 0))), args, builder);
  const auto program = builder.build();
  EXPECT_EQ(program.num_ineq(), 2);  // s >= x, s >= 0
  EXPECT_EQ(program.num_quad(), 0);
  ASSERT_EQ(q.squares.size(), 1u);  // s^2
  EXPECT_EQ(q.squares[0].first, 1);
}

TEST(ExprEpigraph, SquareInsideMaxBoundsTheBranchDirectly) {
  bstep::ProgramBuilder builder;
  const int first = builder.add_primary(1);
  std::vector<bstep::LinearForm> args{bstep::LinearForm::variable(first)};
  const auto e = ConvexExpr::max_of({x_of(1, 0), ConvexExpr::square(ConvexExpr::positive_part(x_of(1, 0)))});
  bstep::reduce_epigraph(e, args, builder);
  const auto program = builder.build();
  EXPECT_EQ(program.num_vars, 3);  // x, s, t
  EXPECT_EQ(program.num_quad(), 1);  // t >= s^2
}

TEST(ExprEpigraph, AbsoluteValueMinimum) {
  const auto e = ConvexExpr::max_of({ConvexExpr::coordinate(1, 0, 1.0, -2.0), ConvexExpr::coordinate(1, 0, -1.0, 2.0)});
  const double grid = ternary_min([&](double x) { return bstep::eval(e, std::vector<double>{x}); }, -10, 10);
  EXPECT_NEAR(grid, 0.0, 1e-9);
  EXPECT_NEAR(reduced_minimum(e, -10.0, 10.0), 0.0, 1e-6);
}

TEST(ExprEpigraph, RandomExactness) {
  bstep::testing::RandomExpr gen(23);
  for (int t = 0; t < 40; ++t) {
    const std::size_t arity = static_cast<std::size_t>(gen.pick(1, 2));
    const auto e = gen.expr(arity, 3);
    double oracle = 0.0;
    if (arity == 1) {
      oracle = ternary_min([&](double x) { return bstep::eval(e, std::vector<double>{x}); }, -2, 2);
    } else {
      oracle = ternary_min(
          [&](double x) {
            return ternary_min([&](double y) { return bstep::eval(e, std::vector<double>{x, y}); }, -2, 2);
          },
          -2, 2);
    }
    EXPECT_NEAR(reduced_minimum(e, -2.0, 2.0), oracle, 1e-6) << bstep::to_json(e).dump();
  }
}

#pragma once

#include <random>
#include <vector>

#include "bstep/expr.hpp"

namespace bstep::testing {

// Random convex PLQ trees of bounded depth.
class RandomExpr {
 public:
  explicit RandomExpr(unsigned seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  int pick(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }

  ConvexExpr affine(std::size_t arity) {
    std::vector<double> a(arity);
    for (auto& v : a) v = uniform(-2.0, 2.0);
    return ConvexExpr::affine(std::move(a), uniform(-1.0, 1.0));
  }

  ConvexExpr nonnegative(std::size_t arity, int depth) {
    switch (pick(0, 2)) {
      case 0: return ConvexExpr::positive_part(expr(arity, depth - 1));
      case 1: return ConvexExpr::max_of({ConvexExpr::constant(arity, 0.0), expr(arity, depth - 1)});
      default:
        return ConvexExpr::sum({ConvexExpr::positive_part(affine(arity)),
                                ConvexExpr::positive_part(affine(arity))});
    }
  }

  ConvexExpr expr(std::size_t arity, int depth) {
    if (depth <= 0) return affine(arity);
    switch (pick(0, 6)) {
      case 0: return affine(arity);
      case 1: {
        std::vector<ConvexExpr> kids;
        const int count = pick(2, 4);
        for (int i = 0; i < count; ++i) kids.push_back(expr(arity, depth - 1));
        return ConvexExpr::max_of(std::move(kids));
      }
      case 2: return ConvexExpr::positive_part(expr(arity, depth - 1));
      case 3: return ConvexExpr::square(nonnegative(arity, depth - 1));
      case 4: return ConvexExpr::scaled(uniform(0.0, 3.0), expr(arity, depth - 1));
      case 5: return ConvexExpr::sum({expr(arity, depth - 1), expr(arity, depth - 1)});
      default: return ConvexExpr::squared_norm({affine(arity), affine(arity)});
    }
  }

  std::vector<double> point(std::size_t arity, double scale = 2.0) {
    std::vector<double> p(arity);
    for (auto& v : p) v = uniform(-scale, scale);
    return p;
  }

 private:
  std::mt19937_64 rng_;
};

}  // namespace bstep::testing

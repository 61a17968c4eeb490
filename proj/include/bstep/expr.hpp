#pragma once

// Convex piecewise linear-quadratic (PLQ) expressions.
//
// A ConvexExpr is an immutable tree whose node kinds only admit
// convexity-preserving compositions:
//
//   affine         a^T y + b (optionally with one coefficient row per grid sample)
//   max            max of children
//   positive part  max{0, child}
//   square         child^2, child must be provably nonnegative
//   scale          s * child with s >= 0
//   sum            sum of children
//   squared norm   sum_i child_i^2, every child affine
//
// Every node knows its arity (length of the argument vector). Evaluation and
// subgradients are deterministic: at max ties the lowest-index active child
// wins, and a positive part at zero returns the zero branch.

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace bstep {

class ProgramBuilder;
struct LinearForm;
struct QuadForm;

class ExprError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ExprKind { kAffine, kMax, kPositivePart, kSquare, kScale, kSum, kSquaredNorm };

class ConvexExpr {
 public:
  struct Node;

  /// The zero function of no arguments.
  ConvexExpr();

  /// a^T y + b.
  static ConvexExpr affine(std::vector<double> coeffs, double offset);
  /// Time-varying affine map: row j applies at grid sample j.
  static ConvexExpr affine_table(std::vector<std::vector<double>> coeffs,
                                 std::vector<double> offsets);
  static ConvexExpr constant(std::size_t arity, double value);
  /// coeff * y[index] + offset.
  static ConvexExpr coordinate(std::size_t arity, std::size_t index, double coeff = 1.0,
                               double offset = 0.0);
  static ConvexExpr max_of(std::vector<ConvexExpr> children);
  static ConvexExpr positive_part(ConvexExpr child);
  static ConvexExpr square(ConvexExpr child);
  static ConvexExpr scaled(double factor, ConvexExpr child);
  static ConvexExpr sum(std::vector<ConvexExpr> children);
  static ConvexExpr squared_norm(std::vector<ConvexExpr> children);

  ExprKind kind() const;
  std::size_t arity() const;
  /// Number of grid samples of the time tables in this tree (0 if none).
  std::size_t table_length() const;
  bool is_nonnegative() const;
  /// True when the tree contains no node that depends on the grid sample.
  bool time_invariant() const { return table_length() == 0; }

  const std::vector<ConvexExpr>& children() const;
  const Node& node() const { return *node_; }

 private:
  explicit ConvexExpr(std::shared_ptr<const Node> node) : node_(std::move(node)) {}
  std::shared_ptr<const Node> node_;
};

struct ConvexExpr::Node {
  ExprKind kind = ExprKind::kAffine;
  std::size_t arity = 0;
  std::vector<ConvexExpr> children;
  // affine: coeffs.size() == 1 for time-invariant data, else one row per sample
  std::vector<std::vector<double>> coeffs;
  std::vector<double> offsets;
  double scale = 1.0;
  std::size_t table_length = 0;
};

/// F = convex_part - concave_part.
struct DCPair {
  ConvexExpr convex_part;
  ConvexExpr concave_part;

  std::size_t arity() const { return convex_part.arity(); }
};

/// Exact value. `sample` selects the row of time tables; it is required when
/// the expression has any.
double eval(const ConvexExpr& expr, std::span<const double> point,
            std::optional<std::size_t> sample = std::nullopt);

/// One subgradient, deterministic tie-breaking.
std::vector<double> subgradient(const ConvexExpr& expr, std::span<const double> point,
                                std::optional<std::size_t> sample = std::nullopt);

/// Value and subgradient in one pass.
double eval_with_subgradient(const ConvexExpr& expr, std::span<const double> point,
                             std::span<double> grad,
                             std::optional<std::size_t> sample = std::nullopt);

double eval(const DCPair& pair, std::span<const double> point,
            std::optional<std::size_t> sample = std::nullopt);

// Epigraph reduction into a convex program under construction. `args` gives
// the argument vector as linear forms in program variables. The returned form
// L (affine plus nonnegative squares) satisfies L >= expr(args) on the
// feasible set of the added constraints, and minimizing any nondecreasing
// function of L drives it to equality.
QuadForm reduce_epigraph(const ConvexExpr& expr, std::span<const LinearForm> args,
                           ProgramBuilder& builder,
                           std::optional<std::size_t> sample = std::nullopt);

// Adds weight * expr(args) to the builder's objective. Squares reachable
// through sums and nonnegative scalings become objective quadratics instead of
// epigraph constraints.
void add_to_objective(const ConvexExpr& expr, double weight, std::span<const LinearForm> args,
                      ProgramBuilder& builder, std::optional<std::size_t> sample = std::nullopt);

nlohmann::json to_json(const ConvexExpr& expr);
ConvexExpr expr_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const DCPair& pair);
DCPair dc_pair_from_json(const nlohmann::json& doc);

std::string kind_name(ExprKind kind);

}  // namespace bstep

#pragma once

// Sparse convex programs of the form
//
//   minimize    1/2 z^T P z + q^T z + r
//   subject to  g_i(z) + sum_k a_ik z_k^2 <= 0   (a_ik >= 0)
//               e_j(z) = 0
//
// with g_i, e_j affine,
//
// plus a primal-dual interior-point solver (slack form, Mehrotra
// predictor-corrector) that certifies its answer with a Lagrangian bound.
// Programs are assembled by ProgramBuilder, which also
// records, for every auxiliary variable, how to pick a strictly feasible
// starting value from the values of the variables it depends on.

#include <cstddef>
#include <iosfwd>
#include <limits>
#include <span>
#include <utility>
#include <vector>

namespace bstep {

/// constant + sum_k coeff_k * z[var_k]
struct LinearForm {
  double constant = 0.0;
  std::vector<std::pair<int, double>> terms;

  static LinearForm variable(int index, double coeff = 1.0) {
    return LinearForm{0.0, {{index, coeff}}};
  }
  static LinearForm constant_form(double value) { return LinearForm{value, {}}; }

  double value(std::span<const double> z) const;
  /// Merges duplicate variables and drops zero coefficients.
  LinearForm compressed() const;

  LinearForm& operator+=(const LinearForm& other);
  LinearForm& operator-=(const LinearForm& other);
  LinearForm& operator*=(double factor);
  LinearForm& operator+=(double c) {
    constant += c;
    return *this;
  }
};

LinearForm operator+(LinearForm lhs, const LinearForm& rhs);
LinearForm operator-(LinearForm lhs, const LinearForm& rhs);
LinearForm operator*(double factor, LinearForm form);

/// LinearForm + sum_k a_k * z[var_k]^2 with every a_k >= 0, hence convex.
struct QuadForm {
  LinearForm lin;
  std::vector<std::pair<int, double>> squares;

  QuadForm() = default;
  QuadForm(LinearForm form) : lin(std::move(form)) {}

  bool is_linear() const { return squares.empty(); }
  /// The linear part; throws when squares are present.
  const LinearForm& linear() const;
  double value(std::span<const double> z) const;
  QuadForm compressed() const;

  QuadForm& operator+=(const QuadForm& other);
  /// Subtracting is only defined for a linear right-hand side.
  QuadForm& operator-=(const LinearForm& other);
  /// factor must be nonnegative when squares are present.
  QuadForm& operator*=(double factor);
  QuadForm& operator+=(double c) {
    lin.constant += c;
    return *this;
  }
};

QuadForm operator+(QuadForm lhs, const QuadForm& rhs);
QuadForm operator-(QuadForm lhs, const LinearForm& rhs);
QuadForm operator*(double factor, QuadForm form);

/// How the solver picks a strictly feasible start for a variable.
struct VariableInit {
  enum class Kind { kPrimary, kEpigraph, kDefined } kind = Kind::kPrimary;
  std::vector<QuadForm> lower_bounds;  // kEpigraph: z >= L
  LinearForm definition;               // kDefined: z == L
};

struct ConvexProgram {
  int num_vars = 0;
  int num_primary = 0;

  // lower triangle (row >= col) of the symmetric P
  std::vector<int> p_rows, p_cols;
  std::vector<double> p_vals;
  std::vector<double> q;
  double r = 0.0;

  // inequalities in CSR layout:
  // sum vals * z + consts + sum sq_vals * z[sq_cols]^2 <= 0
  std::vector<int> ineq_start{0};
  std::vector<int> ineq_cols;
  std::vector<double> ineq_vals;
  std::vector<double> ineq_consts;
  std::vector<int> ineq_sq_start{0};
  std::vector<int> ineq_sq_cols;
  std::vector<double> ineq_sq_vals;

  std::vector<int> eq_start{0};
  std::vector<int> eq_cols;
  std::vector<double> eq_vals;
  std::vector<double> eq_consts;

  std::vector<double> lower, upper;
  std::vector<VariableInit> init;

  int num_ineq() const { return static_cast<int>(ineq_consts.size()); }
  /// Rows with at least one square term.
  int num_quad() const;
  int num_eq() const { return static_cast<int>(eq_consts.size()); }

  double objective(std::span<const double> z) const;
  /// Largest constraint violation (inequalities and equalities).
  double max_violation(std::span<const double> z) const;
};

class ProgramBuilder {
 public:
  static constexpr double kInf = std::numeric_limits<double>::infinity();

  /// Adds `count` primary variables and returns the index of the first.
  int add_primary(int count);
  void set_bounds(int var, double lo, double hi);

  /// New variable constrained below by the given forms (z >= L_i).
  int add_epigraph_variable(std::vector<QuadForm> lower_bounds);
  /// z_w >= a * z_s^2 for an existing epigraph variable w.
  void add_square_lower_bound(int w, int s, double a);
  /// Free variable pinned by an equality z == L.
  int add_defined_variable(LinearForm definition);
  void add_equality(LinearForm form);

  /// objective += weight * L
  void add_linear_objective(const LinearForm& form, double weight);
  /// objective += weight * L^2, weight >= 0
  void add_square_objective(const LinearForm& form, double weight);
  /// objective += weight * Q, weight >= 0
  void add_objective(const QuadForm& form, double weight);

  int num_vars() const { return static_cast<int>(program_.init.size()); }
  ConvexProgram build() const;

 private:
  void push_ineq(const QuadForm& form);
  int new_var(VariableInit init);

  ConvexProgram program_;
};

enum class IpmStatus { kOptimal, kMaxIter, kNumericalFailure };

struct IpmOptions {
  double gap_tol = 1e-8;
  /// Primal residual tolerance, relative to the largest constant term.
  double feas_tol = 1e-9;
  /// Dual residual tolerance, relative to the largest linear cost.
  double dual_tol = 1e-6;
  /// Absolute primal residual below which an unconverged iterate may still
  /// carry a usable Lagrangian bound.
  double certificate_feas_tol = 1e-6;
  int max_iter = 200;
  /// Distance of the strictly feasible start from the constraint boundaries.
  double init_margin = 1.0;
  /// Per-iteration progress lines when set.
  std::ostream* trace = nullptr;
};

struct IpmResult {
  std::vector<double> z;
  double objective = 0.0;
  /// Lagrangian value at the final primal-dual pair; a lower bound on the
  /// optimum when the dual residual vanishes.
  double lower_bound = 0.0;
  /// objective - lower_bound, clipped at zero
  double gap = 0.0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  /// dual_residual over the largest linear cost (at least 1)
  double scaled_dual_residual = 0.0;
  int iterations = 0;
  IpmStatus status = IpmStatus::kMaxIter;
};

/// Strictly feasible start: primary variables from `primary` (pulled inside
/// their bounds), auxiliary ones from their recorded lower bounds.
std::vector<double> initial_point(const ConvexProgram& program, std::span<const double> primary,
                                  double margin);

IpmResult solve_program(const ConvexProgram& program, std::span<const double> primary_start,
                        const IpmOptions& options = {});

/// Plain-text sparse dump: header, objective triplets, rows of each block.
void write_program(std::ostream& out, const ConvexProgram& program);

}  // namespace bstep

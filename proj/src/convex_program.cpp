#include "bstep/convex_program.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <stdexcept>

#include <Eigen/Sparse>
#include <fmt/format.h>
#include <Eigen/SparseLU>

namespace bstep {

double LinearForm::value(std::span<const double> z) const {
  double v = constant;
  for (const auto& [var, coeff] : terms) v += coeff * z[static_cast<std::size_t>(var)];
  return v;
}

LinearForm LinearForm::compressed() const {
  std::map<int, double> merged;
  for (const auto& [var, coeff] : terms) merged[var] += coeff;
  LinearForm out{constant, {}};
  for (const auto& [var, coeff] : merged)
    if (coeff != 0.0) out.terms.emplace_back(var, coeff);
  return out;
}

LinearForm& LinearForm::operator+=(const LinearForm& other) {
  constant += other.constant;
  terms.insert(terms.end(), other.terms.begin(), other.terms.end());
  return *this;
}

LinearForm& LinearForm::operator-=(const LinearForm& other) {
  constant -= other.constant;
  for (const auto& [var, coeff] : other.terms) terms.emplace_back(var, -coeff);
  return *this;
}

LinearForm& LinearForm::operator*=(double factor) {
  constant *= factor;
  for (auto& term : terms) term.second *= factor;
  return *this;
}

LinearForm operator+(LinearForm lhs, const LinearForm& rhs) { return lhs += rhs; }
LinearForm operator-(LinearForm lhs, const LinearForm& rhs) { return lhs -= rhs; }
LinearForm operator*(double factor, LinearForm form) { return form *= factor; }

const LinearForm& QuadForm::linear() const {
  if (!squares.empty()) throw std::logic_error("quadratic form used where an affine one is required");
  return lin;
}

double QuadForm::value(std::span<const double> z) const {
  double v = lin.value(z);
  for (const auto& [var, a] : squares) v += a * z[static_cast<std::size_t>(var)] * z[static_cast<std::size_t>(var)];
  return v;
}

QuadForm QuadForm::compressed() const {
  QuadForm out(lin.compressed());
  std::map<int, double> merged;
  for (const auto& [var, a] : squares) merged[var] += a;
  for (const auto& [var, a] : merged)
    if (a != 0.0) out.squares.emplace_back(var, a);
  return out;
}

QuadForm& QuadForm::operator+=(const QuadForm& other) {
  lin += other.lin;
  squares.insert(squares.end(), other.squares.begin(), other.squares.end());
  return *this;
}

QuadForm& QuadForm::operator-=(const LinearForm& other) {
  lin -= other;
  return *this;
}

QuadForm& QuadForm::operator*=(double factor) {
  if (factor < 0.0 && !squares.empty()) throw std::logic_error("negative multiple of a quadratic form");
  lin *= factor;
  for (auto& sq : squares) sq.second *= factor;
  return *this;
}

QuadForm operator+(QuadForm lhs, const QuadForm& rhs) { return lhs += rhs; }
QuadForm operator-(QuadForm lhs, const LinearForm& rhs) { return lhs -= rhs; }
QuadForm operator*(double factor, QuadForm form) { return form *= factor; }

// ---------------------------------------------------------------------------
// ConvexProgram

double ConvexProgram::objective(std::span<const double> z) const {
  double v = r;
  for (int i = 0; i < num_vars; ++i) v += q[static_cast<std::size_t>(i)] * z[static_cast<std::size_t>(i)];
  for (std::size_t k = 0; k < p_vals.size(); ++k) {
    const double zi = z[static_cast<std::size_t>(p_rows[k])];
    const double zj = z[static_cast<std::size_t>(p_cols[k])];
    v += (p_rows[k] == p_cols[k] ? 0.5 : 1.0) * p_vals[k] * zi * zj;
  }
  return v;
}

int ConvexProgram::num_quad() const {
  int count = 0;
  for (int i = 0; i < num_ineq(); ++i)
    if (ineq_sq_start[static_cast<std::size_t>(i) + 1] > ineq_sq_start[static_cast<std::size_t>(i)]) ++count;
  return count;
}

double ConvexProgram::max_violation(std::span<const double> z) const {
  double worst = 0.0;
  for (int i = 0; i < num_ineq(); ++i) {
    double f = ineq_consts[static_cast<std::size_t>(i)];
    for (int k = ineq_start[static_cast<std::size_t>(i)]; k < ineq_start[static_cast<std::size_t>(i) + 1]; ++k)
      f += ineq_vals[static_cast<std::size_t>(k)] * z[static_cast<std::size_t>(ineq_cols[static_cast<std::size_t>(k)])];
    for (int k = ineq_sq_start[static_cast<std::size_t>(i)]; k < ineq_sq_start[static_cast<std::size_t>(i) + 1]; ++k) {
      const double v = z[static_cast<std::size_t>(ineq_sq_cols[static_cast<std::size_t>(k)])];
      f += ineq_sq_vals[static_cast<std::size_t>(k)] * v * v;
    }
    worst = std::max(worst, f);
  }
  for (int i = 0; i < num_eq(); ++i) {
    double e = eq_consts[static_cast<std::size_t>(i)];
    for (int k = eq_start[static_cast<std::size_t>(i)]; k < eq_start[static_cast<std::size_t>(i) + 1]; ++k)
      e += eq_vals[static_cast<std::size_t>(k)] * z[static_cast<std::size_t>(eq_cols[static_cast<std::size_t>(k)])];
    worst = std::max(worst, std::abs(e));
  }
  for (int v = 0; v < num_vars; ++v) {
    worst = std::max(worst, lower[static_cast<std::size_t>(v)] - z[static_cast<std::size_t>(v)]);
    worst = std::max(worst, z[static_cast<std::size_t>(v)] - upper[static_cast<std::size_t>(v)]);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// ProgramBuilder

int ProgramBuilder::new_var(VariableInit init) {
  const int index = static_cast<int>(program_.init.size());
  program_.init.push_back(std::move(init));
  program_.q.push_back(0.0);
  program_.lower.push_back(-kInf);
  program_.upper.push_back(kInf);
  return index;
}

int ProgramBuilder::add_primary(int count) {
  if (program_.num_primary != num_vars())
    throw std::logic_error("primary variables must be added before auxiliary ones");
  const int first = num_vars();
  for (int i = 0; i < count; ++i) new_var(VariableInit{});
  program_.num_primary += count;
  return first;
}

void ProgramBuilder::set_bounds(int var, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("empty variable bounds");
  program_.lower[static_cast<std::size_t>(var)] = lo;
  program_.upper[static_cast<std::size_t>(var)] = hi;
}

void ProgramBuilder::push_ineq(const QuadForm& form) {
  const QuadForm c = form.compressed();
  for (const auto& [var, coeff] : c.lin.terms) {
    program_.ineq_cols.push_back(var);
    program_.ineq_vals.push_back(coeff);
  }
  for (const auto& [var, a] : c.squares) {
    if (a < 0.0) throw std::invalid_argument("negative square coefficient");
    program_.ineq_sq_cols.push_back(var);
    program_.ineq_sq_vals.push_back(a);
  }
  program_.ineq_consts.push_back(c.lin.constant);
  program_.ineq_start.push_back(static_cast<int>(program_.ineq_cols.size()));
  program_.ineq_sq_start.push_back(static_cast<int>(program_.ineq_sq_cols.size()));
}

int ProgramBuilder::add_epigraph_variable(std::vector<QuadForm> lower_bounds) {
  VariableInit init;
  init.kind = VariableInit::Kind::kEpigraph;
  const int var = new_var(VariableInit{});
  for (auto& lb : lower_bounds) {
    push_ineq(lb - LinearForm::variable(var));
    init.lower_bounds.push_back(lb.compressed());
  }
  program_.init[static_cast<std::size_t>(var)] = std::move(init);
  return var;
}

void ProgramBuilder::add_square_lower_bound(int w, int s, double a) {
  if (!(a > 0.0)) throw std::invalid_argument("square coefficient must be positive");
  auto& init = program_.init[static_cast<std::size_t>(w)];
  if (init.kind != VariableInit::Kind::kEpigraph)
    throw std::logic_error("square lower bound needs an epigraph variable");
  QuadForm bound;
  bound.squares.emplace_back(s, a);
  push_ineq(bound - LinearForm::variable(w));
  init.lower_bounds.push_back(std::move(bound));
}

int ProgramBuilder::add_defined_variable(LinearForm definition) {
  VariableInit init;
  init.kind = VariableInit::Kind::kDefined;
  init.definition = definition.compressed();
  const int var = new_var(std::move(init));
  add_equality(definition - LinearForm::variable(var));
  return var;
}

void ProgramBuilder::add_equality(LinearForm form) {
  const LinearForm c = form.compressed();
  for (const auto& [var, coeff] : c.terms) {
    program_.eq_cols.push_back(var);
    program_.eq_vals.push_back(coeff);
  }
  program_.eq_consts.push_back(c.constant);
  program_.eq_start.push_back(static_cast<int>(program_.eq_cols.size()));
}

void ProgramBuilder::add_linear_objective(const LinearForm& form, double weight) {
  program_.r += weight * form.constant;
  for (const auto& [var, coeff] : form.terms) program_.q[static_cast<std::size_t>(var)] += weight * coeff;
}

void ProgramBuilder::add_square_objective(const LinearForm& form, double weight) {
  if (weight < 0.0) throw std::invalid_argument("negative square weight");
  if (weight == 0.0) return;
  const LinearForm c = form.compressed();
  // weight * (a^T z + b)^2 = weight z^T a a^T z + 2 weight b a^T z + weight b^2
  program_.r += weight * c.constant * c.constant;
  for (const auto& [var, coeff] : c.terms)
    program_.q[static_cast<std::size_t>(var)] += 2.0 * weight * c.constant * coeff;
  for (std::size_t i = 0; i < c.terms.size(); ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      int row = c.terms[i].first;
      int col = c.terms[j].first;
      if (row < col) std::swap(row, col);
      program_.p_rows.push_back(row);
      program_.p_cols.push_back(col);
      // P holds the Hessian, 2 * weight * a a^T
      program_.p_vals.push_back(2.0 * weight * c.terms[i].second * c.terms[j].second);
    }
  }
}

void ProgramBuilder::add_objective(const QuadForm& form, double weight) {
  if (weight < 0.0) throw std::invalid_argument("negative objective weight");
  add_linear_objective(form.lin, weight);
  for (const auto& [var, a] : form.squares) {
    program_.p_rows.push_back(var);
    program_.p_cols.push_back(var);
    program_.p_vals.push_back(2.0 * weight * a);
  }
}

ConvexProgram ProgramBuilder::build() const {
  ConvexProgram out = program_;
  out.num_vars = static_cast<int>(out.init.size());
  return out;
}

// ---------------------------------------------------------------------------
// Starting point

std::vector<double> initial_point(const ConvexProgram& program, std::span<const double> primary,
                                  double margin) {
  std::vector<double> z(static_cast<std::size_t>(program.num_vars), 0.0);
  for (int v = 0; v < program.num_vars; ++v) {
    const auto& init = program.init[static_cast<std::size_t>(v)];
    double value = 0.0;
    switch (init.kind) {
      case VariableInit::Kind::kPrimary:
        value = static_cast<std::size_t>(v) < primary.size() ? primary[static_cast<std::size_t>(v)] : 0.0;
        break;
      case VariableInit::Kind::kDefined:
        value = init.definition.value(z);
        break;
      case VariableInit::Kind::kEpigraph: {
        double lo = -std::numeric_limits<double>::infinity();
        for (const auto& lb : init.lower_bounds) lo = std::max(lo, lb.value(z));
        if (!std::isfinite(lo)) lo = 0.0;
        value = lo + margin * std::max(1.0, 1e-3 * std::abs(lo));
        break;
      }
    }
    const double lo = program.lower[static_cast<std::size_t>(v)];
    const double hi = program.upper[static_cast<std::size_t>(v)];
    if (std::isfinite(lo) || std::isfinite(hi)) {
      double pad = margin;
      if (std::isfinite(lo) && std::isfinite(hi)) pad = std::min(margin, 0.25 * (hi - lo));
      if (std::isfinite(lo)) value = std::max(value, lo + pad);
      if (std::isfinite(hi)) value = std::min(value, hi - pad);
    }
    z[static_cast<std::size_t>(v)] = value;
  }
  return z;
}

// ---------------------------------------------------------------------------
// Primal-dual interior-point method

namespace {

using SpMat = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;
using Vec = Eigen::VectorXd;

// Row i: consts[i] + sum_k (lin[k] z[cols[k]] + sq[k] z[cols[k]]^2) with the
// support cols sorted and unique.
struct Rows {
  std::vector<int> start{0};
  std::vector<int> cols;
  std::vector<double> lin;
  std::vector<double> sq;
  std::vector<double> consts;
  int size() const { return static_cast<int>(consts.size()); }

  void push(const std::map<int, std::pair<double, double>>& terms, double constant) {
    for (const auto& [var, ls] : terms) {
      cols.push_back(var);
      lin.push_back(ls.first);
      sq.push_back(ls.second);
    }
    consts.push_back(constant);
    start.push_back(static_cast<int>(cols.size()));
  }
};

class InteriorPoint {
 public:
  InteriorPoint(const ConvexProgram& program, const IpmOptions& options)
      : prog_(program), opt_(options), n_(program.num_vars), p_(program.num_eq()) {
    for (int i = 0; i < program.num_ineq(); ++i) {
      const auto r = static_cast<std::size_t>(i);
      std::map<int, std::pair<double, double>> terms;
      for (int k = program.ineq_start[r]; k < program.ineq_start[r + 1]; ++k)
        terms[program.ineq_cols[static_cast<std::size_t>(k)]].first += program.ineq_vals[static_cast<std::size_t>(k)];
      for (int k = program.ineq_sq_start[r]; k < program.ineq_sq_start[r + 1]; ++k)
        terms[program.ineq_sq_cols[static_cast<std::size_t>(k)]].second += program.ineq_sq_vals[static_cast<std::size_t>(k)];
      rows_.push(terms, program.ineq_consts[r]);
    }
    for (int v = 0; v < n_; ++v) {
      if (std::isfinite(program.upper[static_cast<std::size_t>(v)]))
        rows_.push({{v, {1.0, 0.0}}}, -program.upper[static_cast<std::size_t>(v)]);
      if (std::isfinite(program.lower[static_cast<std::size_t>(v)]))
        rows_.push({{v, {-1.0, 0.0}}}, program.lower[static_cast<std::size_t>(v)]);
    }
    m_ = rows_.size();
    has_quad_ = std::any_of(rows_.sq.begin(), rows_.sq.end(), [](double a) { return a != 0.0; });
    build_pattern();
  }

  IpmResult run(std::vector<double> z0) {
    IpmResult result;
    z_ = Eigen::Map<Vec>(z0.data(), n_);
    nu_ = Vec::Zero(p_);
    f_.resize(m_);
    eval_constraints(z_, f_);
    slack_.resize(m_);
    lambda_.resize(m_);
    double b_scale = 1.0, q_scale = 1.0;
    const double theta_floor = 1e-3 * opt_.feas_tol;
    for (double c : prog_.eq_consts) b_scale = std::max(b_scale, std::abs(c));
    for (double c : prog_.ineq_consts) b_scale = std::max(b_scale, std::abs(c));
    for (double c : prog_.q) q_scale = std::max(q_scale, std::abs(c));
    for (int i = 0; i < m_; ++i) {
      slack_[i] = std::max(-f_[i], 1e-2);
      lambda_[i] = q_scale / slack_[i];
    }

    Vec r_dual(n_), r_slack(m_), r_eq(p_), r_comp(m_);
    Vec dz(n_), dnu(p_), dlambda(m_), dslack(m_);
    Vec dz_aff(n_), dnu_aff(p_), dlambda_aff(m_), dslack_aff(m_);
    Vec rhs(n_ + p_), sol(n_ + p_);

    auto direction = [&](const Vec& rc, Vec& ez, Vec& enu, Vec& elam, Vec& esl) {
      // (H + Df' D Df) dz + A' dnu = -r_dual - Df' (rc + lambda r_slack) / slack
      rhs.head(n_) = -r_dual;
      for (int i = 0; i < m_; ++i) add_grad(i, z_, -(rc[i] + lambda_[i] * r_slack[i]) / slack_[i], rhs);
      rhs.tail(p_) = -r_eq;
      solve_refined(rhs, sol);
      ez = sol.head(n_);
      enu = sol.tail(p_);
      for (int i = 0; i < m_; ++i) {
        const double g = grad_dot(i, z_, ez);
        elam[i] = (rc[i] + lambda_[i] * r_slack[i]) / slack_[i] + lambda_[i] / slack_[i] * g;
        esl[i] = -r_slack[i] - g;
      }
    };
    auto max_step = [&](const Vec& elam, const Vec& esl) {
      double s = 1.0;
      for (int i = 0; i < m_; ++i) {
        if (elam[i] < 0.0) s = std::min(s, -lambda_[i] / elam[i]);
        if (esl[i] < 0.0) s = std::min(s, -slack_[i] / esl[i]);
      }
      return s;
    };

    int iter = 0;
    int stalls = 0;
    double best_merit = std::numeric_limits<double>::infinity();
    double progress_mark = best_merit;
    int last_progress = 0;
    Vec best_z = z_, best_nu = nu_, best_lambda = lambda_, best_slack = slack_;
    // smallest complementarity among iterates whose residuals support a bound
    double cert_comp = std::numeric_limits<double>::infinity();
    Vec cert_z, cert_nu, cert_lambda, cert_slack;
    for (; iter < opt_.max_iter; ++iter) {
      residuals(z_, lambda_, nu_, r_dual, r_eq);
      eval_constraints(z_, f_);
      r_slack = f_ + slack_;
      const double comp = m_ > 0 ? slack_.dot(lambda_) : 0.0;
      const double rp = std::max(m_ > 0 ? r_slack.lpNorm<Eigen::Infinity>() : 0.0,
                                 p_ > 0 ? r_eq.lpNorm<Eigen::Infinity>() : 0.0);
      const double rd = r_dual.lpNorm<Eigen::Infinity>();
      // at most 1 once every tolerance holds
      const double merit =
          std::max({rp / (opt_.feas_tol * b_scale), rd / (opt_.dual_tol * q_scale), comp / opt_.gap_tol});
      if (merit <= 0.5 * progress_mark) {
        progress_mark = merit;
        last_progress = iter;
      }
      if (merit <= best_merit && z_.allFinite()) {
        best_merit = merit;
        best_z = z_;
        best_nu = nu_;
        best_lambda = lambda_;
        best_slack = slack_;
      }
      if (rp <= opt_.certificate_feas_tol && rd <= opt_.dual_tol * q_scale && comp < cert_comp && z_.allFinite()) {
        cert_comp = comp;
        cert_z = z_;
        cert_nu = nu_;
        cert_lambda = lambda_;
        cert_slack = slack_;
      }
      if (opt_.trace)
        *opt_.trace << fmt::format("ipm {:3d} obj {:.12e} rp {:.2e} rd {:.2e} comp {:.2e} |z| {:.2e}\n", iter,
                                   prog_.objective(std::vector<double>(z_.data(), z_.data() + n_)), rp, rd, comp,
                                   z_.lpNorm<Eigen::Infinity>());
      if (merit <= 1.0) {
        result.status = IpmStatus::kOptimal;
        break;
      }
      if (iter - last_progress >= kStallWindow) break;

      // predictor; the regularization grows until the solve is accurate
      r_comp = -slack_.cwiseProduct(lambda_);
      bool factored = false;
      for (reg_ = kBaseReg; reg_ <= kMaxReg; reg_ *= 100.0) {
        assemble();
        if (!factorize()) continue;
        direction(r_comp, dz_aff, dnu_aff, dlambda_aff, dslack_aff);
        if (last_res_ <= 1e-8 && dz_aff.allFinite()) {
          factored = true;
          break;
        }
      }
      if (!factored) {
        result.status = IpmStatus::kNumericalFailure;
        break;
      }
      if (m_ == 0) {
        z_ += dz_aff;
        nu_ += dnu_aff;
        continue;
      }
      const double s_aff = max_step(dlambda_aff, dslack_aff);
      const double mu = comp / m_;
      const double mu_aff =
          (slack_ + s_aff * dslack_aff).dot(lambda_ + s_aff * dlambda_aff) / m_;
      const double centering = std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3);

      // corrector
      r_comp = Vec::Constant(m_, centering * mu) - slack_.cwiseProduct(lambda_) -
               dslack_aff.cwiseProduct(dlambda_aff);
      direction(r_comp, dz, dnu, dlambda, dslack);
      double step = std::min(1.0, 0.995 * max_step(dlambda, dslack));
      // stay in the wide neighbourhood min s_i lambda_i >= gamma mu, and keep
      // the curvature residual of every quadratic row below half its slack
      Vec f_new(m_);
      for (int back = 0; back < 60; ++back, step *= 0.8) {
        const Vec s_new = slack_ + step * dslack;
        const Vec l_new = lambda_ + step * dlambda;
        const Vec prod = s_new.cwiseProduct(l_new);
        if (prod.minCoeff() < kCentrality * prod.sum() / m_) continue;
        if (!has_quad_) break;
        eval_constraints(z_ + step * dz, f_new);
        bool ok = true;
        for (int i = 0; i < m_ && ok; ++i)
          ok = f_new[i] + s_new[i] <= (1.0 - step) * std::max(r_slack[i], 0.0) + 0.5 * s_new[i] + theta_floor;
        if (ok) break;
      }
      if (!std::isfinite(step) || !dz.allFinite()) {
        result.status = IpmStatus::kNumericalFailure;
        break;
      }
      z_ += step * dz;
      nu_ += step * dnu;
      lambda_ += step * dlambda;
      slack_ += step * dslack;
      if (opt_.trace)
        *opt_.trace << fmt::format("    step {:.3e} sigma {:.2e} reg {:.0e} solve residual {:.1e}\n", step, centering,
                                   reg_, last_res_);
      stalls = step < 1e-8 ? stalls + 1 : 0;
      if (stalls >= 5) {
        // no progress is possible at working precision
        result.status = IpmStatus::kMaxIter;
        break;
      }
    }

    if (result.status != IpmStatus::kOptimal && std::isfinite(cert_comp)) {
      z_ = cert_z;
      nu_ = cert_nu;
      lambda_ = cert_lambda;
      slack_ = cert_slack;
    } else if (result.status != IpmStatus::kOptimal) {
      z_ = best_z;
      nu_ = best_nu;
      lambda_ = best_lambda;
      slack_ = best_slack;
    }
    eval_constraints(z_, f_);
    residuals(z_, lambda_, nu_, r_dual, r_eq);
    result.z.assign(z_.data(), z_.data() + n_);
    result.objective = prog_.objective(result.z);
    // Lagrangian at (z, lambda, nu); a lower bound on the optimum once the
    // dual residual vanishes
    double lagrangian = result.objective;
    if (m_ > 0) lagrangian += lambda_.dot(f_);
    if (p_ > 0) lagrangian += nu_.dot(r_eq);
    result.lower_bound = lagrangian;
    result.gap = std::max(0.0, result.objective - lagrangian);
    result.primal_residual = std::max(m_ > 0 ? std::max(0.0, f_.maxCoeff()) : 0.0,
                                      p_ > 0 ? r_eq.lpNorm<Eigen::Infinity>() : 0.0);
    result.dual_residual = r_dual.lpNorm<Eigen::Infinity>();
    result.scaled_dual_residual = result.dual_residual / q_scale;
    result.iterations = iter;
    return result;
  }

 private:
  void eval_constraints(const Vec& z, Vec& f) const {
    for (int i = 0; i < m_; ++i) {
      double v = rows_.consts[static_cast<std::size_t>(i)];
      for (int k = rows_.start[static_cast<std::size_t>(i)]; k < rows_.start[static_cast<std::size_t>(i) + 1]; ++k) {
        const double zk = z[rows_.cols[static_cast<std::size_t>(k)]];
        v += (rows_.lin[static_cast<std::size_t>(k)] + rows_.sq[static_cast<std::size_t>(k)] * zk) * zk;
      }
      f[i] = v;
    }
  }

  // partial derivative of row i along its k-th support entry
  double partial(int k, const Vec& z) const {
    const auto u = static_cast<std::size_t>(k);
    return rows_.lin[u] + 2.0 * rows_.sq[u] * z[rows_.cols[u]];
  }

  Vec grad_objective(const Vec& z) const {
    Vec g = Eigen::Map<const Vec>(prog_.q.data(), n_);
    for (std::size_t k = 0; k < prog_.p_vals.size(); ++k) {
      const int i = prog_.p_rows[k], j = prog_.p_cols[k];
      g[i] += prog_.p_vals[k] * z[j];
      if (i != j) g[j] += prog_.p_vals[k] * z[i];
    }
    return g;
  }

  Vec at_times(const Vec& nu) const {
    Vec out = Vec::Zero(n_);
    for (int i = 0; i < p_; ++i)
      for (int k = prog_.eq_start[static_cast<std::size_t>(i)]; k < prog_.eq_start[static_cast<std::size_t>(i) + 1]; ++k)
        out[prog_.eq_cols[static_cast<std::size_t>(k)]] += prog_.eq_vals[static_cast<std::size_t>(k)] * nu[i];
    return out;
  }

  void eq_residual(const Vec& z, Vec& r) const {
    for (int i = 0; i < p_; ++i) {
      double v = prog_.eq_consts[static_cast<std::size_t>(i)];
      for (int k = prog_.eq_start[static_cast<std::size_t>(i)]; k < prog_.eq_start[static_cast<std::size_t>(i) + 1]; ++k)
        v += prog_.eq_vals[static_cast<std::size_t>(k)] * z[prog_.eq_cols[static_cast<std::size_t>(k)]];
      r[i] = v;
    }
  }

  // out += scale * grad f_i(z)
  void add_grad(int i, const Vec& z, double scale, Vec& out) const {
    for (int k = rows_.start[static_cast<std::size_t>(i)]; k < rows_.start[static_cast<std::size_t>(i) + 1]; ++k)
      out[rows_.cols[static_cast<std::size_t>(k)]] += scale * partial(k, z);
  }

  double grad_dot(int i, const Vec& z, const Vec& v) const {
    double d = 0.0;
    for (int k = rows_.start[static_cast<std::size_t>(i)]; k < rows_.start[static_cast<std::size_t>(i) + 1]; ++k)
      d += partial(k, z) * v[rows_.cols[static_cast<std::size_t>(k)]];
    return d;
  }

  void residuals(const Vec& z, const Vec& lambda, const Vec& nu, Vec& r_dual, Vec& r_eq) const {
    r_dual = grad_objective(z) + at_times(nu);
    for (int i = 0; i < m_; ++i) add_grad(i, z, lambda[i], r_dual);
    eq_residual(z, r_eq);
  }

  int slot(const SpMat& mat, int row, int col) const {
    const int* inner = mat.innerIndexPtr();
    const int begin = mat.outerIndexPtr()[col];
    const int end = mat.outerIndexPtr()[col + 1];
    const int* it = std::lower_bound(inner + begin, inner + end, row);
    assert(it != inner + end && *it == row);
    return static_cast<int>(it - inner);
  }

  void build_pattern() {
    const int dim = n_ + p_;
    std::vector<Eigen::Triplet<double>> trip;
    auto lower = [&](int a, int b) {
      if (a < b) std::swap(a, b);
      trip.emplace_back(a, b, 0.0);
    };
    for (int i = 0; i < dim; ++i) trip.emplace_back(i, i, 0.0);
    for (std::size_t k = 0; k < prog_.p_vals.size(); ++k) lower(prog_.p_rows[k], prog_.p_cols[k]);
    for (int i = 0; i < m_; ++i) {
      const int b = rows_.start[static_cast<std::size_t>(i)], e = rows_.start[static_cast<std::size_t>(i) + 1];
      for (int a1 = b; a1 < e; ++a1)
        for (int a2 = b; a2 <= a1; ++a2) lower(rows_.cols[static_cast<std::size_t>(a1)], rows_.cols[static_cast<std::size_t>(a2)]);
    }
    for (int i = 0; i < p_; ++i)
      for (int k = prog_.eq_start[static_cast<std::size_t>(i)]; k < prog_.eq_start[static_cast<std::size_t>(i) + 1]; ++k)
        trip.emplace_back(n_ + i, prog_.eq_cols[static_cast<std::size_t>(k)], 0.0);
    kkt_.resize(dim, dim);
    kkt_.setFromTriplets(trip.begin(), trip.end());
    kkt_.makeCompressed();

    diag_slot_.resize(static_cast<std::size_t>(dim));
    for (int i = 0; i < dim; ++i) diag_slot_[static_cast<std::size_t>(i)] = slot(kkt_, i, i);
    auto lslot = [&](int a, int b) {
      if (a < b) std::swap(a, b);
      return slot(kkt_, a, b);
    };
    for (std::size_t k = 0; k < prog_.p_vals.size(); ++k) p_slot_.push_back(lslot(prog_.p_rows[k], prog_.p_cols[k]));
    for (int i = 0; i < m_; ++i) {
      const int b = rows_.start[static_cast<std::size_t>(i)], e = rows_.start[static_cast<std::size_t>(i) + 1];
      for (int a1 = b; a1 < e; ++a1)
        for (int a2 = b; a2 <= a1; ++a2) row_slot_.push_back(lslot(rows_.cols[static_cast<std::size_t>(a1)], rows_.cols[static_cast<std::size_t>(a2)]));
    }
    for (int i = 0; i < p_; ++i)
      for (int k = prog_.eq_start[static_cast<std::size_t>(i)]; k < prog_.eq_start[static_cast<std::size_t>(i) + 1]; ++k)
        eq_slot_.push_back(slot(kkt_, n_ + i, prog_.eq_cols[static_cast<std::size_t>(k)]));
    full_ = SpMat(kkt_.selfadjointView<Eigen::Lower>());
    solver_.analyzePattern(full_);
  }

  void assemble() {
    double* val = kkt_.valuePtr();
    std::fill(val, val + kkt_.nonZeros(), 0.0);
    for (std::size_t k = 0; k < prog_.p_vals.size(); ++k) val[p_slot_[k]] += prog_.p_vals[k];
    std::size_t s = 0;
    std::vector<double> g;
    for (int i = 0; i < m_; ++i) {
      const double lam = lambda_[i];
      const double d = lam / slack_[i];
      const int b = rows_.start[static_cast<std::size_t>(i)], e = rows_.start[static_cast<std::size_t>(i) + 1];
      g.clear();
      for (int a = b; a < e; ++a) g.push_back(partial(a, z_));
      for (int a1 = b; a1 < e; ++a1) {
        for (int a2 = b; a2 < a1; ++a2) val[row_slot_[s++]] += d * g[static_cast<std::size_t>(a1 - b)] * g[static_cast<std::size_t>(a2 - b)];
        const double ga = g[static_cast<std::size_t>(a1 - b)];
        val[row_slot_[s++]] += d * ga * ga + 2.0 * lam * rows_.sq[static_cast<std::size_t>(a1)];
      }
    }
    std::size_t e = 0;
    for (int i = 0; i < p_; ++i)
      for (int k = prog_.eq_start[static_cast<std::size_t>(i)]; k < prog_.eq_start[static_cast<std::size_t>(i) + 1]; ++k)
        val[eq_slot_[e++]] += prog_.eq_vals[static_cast<std::size_t>(k)];
    equilibrate();
  }

  // Symmetric Ruiz scaling of the assembled matrix into scaled_.
  void equilibrate() {
    const int dim = n_ + p_;
    scale_.setOnes(dim);
    Vec row_max(dim);
    const double* val = kkt_.valuePtr();
    const int* inner = kkt_.innerIndexPtr();
    const int* outer = kkt_.outerIndexPtr();
    for (int pass = 0; pass < 8; ++pass) {
      row_max.setZero();
      for (int j = 0; j < dim; ++j)
        for (int k = outer[j]; k < outer[j + 1]; ++k) {
          const int i = inner[k];
          const double v = std::abs(val[k] * scale_[i] * scale_[j]);
          row_max[i] = std::max(row_max[i], v);
          row_max[j] = std::max(row_max[j], v);
        }
      double worst = 0.0;
      for (int i = 0; i < dim; ++i) {
        if (row_max[i] > 0.0) scale_[i] /= std::sqrt(row_max[i]);
        worst = std::max(worst, std::abs(1.0 - row_max[i]));
      }
      if (worst < 0.1) break;
    }
    scaled_ = kkt_;
    double* sv = scaled_.valuePtr();
    for (int j = 0; j < dim; ++j)
      for (int k = outer[j]; k < outer[j + 1]; ++k) sv[k] *= scale_[inner[k]] * scale_[j];
    reg_diag_.resize(dim);
    reg_diag_.head(n_).setConstant(reg_);
    reg_diag_.tail(p_).setConstant(-reg_);
    for (int i = 0; i < dim; ++i) sv[diag_slot_[static_cast<std::size_t>(i)]] += reg_diag_[i];
  }

  bool factorize() {
    full_ = SpMat(scaled_.selfadjointView<Eigen::Lower>());
    solver_.factorize(full_);
    return solver_.info() == Eigen::Success;
  }

  // Solve the scaled system with iterative refinement toward the matrix that
  // keeps the primal regularization; dropping it would amplify near-null
  // directions of the Hessian block.
  void solve_refined(const Vec& rhs, Vec& sol) {
    const Vec b = scale_.cwiseProduct(rhs);
    Vec y = solver_.solve(b);
    const double bnorm = 1.0 + b.lpNorm<Eigen::Infinity>();
    for (int pass = 0; pass < kRefinePasses; ++pass) {
      Vec res = b - scaled_.selfadjointView<Eigen::Lower>() * y + reg_diag_.cwiseProduct(y);
      last_res_ = res.lpNorm<Eigen::Infinity>() / bnorm;
      if (last_res_ <= 1e-15 || pass == kRefinePasses - 1) break;
      y += solver_.solve(res);
    }
    sol = scale_.cwiseProduct(y);
  }

  const ConvexProgram& prog_;
  IpmOptions opt_;
  int n_, p_;
  int m_ = 0;
  bool has_quad_ = false;
  Rows rows_;
  SpMat kkt_, scaled_;
  Vec scale_, reg_diag_;
  Eigen::SparseLU<SpMat, Eigen::COLAMDOrdering<int>> solver_;
  SpMat full_;
  std::vector<int> diag_slot_, p_slot_, row_slot_, eq_slot_;
  static constexpr double kBaseReg = 1e-12;
  static constexpr double kCentrality = 1e-4;
  static constexpr double kMaxReg = 1e-2;
  static constexpr int kRefinePasses = 10;
  // iterations without halving the merit before giving up
  static constexpr int kStallWindow = 15;
  double reg_ = kBaseReg;
  double last_res_ = 0.0;
  Vec z_, nu_, lambda_, slack_, f_;
};

}  // namespace

IpmResult solve_program(const ConvexProgram& program, std::span<const double> primary_start,
                        const IpmOptions& options) {
  InteriorPoint ipm(program, options);
  return ipm.run(initial_point(program, primary_start, options.init_margin));
}


void write_program(std::ostream& out, const ConvexProgram& program) {
  out << "# vars " << program.num_vars << " primary " << program.num_primary << " ineq "
      << program.num_ineq() << " quadratic " << program.num_quad() << " eq " << program.num_eq() << "\n";
  out.precision(17);
  out << "constant " << program.r << "\n";
  for (int v = 0; v < program.num_vars; ++v)
    if (program.q[static_cast<std::size_t>(v)] != 0.0) out << "q " << v << " " << program.q[static_cast<std::size_t>(v)] << "\n";
  for (std::size_t k = 0; k < program.p_vals.size(); ++k)
    out << "P " << program.p_rows[k] << " " << program.p_cols[k] << " " << program.p_vals[k] << "\n";
  for (int i = 0; i < program.num_ineq(); ++i) {
    out << "ineq " << i << " " << program.ineq_consts[static_cast<std::size_t>(i)];
    for (int k = program.ineq_start[static_cast<std::size_t>(i)]; k < program.ineq_start[static_cast<std::size_t>(i) + 1]; ++k)
      out << " " << program.ineq_cols[static_cast<std::size_t>(k)] << ":" << program.ineq_vals[static_cast<std::size_t>(k)];
    for (int k = program.ineq_sq_start[static_cast<std::size_t>(i)]; k < program.ineq_sq_start[static_cast<std::size_t>(i) + 1]; ++k)
      out << " " << program.ineq_sq_cols[static_cast<std::size_t>(k)] << "^2:" << program.ineq_sq_vals[static_cast<std::size_t>(k)];
    out << "\n";
  }
  for (int i = 0; i < program.num_eq(); ++i) {
    out << "eq " << i << " " << program.eq_consts[static_cast<std::size_t>(i)];
    for (int k = program.eq_start[static_cast<std::size_t>(i)]; k < program.eq_start[static_cast<std::size_t>(i) + 1]; ++k)
      out << " " << program.eq_cols[static_cast<std::size_t>(k)] << ":" << program.eq_vals[static_cast<std::size_t>(k)];
    out << "\n";
  }
  for (int v = 0; v < program.num_vars; ++v) {
    const double lo = program.lower[static_cast<std::size_t>(v)], hi = program.upper[static_cast<std::size_t>(v)];
    if (std::isfinite(lo) || std::isfinite(hi)) out << "bounds " << v << " " << lo << " " << hi << "\n";
  }
}

}  // namespace bstep

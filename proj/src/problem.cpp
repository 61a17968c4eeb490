#include "bstep/problem.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <fmt/format.h>

namespace bstep {

std::string mode_name(ControlBoxMode mode) {
  switch (mode) {
    case ControlBoxMode::kInX0: return "in_X0";
    case ControlBoxMode::kPenalizeL1: return "penalize_L1";
    case ControlBoxMode::kPenalizeLinf: return "penalize_Linf";
  }
  return "?";
}

ControlBoxMode mode_from_name(const std::string& name) {
  std::string lower = name;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "in_x0") return ControlBoxMode::kInX0;
  if (lower == "penalize_l1" || lower == "l1") return ControlBoxMode::kPenalizeL1;
  if (lower == "penalize_linf" || lower == "linf") return ControlBoxMode::kPenalizeLinf;
  throw std::invalid_argument(fmt::format("unknown control box mode '{}'", name));
}

namespace {

void check_box(const std::optional<ControlBounds>& box, std::size_t m, const char* what,
               std::vector<std::string>& out) {
  if (!box) return;
  if (box->lower.size() != m || box->upper.size() != m) {
    out.push_back(fmt::format("{} must have {} lower and upper entries", what, m));
    return;
  }
  for (std::size_t c = 0; c < m; ++c)
    if (!(box->lower[c] <= box->upper[c]))
      out.push_back(fmt::format("{} component {} has lower bound above upper bound", what, c));
}

void check_pair(const DCPair& pair, std::size_t arity, const std::string& what, std::vector<std::string>& out) {
  if (pair.convex_part.arity() != arity || pair.concave_part.arity() != arity)
    out.push_back(fmt::format("{} has arity {}/{}, expected {}", what, pair.convex_part.arity(),
                              pair.concave_part.arity(), arity));
}

template <class F>
void for_each_expr(const ProblemSpec& spec, const X0Spec& base, F&& f) {
  auto pair = [&](const DCPair& p) {
    f(p.convex_part);
    f(p.concave_part);
  };
  pair(spec.running_cost);
  pair(spec.terminal_cost);
  for (const auto& d : spec.dynamics)
    if (d) pair(*d);
  for (const auto& p : spec.endpoint_ineq) pair(p);
  for (const auto& p : spec.endpoint_eq) pair(p);
  for (const auto& p : spec.mixed) pair(p);
  for (const auto& row : base.linear_dynamics) f(row.rhs);
}

}  // namespace

std::vector<std::string> validate(const ProblemSpec& spec, const X0Spec& base) {
  std::vector<std::string> out;
  if (spec.n < 1) out.emplace_back("state dimension n must be at least 1");
  if (spec.m < 1) out.emplace_back("control dimension m must be at least 1");
  if (!(spec.T > 0.0) || !std::isfinite(spec.T)) out.emplace_back("horizon must be positive");
  const std::size_t run = spec.n + spec.m;
  const std::size_t end = 2 * spec.n;
  check_pair(spec.running_cost, run, "running cost", out);
  check_pair(spec.terminal_cost, end, "terminal cost", out);
  if (spec.dynamics.size() != spec.n)
    out.push_back(fmt::format("dynamics lists {} rows, expected {}", spec.dynamics.size(), spec.n));
  for (std::size_t i = 0; i < spec.dynamics.size(); ++i)
    if (spec.dynamics[i]) check_pair(*spec.dynamics[i], run, fmt::format("dynamics row {}", i), out);
  for (std::size_t i = 0; i < spec.endpoint_ineq.size(); ++i)
    check_pair(spec.endpoint_ineq[i], end, fmt::format("endpoint inequality {}", i), out);
  for (std::size_t i = 0; i < spec.endpoint_eq.size(); ++i)
    check_pair(spec.endpoint_eq[i], end, fmt::format("endpoint equality {}", i), out);
  for (std::size_t i = 0; i < spec.mixed.size(); ++i)
    check_pair(spec.mixed[i], run, fmt::format("mixed constraint {}", i), out);
  check_box(spec.control_bounds, spec.m, "penalized control bounds", out);
  check_box(base.control_box, spec.m, "X0 control box", out);

  std::vector<int> exact(spec.n, 0);
  for (const auto& row : base.linear_dynamics) {
    if (row.row >= spec.n) {
      out.push_back(fmt::format("linear dynamics row {} outside state dimension {}", row.row, spec.n));
      continue;
    }
    ++exact[row.row];
    if (row.rhs.kind() != ExprKind::kAffine)
      out.push_back(fmt::format("linear dynamics row {} must have an affine right-hand side", row.row));
    if (row.rhs.arity() != run)
      out.push_back(fmt::format("linear dynamics row {} has arity {}, expected {}", row.row, row.rhs.arity(), run));
  }
  for (std::size_t i = 0; i < spec.n && i < spec.dynamics.size(); ++i) {
    const bool penalized = spec.dynamics[i].has_value();
    if (penalized && exact[i] > 0)
      out.push_back(fmt::format("dynamics row {} is both penalized and taken exactly in X0", i));
    else if (exact[i] > 1)
      out.push_back(fmt::format("dynamics row {} appears more than once in X0", i));
    else if (!penalized && exact[i] == 0)
      out.push_back(fmt::format("dynamics row {} has no equation", i));
  }
  for (const auto* fixed : {&base.fixed_initial_state, &base.fixed_terminal_state})
    if (!fixed->empty() && fixed->size() != spec.n)
      out.push_back(fmt::format("fixed state lists {} components, expected {}", fixed->size(), spec.n));

  std::size_t table = 0;
  bool mismatch = false;
  for_each_expr(spec, base, [&](const ConvexExpr& e) {
    if (e.table_length() == 0) return;
    if (table != 0 && table != e.table_length()) mismatch = true;
    table = e.table_length();
  });
  if (mismatch) out.emplace_back("time tables have different lengths");
  if (table != 0 && !spec.grid_intervals)
    out.emplace_back("time tables present but the problem does not declare its grid");
  if (table != 0 && spec.grid_intervals && *spec.grid_intervals != table)
    out.push_back(fmt::format("time tables have {} rows but the declared grid has {} intervals", table,
                              *spec.grid_intervals));
  return out;
}

bool line_search_admissible(const X0Spec& base) { return !base.control_box.has_value(); }

void check_grid(const ProblemSpec& spec, const X0Spec& base, const Grid& grid) {
  if (spec.grid_intervals && *spec.grid_intervals != grid.N)
    throw std::invalid_argument(
        fmt::format("problem was built for N = {} but the grid has N = {}", *spec.grid_intervals, grid.N));
  for_each_expr(spec, base, [&](const ConvexExpr& e) {
    if (e.table_length() != 0 && e.table_length() != grid.N)
      throw std::invalid_argument(
          fmt::format("time table with {} rows does not match grid with N = {}", e.table_length(), grid.N));
  });
  if (std::abs(spec.T - grid.T) > 1e-12 * std::max(1.0, spec.T))
    throw std::invalid_argument("grid horizon differs from problem horizon");
}

// ---------------------------------------------------------------------------
// X0 geometry

namespace {

struct AffineSystem {
  std::vector<Eigen::Triplet<double>> entries;
  std::vector<double> rhs;
  int rows = 0;

  void add_row(const std::vector<std::pair<std::size_t, double>>& terms, double value) {
    for (const auto& [col, coeff] : terms)
      if (coeff != 0.0) entries.emplace_back(rows, static_cast<int>(col), coeff);
    rhs.push_back(value);
    ++rows;
  }
};

// Rows C y = d describing the affine part of X0 over flattened trajectories.
AffineSystem affine_part(const ProblemSpec& spec, const X0Spec& base, const Grid& grid) {
  AffineSystem sys;
  const std::size_t n = spec.n, m = spec.m, N = grid.N;
  for (std::size_t i = 0; i < base.fixed_initial_state.size(); ++i)
    if (base.fixed_initial_state[i])
      sys.add_row({{DiscreteTrajectory::state_index(n, 0, i), 1.0}}, *base.fixed_initial_state[i]);
  for (std::size_t i = 0; i < base.fixed_terminal_state.size(); ++i)
    if (base.fixed_terminal_state[i])
      sys.add_row({{DiscreteTrajectory::state_index(n, N, i), 1.0}}, *base.fixed_terminal_state[i]);
  for (const auto& row : base.linear_dynamics) {
    const auto& node = row.rhs.node();
    for (std::size_t j = 0; j < N; ++j) {
      const std::size_t r = node.coeffs.size() == 1 ? 0 : j;
      const auto& a = node.coeffs[r];
      // (x_{j+1} - x_j) - h a^T y_j = h b
      std::vector<std::pair<std::size_t, double>> terms;
      terms.emplace_back(DiscreteTrajectory::state_index(n, j + 1, row.row), 1.0);
      terms.emplace_back(DiscreteTrajectory::state_index(n, j, row.row), -1.0);
      for (std::size_t i = 0; i < n; ++i) terms.emplace_back(DiscreteTrajectory::state_index(n, j, i), -grid.h * a[i]);
      for (std::size_t c = 0; c < m; ++c)
        terms.emplace_back(DiscreteTrajectory::control_index(n, m, N, j, c), -grid.h * a[n + c]);
      sys.add_row(terms, grid.h * node.offsets[r]);
    }
  }
  return sys;
}

}  // namespace

DiscreteTrajectory project_onto_base(const DiscreteTrajectory& traj, const ProblemSpec& spec,
                                     const X0Spec& base, const Grid& grid) {
  check_shape(traj, spec.n, spec.m, grid);
  std::vector<double> y = traj.flatten();
  const AffineSystem sys = affine_part(spec, base, grid);
  if (sys.rows > 0) {
    using SpMat = Eigen::SparseMatrix<double>;
    SpMat C(sys.rows, static_cast<Eigen::Index>(y.size()));
    C.setFromTriplets(sys.entries.begin(), sys.entries.end());
    const Eigen::Map<const Eigen::VectorXd> d(sys.rhs.data(), sys.rows);
    Eigen::Map<Eigen::VectorXd> yv(y.data(), static_cast<Eigen::Index>(y.size()));
    const SpMat CCt = C * C.transpose();
    Eigen::SimplicialLDLT<SpMat> ldlt(CCt);
    if (ldlt.info() != Eigen::Success) throw std::runtime_error("X0 equalities are degenerate");
    for (int pass = 0; pass < 3; ++pass) {
      const Eigen::VectorXd r = C * yv - d;
      if (r.lpNorm<Eigen::Infinity>() <= 1e-14 * (1.0 + d.lpNorm<Eigen::Infinity>())) break;
      yv -= C.transpose() * ldlt.solve(r);
    }
    const double resid = (C * yv - d).lpNorm<Eigen::Infinity>();
    if (!(resid <= 1e-8 * (1.0 + d.lpNorm<Eigen::Infinity>())))
      throw std::runtime_error(fmt::format("X0 equalities are inconsistent (residual {:.3g})", resid));
  }
  auto out = DiscreteTrajectory::unflatten(y, spec.n, spec.m, grid.N);
  if (base.control_box) {
    for (Eigen::Index j = 0; j < out.u.rows(); ++j)
      for (std::size_t c = 0; c < spec.m; ++c)
        out.u(j, static_cast<Eigen::Index>(c)) =
            std::clamp(out.u(j, static_cast<Eigen::Index>(c)), base.control_box->lower[c], base.control_box->upper[c]);
  }
  return out;
}

double base_violation(const DiscreteTrajectory& traj, const ProblemSpec& spec, const X0Spec& base,
                      const Grid& grid) {
  check_shape(traj, spec.n, spec.m, grid);
  const std::vector<double> y = traj.flatten();
  const AffineSystem sys = affine_part(spec, base, grid);
  std::vector<double> lhs(static_cast<std::size_t>(sys.rows), 0.0);
  for (const auto& t : sys.entries) lhs[static_cast<std::size_t>(t.row())] += t.value() * y[static_cast<std::size_t>(t.col())];
  double worst = 0.0;
  for (int r = 0; r < sys.rows; ++r) {
    double v = std::abs(lhs[static_cast<std::size_t>(r)] - sys.rhs[static_cast<std::size_t>(r)]);
    // dynamics rows are scaled by h; report the derivative residual
    if (r >= static_cast<int>(sys.rows - base.linear_dynamics.size() * grid.N)) v /= grid.h;
    worst = std::max(worst, v);
  }
  if (base.control_box) {
    for (Eigen::Index j = 0; j < traj.u.rows(); ++j)
      for (std::size_t c = 0; c < spec.m; ++c) {
        const double u = traj.u(j, static_cast<Eigen::Index>(c));
        worst = std::max({worst, base.control_box->lower[c] - u, u - base.control_box->upper[c]});
      }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

nlohmann::json box_json(const ControlBounds& box) { return {{"lower", box.lower}, {"upper", box.upper}}; }

ControlBounds box_from_json(const nlohmann::json& doc) {
  return ControlBounds{doc.at("lower").get<std::vector<double>>(), doc.at("upper").get<std::vector<double>>()};
}

nlohmann::json fixed_json(const std::vector<std::optional<double>>& fixed) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& v : fixed) arr.push_back(v ? nlohmann::json(*v) : nlohmann::json(nullptr));
  return arr;
}

std::vector<std::optional<double>> fixed_from_json(const nlohmann::json& doc) {
  std::vector<std::optional<double>> out;
  for (const auto& v : doc) out.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
  return out;
}

std::vector<DCPair> pairs_from_json(const nlohmann::json& doc, const char* key) {
  std::vector<DCPair> out;
  if (doc.contains(key))
    for (const auto& p : doc.at(key)) out.push_back(dc_pair_from_json(p));
  return out;
}

nlohmann::json pairs_json(const std::vector<DCPair>& pairs) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : pairs) arr.push_back(to_json(p));
  return arr;
}

}  // namespace

nlohmann::json to_json(const ProblemFile& file) {
  const auto& spec = file.spec;
  nlohmann::json doc;
  doc["n"] = spec.n;
  doc["m"] = spec.m;
  doc["T"] = spec.T;
  if (spec.grid_intervals) doc["N"] = *spec.grid_intervals;
  doc["cost"] = to_json(spec.running_cost);
  doc["terminal"] = to_json(spec.terminal_cost);
  nlohmann::json dyn = nlohmann::json::array();
  for (const auto& d : spec.dynamics) dyn.push_back(d ? to_json(*d) : nlohmann::json(nullptr));
  doc["dynamics"] = dyn;
  doc["endpoint_ineq"] = pairs_json(spec.endpoint_ineq);
  doc["endpoint_eq"] = pairs_json(spec.endpoint_eq);
  doc["mixed"] = pairs_json(spec.mixed);
  if (spec.control_bounds) doc["control_bounds"] = box_json(*spec.control_bounds);
  if (file.control_box_mode) doc["control_box_mode"] = mode_name(*file.control_box_mode);
  nlohmann::json x0 = nlohmann::json::object();
  if (!file.base.fixed_initial_state.empty()) x0["fixed_initial_state"] = fixed_json(file.base.fixed_initial_state);
  if (!file.base.fixed_terminal_state.empty()) x0["fixed_terminal_state"] = fixed_json(file.base.fixed_terminal_state);
  nlohmann::json lin = nlohmann::json::array();
  for (const auto& row : file.base.linear_dynamics) lin.push_back({{"row", row.row}, {"rhs", to_json(row.rhs)}});
  x0["linear_dynamics"] = lin;
  if (file.base.control_box) x0["control_box"] = box_json(*file.base.control_box);
  doc["x0_set"] = x0;
  return doc;
}

ProblemFile problem_from_json(const nlohmann::json& doc) {
  try {
    ProblemFile file;
    auto& spec = file.spec;
    spec.n = doc.at("n").get<std::size_t>();
    spec.m = doc.at("m").get<std::size_t>();
    spec.T = doc.at("T").get<double>();
    if (doc.contains("N")) spec.grid_intervals = doc.at("N").get<std::size_t>();
    spec.running_cost = dc_pair_from_json(doc.at("cost"));
    spec.terminal_cost = dc_pair_from_json(doc.at("terminal"));
    for (const auto& d : doc.at("dynamics"))
      spec.dynamics.push_back(d.is_null() ? std::nullopt : std::optional<DCPair>(dc_pair_from_json(d)));
    spec.endpoint_ineq = pairs_from_json(doc, "endpoint_ineq");
    spec.endpoint_eq = pairs_from_json(doc, "endpoint_eq");
    spec.mixed = pairs_from_json(doc, "mixed");
    if (doc.contains("control_bounds")) spec.control_bounds = box_from_json(doc.at("control_bounds"));
    if (doc.contains("control_box_mode"))
      file.control_box_mode = mode_from_name(doc.at("control_box_mode").get<std::string>());
    if (doc.contains("x0_set")) {
      const auto& x0 = doc.at("x0_set");
      if (x0.contains("fixed_initial_state")) file.base.fixed_initial_state = fixed_from_json(x0.at("fixed_initial_state"));
      if (x0.contains("fixed_terminal_state"))
        file.base.fixed_terminal_state = fixed_from_json(x0.at("fixed_terminal_state"));
      if (x0.contains("linear_dynamics"))
        for (const auto& row : x0.at("linear_dynamics"))
          file.base.linear_dynamics.push_back({row.at("row").get<std::size_t>(), expr_from_json(row.at("rhs"))});
      if (x0.contains("control_box")) file.base.control_box = box_from_json(x0.at("control_box"));
    }
    return file;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(fmt::format("malformed problem document: {}", e.what()));
  }
}

ProblemFile load_problem(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument(fmt::format("cannot open problem file '{}'", path));
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(fmt::format("problem file '{}' is not valid JSON: {}", path, e.what()));
  }
  auto file = problem_from_json(doc);
  const auto issues = validate(file.spec, file.base);
  if (!issues.empty()) {
    std::string msg = fmt::format("problem file '{}' is invalid:", path);
    for (const auto& issue : issues) msg += "\n  " + issue;
    throw std::invalid_argument(msg);
  }
  return file;
}

}  // namespace bstep

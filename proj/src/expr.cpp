#include "bstep/expr.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "bstep/convex_program.hpp"

namespace bstep {

namespace {

using NodePtr = std::shared_ptr<ConvexExpr::Node>;

std::size_t merge_table_length(std::size_t a, std::size_t b) {
  if (a == 0) return b;
  if (b == 0 || a == b) return a;
  throw ExprError(fmt::format("time tables of different lengths ({} and {})", a, b));
}

std::size_t common_arity(const std::vector<ConvexExpr>& children, const char* what) {
  if (children.empty()) throw ExprError(fmt::format("{} needs at least one child", what));
  const std::size_t arity = children.front().arity();
  for (const auto& child : children)
    if (child.arity() != arity)
      throw ExprError(fmt::format("{} children have different arities ({} and {})", what, arity,
                                  child.arity()));
  return arity;
}

std::size_t children_table_length(const std::vector<ConvexExpr>& children) {
  std::size_t len = 0;
  for (const auto& child : children) len = merge_table_length(len, child.table_length());
  return len;
}

void check_point(const ConvexExpr& expr, std::span<const double> point) {
  if (point.size() != expr.arity())
    throw ExprError(fmt::format("point has dimension {}, expression arity is {}", point.size(),
                                expr.arity()));
}

std::size_t row_index(const ConvexExpr::Node& node, std::optional<std::size_t> sample) {
  if (node.coeffs.size() == 1) return 0;
  if (!sample) throw ExprError("time-varying expression evaluated without a grid sample");
  if (*sample >= node.coeffs.size())
    throw ExprError(fmt::format("grid sample {} outside time table of length {}", *sample,
                                node.coeffs.size()));
  return *sample;
}

double affine_value(const ConvexExpr::Node& node, std::span<const double> point,
                    std::optional<std::size_t> sample) {
  const std::size_t r = row_index(node, sample);
  const auto& a = node.coeffs[r];
  double v = node.offsets[r];
  for (std::size_t i = 0; i < a.size(); ++i) v += a[i] * point[i];
  return v;
}

// value of expr; when grad is non-empty, grad += weight * subgradient
double eval_impl(const ConvexExpr& expr, std::span<const double> point, std::span<double> grad,
                 double weight, std::optional<std::size_t> sample) {
  const auto& node = expr.node();
  const bool want = !grad.empty();
  switch (node.kind) {
    case ExprKind::kAffine: {
      const double v = affine_value(node, point, sample);
      if (want && weight != 0.0) {
        const auto& a = node.coeffs[row_index(node, sample)];
        for (std::size_t i = 0; i < a.size(); ++i) grad[i] += weight * a[i];
      }
      return v;
    }
    case ExprKind::kMax: {
      std::size_t best = 0;
      double best_v = eval_impl(node.children[0], point, {}, 0.0, sample);
      for (std::size_t i = 1; i < node.children.size(); ++i) {
        const double v = eval_impl(node.children[i], point, {}, 0.0, sample);
        if (v > best_v) {
          best_v = v;
          best = i;
        }
      }
      if (want && weight != 0.0) eval_impl(node.children[best], point, grad, weight, sample);
      return best_v;
    }
    case ExprKind::kPositivePart: {
      const double v = eval_impl(node.children[0], point, {}, 0.0, sample);
      if (v <= 0.0) return 0.0;
      if (want && weight != 0.0) eval_impl(node.children[0], point, grad, weight, sample);
      return v;
    }
    case ExprKind::kSquare: {
      const double v = eval_impl(node.children[0], point, {}, 0.0, sample);
      if (want && weight != 0.0 && v != 0.0)
        eval_impl(node.children[0], point, grad, 2.0 * v * weight, sample);
      return v * v;
    }
    case ExprKind::kScale: {
      return node.scale * eval_impl(node.children[0], point, grad, weight * node.scale, sample);
    }
    case ExprKind::kSum: {
      double v = 0.0;
      for (const auto& child : node.children) v += eval_impl(child, point, grad, weight, sample);
      return v;
    }
    case ExprKind::kSquaredNorm: {
      double v = 0.0;
      for (const auto& child : node.children) {
        const double c = eval_impl(child, point, {}, 0.0, sample);
        if (want && weight != 0.0 && c != 0.0) eval_impl(child, point, grad, 2.0 * c * weight, sample);
        v += c * c;
      }
      return v;
    }
  }
  return 0.0;
}

}  // namespace

// ---------------------------------------------------------------------------
// construction

ConvexExpr ConvexExpr::affine(std::vector<double> coeffs, double offset) {
  if (coeffs.empty()) throw ExprError("affine expression needs at least one coefficient");
  for (double c : coeffs)
    if (!std::isfinite(c)) throw ExprError("non-finite affine coefficient");
  if (!std::isfinite(offset)) throw ExprError("non-finite affine offset");
  auto node = std::make_shared<Node>();
  node->kind = ExprKind::kAffine;
  node->arity = coeffs.size();
  node->coeffs.push_back(std::move(coeffs));
  node->offsets.push_back(offset);
  return ConvexExpr(node);
}

ConvexExpr ConvexExpr::affine_table(std::vector<std::vector<double>> coeffs,
                                    std::vector<double> offsets) {
  if (coeffs.empty()) throw ExprError("time table needs at least one row");
  if (coeffs.size() != offsets.size())
    throw ExprError(fmt::format("time table has {} coefficient rows but {} offsets", coeffs.size(),
                                offsets.size()));
  const std::size_t arity = coeffs.front().size();
  if (arity == 0) throw ExprError("affine expression needs at least one coefficient");
  for (const auto& row : coeffs) {
    if (row.size() != arity) throw ExprError("time table rows have different lengths");
    for (double c : row)
      if (!std::isfinite(c)) throw ExprError("non-finite affine coefficient");
  }
  auto node = std::make_shared<Node>();
  node->kind = ExprKind::kAffine;
  node->arity = arity;
  node->table_length = coeffs.size();
  node->coeffs = std::move(coeffs);
  node->offsets = std::move(offsets);
  return ConvexExpr(node);
}

ConvexExpr::ConvexExpr() {
  auto node = std::make_shared<Node>();
  node->coeffs = {{}};
  node->offsets = {0.0};
  node_ = std::move(node);
}

ConvexExpr ConvexExpr::constant(std::size_t arity, double value) {
  return affine(std::vector<double>(arity, 0.0), value);
}

ConvexExpr ConvexExpr::coordinate(std::size_t arity, std::size_t index, double coeff,
                                  double offset) {
  if (index >= arity) throw ExprError(fmt::format("coordinate {} outside arity {}", index, arity));
  std::vector<double> a(arity, 0.0);
  a[index] = coeff;
  return affine(std::move(a), offset);
}

ConvexExpr ConvexExpr::max_of(std::vector<ConvexExpr> children) {
  auto node = std::make_shared<Node>();
  node->kind = ExprKind::kMax;
  node->arity = common_arity(children, "max");
  node->table_length = children_table_length(children);
  node->children = std::move(children);
  return ConvexExpr(node);
}

ConvexExpr ConvexExpr::positive_part(ConvexExpr child) {
  auto node = std::make_shared<Node>();
  node->kind = ExprKind::kPositivePart;
  node->arity = child.arity();
  node->table_length = child.table_length();
  node->children.push_back(std::move(child));
  return ConvexExpr(node);
}

ConvexExpr ConvexExpr::square(ConvexExpr child) {
  if (!child.is_nonnegative())
    throw ExprError("square requires a child that is nonnegative by construction");
  auto node = std::make_shared<Node>();
  node->kind = ExprKind::kSquare;
  node->arity = child.arity();
  node->table_length = child.table_length();
  node->children.push_back(std::move(child));
  return ConvexExpr(node);
}

ConvexExpr ConvexExpr::scaled(double factor, ConvexExpr child) {
  if (!(factor >= 0.0) || !std::isfinite(factor))
    throw ExprError(fmt::format("scale factor must be finite and nonnegative, got {}", factor));
  auto node = std::make_shared<Node>();
  node->kind = ExprKind::kScale;
  node->arity = child.arity();
  node->scale = factor;
  node->table_length = child.table_length();
  node->children.push_back(std::move(child));
  return ConvexExpr(node);
}

ConvexExpr ConvexExpr::sum(std::vector<ConvexExpr> children) {
  auto node = std::make_shared<Node>();
  node->kind = ExprKind::kSum;
  node->arity = common_arity(children, "sum");
  node->table_length = children_table_length(children);
  node->children = std::move(children);
  return ConvexExpr(node);
}

ConvexExpr ConvexExpr::squared_norm(std::vector<ConvexExpr> children) {
  for (const auto& child : children)
    if (child.kind() != ExprKind::kAffine)
      throw ExprError("squared norm children must be affine");
  auto node = std::make_shared<Node>();
  node->kind = ExprKind::kSquaredNorm;
  node->arity = common_arity(children, "squared norm");
  node->table_length = children_table_length(children);
  node->children = std::move(children);
  return ConvexExpr(node);
}

ExprKind ConvexExpr::kind() const { return node_->kind; }
std::size_t ConvexExpr::arity() const { return node_->arity; }
std::size_t ConvexExpr::table_length() const { return node_->table_length; }
const std::vector<ConvexExpr>& ConvexExpr::children() const { return node_->children; }

bool ConvexExpr::is_nonnegative() const {
  const auto& node = *node_;
  switch (node.kind) {
    case ExprKind::kPositivePart:
    case ExprKind::kSquare:
    case ExprKind::kSquaredNorm:
      return true;
    case ExprKind::kAffine:
      for (std::size_t r = 0; r < node.coeffs.size(); ++r) {
        if (node.offsets[r] < 0.0) return false;
        for (double c : node.coeffs[r])
          if (c != 0.0) return false;
      }
      return true;
    case ExprKind::kMax:
      return std::any_of(node.children.begin(), node.children.end(),
                         [](const ConvexExpr& c) { return c.is_nonnegative(); });
    case ExprKind::kScale:
      return node.children[0].is_nonnegative();
    case ExprKind::kSum:
      return std::all_of(node.children.begin(), node.children.end(),
                         [](const ConvexExpr& c) { return c.is_nonnegative(); });
  }
  return false;
}

// ---------------------------------------------------------------------------
// evaluation

double eval(const ConvexExpr& expr, std::span<const double> point,
            std::optional<std::size_t> sample) {
  check_point(expr, point);
  return eval_impl(expr, point, {}, 0.0, sample);
}

std::vector<double> subgradient(const ConvexExpr& expr, std::span<const double> point,
                                std::optional<std::size_t> sample) {
  std::vector<double> grad(expr.arity(), 0.0);
  eval_with_subgradient(expr, point, grad, sample);
  return grad;
}

double eval_with_subgradient(const ConvexExpr& expr, std::span<const double> point,
                             std::span<double> grad, std::optional<std::size_t> sample) {
  check_point(expr, point);
  if (grad.size() != expr.arity())
    throw ExprError(fmt::format("gradient buffer has size {}, expected {}", grad.size(), expr.arity()));
  std::fill(grad.begin(), grad.end(), 0.0);
  return eval_impl(expr, point, grad, 1.0, sample);
}

double eval(const DCPair& pair, std::span<const double> point, std::optional<std::size_t> sample) {
  return eval(pair.convex_part, point, sample) - eval(pair.concave_part, point, sample);
}

// ---------------------------------------------------------------------------
// epigraph reduction

namespace {

bool is_plain_variable(const LinearForm& form) {
  return form.constant == 0.0 && form.terms.size() == 1 && form.terms[0].second == 1.0;
}

LinearForm affine_form(const ConvexExpr::Node& node, std::span<const LinearForm> args,
                       std::optional<std::size_t> sample) {
  const std::size_t r = row_index(node, sample);
  LinearForm out = LinearForm::constant_form(node.offsets[r]);
  const auto& a = node.coeffs[r];
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != 0.0) out += a[i] * args[i];
  return out.compressed();
}

// variable s with s >= form
int as_variable(const QuadForm& form, ProgramBuilder& builder) {
  if (form.is_linear() && is_plain_variable(form.lin)) return form.lin.terms[0].first;
  return builder.add_epigraph_variable({form});
}

// a * form^2 as a sum of squares of single variables
void add_square_terms(const LinearForm& form, double a, ProgramBuilder& builder, QuadForm& out) {
  if (form.terms.empty()) {
    out.lin += a * form.constant * form.constant;
  } else if (form.terms.size() == 1 && form.constant == 0.0) {
    const auto& [var, coeff] = form.terms[0];
    out.squares.emplace_back(var, a * coeff * coeff);
  } else {
    out.squares.emplace_back(builder.add_defined_variable(form), a);
  }
}

}  // namespace

QuadForm reduce_epigraph(const ConvexExpr& expr, std::span<const LinearForm> args, ProgramBuilder& builder,
                         std::optional<std::size_t> sample) {
  if (args.size() != expr.arity())
    throw ExprError(fmt::format("{} argument forms for arity {}", args.size(), expr.arity()));
  const auto& node = expr.node();
  switch (node.kind) {
    case ExprKind::kAffine:
      return affine_form(node, args, sample);
    case ExprKind::kSum: {
      QuadForm out;
      for (const auto& child : node.children) out += reduce_epigraph(child, args, builder, sample);
      return out.compressed();
    }
    case ExprKind::kScale: {
      if (node.scale == 0.0) return QuadForm{};
      QuadForm inner = reduce_epigraph(node.children[0], args, builder, sample);
      if (node.scale < 0.0) inner = LinearForm::variable(as_variable(inner, builder));
      return node.scale * inner;
    }
    case ExprKind::kMax: {
      if (node.children.size() == 1) return reduce_epigraph(node.children[0], args, builder, sample);
      std::vector<QuadForm> lows;
      for (const auto& child : node.children) lows.push_back(reduce_epigraph(child, args, builder, sample));
      return LinearForm::variable(builder.add_epigraph_variable(std::move(lows)));
    }
    case ExprKind::kPositivePart: {
      QuadForm inner = reduce_epigraph(node.children[0], args, builder, sample);
      return LinearForm::variable(builder.add_epigraph_variable({inner, LinearForm{}}));
    }
    case ExprKind::kSquare: {
      // child >= 0, so s^2 with s >= child is exact
      const QuadForm inner = reduce_epigraph(node.children[0], args, builder, sample);
      QuadForm out;
      out.squares.emplace_back(as_variable(inner, builder), 1.0);
      return out;
    }
    case ExprKind::kSquaredNorm: {
      QuadForm out;
      for (const auto& child : node.children) add_square_terms(affine_form(child.node(), args, sample), 1.0, builder, out);
      return out.compressed();
    }
  }
  return QuadForm{};
}

void add_to_objective(const ConvexExpr& expr, double weight, std::span<const LinearForm> args,
                      ProgramBuilder& builder, std::optional<std::size_t> sample) {
  if (args.size() != expr.arity())
    throw ExprError(fmt::format("{} argument forms for arity {}", args.size(), expr.arity()));
  if (weight < 0.0) throw ExprError("negative objective weight");
  if (weight == 0.0) return;
  const auto& node = expr.node();
  switch (node.kind) {
    case ExprKind::kSum:
      for (const auto& child : node.children) add_to_objective(child, weight, args, builder, sample);
      return;
    case ExprKind::kScale:
      if (node.scale < 0.0) break;
      add_to_objective(node.children[0], weight * node.scale, args, builder, sample);
      return;
    case ExprKind::kSquare: {
      const QuadForm inner = reduce_epigraph(node.children[0], args, builder, sample);
      builder.add_square_objective(inner.is_linear() ? inner.lin : LinearForm::variable(as_variable(inner, builder)),
                                   weight);
      return;
    }
    case ExprKind::kSquaredNorm:
      for (const auto& child : node.children)
        builder.add_square_objective(affine_form(child.node(), args, sample), weight);
      return;
    default:
      break;
  }
  builder.add_objective(reduce_epigraph(expr, args, builder, sample), weight);
}

// ---------------------------------------------------------------------------
// JSON

std::string kind_name(ExprKind kind) {
  switch (kind) {
    case ExprKind::kAffine: return "affine";
    case ExprKind::kMax: return "max";
    case ExprKind::kPositivePart: return "pos";
    case ExprKind::kSquare: return "square";
    case ExprKind::kScale: return "scale";
    case ExprKind::kSum: return "sum";
    case ExprKind::kSquaredNorm: return "sqnorm";
  }
  return "?";
}

nlohmann::json to_json(const ConvexExpr& expr) {
  const auto& node = expr.node();
  nlohmann::json doc;
  doc["kind"] = kind_name(node.kind);
  if (node.kind == ExprKind::kAffine) {
    if (node.table_length == 0) {
      doc["coeffs"] = node.coeffs[0];
      doc["offset"] = node.offsets[0];
    } else {
      doc["table"] = {{"coeffs", node.coeffs}, {"offsets", node.offsets}};
    }
    return doc;
  }
  if (node.kind == ExprKind::kScale) doc["scale"] = node.scale;
  nlohmann::json children = nlohmann::json::array();
  for (const auto& child : node.children) children.push_back(to_json(child));
  doc["children"] = std::move(children);
  return doc;
}

ConvexExpr expr_from_json(const nlohmann::json& doc) {
  try {
    const std::string kind = doc.at("kind").get<std::string>();
    if (kind == "affine") {
      if (doc.contains("table")) {
        const auto& table = doc.at("table");
        return ConvexExpr::affine_table(table.at("coeffs").get<std::vector<std::vector<double>>>(),
                                        table.at("offsets").get<std::vector<double>>());
      }
      return ConvexExpr::affine(doc.at("coeffs").get<std::vector<double>>(), doc.value("offset", 0.0));
    }
    std::vector<ConvexExpr> children;
    if (doc.contains("children"))
      for (const auto& child : doc.at("children")) children.push_back(expr_from_json(child));
    if (doc.contains("child")) children.push_back(expr_from_json(doc.at("child")));
    auto single = [&]() -> ConvexExpr {
      if (children.size() != 1) throw ExprError(fmt::format("'{}' node takes exactly one child", kind));
      return children[0];
    };
    if (kind == "max") return ConvexExpr::max_of(std::move(children));
    if (kind == "pos") return ConvexExpr::positive_part(single());
    if (kind == "square") return ConvexExpr::square(single());
    if (kind == "scale") return ConvexExpr::scaled(doc.at("scale").get<double>(), single());
    if (kind == "sum") return ConvexExpr::sum(std::move(children));
    if (kind == "sqnorm") return ConvexExpr::squared_norm(std::move(children));
    throw ExprError(fmt::format("unknown expression kind '{}'", kind));
  } catch (const nlohmann::json::exception& e) {
    throw ExprError(fmt::format("malformed expression document: {}", e.what()));
  }
}

nlohmann::json to_json(const DCPair& pair) {
  return {{"convex", to_json(pair.convex_part)}, {"concave", to_json(pair.concave_part)}};
}

DCPair dc_pair_from_json(const nlohmann::json& doc) {
  if (!doc.is_object() || !doc.contains("convex") || !doc.contains("concave"))
    throw ExprError("DC pair needs 'convex' and 'concave' members");
  DCPair pair{expr_from_json(doc.at("convex")), expr_from_json(doc.at("concave"))};
  if (pair.convex_part.arity() != pair.concave_part.arity())
    throw ExprError(fmt::format("DC pair arities differ ({} and {})", pair.convex_part.arity(),
                                pair.concave_part.arity()));
  return pair;
}

}  // namespace bstep

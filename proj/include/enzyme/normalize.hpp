#pragma once

#include <map>
#include <string>

#include "enzyme/eval.hpp"
#include "enzyme/plan.hpp"

namespace enzyme {

inline constexpr int kNormalizeVersion = 1;

struct NormalizedPlan {
  PlanPtr plan;  // schema-annotated, CTE-free, fixpoint under the rule set
  int version = kNormalizeVersion;
};

namespace detail {

/// Constant-folds deterministic literal-only subexpressions. Time-dependent
/// functions are never folded; a subtree that would error at runtime is left
/// in place so evaluation order semantics are preserved.
inline ExprPtr fold_constants(const ExprPtr& expr, const Schema& schema, const FunctionRegistry& registry) {
  auto is_lit = [](const ExprPtr& e) { return e->kind == ExprKind::Literal; };
  return transform_expr(expr, [&](const ExprPtr& e) -> ExprPtr {
    switch (e->kind) {
      case ExprKind::Binary: {
        const ExprPtr& l = e->children[0];
        const ExprPtr& r = e->children[1];
        // Identity simplifications that drop only literal operands.
        if (e->op == BinOp::And) {
          if (is_lit(l) && !l->literal.is_null() && l->literal.is_bool() && l->literal.as_bool()) return r;
          if (is_lit(r) && !r->literal.is_null() && r->literal.is_bool() && r->literal.as_bool()) return l;
        }
        if (e->op == BinOp::Or) {
          if (is_lit(l) && !l->literal.is_null() && l->literal.is_bool() && !l->literal.as_bool()) return r;
          if (is_lit(r) && !r->literal.is_null() && r->literal.is_bool() && !r->literal.as_bool()) return l;
        }
        break;
      }
      default:
        break;
    }
    bool foldable_kind = e->kind == ExprKind::Binary || e->kind == ExprKind::Not ||
                         e->kind == ExprKind::IsNull || e->kind == ExprKind::InList ||
                         e->kind == ExprKind::Case ||
                         (e->kind == ExprKind::Func && registry.has(e->fn_name) &&
                          registry.get(e->fn_name).deterministic);
    if (!foldable_kind || e->children.empty()) return e;
    for (const ExprPtr& c : e->children) {
      if (c->kind != ExprKind::Literal && c->kind != ExprKind::Interval) return e;
    }
    if (e->kind == ExprKind::Binary &&
        (e->children[1]->kind == ExprKind::Interval || e->children[0]->kind == ExprKind::Interval)) {
      // date/interval arithmetic folds like any literal expression
    }
    try {
      ExprType t = infer_expr(e, schema, registry);
      EvalEnv env;
      env.registry = &registry;
      Value v = eval_expr(e, {}, env);
      return lit(std::move(v), t.type);
    } catch (const Error&) {
      return e;
    }
  });
}

inline bool is_identity_project(const PlanNode& n) {
  const Schema& in = n.children[0]->out_schema();
  if (n.exprs.size() != in.size()) return false;
  for (size_t i = 0; i < n.exprs.size(); ++i) {
    if (n.exprs[i]->kind != ExprKind::ColumnRef || n.exprs[i]->column != i) return false;
    if (n.names[i] != in.at(i).name) return false;
  }
  return true;
}

inline PlanPtr inline_ctes(const PlanPtr& p, std::map<std::string, PlanPtr>& env) {
  if (p->kind == PlanKind::With) {
    PlanPtr def = inline_ctes(p->children[0], env);
    auto saved = env.find(p->cte_name) != env.end() ? std::optional(env[p->cte_name]) : std::nullopt;
    env[p->cte_name] = def;
    PlanPtr body = inline_ctes(p->children[1], env);
    if (saved)
      env[p->cte_name] = *saved;
    else
      env.erase(p->cte_name);
    return body;
  }
  if (p->kind == PlanKind::CteRef) {
    auto it = env.find(p->cte_name);
    if (it == env.end()) raise(ErrorCode::UnknownTable, "CTE '" + p->cte_name + "'");
    return it->second;
  }
  return map_children(p, [&](const PlanPtr& c) { return inline_ctes(c, env); });
}

inline PlanPtr normalize_once(const PlanPtr& p, const FunctionRegistry& registry) {
  PlanPtr n = map_children(p, [&](const PlanPtr& c) { return normalize_once(c, registry); });
  auto node = clone_node(n);

  // Fold constants in every expression position.
  if (!node->children.empty() || node->kind == PlanKind::Scan) {
    const Schema* in = node->children.empty() ? nullptr : &node->children[0]->out_schema();
    auto fold = [&](const ExprPtr& e, const Schema& s) { return fold_constants(e, s, registry); };
    if (in) {
      for (auto& e : node->exprs) e = fold(e, *in);
      if (node->predicate) node->predicate = fold(node->predicate, *in);
      for (auto& e : node->group_keys) e = fold(e, *in);
      for (auto& a : node->aggregates) {
        if (a.arg) a.arg = fold(a.arg, *in);
        if (a.order_by) a.order_by = fold(a.order_by, *in);
      }
      for (auto& e : node->partition_keys) e = fold(e, *in);
      for (auto& k : node->order_keys) k.expr = fold(k.expr, *in);
      for (auto& f : node->window_fns)
        if (f.arg) f.arg = fold(f.arg, *in);
    }
    if (node->condition && node->children.size() == 2) {
      std::vector<Column> cols;
      std::vector<std::string> used;
      for (const Column& c : node->children[0]->out_schema().columns())
        cols.push_back({detail::dedup_name(used, c.name), c.type, true});
      for (const Column& c : node->children[1]->out_schema().columns())
        cols.push_back({detail::dedup_name(used, c.name), c.type, true});
      node->condition = fold(node->condition, Schema(cols));
    }
  }

  // Rewrites preserve the node's output schema; keep the annotation so
  // parents in the same pass can keep folding.
  auto annotated = [&](PlanPtr rebuilt) {
    auto m = clone_node(rebuilt);
    m->schema = node->schema;
    return PlanPtr(m);
  };
  switch (node->kind) {
    case PlanKind::Filter: {
      // filter(true) is a no-op.
      if (node->predicate->kind == ExprKind::Literal && node->predicate->literal.is_bool() &&
          !node->predicate->literal.is_null() && node->predicate->literal.as_bool())
        return node->children[0];
      // Merge adjacent filters into one conjunction.
      if (node->children[0]->kind == PlanKind::Filter) {
        const PlanPtr& inner = node->children[0];
        return annotated(filter(inner->children[0], binary(BinOp::And, node->predicate, inner->predicate)));
      }
      break;
    }
    case PlanKind::Project: {
      if (node->children[0]->kind == PlanKind::Project) {
        const PlanPtr& inner = node->children[0];
        std::vector<ExprPtr> composed;
        composed.reserve(node->exprs.size());
        for (const ExprPtr& e : node->exprs) composed.push_back(substitute_columns(e, inner->exprs));
        return annotated(project(inner->children[0], composed, node->names));
      }
      if (node->children[0]->schema && is_identity_project(*node)) return node->children[0];
      break;
    }
    case PlanKind::UnionAll: {
      bool nested = false;
      for (const auto& c : node->children) nested = nested || c->kind == PlanKind::UnionAll;
      if (nested) {
        std::vector<PlanPtr> flat;
        for (const auto& c : node->children) {
          if (c->kind == PlanKind::UnionAll)
            for (const auto& g : c->children) flat.push_back(g);
          else
            flat.push_back(c);
        }
        return annotated(union_all(flat));
      }
      break;
    }
    default:
      break;
  }
  return node;
}

}  // namespace detail

/// Rewrites an analyzed plan into the canonical simplified form: CTEs inlined,
/// adjacent filters merged, stacked and no-op projections collapsed, constants
/// folded (never time-dependent functions), nested unions flattened. Applied
/// to fixpoint; semantics-preserving.
inline NormalizedPlan normalize(const PlanPtr& plan, const Catalog& catalog,
                                const FunctionRegistry& registry = FunctionRegistry::builtins(),
                                int version = kNormalizeVersion) {
  if (version != kNormalizeVersion)
    raise(ErrorCode::Internal, "unsupported normalization version " + std::to_string(version));
  std::map<std::string, PlanPtr> env;
  PlanPtr p = detail::inline_ctes(plan, env);
  p = infer_schema(p, catalog, registry);
  std::string before = plan_serialize(p);
  for (int iter = 0; iter < 32; ++iter) {
    PlanPtr next = detail::normalize_once(p, registry);
    std::string after = plan_serialize(next);
    if (after == before) return {infer_schema(next, catalog, registry), version};
    before = after;
    p = infer_schema(next, catalog, registry);
  }
  raise(ErrorCode::Internal, "normalization did not reach a fixpoint in 32 iterations");
}

}  // namespace enzyme

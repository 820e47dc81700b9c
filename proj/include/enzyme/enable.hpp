#pragma once

#include <optional>
#include <string>
#include <vector>

#include "enzyme/normalize.hpp"
#include "enzyme/plan.hpp"

namespace enzyme {

/// Hidden backing column storing the derived row identifier (hex).
inline constexpr const char* kRowIdColumn = "__enzyme_row_id";

/// How one backing column reacts to signed input deltas. Only these kinds are
/// merge-adjustable; everything else goes through group recomputation.
struct MergeComponent {
  enum class Kind { Sum, Count, CountStar, GroupKey };
  Kind kind = Kind::GroupKey;
  ExprPtr arg;          // over the aggregate's input schema
  size_t backing_col = 0;
  size_t paired_count_col = SIZE_MAX;  // Sum only: count of its non-null inputs
};

/// The internally stored form of an MV: a backing plan computing stored
/// columns (user data plus metadata) and a top-level projection rebuilding
/// the user-visible columns.
struct EnabledPlan {
  PlanPtr backing_plan;                 // schema-annotated
  std::vector<ExprPtr> top_exprs;       // over backing columns
  std::vector<std::string> top_names;

  bool has_top_aggregate = false;
  PlanPtr top_aggregate;                // the decomposed aggregate inside backing_plan
  size_t num_group_keys = 0;
  bool merge_adjustable = false;
  std::vector<MergeComponent> merge_components;  // one per backing column when adjustable
  std::optional<size_t> count_star_col;          // per-group count used for emptiness

  bool has_top_window = false;
  PlanPtr top_window;
  std::vector<ExprPtr> window_key_exprs;  // partition keys over backing columns

  const Schema& backing_schema() const { return backing_plan->out_schema(); }

  /// Backing storage schema: data columns plus the hidden row id column.
  Schema storage_schema() const {
    std::vector<Column> cols = backing_schema().columns();
    cols.push_back({kRowIdColumn, ValueType::String, false});
    return Schema(cols);
  }

  PlanPtr top_view(PlanPtr backing_source) const {
    return project(std::move(backing_source), top_exprs, top_names);
  }
};

namespace detail {

struct Decomposition {
  std::vector<AggregateSpec> specs;      // decomposed aggregate list
  std::vector<ExprPtr> reconstruction;   // original output ordinal -> expr over decomposed output
  std::vector<MergeComponent> components;
  bool adjustable = true;
  std::optional<size_t> count_star_col;
};

inline ExprPtr float_of(ExprPtr e) { return binary(BinOp::Mul, std::move(e), lit_float(1.0)); }

inline Decomposition decompose_aggregates(const PlanNode& agg, const Schema& input,
                                          const FunctionRegistry& reg) {
  Decomposition out;
  const size_t nkeys = agg.group_keys.size();
  for (size_t i = 0; i < nkeys; ++i) {
    out.reconstruction.push_back(col(i));
    out.components.push_back({MergeComponent::Kind::GroupKey, nullptr, i});
  }
  auto next_col = [&]() { return nkeys + out.specs.size(); };

  for (size_t i = 0; i < agg.aggregates.size(); ++i) {
    const AggregateSpec& a = agg.aggregates[i];
    std::string tag = std::to_string(i);
    switch (a.kind) {
      case AggKind::Avg: {
        size_t sum_col = next_col();
        out.specs.push_back({AggKind::Sum, a.arg, nullptr, false, "__enzyme_sum_" + tag});
        out.components.push_back({MergeComponent::Kind::Sum, a.arg, sum_col, sum_col + 1});
        size_t cnt_col = next_col();
        out.specs.push_back({AggKind::Count, a.arg, nullptr, false, "__enzyme_cnt_" + tag});
        out.components.push_back({MergeComponent::Kind::Count, a.arg, cnt_col});
        out.reconstruction.push_back(
            binary(BinOp::Div, float_of(col(sum_col)), float_of(col(cnt_col))));
        break;
      }
      case AggKind::Stddev: {
        size_t sum_col = next_col();
        out.specs.push_back({AggKind::Sum, a.arg, nullptr, false, "__enzyme_sum_" + tag});
        out.components.push_back({MergeComponent::Kind::Sum, a.arg, sum_col, sum_col + 2});
        ExprPtr squared = binary(BinOp::Mul, float_of(a.arg), float_of(a.arg));
        size_t sq_col = next_col();
        out.specs.push_back({AggKind::Sum, squared, nullptr, false, "__enzyme_sumsq_" + tag});
        out.components.push_back({MergeComponent::Kind::Sum, squared, sq_col, sq_col + 1});
        size_t cnt_col = next_col();
        out.specs.push_back({AggKind::Count, a.arg, nullptr, false, "__enzyme_cnt_" + tag});
        out.components.push_back({MergeComponent::Kind::Count, a.arg, cnt_col});
        // sample stddev, clamped against rounding below zero
        ExprPtr n = float_of(col(cnt_col));
        ExprPtr mean_sq = binary(BinOp::Div, binary(BinOp::Mul, float_of(col(sum_col)), float_of(col(sum_col))), n);
        ExprPtr var = binary(BinOp::Div, binary(BinOp::Sub, float_of(col(sq_col)), mean_sq),
                             binary(BinOp::Sub, n, lit_float(1.0)));
        ExprPtr clamped = case_expr({binary(BinOp::Lt, var, lit_float(0.0)), lit_float(0.0), var}, true);
        out.reconstruction.push_back(case_expr(
            {binary(BinOp::Lt, col(cnt_col), lit_int(2)), lit_null(ValueType::Float64),
             func("sqrt", {clamped})},
            true));
        break;
      }
      case AggKind::First: {
        ExprType key_type = infer_expr(a.order_by, input, reg);
        if (!key_type.nullable) {
          // first(x order by k) == min over the order-preserving (k, x) pair.
          ExprType val_type = infer_expr(a.arg, input, reg);
          auto pair_fn = std::make_shared<Expression>();
          pair_fn->kind = ExprKind::Func;
          pair_fn->fn_name = "__pair_encode";
          pair_fn->children = {a.order_by, a.arg};
          pair_fn->fn_type_args = {key_type.type, val_type.type};
          size_t pair_col = next_col();
          out.specs.push_back({AggKind::Min, pair_fn, nullptr, false, "__enzyme_first_" + tag});
          out.components.push_back({MergeComponent::Kind::GroupKey, nullptr, pair_col});
          auto decode = std::make_shared<Expression>();
          decode->kind = ExprKind::Func;
          decode->fn_name = "__pair_second";
          decode->children = {col(pair_col)};
          decode->fn_result_type = val_type.type;
          out.reconstruction.push_back(decode);
          out.adjustable = false;
        } else {
          size_t c = next_col();
          out.specs.push_back(a);
          out.components.push_back({MergeComponent::Kind::GroupKey, nullptr, c});
          out.reconstruction.push_back(col(c));
          out.adjustable = false;
        }
        break;
      }
      case AggKind::CollectList:
      case AggKind::CollectSet: {
        AggregateSpec s = a;
        s.ordered = true;  // explicit local ordering
        size_t c = next_col();
        out.specs.push_back(s);
        out.components.push_back({MergeComponent::Kind::GroupKey, nullptr, c});
        out.reconstruction.push_back(col(c));
        out.adjustable = false;
        break;
      }
      case AggKind::Sum: {
        // A paired non-null count lets merges restore the null sum when a
        // group's last contribution is deleted.
        size_t c = next_col();
        out.specs.push_back(a);
        out.components.push_back({MergeComponent::Kind::Sum, a.arg, c, c + 1});
        out.reconstruction.push_back(col(c));
        size_t nn = next_col();
        out.specs.push_back({AggKind::Count, a.arg, nullptr, false, "__enzyme_nn_" + tag});
        out.components.push_back({MergeComponent::Kind::Count, a.arg, nn});
        break;
      }
      case AggKind::Count: {
        size_t c = next_col();
        out.specs.push_back(a);
        out.components.push_back({MergeComponent::Kind::Count, a.arg, c});
        out.reconstruction.push_back(col(c));
        break;
      }
      case AggKind::CountStar: {
        size_t c = next_col();
        out.specs.push_back(a);
        out.components.push_back({MergeComponent::Kind::CountStar, nullptr, c});
        out.reconstruction.push_back(col(c));
        if (!out.count_star_col) out.count_star_col = c;
        break;
      }
      case AggKind::Min:
      case AggKind::Max: {
        size_t c = next_col();
        out.specs.push_back(a);
        out.components.push_back({MergeComponent::Kind::GroupKey, nullptr, c});
        out.reconstruction.push_back(col(c));
        out.adjustable = false;
        break;
      }
    }
  }
  bool any_adjustable = false;
  for (const auto& c : out.components)
    if (c.kind == MergeComponent::Kind::Sum || c.kind == MergeComponent::Kind::Count ||
        c.kind == MergeComponent::Kind::CountStar)
      any_adjustable = true;
  if (any_adjustable && !out.count_star_col) {
    size_t c = next_col();
    out.specs.push_back({AggKind::CountStar, nullptr, nullptr, false, "__enzyme_cnt_star"});
    out.components.push_back({MergeComponent::Kind::CountStar, nullptr, c});
    out.count_star_col = c;
  }
  return out;
}

/// Schema of a decomposed aggregate node, computed in place so rewrites keep
/// annotations intact for enclosing operators.
inline Schema decomposed_schema(const PlanNode& agg, const Schema& original_out, const Schema& input,
                                const FunctionRegistry& reg) {
  std::vector<Column> cols;
  for (size_t i = 0; i < agg.group_keys.size(); ++i) cols.push_back(original_out.at(i));
  for (const AggregateSpec& a : agg.aggregates) {
    bool nullable = a.kind != AggKind::Count && a.kind != AggKind::CountStar &&
                    a.kind != AggKind::CollectList && a.kind != AggKind::CollectSet;
    cols.push_back({a.name, detail::agg_result_type(a, input, reg), nullable});
  }
  return Schema(cols);
}

/// Decomposes aggregates below the top chain; originals are reconstructed
/// immediately so parent nodes are unaffected. Output schemas are preserved
/// node by node.
inline PlanPtr rewrite_deep(const PlanPtr& p, const FunctionRegistry& reg) {
  PlanPtr n = map_children(p, [&](const PlanPtr& c) { return rewrite_deep(c, reg); });
  if (n->kind != PlanKind::Aggregate) return n;
  const Schema& input = n->children[0]->out_schema();
  Decomposition d = decompose_aggregates(*n, input, reg);

  auto agg = clone_node(n);
  agg->aggregates = d.specs;
  agg->schema = decomposed_schema(*agg, p->out_schema(), input, reg);

  std::vector<std::string> names;
  for (const auto& c : n->out_schema().columns()) names.push_back(c.name);
  auto wrapper = clone_node(project(agg, d.reconstruction, names));
  wrapper->schema = p->out_schema();
  return wrapper;
}

}  // namespace detail

/// Rewrites a normalized plan into its internally stored form: aggregate
/// decomposition, deterministic-order enforcement for collection aggregates,
/// group/partition key propagation, and the backing/top-level split.
/// Raises NotIncrementalizable for opaque non-determinism; the caller falls
/// back to full recomputation.
inline EnabledPlan enable(const NormalizedPlan& np, const Catalog& catalog,
                          const FunctionRegistry& reg = FunctionRegistry::builtins()) {
  DeterminismReport rep = classify_determinism(np.plan, reg);
  if (rep.full_recompute_only)
    raise(ErrorCode::NotIncrementalizable, "plan contains opaque non-determinism");

  // The chain of Projects/Filters from the root down to the first
  // state-bearing operator decides the backing layout.
  std::vector<PlanPtr> chain;
  PlanPtr cursor = np.plan;
  while (cursor->kind == PlanKind::Project || cursor->kind == PlanKind::Filter) {
    chain.push_back(cursor);
    cursor = cursor->children[0];
  }

  EnabledPlan out;

  if (cursor->kind == PlanKind::Aggregate) {
    // Components live in the backing table; the user projection moves wholly
    // into the top-level view.
    PlanPtr agg_input = detail::rewrite_deep(cursor->children[0], reg);
    agg_input = infer_schema(agg_input, catalog, reg);
    detail::Decomposition d = detail::decompose_aggregates(*cursor, agg_input->out_schema(), reg);

    auto agg = clone_node(cursor);
    agg->children[0] = agg_input;
    agg->aggregates = d.specs;
    agg->schema.reset();
    PlanPtr decomposed = infer_schema(agg, catalog, reg);
    out.top_aggregate = decomposed;
    out.has_top_aggregate = true;
    out.num_group_keys = cursor->group_keys.size();
    out.count_star_col = d.count_star_col;

    // Walk the chain bottom-up, rebasing filters onto decomposed columns and
    // absorbing projections into the top-level view.
    std::vector<ExprPtr> mapping = d.reconstruction;  // original agg output -> decomposed cols
    std::vector<std::string> mapping_names;
    for (const auto& c : cursor->out_schema().columns()) mapping_names.push_back(c.name);
    PlanPtr backing = decomposed;
    bool filters_key_only = true;
    for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
      const PlanPtr& node = *it;
      if (node->kind == PlanKind::Filter) {
        ExprPtr pred = substitute_columns(node->predicate, mapping);
        walk_expr(pred, [&](const ExprPtr& e) {
          if (e->kind == ExprKind::ColumnRef && e->column >= out.num_group_keys) filters_key_only = false;
        });
        backing = filter(backing, pred);
      } else {
        std::vector<ExprPtr> composed;
        for (const ExprPtr& e : node->exprs) composed.push_back(substitute_columns(e, mapping));
        mapping = std::move(composed);
        mapping_names = node->names;
      }
    }
    out.backing_plan = infer_schema(backing, catalog, reg);
    out.top_exprs = mapping;
    out.top_names = mapping_names;
    out.merge_adjustable = d.adjustable && filters_key_only;
    if (out.merge_adjustable) out.merge_components = d.components;
    return out;
  }

  if (cursor->kind == PlanKind::Window) {
    // Backing stores the user columns; partition keys are propagated through
    // the chain as hidden columns so affected partitions stay addressable.
    PlanPtr win_input = detail::rewrite_deep(cursor->children[0], reg);
    auto win = clone_node(cursor);
    win->children[0] = win_input;
    win->schema.reset();
    size_t n_keys = cursor->partition_keys.size();
    // Rebuild the chain above the window. Projections get the partition keys
    // appended as hidden columns; filters pass them through untouched.
    std::vector<ExprPtr> key_exprs = cursor->partition_keys;  // window output = input cols + fns
    PlanPtr backing = win;
    bool appended = false;
    for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
      const PlanPtr& node = *it;
      if (node->kind == PlanKind::Filter) {
        auto f = clone_node(node);
        f->children[0] = backing;
        f->schema.reset();
        backing = f;
      } else {
        std::vector<ExprPtr> exprs = node->exprs;
        std::vector<std::string> names = node->names;
        for (size_t i = 0; i < key_exprs.size(); ++i) {
          exprs.push_back(key_exprs[i]);
          names.push_back("__enzyme_key_" + std::to_string(i));
        }
        backing = project(backing, exprs, names);
        key_exprs.clear();
        for (size_t i = 0; i < n_keys; ++i) key_exprs.push_back(col(node->exprs.size() + i));
        appended = true;
      }
    }
    out.backing_plan = infer_schema(backing, catalog, reg);
    out.has_top_window = true;
    out.top_window = out.backing_plan;
    while (out.top_window->kind != PlanKind::Window) out.top_window = out.top_window->children[0];
    out.window_key_exprs = key_exprs;
    size_t user_cols = out.backing_schema().size() - (appended ? n_keys : 0);
    for (size_t i = 0; i < user_cols; ++i) {
      out.top_exprs.push_back(col(i));
      out.top_names.push_back(out.backing_schema().at(i).name);
    }
    return out;
  }

  // No aggregate or window at the top: the backing table stores the plan's
  // output as-is.
  PlanPtr rewritten = detail::rewrite_deep(np.plan, reg);
  out.backing_plan = infer_schema(rewritten, catalog, reg);
  for (size_t i = 0; i < out.backing_schema().size(); ++i) {
    out.top_exprs.push_back(col(i));
    out.top_names.push_back(out.backing_schema().at(i).name);
  }
  return out;
}

}  // namespace enzyme

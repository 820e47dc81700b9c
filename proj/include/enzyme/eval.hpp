#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include "enzyme/plan.hpp"
#include "enzyme/rowid.hpp"
#include "enzyme/storage.hpp"

namespace enzyme {

/// Evaluation context for one refresh: storage access, the clock value bound
/// for time-dependent expressions, and a per-session memo so shared subplans
/// are evaluated once. The memo pins each keyed plan node so node addresses
/// cannot be recycled within a session.
struct EvalContext {
  const TableStore* store = nullptr;
  Timestamp now{0};
  const FunctionRegistry* registry = &FunctionRegistry::builtins();
  std::unordered_map<const PlanNode*, std::pair<PlanPtr, std::shared_ptr<const Relation>>> memo;
  std::map<std::string, std::shared_ptr<const Relation>> cte_values;

  EvalEnv env() const { return EvalEnv{now, registry}; }
};

namespace detail {

inline std::string json_array_text(std::vector<Value> values) {
  nlohmann::json arr = nlohmann::json::array();
  for (const Value& v : values) arr.push_back(value_to_json(v));
  return arr.dump();
}

/// Aggregate over members already sorted by row identity, so floating-point
/// reduction order is fixed.
inline Value compute_aggregate(const AggregateSpec& a, const std::vector<const Row*>& members,
                               const EvalEnv& env) {
  switch (a.kind) {
    case AggKind::CountStar:
      return Value(static_cast<int64_t>(members.size()));
    case AggKind::Count: {
      int64_t n = 0;
      for (const Row* r : members)
        if (!eval_expr(a.arg, *r, env).is_null()) ++n;
      return Value(n);
    }
    case AggKind::Sum: {
      bool any = false, is_float = false;
      int64_t isum = 0;
      double fsum = 0.0;
      for (const Row* r : members) {
        Value v = eval_expr(a.arg, *r, env);
        if (v.is_null()) continue;
        any = true;
        if (v.is_float()) {
          if (!is_float) fsum = static_cast<double>(isum);
          is_float = true;
          fsum += v.as_float();
        } else if (is_float) {
          fsum += static_cast<double>(v.as_int());
        } else {
          if (__builtin_add_overflow(isum, v.as_int(), &isum)) raise(ErrorCode::IntegerOverflow, "sum");
        }
      }
      if (!any) return Value::null();
      return is_float ? Value(fsum) : Value(isum);
    }
    case AggKind::Min:
    case AggKind::Max: {
      Value best;
      for (const Row* r : members) {
        Value v = eval_expr(a.arg, *r, env);
        if (v.is_null()) continue;
        if (best.is_null()) {
          best = v;
        } else {
          int c = detail::compare_scalars(v, best);
          if ((a.kind == AggKind::Min && c < 0) || (a.kind == AggKind::Max && c > 0)) best = v;
        }
      }
      return best;
    }
    case AggKind::Avg: {
      double sum = 0.0;
      int64_t n = 0;
      for (const Row* r : members) {
        Value v = eval_expr(a.arg, *r, env);
        if (v.is_null()) continue;
        sum += v.numeric();
        ++n;
      }
      if (n == 0) return Value::null();
      return Value(sum / static_cast<double>(n));
    }
    case AggKind::Stddev: {
      std::vector<double> xs;
      for (const Row* r : members) {
        Value v = eval_expr(a.arg, *r, env);
        if (!v.is_null()) xs.push_back(v.numeric());
      }
      if (xs.size() < 2) return Value::null();
      double sum = 0.0, sumsq = 0.0;
      for (double x : xs) {
        sum += x;
        sumsq += x * x;
      }
      double n = static_cast<double>(xs.size());
      double var = (sumsq - sum * sum / n) / (n - 1.0);
      if (var < 0.0) var = 0.0;
      return Value(std::sqrt(var));
    }
    case AggKind::First: {
      // Deterministic: the row minimizing (ordering key, value) by encoding.
      bool have = false;
      std::string best_key;
      Value best;
      for (const Row* r : members) {
        Value k = eval_expr(a.order_by, *r, env);
        Value v = eval_expr(a.arg, *r, env);
        std::string enc;
        encode_value(enc, k);
        encode_value(enc, v);
        if (!have || enc < best_key) {
          have = true;
          best_key = enc;
          best = v;
        }
      }
      return have ? best : Value::null();
    }
    case AggKind::CollectList:
    case AggKind::CollectSet: {
      std::vector<Value> vals;
      for (const Row* r : members) {
        Value v = eval_expr(a.arg, *r, env);
        if (!v.is_null()) vals.push_back(v);
      }
      std::sort(vals.begin(), vals.end(),
                [](const Value& x, const Value& y) { return compare_values(x, y) < 0; });
      if (a.kind == AggKind::CollectSet)
        vals.erase(std::unique(vals.begin(), vals.end(),
                               [](const Value& x, const Value& y) { return compare_values(x, y) == 0; }),
                   vals.end());
      return Value(json_array_text(std::move(vals)));
    }
  }
  raise(ErrorCode::Internal, "unreachable");
}

struct EquiKey {
  ExprPtr left;   // over left schema
  ExprPtr right;  // over right schema (local ordinals)
  bool null_safe = false;
};

/// Extracts top-level AND-ed equality conjuncts usable for hashing; the full
/// condition is still re-checked per candidate pair.
inline void extract_equi_keys(const ExprPtr& cond, size_t left_width, std::vector<EquiKey>& out) {
  if (cond->kind != ExprKind::Binary) return;
  if (cond->op == BinOp::And) {
    extract_equi_keys(cond->children[0], left_width, out);
    extract_equi_keys(cond->children[1], left_width, out);
    return;
  }
  if (cond->op != BinOp::Eq && cond->op != BinOp::NullSafeEq) return;
  auto side = [&](const ExprPtr& e) -> int {  // 0 = left-only, 1 = right-only, -1 = mixed
    bool l = false, r = false;
    walk_expr(e, [&](const ExprPtr& x) {
      if (x->kind == ExprKind::ColumnRef) (x->column < left_width ? l : r) = true;
    });
    if (l && !r) return 0;
    if (r && !l) return 1;
    return -1;
  };
  int s0 = side(cond->children[0]), s1 = side(cond->children[1]);
  if (s0 == 0 && s1 == 1) {
    ExprPtr right_local = transform_expr(cond->children[1], [&](const ExprPtr& x) -> ExprPtr {
      if (x->kind != ExprKind::ColumnRef) return x;
      auto c = std::make_shared<Expression>(*x);
      c->column = x->column - left_width;
      return c;
    });
    out.push_back({cond->children[0], right_local, cond->op == BinOp::NullSafeEq});
  } else if (s0 == 1 && s1 == 0) {
    ExprPtr right_local = transform_expr(cond->children[0], [&](const ExprPtr& x) -> ExprPtr {
      if (x->kind != ExprKind::ColumnRef) return x;
      auto c = std::make_shared<Expression>(*x);
      c->column = x->column - left_width;
      return c;
    });
    out.push_back({cond->children[1], right_local, cond->op == BinOp::NullSafeEq});
  }
}

}  // namespace detail

inline std::shared_ptr<const Relation> evaluate(const PlanPtr& plan, EvalContext& ctx);

namespace detail {

inline std::shared_ptr<Relation> make_rel(Schema s) {
  auto r = std::make_shared<Relation>();
  r->schema = std::move(s);
  return r;
}

/// Join evaluation shared by the inner/outer kinds. `emit_matched`,
/// `emit_left_unmatched`, `emit_right_unmatched` toggle the output classes.
inline void join_rows(const Relation& left, const Relation& right, const ExprPtr& condition,
                      const EvalEnv& env, bool emit_matched, bool emit_left_unmatched,
                      bool emit_right_unmatched, Relation& out) {
  const size_t lw = left.schema.size(), rw = right.schema.size();
  std::vector<EquiKey> keys;
  extract_equi_keys(condition, lw, keys);

  std::vector<bool> right_matched(right.size(), false);
  Row combined(lw + rw);
  auto try_pair = [&](size_t li, size_t ri) -> bool {
    for (size_t c = 0; c < lw; ++c) combined[c] = left.rows[li][c];
    for (size_t c = 0; c < rw; ++c) combined[lw + c] = right.rows[ri][c];
    Value ok = eval_expr(condition, combined, env);
    if (ok.is_null() || !ok.as_bool()) return false;
    if (emit_matched) out.add(combined, pair_row_id(left.row_ids[li], right.row_ids[ri]));
    right_matched[ri] = true;
    return true;
  };
  auto emit_left_null = [&](size_t li) {
    Row r(lw + rw, Value::null());
    for (size_t c = 0; c < lw; ++c) r[c] = left.rows[li][c];
    out.add(std::move(r), pair_row_id(left.row_ids[li], null_side_row_id()));
  };

  if (!keys.empty()) {
    std::unordered_map<std::string, std::vector<size_t>> table;
    table.reserve(right.size());
    for (size_t ri = 0; ri < right.size(); ++ri) {
      std::string k;
      bool skip = false;
      for (const EquiKey& ek : keys) {
        Value v = eval_expr(ek.right, right.rows[ri], env);
        if (v.is_null() && !ek.null_safe) {
          skip = true;  // plain equality never matches null
          break;
        }
        encode_value(k, v);
      }
      if (!skip) table[k].push_back(ri);
    }
    for (size_t li = 0; li < left.size(); ++li) {
      std::string k;
      bool skip = false;
      for (const EquiKey& ek : keys) {
        Value v = eval_expr(ek.left, left.rows[li], env);
        if (v.is_null() && !ek.null_safe) {
          skip = true;
          break;
        }
        encode_value(k, v);
      }
      bool matched = false;
      if (!skip) {
        auto it = table.find(k);
        if (it != table.end())
          for (size_t ri : it->second) matched = try_pair(li, ri) || matched;
      }
      if (!matched && emit_left_unmatched) emit_left_null(li);
    }
  } else {
    for (size_t li = 0; li < left.size(); ++li) {
      bool matched = false;
      for (size_t ri = 0; ri < right.size(); ++ri) matched = try_pair(li, ri) || matched;
      if (!matched && emit_left_unmatched) emit_left_null(li);
    }
  }
  if (emit_right_unmatched) {
    for (size_t ri = 0; ri < right.size(); ++ri) {
      if (right_matched[ri]) continue;
      Row r(lw + rw, Value::null());
      for (size_t c = 0; c < rw; ++c) r[lw + c] = right.rows[ri][c];
      out.add(std::move(r), pair_row_id(null_side_row_id(), right.row_ids[ri]));
    }
  }
}

}  // namespace detail

inline std::shared_ptr<const Relation> evaluate(const PlanPtr& plan, EvalContext& ctx) {
  auto memo_it = ctx.memo.find(plan.get());
  if (memo_it != ctx.memo.end()) return memo_it->second.second;

  EvalEnv env = ctx.env();
  std::shared_ptr<const Relation> result;

  switch (plan->kind) {
    case PlanKind::Scan: {
      if (!plan->bound_version) raise(ErrorCode::Internal, "unbound scan of '" + plan->table + "'");
      result = ctx.store->table(plan->table).snapshot(*plan->bound_version);
      break;
    }
    case PlanKind::Project: {
      auto in = evaluate(plan->children[0], ctx);
      auto out = detail::make_rel(plan->out_schema());
      out->rows.reserve(in->size());
      for (size_t i = 0; i < in->size(); ++i) {
        Row r;
        r.reserve(plan->exprs.size());
        for (const ExprPtr& e : plan->exprs) r.push_back(eval_expr(e, in->rows[i], env));
        out->add(std::move(r), in->row_ids[i]);
      }
      result = out;
      break;
    }
    case PlanKind::Filter: {
      auto in = evaluate(plan->children[0], ctx);
      auto out = detail::make_rel(plan->out_schema());
      for (size_t i = 0; i < in->size(); ++i) {
        Value v = eval_expr(plan->predicate, in->rows[i], env);
        if (!v.is_null() && v.as_bool()) out->add(in->rows[i], in->row_ids[i]);
      }
      result = out;
      break;
    }
    case PlanKind::Aggregate: {
      auto in = evaluate(plan->children[0], ctx);
      auto out = detail::make_rel(plan->out_schema());

      struct Group {
        std::vector<Value> keys;
        std::vector<size_t> members;
      };
      std::map<std::string, Group> groups;  // ordered: deterministic output
      for (size_t i = 0; i < in->size(); ++i) {
        std::vector<Value> keys;
        keys.reserve(plan->group_keys.size());
        std::string enc;
        for (const ExprPtr& k : plan->group_keys) {
          Value v = eval_expr(k, in->rows[i], env);
          encode_value(enc, v);
          keys.push_back(std::move(v));
        }
        auto& g = groups[enc];
        if (g.members.empty()) g.keys = std::move(keys);
        g.members.push_back(i);
      }
      if (groups.empty() && plan->group_keys.empty()) {
        // Global aggregate over no rows: one row of aggregate identities.
        Row r;
        std::vector<const Row*> none;
        for (const AggregateSpec& a : plan->aggregates) r.push_back(detail::compute_aggregate(a, none, env));
        out->add(std::move(r), group_row_id({}));
      }
      for (auto& [enc, g] : groups) {
        std::sort(g.members.begin(), g.members.end(),
                  [&](size_t a, size_t b) { return in->row_ids[a] < in->row_ids[b]; });
        std::vector<const Row*> members;
        members.reserve(g.members.size());
        for (size_t i : g.members) members.push_back(&in->rows[i]);
        Row r = g.keys;
        for (const AggregateSpec& a : plan->aggregates) r.push_back(detail::compute_aggregate(a, members, env));
        out->add(std::move(r), group_row_id(g.keys));
      }
      result = out;
      break;
    }
    case PlanKind::Window: {
      auto in = evaluate(plan->children[0], ctx);
      auto out = detail::make_rel(plan->out_schema());

      std::map<std::string, std::vector<size_t>> partitions;
      for (size_t i = 0; i < in->size(); ++i) {
        std::string enc;
        for (const ExprPtr& k : plan->partition_keys) encode_value(enc, eval_expr(k, in->rows[i], env));
        partitions[enc].push_back(i);
      }
      for (auto& [enc, members] : partitions) {
        // Sort by ORDER BY keys; ties broken by row identity so ranking
        // functions are deterministic.
        std::vector<std::string> sort_keys(members.size());
        for (size_t m = 0; m < members.size(); ++m) {
          std::string k;
          for (const SortKey& sk : plan->order_keys) {
            std::string one;
            encode_value(one, eval_expr(sk.expr, in->rows[members[m]], env));
            if (!sk.ascending)
              for (char& c : one) c = static_cast<char>(~static_cast<unsigned char>(c));
            k += one;
          }
          sort_keys[m] = std::move(k);
        }
        std::vector<size_t> order(members.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
          if (sort_keys[a] != sort_keys[b]) return sort_keys[a] < sort_keys[b];
          return in->row_ids[members[a]] < in->row_ids[members[b]];
        });

        // Whole-partition aggregates, reduced in row-identity order.
        std::vector<size_t> by_id(members.begin(), members.end());
        std::sort(by_id.begin(), by_id.end(),
                  [&](size_t a, size_t b) { return in->row_ids[a] < in->row_ids[b]; });
        std::vector<Value> partition_aggs(plan->window_fns.size());
        for (size_t f = 0; f < plan->window_fns.size(); ++f) {
          const WindowFnSpec& fn = plan->window_fns[f];
          if (fn.kind == WindowFnKind::Sum || fn.kind == WindowFnKind::Count ||
              fn.kind == WindowFnKind::Min || fn.kind == WindowFnKind::Max) {
            AggregateSpec spec;
            spec.kind = fn.kind == WindowFnKind::Sum   ? AggKind::Sum
                        : fn.kind == WindowFnKind::Count ? (fn.arg ? AggKind::Count : AggKind::CountStar)
                        : fn.kind == WindowFnKind::Min   ? AggKind::Min
                                                         : AggKind::Max;
            spec.arg = fn.arg;
            std::vector<const Row*> rows;
            for (size_t i : by_id) rows.push_back(&in->rows[i]);
            partition_aggs[f] = detail::compute_aggregate(spec, rows, env);
          }
        }

        for (size_t pos = 0; pos < order.size(); ++pos) {
          size_t idx = members[order[pos]];
          Row r = in->rows[idx];
          for (size_t f = 0; f < plan->window_fns.size(); ++f) {
            switch (plan->window_fns[f].kind) {
              case WindowFnKind::RowNumber:
                r.push_back(Value(static_cast<int64_t>(pos + 1)));
                break;
              case WindowFnKind::Rank: {
                size_t first = pos;
                while (first > 0 && sort_keys[order[first - 1]] == sort_keys[order[pos]]) --first;
                r.push_back(Value(static_cast<int64_t>(first + 1)));
                break;
              }
              case WindowFnKind::DenseRank: {
                int64_t rank = 1;
                for (size_t q = 1; q <= pos; ++q)
                  if (sort_keys[order[q]] != sort_keys[order[q - 1]]) ++rank;
                r.push_back(Value(rank));
                break;
              }
              default:
                r.push_back(partition_aggs[f]);
            }
          }
          out->add(std::move(r), in->row_ids[idx]);
        }
      }
      result = out;
      break;
    }
    case PlanKind::Join: {
      auto l = evaluate(plan->children[0], ctx);
      auto r = evaluate(plan->children[1], ctx);
      auto out = detail::make_rel(plan->out_schema());
      bool left_un = plan->join_kind == JoinKind::LeftOuter || plan->join_kind == JoinKind::FullOuter;
      bool right_un = plan->join_kind == JoinKind::RightOuter || plan->join_kind == JoinKind::FullOuter;
      detail::join_rows(*l, *r, plan->condition, env, true, left_un, right_un, *out);
      result = out;
      break;
    }
    case PlanKind::AntiLeft: {
      auto l = evaluate(plan->children[0], ctx);
      auto r = evaluate(plan->children[1], ctx);
      auto out = detail::make_rel(plan->out_schema());
      detail::join_rows(*l, *r, plan->condition, env, false, true, false, *out);
      result = out;
      break;
    }
    case PlanKind::AntiRight: {
      auto l = evaluate(plan->children[0], ctx);
      auto r = evaluate(plan->children[1], ctx);
      auto out = detail::make_rel(plan->out_schema());
      detail::join_rows(*l, *r, plan->condition, env, false, false, true, *out);
      result = out;
      break;
    }
    case PlanKind::UnionAll: {
      auto out = detail::make_rel(plan->out_schema());
      for (size_t b = 0; b < plan->children.size(); ++b) {
        auto in = evaluate(plan->children[b], ctx);
        for (size_t i = 0; i < in->size(); ++i)
          out->add(in->rows[i], union_branch_row_id(b, in->row_ids[i]));
      }
      result = out;
      break;
    }
    case PlanKind::Distinct: {
      auto in = evaluate(plan->children[0], ctx);
      auto out = detail::make_rel(plan->out_schema());
      std::map<std::string, size_t> seen;
      for (size_t i = 0; i < in->size(); ++i) seen.emplace(encode_values(in->rows[i]), i);
      for (const auto& [enc, i] : seen) out->add(in->rows[i], group_row_id(in->rows[i]));
      result = out;
      break;
    }
    case PlanKind::With: {
      auto def = evaluate(plan->children[0], ctx);
      auto saved = ctx.cte_values.find(plan->cte_name) != ctx.cte_values.end()
                       ? std::optional(ctx.cte_values[plan->cte_name])
                       : std::nullopt;
      ctx.cte_values[plan->cte_name] = def;
      result = evaluate(plan->children[1], ctx);
      if (saved)
        ctx.cte_values[plan->cte_name] = *saved;
      else
        ctx.cte_values.erase(plan->cte_name);
      break;
    }
    case PlanKind::CteRef: {
      auto it = ctx.cte_values.find(plan->cte_name);
      if (it == ctx.cte_values.end()) raise(ErrorCode::Internal, "unbound CTE '" + plan->cte_name + "'");
      result = it->second;
      break;
    }
  }
  ctx.memo[plan.get()] = {plan, result};
  return result;
}

// ---------------------------------------------------------------------------
// Binding and restriction.

/// Binds every scan through `versions` (table -> version). Scans of names
/// in `substitutions` are replaced by the given subplans instead (used to
/// present materialized views to downstream readers).
inline PlanPtr bind_plan(const PlanPtr& plan, const std::map<std::string, uint64_t>& versions,
                         const std::map<std::string, PlanPtr>* substitutions = nullptr) {
  if (plan->kind == PlanKind::Scan) {
    if (substitutions) {
      auto it = substitutions->find(plan->table);
      if (it != substitutions->end()) return it->second;
    }
    auto n = clone_node(plan);
    auto it = versions.find(plan->table);
    if (it == versions.end()) raise(ErrorCode::Internal, "no version binding for '" + plan->table + "'");
    n->bound_version = it->second;
    return n;
  }
  return map_children(plan, [&](const PlanPtr& c) { return bind_plan(c, versions, substitutions); });
}

/// Pushes a key-set restriction as deep as it exactly commutes; the probe is
/// expressed over `plan`'s output columns.
inline PlanPtr push_restriction(const PlanPtr& plan, const ExprPtr& probe) {
  auto attach_here = [&]() -> PlanPtr {
    auto f = clone_node(filter(plan, probe));
    f->schema = plan->out_schema();
    return f;
  };
  auto probe_columns = [&]() {
    std::vector<size_t> cols;
    walk_expr(probe, [&](const ExprPtr& x) {
      if (x->kind == ExprKind::ColumnRef) cols.push_back(x->column);
    });
    return cols;
  };

  switch (plan->kind) {
    case PlanKind::Project: {
      ExprPtr pushed = transform_expr(probe, [&](const ExprPtr& x) -> ExprPtr {
        if (x->kind != ExprKind::ColumnRef) return x;
        return plan->exprs.at(x->column);
      });
      auto n = clone_node(plan);
      n->children[0] = push_restriction(plan->children[0], pushed);
      return n;
    }
    case PlanKind::Filter: {
      auto n = clone_node(plan);
      n->children[0] = push_restriction(plan->children[0], probe);
      return n;
    }
    case PlanKind::Aggregate: {
      // Restriction on group keys commutes with grouping.
      for (size_t c : probe_columns())
        if (c >= plan->group_keys.size()) return attach_here();
      ExprPtr pushed = transform_expr(probe, [&](const ExprPtr& x) -> ExprPtr {
        if (x->kind != ExprKind::ColumnRef) return x;
        return plan->group_keys.at(x->column);
      });
      auto n = clone_node(plan);
      n->children[0] = push_restriction(plan->children[0], pushed);
      return n;
    }
    case PlanKind::Window: {
      // Safe only when the probe touches columns that are bare partition keys.
      for (size_t c : probe_columns()) {
        bool is_partition_col = false;
        if (c < plan->children[0]->out_schema().size()) {
          for (const ExprPtr& k : plan->partition_keys)
            if (k->kind == ExprKind::ColumnRef && k->column == c) is_partition_col = true;
        }
        if (!is_partition_col) return attach_here();
      }
      auto n = clone_node(plan);
      n->children[0] = push_restriction(plan->children[0], probe);
      return n;
    }
    case PlanKind::Join: {
      const size_t lw = plan->children[0]->out_schema().size();
      bool left_only = true, right_only = true;
      for (size_t c : probe_columns()) (c < lw ? right_only : left_only) = false;
      bool can_left = left_only && (plan->join_kind == JoinKind::Inner || plan->join_kind == JoinKind::LeftOuter);
      bool can_right =
          right_only && (plan->join_kind == JoinKind::Inner || plan->join_kind == JoinKind::RightOuter);
      if (can_left) {
        auto n = clone_node(plan);
        n->children[0] = push_restriction(plan->children[0], probe);
        return n;
      }
      if (can_right) {
        ExprPtr local = transform_expr(probe, [&](const ExprPtr& x) -> ExprPtr {
          if (x->kind != ExprKind::ColumnRef) return x;
          auto c = std::make_shared<Expression>(*x);
          c->column = x->column - lw;
          return c;
        });
        auto n = clone_node(plan);
        n->children[1] = push_restriction(plan->children[1], local);
        return n;
      }
      return attach_here();
    }
    case PlanKind::UnionAll: {
      auto n = clone_node(plan);
      for (auto& c : n->children) c = push_restriction(c, probe);
      return n;
    }
    case PlanKind::Distinct: {
      auto n = clone_node(plan);
      n->children[0] = push_restriction(plan->children[0], probe);
      return n;
    }
    default:
      return attach_here();
  }
}

}  // namespace enzyme

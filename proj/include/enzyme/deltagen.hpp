#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "enzyme/changeset.hpp"
#include "enzyme/cost.hpp"
#include "enzyme/enable.hpp"
#include "enzyme/eval.hpp"
#include "enzyme/faults.hpp"

namespace enzyme {

// ---------------------------------------------------------------------------
// Refresh context: version window and clock values for one refresh.

struct MvSourceView {
  std::string backing_table;
  std::vector<ExprPtr> top_exprs;  // over backing data columns (row id stripped)
  std::vector<std::string> top_names;
};

struct RefreshContext {
  std::map<std::string, Version> from_versions;  // per source table (backing for MV sources)
  std::map<std::string, Version> to_versions;
  Timestamp prev_time{0};
  Timestamp curr_time{0};
  std::map<std::string, MvSourceView> mv_sources;  // source name -> view over its backing
  const TableStore* store = nullptr;
  const FunctionRegistry* registry = &FunctionRegistry::builtins();
};

// ---------------------------------------------------------------------------
// Delta plans: a small algebra of changeset-producing nodes, each the delta
// rule for one operator. Embedded PlanPtrs are fully bound (versions and
// clock substituted).

enum class DeltaKind {
  SourceFeed,
  Empty,
  Project,
  Filter,
  JoinDelta,
  Union,
  AggRecompute,
  WindowRecompute,
  TemporalFilter,
  Effectivize,
  LocalDiff,
  BackingDelete,
  RestrictedRecompute,
  MergeAdjust,
};

struct DeltaNode;
using DeltaPtr = std::shared_ptr<const DeltaNode>;

struct DeltaNode {
  DeltaKind kind = DeltaKind::Empty;
  std::string rule;  // label used by explain
  Schema schema;     // data columns of the changeset this node produces
  std::vector<DeltaPtr> children;

  // SourceFeed
  std::string table;
  Version from = 0, to = 0;
  std::vector<ExprPtr> feed_projection;  // applied when the source is an MV view

  // Project / Filter
  std::vector<ExprPtr> exprs;
  ExprPtr predicate;

  // JoinDelta
  PlanPtr rel_plan;
  bool delta_on_left = true;
  ExprPtr condition;

  // Union
  bool tag_branches = false;

  // AggRecompute / WindowRecompute / RestrictedRecompute
  PlanPtr pre_input, post_input;      // aggregate/window input plans
  std::vector<ExprPtr> group_keys;    // over the input schema (also delta key exprs)
  std::vector<AggregateSpec> aggregates;
  bool plus_only = false;
  PlanPtr window_spec;                // Window node whose child is replaced per side

  // TemporalFilter
  ExprPtr pred_prev, pred_curr;
  PlanPtr pre_base;
  bool clock_unchanged = false;

  // LocalDiff
  PlanPtr pre_plan, post_plan;

  // BackingDelete / RestrictedRecompute / MergeAdjust
  std::string backing_table;
  Version backing_version = 0;
  std::vector<ExprPtr> backing_key_exprs;  // over backing data columns
  PlanPtr recompute_plan;                  // bound backing plan at post state

  // MergeAdjust
  std::vector<MergeComponent> components;
  std::vector<ExprPtr> having_filters;     // over backing columns, key-only
  std::optional<size_t> count_star_col;
  Schema backing_data_schema;
};

using MutableDelta = std::shared_ptr<DeltaNode>;

inline MutableDelta make_delta(DeltaKind kind, std::string rule, Schema schema) {
  auto d = std::make_shared<DeltaNode>();
  d->kind = kind;
  d->rule = std::move(rule);
  d->schema = std::move(schema);
  return d;
}

/// The per-node triple of bottom-up delta composition: the output before
/// changes, the output after, and the changeset between them.
struct ChangePlan {
  PlanPtr pre;
  PlanPtr post;
  DeltaPtr delta;
};

// ---------------------------------------------------------------------------
// Delta evaluation.

struct DeltaEvalContext {
  EvalContext eval;
  // Keyed nodes are pinned so addresses cannot be recycled mid-session.
  std::unordered_map<const DeltaNode*, std::pair<DeltaPtr, std::shared_ptr<const Changeset>>> memo;
};

inline std::shared_ptr<const Changeset> evaluate_delta(const DeltaPtr& d, DeltaEvalContext& ctx);

namespace detail {

/// Groups rows like the aggregate operator (members ordered by row identity)
/// and emits one output row per group with the given sign. Mirrors the
/// evaluator's empty-input identity-row behavior for global aggregates.
inline void emit_aggregated(const Relation& input, const std::vector<ExprPtr>& keys,
                            const std::vector<AggregateSpec>& aggs, const EvalEnv& env, int sign,
                            bool identity_when_empty, Changeset& out) {
  struct Group {
    std::vector<Value> keys;
    std::vector<size_t> members;
  };
  std::map<std::string, Group> groups;
  for (size_t i = 0; i < input.size(); ++i) {
    std::string enc;
    std::vector<Value> kv;
    for (const ExprPtr& k : keys) {
      Value v = eval_expr(k, input.rows[i], env);
      encode_value(enc, v);
      kv.push_back(std::move(v));
    }
    auto& g = groups[enc];
    if (g.members.empty()) g.keys = std::move(kv);
    g.members.push_back(i);
  }
  if (groups.empty() && keys.empty() && identity_when_empty) {
    Row r;
    std::vector<const Row*> none;
    for (const AggregateSpec& a : aggs) r.push_back(compute_aggregate(a, none, env));
    out.add(std::move(r), sign, group_row_id({}));
    return;
  }
  for (auto& [enc, g] : groups) {
    std::sort(g.members.begin(), g.members.end(),
              [&](size_t a, size_t b) { return input.row_ids[a] < input.row_ids[b]; });
    std::vector<const Row*> members;
    for (size_t i : g.members) members.push_back(&input.rows[i]);
    Row r = g.keys;
    for (const AggregateSpec& a : aggs) r.push_back(compute_aggregate(a, members, env));
    out.add(std::move(r), sign, group_row_id(g.keys));
  }
}

inline std::shared_ptr<const std::unordered_set<std::string>> delta_key_set(
    const Changeset& cs, const std::vector<ExprPtr>& key_exprs, const EvalEnv& env) {
  auto set = std::make_shared<std::unordered_set<std::string>>();
  for (const ChangeEntry& e : cs.entries) {
    std::string k;
    for (const ExprPtr& ke : key_exprs) encode_value(k, eval_expr(ke, e.row, env));
    set->insert(k);
  }
  return set;
}

}  // namespace detail

/// Signed per-group component adjustments for merge application.
struct GroupAdjustment {
  std::vector<Value> keys;
  std::vector<Value> column_delta;  // per backing column; null = no change
};

inline std::vector<GroupAdjustment> evaluate_adjustments(const DeltaNode& m, DeltaEvalContext& ctx) {
  if (m.kind != DeltaKind::MergeAdjust) raise(ErrorCode::Internal, "not a merge-adjust node");
  auto child = evaluate_delta(m.children[0], ctx);
  EvalEnv env = ctx.eval.env();

  struct Accum {
    bool is_float = false;
    bool any = false;
    int64_t i = 0;
    double f = 0;
    void add(int w, const Value& v) {
      any = true;
      if (v.is_float() || is_float) {
        if (!is_float) {
          f = static_cast<double>(i);
          is_float = true;
        }
        f += w * v.numeric();
      } else {
        int64_t scaled;
        if (__builtin_mul_overflow(static_cast<int64_t>(w), v.as_int(), &scaled) ||
            __builtin_add_overflow(i, scaled, &i))
          raise(ErrorCode::IntegerOverflow, "merge adjustment");
      }
    }
    Value value() const {
      if (!any) return Value::null();
      return is_float ? Value(f) : Value(i);
    }
  };
  struct Group {
    std::vector<Value> keys;
    std::map<size_t, Accum> accums;  // backing col -> accum
  };
  std::map<std::string, Group> groups;

  const size_t nkeys = m.group_keys.size();
  for (const ChangeEntry& e : child->entries) {
    std::vector<Value> keys;
    std::string enc;
    for (const ExprPtr& k : m.group_keys) {
      Value v = eval_expr(k, e.row, env);
      encode_value(enc, v);
      keys.push_back(std::move(v));
    }
    // Key-only filters above the aggregate restrict which groups exist.
    if (!m.having_filters.empty()) {
      Row probe(m.backing_data_schema.size(), Value::null());
      for (size_t i = 0; i < nkeys; ++i) probe[i] = keys[i];
      bool pass = true;
      for (const ExprPtr& f : m.having_filters) {
        Value v = eval_expr(f, probe, env);
        if (v.is_null() || !v.as_bool()) pass = false;
      }
      if (!pass) continue;
    }
    auto& g = groups[enc];
    if (g.keys.empty() && g.accums.empty()) g.keys = keys;
    for (const MergeComponent& c : m.components) {
      switch (c.kind) {
        case MergeComponent::Kind::Sum: {
          Value v = eval_expr(c.arg, e.row, env);
          if (!v.is_null()) g.accums[c.backing_col].add(e.weight, v);
          break;
        }
        case MergeComponent::Kind::Count: {
          Value v = eval_expr(c.arg, e.row, env);
          if (!v.is_null()) g.accums[c.backing_col].add(e.weight, Value(int64_t{1}));
          break;
        }
        case MergeComponent::Kind::CountStar:
          g.accums[c.backing_col].add(e.weight, Value(int64_t{1}));
          break;
        case MergeComponent::Kind::GroupKey:
          break;
      }
    }
  }

  std::vector<GroupAdjustment> out;
  for (auto& [enc, g] : groups) {
    GroupAdjustment adj;
    adj.keys = g.keys;
    adj.column_delta.assign(m.backing_data_schema.size(), Value::null());
    for (const auto& [colIdx, acc] : g.accums) adj.column_delta[colIdx] = acc.value();
    out.push_back(std::move(adj));
  }
  return out;
}

/// Merge arithmetic shared by the apply path and the row-changeset view of a
/// merge delta. Returns the post-image backing row, or nothing when a keyed
/// group empties out; a global aggregate keeps its identity row instead.
/// `old_row` excludes the row id column.
inline std::optional<Row> merge_group_row(const DeltaNode& m, const Row* old_row,
                                          const GroupAdjustment& adj) {
  const size_t ncols = m.backing_data_schema.size();
  Row merged(ncols, Value::null());
  auto old_val = [&](size_t c) { return old_row ? (*old_row)[c] : Value::null(); };

  // Counts first; paired sums consult them.
  std::map<size_t, int64_t> new_counts;
  for (const MergeComponent& c : m.components) {
    if (c.kind != MergeComponent::Kind::Count && c.kind != MergeComponent::Kind::CountStar) continue;
    int64_t oldc = old_val(c.backing_col).is_null() ? 0 : old_val(c.backing_col).as_int();
    int64_t delta = adj.column_delta[c.backing_col].is_null() ? 0 : adj.column_delta[c.backing_col].as_int();
    int64_t nc = oldc + delta;
    if (nc < 0) raise(ErrorCode::NegativeGroupCount, "group count fell below zero");
    new_counts[c.backing_col] = nc;
    merged[c.backing_col] = Value(nc);
  }
  if (m.count_star_col && new_counts.at(*m.count_star_col) == 0 && !m.group_keys.empty())
    return std::nullopt;

  for (const MergeComponent& c : m.components) {
    switch (c.kind) {
      case MergeComponent::Kind::GroupKey:
        if (c.backing_col < adj.keys.size())
          merged[c.backing_col] = adj.keys[c.backing_col];
        else
          merged[c.backing_col] = old_val(c.backing_col);
        break;
      case MergeComponent::Kind::Sum: {
        const Value& ov = old_val(c.backing_col);
        const Value& dv = adj.column_delta[c.backing_col];
        bool paired_zero = false;
        for (const MergeComponent& p : m.components) {
          if (p.kind == MergeComponent::Kind::Count && p.backing_col == c.paired_count_col &&
              new_counts.count(p.backing_col))
            paired_zero = new_counts.at(p.backing_col) == 0;
        }
        if (paired_zero) {
          merged[c.backing_col] = Value::null();
        } else if (ov.is_null() && dv.is_null()) {
          merged[c.backing_col] = Value::null();
        } else if (ov.is_null()) {
          merged[c.backing_col] = dv;
        } else if (dv.is_null()) {
          merged[c.backing_col] = ov;
        } else if (ov.is_float() || dv.is_float()) {
          merged[c.backing_col] = Value(ov.numeric() + dv.numeric());
        } else {
          int64_t r;
          if (__builtin_add_overflow(ov.as_int(), dv.as_int(), &r))
            raise(ErrorCode::IntegerOverflow, "merge sum");
          merged[c.backing_col] = Value(r);
        }
        break;
      }
      default:
        break;
    }
  }
  return merged;
}

inline std::shared_ptr<const Changeset> evaluate_delta(const DeltaPtr& d, DeltaEvalContext& ctx) {
  auto it = ctx.memo.find(d.get());
  if (it != ctx.memo.end()) return it->second.second;
  fault_point("delta.evaluate");

  EvalEnv env = ctx.eval.env();
  auto out = std::make_shared<Changeset>();
  out->schema = d->schema;

  switch (d->kind) {
    case DeltaKind::Empty:
      break;
    case DeltaKind::SourceFeed: {
      Changeset feed = ctx.eval.store->table(d->table).change_feed(d->from, d->to);
      if (d->feed_projection.empty()) {
        out->entries = std::move(feed.entries);
      } else {
        for (const ChangeEntry& e : feed.entries) {
          Row r;
          for (const ExprPtr& ex : d->feed_projection) r.push_back(eval_expr(ex, e.row, env));
          out->add(std::move(r), e.weight, e.row_id);
        }
      }
      break;
    }
    case DeltaKind::Project: {
      auto child = evaluate_delta(d->children[0], ctx);
      for (const ChangeEntry& e : child->entries) {
        Row r;
        for (const ExprPtr& ex : d->exprs) r.push_back(eval_expr(ex, e.row, env));
        out->add(std::move(r), e.weight, e.row_id);
      }
      break;
    }
    case DeltaKind::Filter: {
      auto child = evaluate_delta(d->children[0], ctx);
      for (const ChangeEntry& e : child->entries) {
        Value v = eval_expr(d->predicate, e.row, env);
        if (!v.is_null() && v.as_bool()) out->add(e.row, e.weight, e.row_id);
      }
      break;
    }
    case DeltaKind::JoinDelta: {
      auto child = evaluate_delta(d->children[0], ctx);
      if (child->empty()) break;  // never touch the relation side for no delta
      auto rel = evaluate(d->rel_plan, ctx.eval);
      const size_t dw = d->children[0]->schema.size();
      const size_t rw = rel->schema.size();
      const size_t lw = d->delta_on_left ? dw : rw;

      std::vector<detail::EquiKey> keys;
      detail::extract_equi_keys(d->condition, lw, keys);
      // Hash the relation side on its local key expressions.
      std::unordered_map<std::string, std::vector<size_t>> table;
      if (!keys.empty()) {
        for (size_t ri = 0; ri < rel->size(); ++ri) {
          std::string k;
          bool skip = false;
          for (const auto& ek : keys) {
            const ExprPtr& rel_side = d->delta_on_left ? ek.right : ek.left;
            Value v = eval_expr(rel_side, rel->rows[ri], env);
            if (v.is_null() && !ek.null_safe) {
              skip = true;
              break;
            }
            encode_value(k, v);
          }
          if (!skip) table[k].push_back(ri);
        }
      }
      Row combined(dw + rw);
      auto consider = [&](const ChangeEntry& e, size_t ri) {
        if (d->delta_on_left) {
          for (size_t c = 0; c < dw; ++c) combined[c] = e.row[c];
          for (size_t c = 0; c < rw; ++c) combined[dw + c] = rel->rows[ri][c];
        } else {
          for (size_t c = 0; c < rw; ++c) combined[c] = rel->rows[ri][c];
          for (size_t c = 0; c < dw; ++c) combined[rw + c] = e.row[c];
        }
        Value ok = eval_expr(d->condition, combined, env);
        if (ok.is_null() || !ok.as_bool()) return;
        std::string id = d->delta_on_left ? pair_row_id(e.row_id, rel->row_ids[ri])
                                          : pair_row_id(rel->row_ids[ri], e.row_id);
        out->add(combined, e.weight, std::move(id));
      };
      for (const ChangeEntry& e : child->entries) {
        if (!keys.empty()) {
          std::string k;
          bool skip = false;
          for (const auto& ek : keys) {
            const ExprPtr& delta_side = d->delta_on_left ? ek.left : ek.right;
            Value v = eval_expr(delta_side, e.row, env);
            if (v.is_null() && !ek.null_safe) {
              skip = true;
              break;
            }
            encode_value(k, v);
          }
          if (skip) continue;
          auto hit = table.find(k);
          if (hit == table.end()) continue;
          for (size_t ri : hit->second) consider(e, ri);
        } else {
          for (size_t ri = 0; ri < rel->size(); ++ri) consider(e, ri);
        }
      }
      break;
    }
    case DeltaKind::Union: {
      for (size_t b = 0; b < d->children.size(); ++b) {
        auto child = evaluate_delta(d->children[b], ctx);
        for (const ChangeEntry& e : child->entries) {
          out->add(e.row, e.weight, d->tag_branches ? union_branch_row_id(b, e.row_id) : e.row_id);
        }
      }
      break;
    }
    case DeltaKind::Effectivize: {
      fault_point("delta.effectivize");
      auto child = evaluate_delta(d->children[0], ctx);
      *out = effectivize(*child);
      break;
    }
    case DeltaKind::AggRecompute: {
      auto child = evaluate_delta(d->children[0], ctx);
      if (child->empty()) break;
      auto key_set = detail::delta_key_set(*child, d->group_keys, env);
      ExprPtr probe = key_probe(d->group_keys, key_set);
      if (!d->plus_only) {
        auto pre = evaluate(push_restriction(d->pre_input, probe), ctx.eval);
        detail::emit_aggregated(*pre, d->group_keys, d->aggregates, env, -1, true, *out);
      }
      auto post = evaluate(push_restriction(d->post_input, probe), ctx.eval);
      detail::emit_aggregated(*post, d->group_keys, d->aggregates, env, +1, true, *out);
      break;
    }
    case DeltaKind::WindowRecompute: {
      auto child = evaluate_delta(d->children[0], ctx);
      if (child->empty()) break;
      auto key_set = detail::delta_key_set(*child, d->group_keys, env);
      ExprPtr probe = key_probe(d->group_keys, key_set);
      auto apply_window = [&](const PlanPtr& input, int sign) {
        auto w = clone_node(d->window_spec);
        w->children[0] = push_restriction(input, probe);
        w->schema = d->window_spec->out_schema();
        auto rel = evaluate(w, ctx.eval);
        for (size_t i = 0; i < rel->size(); ++i) out->add(rel->rows[i], sign, rel->row_ids[i]);
      };
      apply_window(d->pre_input, -1);
      apply_window(d->post_input, +1);
      break;
    }
    case DeltaKind::TemporalFilter: {
      auto child = evaluate_delta(d->children[0], ctx);
      auto truthy = [&](const ExprPtr& p, const Row& r) {
        Value v = eval_expr(p, r, env);
        return !v.is_null() && v.as_bool();
      };
      if (!d->clock_unchanged) {
        // Rows untouched by the data delta whose window membership flips
        // with the clock; touched rows are judged by the data terms below.
        std::unordered_set<std::string> touched;
        for (const ChangeEntry& e : child->entries) touched.insert(e.row_id);
        auto base = evaluate(d->pre_base, ctx.eval);
        for (size_t i = 0; i < base->size(); ++i) {
          if (touched.count(base->row_ids[i])) continue;
          bool was_in = truthy(d->pred_prev, base->rows[i]);
          bool now_in = truthy(d->pred_curr, base->rows[i]);
          if (was_in && !now_in) out->add(base->rows[i], -1, base->row_ids[i]);
          if (!was_in && now_in) out->add(base->rows[i], +1, base->row_ids[i]);
        }
      }
      for (const ChangeEntry& e : child->entries) {
        if (e.weight < 0 && truthy(d->pred_prev, e.row)) out->add(e.row, -1, e.row_id);
        if (e.weight > 0 && truthy(d->pred_curr, e.row)) out->add(e.row, +1, e.row_id);
      }
      break;
    }
    case DeltaKind::LocalDiff: {
      auto pre = evaluate(d->pre_plan, ctx.eval);
      auto post = evaluate(d->post_plan, ctx.eval);
      std::map<std::string, std::tuple<Row, std::string, long>> net;
      auto key_of = [](const Row& r, const std::string& id) {
        std::string k = encode_values(r);
        k.push_back('\x01');
        k += id;
        return k;
      };
      for (size_t i = 0; i < post->size(); ++i) {
        auto& e = net[key_of(post->rows[i], post->row_ids[i])];
        std::get<0>(e) = post->rows[i];
        std::get<1>(e) = post->row_ids[i];
        std::get<2>(e) += 1;
      }
      for (size_t i = 0; i < pre->size(); ++i) {
        auto& e = net[key_of(pre->rows[i], pre->row_ids[i])];
        std::get<0>(e) = pre->rows[i];
        std::get<1>(e) = pre->row_ids[i];
        std::get<2>(e) -= 1;
      }
      for (auto& [k, e] : net) {
        long n = std::get<2>(e);
        for (long c = 0; c < std::abs(n); ++c) out->add(std::get<0>(e), n > 0 ? +1 : -1, std::get<1>(e));
      }
      break;
    }
    case DeltaKind::BackingDelete: {
      auto child = evaluate_delta(d->children[0], ctx);
      if (child->empty()) break;
      auto key_set = detail::delta_key_set(*child, d->group_keys, env);
      auto backing = ctx.eval.store->table(d->backing_table).snapshot(d->backing_version);
      const size_t id_col = backing->schema.size() - 1;
      for (size_t i = 0; i < backing->size(); ++i) {
        std::string k;
        for (const ExprPtr& ke : d->backing_key_exprs) encode_value(k, eval_expr(ke, backing->rows[i], env));
        if (!key_set->count(k)) continue;
        Row data(backing->rows[i].begin(), backing->rows[i].end() - 1);
        std::string id;
        const std::string& hex = backing->rows[i][id_col].as_string();
        for (size_t h = 0; h + 1 < hex.size(); h += 2)
          id.push_back(static_cast<char>(std::stoi(hex.substr(h, 2), nullptr, 16)));
        out->add(std::move(data), -1, id);
      }
      break;
    }
    case DeltaKind::RestrictedRecompute: {
      auto child = evaluate_delta(d->children[0], ctx);
      if (child->empty()) break;
      auto key_set = detail::delta_key_set(*child, d->group_keys, env);
      ExprPtr probe = key_probe(d->backing_key_exprs, key_set);
      auto rel = evaluate(push_restriction(d->recompute_plan, probe), ctx.eval);
      for (size_t i = 0; i < rel->size(); ++i) out->add(rel->rows[i], +1, rel->row_ids[i]);
      break;
    }
    case DeltaKind::MergeAdjust: {
      // Row-level view of the merge adjustments, resolved against the
      // materialized backing state; the apply path consumes the adjustments
      // directly.
      auto adjustments = evaluate_adjustments(*d, ctx);
      auto backing = ctx.eval.store->table(d->backing_table).snapshot(d->backing_version);
      const size_t id_col = backing->schema.size() - 1;
      std::unordered_map<std::string, size_t> by_id;
      for (size_t i = 0; i < backing->size(); ++i) by_id[backing->rows[i][id_col].as_string()] = i;
      for (const GroupAdjustment& adj : adjustments) {
        std::string id = group_row_id(adj.keys);
        std::string hex = to_hex(id);
        const Row* old_row = nullptr;
        Row old_data;
        auto hit = by_id.find(hex);
        if (hit != by_id.end()) {
          old_data.assign(backing->rows[hit->second].begin(), backing->rows[hit->second].end() - 1);
          old_row = &old_data;
        }
        std::optional<Row> merged = merge_group_row(*d, old_row, adj);
        if (old_row) out->add(old_data, -1, id);
        if (merged) out->add(*merged, +1, id);
      }
      break;
    }
  }
  ctx.memo[d.get()] = {d, out};
  return out;
}

// ---------------------------------------------------------------------------
// Bottom-up change plan construction.

namespace detail {

struct BuildState {
  const RefreshContext* ctx = nullptr;
  const ChangeStats* stats = nullptr;
  std::map<std::string, DeltaPtr> source_feeds;  // one shared feed node per source
};

struct BuildResult {
  ChangePlan cp;
  double raw_estimate = 0;
  double eff_estimate = 0;
};

/// Clone with an explicit output schema; bindings never change shapes, so
/// composed pre/post plans inherit the original node's schema.
inline PlanPtr with_schema(const PlanPtr& p, const Schema& s) {
  auto n = clone_node(p);
  n->schema = s;
  return n;
}

/// Clock substitution followed by constant folding, so per-row evaluation of
/// temporal predicates compares against a precomputed boundary.
inline ExprPtr bind_clock(const ExprPtr& e, Timestamp t, const Schema& input,
                          const FunctionRegistry& reg) {
  ExprPtr out = substitute_time(e, t);
  if (expr_time_dependent(e)) out = fold_constants(out, input, reg);
  return out;
}

inline PlanPtr bind_side(const PlanPtr& plan, const RefreshContext& ctx, bool post) {
  const auto& versions = post ? ctx.to_versions : ctx.from_versions;
  Timestamp t = post ? ctx.curr_time : ctx.prev_time;
  std::map<std::string, PlanPtr> subs;
  for (const auto& [name, view] : ctx.mv_sources) {
    auto it = versions.find(name);
    if (it == versions.end()) continue;
    const Schema& backing_schema = ctx.store->table(view.backing_table).schema();
    auto sc = clone_node(scan(view.backing_table));
    sc->bound_version = it->second;
    sc->schema = backing_schema;
    std::vector<Column> view_cols;
    for (size_t i = 0; i < view.top_exprs.size(); ++i) {
      ExprType et = infer_expr(view.top_exprs[i], backing_schema, *ctx.registry);
      view_cols.push_back({view.top_names[i], et.type, et.nullable});
    }
    subs[name] = with_schema(project(sc, view.top_exprs, view.top_names), Schema(view_cols));
  }
  PlanPtr bound = bind_plan(plan, versions, &subs);
  // Substitute the refresh clock so evaluation is referentially transparent.
  std::function<PlanPtr(const PlanPtr&)> subst = [&](const PlanPtr& p) -> PlanPtr {
    auto n = clone_node(p);
    for (auto& c : n->children) c = subst(c);
    const Schema* input = n->children.size() == 1 ? &n->children[0]->out_schema() : nullptr;
    auto fix = [&](ExprPtr& e) {
      if (!e) return;
      e = input ? bind_clock(e, t, *input, *ctx.registry) : substitute_time(e, t);
    };
    for (auto& e : n->exprs) fix(e);
    fix(n->predicate);
    for (auto& e : n->group_keys) fix(e);
    for (auto& a : n->aggregates) {
      fix(a.arg);
      fix(a.order_by);
    }
    for (auto& e : n->partition_keys) fix(e);
    for (auto& k : n->order_keys) fix(k.expr);
    for (auto& f : n->window_fns) fix(f.arg);
    fix(n->condition);
    return n;
  };
  return subst(bound);
}

/// Effectivize a child delta ahead of joins and aggregations when the raw
/// entry count is expected to be at least twice the net size.
inline DeltaPtr maybe_effectivize(const BuildResult& r) {
  if (r.raw_estimate > 2.0 * std::max(1.0, r.eff_estimate)) {
    auto e = make_delta(DeltaKind::Effectivize, "effectivize", r.cp.delta->schema);
    e->children = {r.cp.delta};
    return e;
  }
  return r.cp.delta;
}

inline BuildResult build_node(const PlanPtr& plan, BuildState& st);

inline BuildResult build_scan(const PlanPtr& plan, BuildState& st) {
  const RefreshContext& ctx = *st.ctx;
  BuildResult r;
  r.cp.pre = bind_side(plan, ctx, false);
  r.cp.post = bind_side(plan, ctx, true);

  Version from = ctx.from_versions.at(plan->table);
  Version to = ctx.to_versions.at(plan->table);
  auto feed_it = st.source_feeds.find(plan->table);
  if (feed_it != st.source_feeds.end()) {
    r.cp.delta = feed_it->second;
  } else if (from == to) {
    r.cp.delta = make_delta(DeltaKind::Empty, "scan-cdf(empty)", plan->out_schema());
    st.source_feeds[plan->table] = r.cp.delta;
  } else {
    auto mv_it = ctx.mv_sources.find(plan->table);
    auto d = make_delta(DeltaKind::SourceFeed, "scan-cdf", plan->out_schema());
    if (mv_it != ctx.mv_sources.end()) {
      d->table = mv_it->second.backing_table;
      d->feed_projection = mv_it->second.top_exprs;
    } else {
      d->table = plan->table;
    }
    d->from = from;
    d->to = to;
    r.cp.delta = d;
    st.source_feeds[plan->table] = r.cp.delta;
  }
  if (st.stats) {
    auto it = st.stats->per_source.find(plan->table);
    if (it != st.stats->per_source.end()) {
      r.raw_estimate = static_cast<double>(it->second.rows_changed);
      r.eff_estimate = it->second.effectivized_estimate;
    }
  }
  return r;
}

inline BuildResult build_node(const PlanPtr& plan, BuildState& st) {
  fault_point("deltagen.build");
  switch (plan->kind) {
    case PlanKind::Scan:
      return build_scan(plan, st);

    case PlanKind::Filter: {
      BuildResult child = build_node(plan->children[0], st);
      BuildResult r;
      r.raw_estimate = child.raw_estimate;
      r.eff_estimate = child.eff_estimate;
      if (expr_time_dependent(plan->predicate)) {
        const Schema& in = plan->children[0]->out_schema();
        ExprPtr at_prev = bind_clock(plan->predicate, st.ctx->prev_time, in, *st.ctx->registry);
        ExprPtr at_curr = bind_clock(plan->predicate, st.ctx->curr_time, in, *st.ctx->registry);
        r.cp.pre = with_schema(filter(child.cp.pre, at_prev), plan->out_schema());
        r.cp.post = with_schema(filter(child.cp.post, at_curr), plan->out_schema());
        auto d = make_delta(DeltaKind::TemporalFilter, "temporal-filter", plan->out_schema());
        d->children = {child.cp.delta};
        d->pred_prev = at_prev;
        d->pred_curr = at_curr;
        d->pre_base = child.cp.pre;
        d->clock_unchanged = st.ctx->prev_time == st.ctx->curr_time;
        r.cp.delta = d;
        // Clock movement can touch any base row.
        r.raw_estimate += 1;
        r.eff_estimate += 1;
        return r;
      }
      r.cp.pre = with_schema(filter(child.cp.pre, plan->predicate), plan->out_schema());
      r.cp.post = with_schema(filter(child.cp.post, plan->predicate), plan->out_schema());
      auto d = make_delta(DeltaKind::Filter, "filter-push", plan->out_schema());
      d->children = {child.cp.delta};
      d->predicate = plan->predicate;
      r.cp.delta = d;
      return r;
    }

    case PlanKind::Project: {
      BuildResult child = build_node(plan->children[0], st);
      BuildResult r;
      r.raw_estimate = child.raw_estimate;
      r.eff_estimate = child.eff_estimate;
      r.cp.pre = with_schema(project(child.cp.pre, plan->exprs, plan->names), plan->out_schema());
      r.cp.post = with_schema(project(child.cp.post, plan->exprs, plan->names), plan->out_schema());
      auto d = make_delta(DeltaKind::Project, "project-push", plan->out_schema());
      d->children = {child.cp.delta};
      d->exprs = plan->exprs;
      r.cp.delta = d;
      return r;
    }

    case PlanKind::Join: {
      BuildResult l = build_node(plan->children[0], st);
      BuildResult rr = build_node(plan->children[1], st);
      BuildResult r;
      r.cp.pre = with_schema(join(plan->join_kind, l.cp.pre, rr.cp.pre, plan->condition), plan->out_schema());
      r.cp.post =
          with_schema(join(plan->join_kind, l.cp.post, rr.cp.post, plan->condition), plan->out_schema());
      r.raw_estimate = l.raw_estimate + rr.raw_estimate;
      r.eff_estimate = l.eff_estimate + rr.eff_estimate;

      auto left_term = make_delta(DeltaKind::JoinDelta, "join-delta-left", plan->out_schema());
      left_term->children = {maybe_effectivize(l)};
      left_term->rel_plan = rr.cp.pre;
      left_term->delta_on_left = true;
      left_term->condition = plan->condition;

      auto right_term = make_delta(DeltaKind::JoinDelta, "join-delta-right", plan->out_schema());
      right_term->children = {maybe_effectivize(rr)};
      right_term->rel_plan = l.cp.post;
      right_term->delta_on_left = false;
      right_term->condition = plan->condition;

      auto inner = make_delta(DeltaKind::Union, "join-delta", plan->out_schema());
      inner->children = {left_term, right_term};

      if (plan->join_kind == JoinKind::Inner) {
        r.cp.delta = inner;
        return r;
      }
      // Outer joins: inner-join delta plus one or two anti-join terms.
      auto compose = make_delta(DeltaKind::Union, "outer-join-decomposition", plan->out_schema());
      compose->children = {inner};
      auto anti_schema = plan->out_schema();
      if (plan->join_kind == JoinKind::LeftOuter || plan->join_kind == JoinKind::FullOuter) {
        auto anti = make_delta(DeltaKind::LocalDiff, "anti-join-diff-left", anti_schema);
        auto mk = [&](const PlanPtr& lp, const PlanPtr& rp) {
          auto a = clone_node(anti_join(PlanKind::AntiLeft, lp, rp, plan->condition));
          a->schema = anti_schema;
          return PlanPtr(a);
        };
        anti->pre_plan = mk(l.cp.pre, rr.cp.pre);
        anti->post_plan = mk(l.cp.post, rr.cp.post);
        compose->children.push_back(anti);
      }
      if (plan->join_kind == JoinKind::RightOuter || plan->join_kind == JoinKind::FullOuter) {
        auto anti = make_delta(DeltaKind::LocalDiff, "anti-join-diff-right", anti_schema);
        auto mk = [&](const PlanPtr& lp, const PlanPtr& rp) {
          auto a = clone_node(anti_join(PlanKind::AntiRight, lp, rp, plan->condition));
          a->schema = anti_schema;
          return PlanPtr(a);
        };
        anti->pre_plan = mk(l.cp.pre, rr.cp.pre);
        anti->post_plan = mk(l.cp.post, rr.cp.post);
        compose->children.push_back(anti);
      }
      r.cp.delta = compose;
      r.raw_estimate += 1;
      r.eff_estimate += 1;
      return r;
    }

    case PlanKind::Aggregate: {
      BuildResult child = build_node(plan->children[0], st);
      BuildResult r;
      auto rebuild = [&](const PlanPtr& input) {
        auto a = clone_node(plan);
        a->children[0] = input;
        a->schema = plan->out_schema();
        return PlanPtr(a);
      };
      r.cp.pre = rebuild(child.cp.pre);
      r.cp.post = rebuild(child.cp.post);
      auto d = make_delta(DeltaKind::AggRecompute, "aggregate-group-recompute", plan->out_schema());
      d->children = {maybe_effectivize(child)};
      d->pre_input = child.cp.pre;
      d->post_input = child.cp.post;
      d->group_keys = plan->group_keys;
      d->aggregates = plan->aggregates;
      r.cp.delta = d;
      r.raw_estimate = child.raw_estimate * 2;
      r.eff_estimate = child.eff_estimate * 2;
      return r;
    }

    case PlanKind::Window: {
      BuildResult child = build_node(plan->children[0], st);
      BuildResult r;
      auto rebuild = [&](const PlanPtr& input) {
        auto w = clone_node(plan);
        w->children[0] = input;
        w->schema = plan->out_schema();
        return PlanPtr(w);
      };
      r.cp.pre = rebuild(child.cp.pre);
      r.cp.post = rebuild(child.cp.post);
      auto d = make_delta(DeltaKind::WindowRecompute, "window-partition-recompute", plan->out_schema());
      d->children = {maybe_effectivize(child)};
      d->pre_input = child.cp.pre;
      d->post_input = child.cp.post;
      d->group_keys = plan->partition_keys;
      d->window_spec = r.cp.pre;  // spec node; child replaced per side
      r.cp.delta = d;
      r.raw_estimate = child.raw_estimate * 2;
      r.eff_estimate = child.eff_estimate * 2;
      return r;
    }

    case PlanKind::UnionAll: {
      BuildResult r;
      auto d = make_delta(DeltaKind::Union, "union-delta", plan->out_schema());
      d->tag_branches = true;
      std::vector<PlanPtr> pres, posts;
      for (const auto& c : plan->children) {
        BuildResult cr = build_node(c, st);
        pres.push_back(cr.cp.pre);
        posts.push_back(cr.cp.post);
        d->children.push_back(cr.cp.delta);
        r.raw_estimate += cr.raw_estimate;
        r.eff_estimate += cr.eff_estimate;
      }
      r.cp.pre = with_schema(union_all(pres), plan->out_schema());
      r.cp.post = with_schema(union_all(posts), plan->out_schema());
      r.cp.delta = d;
      return r;
    }

    case PlanKind::Distinct: {
      BuildResult child = build_node(plan->children[0], st);
      BuildResult r;
      r.cp.pre = with_schema(distinct(child.cp.pre), plan->out_schema());
      r.cp.post = with_schema(distinct(child.cp.post), plan->out_schema());
      // Group-by-all-columns aggregate with no aggregate functions.
      auto d = make_delta(DeltaKind::AggRecompute, "distinct-group-recompute", plan->out_schema());
      d->children = {maybe_effectivize(child)};
      d->pre_input = child.cp.pre;
      d->post_input = child.cp.post;
      for (size_t i = 0; i < plan->out_schema().size(); ++i) d->group_keys.push_back(col(i));
      r.cp.delta = d;
      r.raw_estimate = child.raw_estimate;
      r.eff_estimate = child.eff_estimate;
      return r;
    }

    default:
      raise(ErrorCode::NotIncrementalizable,
            "operator not supported by the incremental planner");
  }
}

}  // namespace detail

/// Builds the change plan for an enabled backing plan by recursive bottom-up
/// application of the operator delta rules.
inline ChangePlan build_change_plan(const EnabledPlan& enabled, const RefreshContext& ctx,
                                    const ChangeStats* stats = nullptr) {
  detail::BuildState st;
  st.ctx = &ctx;
  st.stats = stats;
  detail::BuildResult r = detail::build_node(enabled.backing_plan, st);
  return r.cp;
}

// ---------------------------------------------------------------------------
// Materialized-data reuse for top-level aggregates and windows.

/// Delta for a top-level aggregate using the data already materialized in the
/// MV: deletions come from the backing table itself (only touched group keys),
/// insertions from recomputing the restricted post state. For merge-adjustable
/// aggregates, produces per-group adjustments instead.
inline ChangePlan build_materialized_aggregate_delta(const EnabledPlan& enabled, const RefreshContext& ctx,
                                                     const std::string& backing_table,
                                                     Version backing_version,
                                                     const ChangeStats* stats = nullptr) {
  if (!enabled.has_top_aggregate && !enabled.has_top_window)
    raise(ErrorCode::Internal, "materialized path requires a top-level aggregate or window");
  if (ctx.store == nullptr || !ctx.store->has_table(backing_table))
    raise(ErrorCode::MissingBackingState, "'" + backing_table + "'");

  detail::BuildState st;
  st.ctx = &ctx;
  st.stats = stats;

  if (enabled.has_top_aggregate) {
    const PlanPtr& agg = enabled.top_aggregate;
    detail::BuildResult input = detail::build_node(agg->children[0], st);
    DeltaPtr input_delta = detail::maybe_effectivize(input);

    ChangePlan cp;
    cp.pre = detail::bind_side(enabled.backing_plan, ctx, false);
    cp.post = detail::bind_side(enabled.backing_plan, ctx, true);

    // Key-only filters above the aggregate.
    std::vector<ExprPtr> having;
    for (PlanPtr n = enabled.backing_plan; n->kind == PlanKind::Filter; n = n->children[0])
      having.push_back(n->predicate);

    if (enabled.merge_adjustable) {
      auto d = make_delta(DeltaKind::MergeAdjust, "merge-aggregate-adjust", enabled.backing_schema());
      d->children = {input_delta};
      d->group_keys = agg->group_keys;
      d->components = enabled.merge_components;
      d->having_filters = having;
      d->count_star_col = enabled.count_star_col;
      d->backing_data_schema = enabled.backing_schema();
      d->backing_table = backing_table;
      d->backing_version = backing_version;
      cp.delta = d;
      return cp;
    }

    auto minus = make_delta(DeltaKind::BackingDelete, "materialized-delete-keys", enabled.backing_schema());
    minus->children = {input_delta};
    minus->group_keys = agg->group_keys;
    minus->backing_table = backing_table;
    minus->backing_version = backing_version;
    for (size_t i = 0; i < agg->group_keys.size(); ++i) minus->backing_key_exprs.push_back(col(i));

    auto plus = make_delta(DeltaKind::RestrictedRecompute, "materialized-after-image", enabled.backing_schema());
    plus->children = {input_delta};
    plus->group_keys = agg->group_keys;
    plus->recompute_plan = cp.post;
    for (size_t i = 0; i < agg->group_keys.size(); ++i) plus->backing_key_exprs.push_back(col(i));

    auto u = make_delta(DeltaKind::Union, "materialized-top-aggregate", enabled.backing_schema());
    u->children = {DeltaPtr(minus), DeltaPtr(plus)};
    cp.delta = u;
    return cp;
  }

  // Top-level window: partition-granularity delete keys plus after-images.
  const PlanPtr& win = enabled.top_window;
  detail::BuildResult input = detail::build_node(win->children[0], st);
  DeltaPtr input_delta = detail::maybe_effectivize(input);

  ChangePlan cp;
  cp.pre = detail::bind_side(enabled.backing_plan, ctx, false);
  cp.post = detail::bind_side(enabled.backing_plan, ctx, true);

  auto minus = make_delta(DeltaKind::BackingDelete, "materialized-delete-partitions", enabled.backing_schema());
  minus->children = {input_delta};
  minus->group_keys = win->partition_keys;
  minus->backing_table = backing_table;
  minus->backing_version = backing_version;
  minus->backing_key_exprs = enabled.window_key_exprs;

  auto plus = make_delta(DeltaKind::RestrictedRecompute, "materialized-partition-after-image",
                         enabled.backing_schema());
  plus->children = {input_delta};
  plus->group_keys = win->partition_keys;
  plus->recompute_plan = cp.post;
  plus->backing_key_exprs = enabled.window_key_exprs;

  auto u = make_delta(DeltaKind::Union, "materialized-top-window", enabled.backing_schema());
  u->children = {DeltaPtr(minus), DeltaPtr(plus)};
  cp.delta = u;
  return cp;
}

// ---------------------------------------------------------------------------
// Partition overwrite eligibility.

struct PartitionOverwriteInfo {
  std::vector<size_t> backing_cols;                      // partition columns in backing output
  std::map<std::string, std::vector<std::string>> source_cols;  // table -> column names, P order
};

namespace detail {

/// Traces partition columns down to source scans; every operator on the way
/// must preserve partition granularity.
inline bool trace_partitions(const PlanPtr& plan, const std::vector<size_t>& pcols,
                             const RefreshContext& ctx,
                             std::map<std::string, std::vector<std::string>>& out) {
  switch (plan->kind) {
    case PlanKind::Scan: {
      if (ctx.mv_sources.count(plan->table)) return false;  // conservatively opaque
      std::vector<std::string> names;
      const Schema& s = plan->out_schema();
      for (size_t c : pcols) names.push_back(s.at(c).name);
      const Table& t = ctx.store->table(plan->table);
      std::set<std::string> declared(t.partition_columns().begin(), t.partition_columns().end());
      std::set<std::string> mapped(names.begin(), names.end());
      if (declared != mapped || declared.empty()) return false;
      auto it = out.find(plan->table);
      if (it != out.end() && it->second != names) return false;
      out[plan->table] = names;
      return true;
    }
    case PlanKind::Filter:
      if (expr_time_dependent(plan->predicate)) return false;
      return trace_partitions(plan->children[0], pcols, ctx, out);
    case PlanKind::Project: {
      std::vector<size_t> below;
      for (size_t c : pcols) {
        const ExprPtr& e = plan->exprs.at(c);
        if (e->kind != ExprKind::ColumnRef) return false;
        below.push_back(e->column);
      }
      return trace_partitions(plan->children[0], below, ctx, out);
    }
    case PlanKind::Aggregate: {
      std::vector<size_t> below;
      for (size_t c : pcols) {
        if (c >= plan->group_keys.size()) return false;
        const ExprPtr& e = plan->group_keys[c];
        if (e->kind != ExprKind::ColumnRef) return false;
        below.push_back(e->column);
      }
      return trace_partitions(plan->children[0], below, ctx, out);
    }
    case PlanKind::Window: {
      const size_t in_width = plan->children[0]->out_schema().size();
      for (size_t c : pcols) {
        if (c >= in_width) return false;
        bool among_keys = false;
        for (const ExprPtr& k : plan->partition_keys)
          if (k->kind == ExprKind::ColumnRef && k->column == c) among_keys = true;
        if (!among_keys) return false;
      }
      return trace_partitions(plan->children[0], pcols, ctx, out);
    }
    case PlanKind::Distinct:
      return trace_partitions(plan->children[0], pcols, ctx, out);
    case PlanKind::UnionAll: {
      for (const auto& c : plan->children)
        if (!trace_partitions(c, pcols, ctx, out)) return false;
      return true;
    }
    case PlanKind::Join: {
      if (plan->join_kind != JoinKind::Inner) return false;
      const size_t lw = plan->children[0]->out_schema().size();
      std::vector<detail::EquiKey> keys;
      detail::extract_equi_keys(plan->condition, lw, keys);
      std::vector<size_t> left_cols, right_cols;
      for (size_t c : pcols) {
        size_t lcol = SIZE_MAX, rcol = SIZE_MAX;
        if (c < lw)
          lcol = c;
        else
          rcol = c - lw;
        // The join condition must link this partition column across sides.
        for (const auto& ek : keys) {
          if (ek.left->kind != ExprKind::ColumnRef || ek.right->kind != ExprKind::ColumnRef) continue;
          if (lcol != SIZE_MAX && ek.left->column == lcol) rcol = ek.right->column;
          if (rcol != SIZE_MAX && lcol == SIZE_MAX && ek.right->column == rcol) lcol = ek.left->column;
        }
        if (lcol == SIZE_MAX || rcol == SIZE_MAX) return false;
        left_cols.push_back(lcol);
        right_cols.push_back(rcol);
      }
      return trace_partitions(plan->children[0], left_cols, ctx, out) &&
             trace_partitions(plan->children[1], right_cols, ctx, out);
    }
    default:
      return false;
  }
}

}  // namespace detail

/// Partition overwrite applies when the MV and all its sources share
/// partition columns and no operator spans partition keys.
inline std::optional<PartitionOverwriteInfo> partition_overwrite_eligible(
    const EnabledPlan& enabled, const std::vector<std::string>& mv_partition_cols,
    const RefreshContext& ctx) {
  if (mv_partition_cols.empty()) return std::nullopt;
  PartitionOverwriteInfo info;
  for (const std::string& name : mv_partition_cols) {
    bool found = false;
    for (size_t i = 0; i < enabled.top_exprs.size(); ++i) {
      if (enabled.top_names[i] == name && enabled.top_exprs[i]->kind == ExprKind::ColumnRef) {
        info.backing_cols.push_back(enabled.top_exprs[i]->column);
        found = true;
        break;
      }
    }
    if (!found) return std::nullopt;
  }
  if (!detail::trace_partitions(enabled.backing_plan, info.backing_cols, ctx, info.source_cols))
    return std::nullopt;
  return info;
}

// ---------------------------------------------------------------------------
// Strategy selection.

struct RefreshStrategy {
  StrategyKind kind = StrategyKind::FullRecompute;
  ApplyMode apply_mode = ApplyMode::ReplaceWhere;
  std::optional<ChangePlan> change_plan;               // RowIncremental
  std::optional<PartitionOverwriteInfo> partitions;    // PartitionOverwrite
  std::vector<Candidate> candidates;                   // all estimates, for reporting
};

/// Candidate construction plus cost-based arbitration. PartitionOverwrite is
/// offered only when eligible; merge_aggregate only for a merge-adjustable
/// top-level aggregate; FullRecompute is always a candidate and wins on
/// NotIncrementalizable upstream.
inline RefreshStrategy select_strategy(const EnabledPlan& enabled, const RefreshContext& ctx,
                                       const ChangeStats& stats, const CostHistory& history,
                                       const CostParams& params, const std::string& mv_name,
                                       const std::string& backing_table, Version backing_version,
                                       const std::vector<std::string>& mv_partition_cols,
                                       size_t downstream_consumers, bool has_backing_state) {
  fault_point("deltagen.select_strategy");
  RefreshStrategy out;
  std::vector<Candidate> candidates;
  candidates.push_back({StrategyKind::FullRecompute, ApplyMode::ReplaceWhere,
                        estimate(StrategyKind::FullRecompute, ApplyMode::ReplaceWhere, mv_name,
                                 enabled.backing_plan, stats, history, params)});

  // Partition overwrite, when eligible, is the incremental form of choice;
  // otherwise row-granularity refresh, with merge application when the
  // top-level aggregate supports adjustments.
  std::optional<PartitionOverwriteInfo> po = partition_overwrite_eligible(enabled, mv_partition_cols, ctx);
  if (po) {
    candidates.push_back({StrategyKind::PartitionOverwrite, ApplyMode::ReplaceWhere,
                          estimate(StrategyKind::PartitionOverwrite, ApplyMode::ReplaceWhere, mv_name,
                                   enabled.backing_plan, stats, history, params)});
  } else {
    ApplyMode incr_mode =
        (enabled.has_top_aggregate && enabled.merge_adjustable && has_backing_state)
            ? ApplyMode::MergeAggregate
            : ApplyMode::ReplaceWhere;
    candidates.push_back({StrategyKind::RowIncremental, incr_mode,
                          estimate(StrategyKind::RowIncremental, incr_mode, mv_name, enabled.backing_plan,
                                   stats, history, params)});
  }

  const Candidate& best = choose(candidates, stats, downstream_consumers, params);
  out.kind = best.kind;
  out.apply_mode = best.mode;
  out.candidates = candidates;

  if (out.kind == StrategyKind::RowIncremental) {
    bool materialized_top = has_backing_state && (enabled.has_top_aggregate || enabled.has_top_window);
    if (materialized_top) {
      out.change_plan =
          build_materialized_aggregate_delta(enabled, ctx, backing_table, backing_version, &stats);
    } else {
      out.change_plan = build_change_plan(enabled, ctx, &stats);
    }
  } else if (out.kind == StrategyKind::PartitionOverwrite) {
    out.partitions = po;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Explain rendering.

inline void render_delta(const DeltaPtr& d, std::string& out, int depth = 0) {
  out.append(static_cast<size_t>(depth) * 2, ' ');
  out += d->rule;
  switch (d->kind) {
    case DeltaKind::SourceFeed:
      out += " [" + d->table + " v" + std::to_string(d->from) + "..v" + std::to_string(d->to) + "]";
      break;
    case DeltaKind::BackingDelete:
    case DeltaKind::MergeAdjust:
      out += " [" + d->backing_table + "@v" + std::to_string(d->backing_version) + "]";
      break;
    default:
      break;
  }
  out += "\n";
  for (const auto& c : d->children) render_delta(c, out, depth + 1);
}

inline std::string render_change_plan(const ChangePlan& cp) {
  std::string out;
  out += "pre:\n";
  render_plan(cp.pre, out, 1);
  out += "post:\n";
  render_plan(cp.post, out, 1);
  out += "delta:\n";
  render_delta(cp.delta, out, 1);
  return out;
}

}  // namespace enzyme

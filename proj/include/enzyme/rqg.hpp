#pragma once

#include <atomic>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "enzyme/pipeline.hpp"
#include "enzyme/workspace.hpp"

namespace enzyme {
namespace rqg {

struct Limits {
  size_t max_tables = 3;
  size_t max_columns = 4;
  size_t max_rows = 40;
  size_t max_batches = 5;
  size_t max_changes_per_batch = 8;
  size_t max_join_depth = 3;
};

/// One source-table change, serializable so failing cases replay exactly.
struct Change {
  size_t table = 0;
  std::vector<Row> inserts;
  std::optional<size_t> delete_col;  // delete rows where col == delete_value
  Value delete_value;
  std::optional<size_t> update_col;  // update rows where col == update_match
  Value update_match;
  size_t update_set_col = 0;
  Value update_set_value;
};

struct Case {
  uint64_t seed = 0;
  std::vector<std::pair<std::string, Schema>> tables;
  std::vector<std::vector<Row>> initial;
  PlanPtr definition;
  std::vector<std::vector<Change>> batches;
  Timestamp base_time{0};
  int64_t clock_step_days = 0;
  bool expects_full_only = false;  // definition contains opaque non-determinism

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    nlohmann::json ts = nlohmann::json::array();
    for (size_t i = 0; i < tables.size(); ++i) {
      nlohmann::json t;
      t["name"] = tables[i].first;
      t["schema"] = schema_to_json(tables[i].second);
      nlohmann::json rows = nlohmann::json::array();
      for (const Row& r : initial[i]) rows.push_back(row_to_json(r));
      t["rows"] = rows;
      ts.push_back(t);
    }
    j["tables"] = ts;
    j["definition"] = plan_to_json(definition);
    nlohmann::json bs = nlohmann::json::array();
    for (const auto& batch : batches) {
      nlohmann::json cb = nlohmann::json::array();
      for (const Change& c : batch) {
        nlohmann::json cj;
        cj["table"] = c.table;
        nlohmann::json ins = nlohmann::json::array();
        for (const Row& r : c.inserts) ins.push_back(row_to_json(r));
        cj["inserts"] = ins;
        if (c.delete_col) {
          cj["delete_col"] = *c.delete_col;
          cj["delete_value"] = value_to_json(c.delete_value);
        }
        if (c.update_col) {
          cj["update_col"] = *c.update_col;
          cj["update_match"] = value_to_json(c.update_match);
          cj["update_set_col"] = c.update_set_col;
          cj["update_set_value"] = value_to_json(c.update_set_value);
        }
        cb.push_back(cj);
      }
      bs.push_back(cb);
    }
    j["batches"] = bs;
    j["base_time"] = format_timestamp(base_time);
    j["clock_step_days"] = clock_step_days;
    j["expects_full_only"] = expects_full_only;
    return j;
  }
};

namespace gen {

class Rand {
public:
  explicit Rand(uint64_t seed) : rng_(seed) {}

  size_t below(size_t n) { return n == 0 ? 0 : static_cast<size_t>(rng_() % n); }
  int64_t int_in(int64_t lo, int64_t hi) { return lo + static_cast<int64_t>(rng_() % static_cast<uint64_t>(hi - lo + 1)); }
  bool chance(int percent) { return static_cast<int>(rng_() % 100) < percent; }

  /// Join keys skew: 20% of draws come from a hot set of three values.
  int64_t join_key() { return chance(20) ? int_in(0, 2) : int_in(0, 9); }

  /// Floats exactly representable (quarters), keeping incremental arithmetic
  /// exact in practice.
  double small_float() { return static_cast<double>(int_in(-2000, 2000)) / 4.0; }

private:
  std::mt19937_64 rng_;
};

inline Value random_value(Rand& r, ValueType t, bool nullable) {
  if (nullable && r.chance(12)) return Value::null();
  switch (t) {
    case ValueType::Int64: return Value(r.join_key());
    case ValueType::Float64: return Value(r.small_float());
    case ValueType::String: {
      static const char* words[] = {"east", "west", "asia", "eu", "x", "y"};
      return Value(words[r.below(6)]);
    }
    case ValueType::Bool: return Value(r.chance(50));
    case ValueType::Date: return Value(Date{static_cast<int32_t>(20000 + r.int_in(0, 60))});
    case ValueType::Timestamp: return Value(Timestamp{r.int_in(0, 1000000) * 1000000});
  }
  return Value::null();
}

inline ExprPtr random_predicate(Rand& r, const Schema& s, int depth = 0) {
  if (depth < 2 && r.chance(30)) {
    ExprPtr a = random_predicate(r, s, depth + 1);
    ExprPtr b = random_predicate(r, s, depth + 1);
    if (r.chance(15)) return not_expr(a);
    return binary(r.chance(50) ? BinOp::And : BinOp::Or, a, b);
  }
  size_t c = r.below(s.size());
  const Column& column = s.at(c);
  if (r.chance(10)) return is_null_expr(col(c));
  switch (column.type) {
    case ValueType::Int64: {
      static const BinOp ops[] = {BinOp::Eq, BinOp::Ne, BinOp::Lt, BinOp::Le, BinOp::Gt, BinOp::Ge};
      if (r.chance(20)) {
        std::vector<ExprPtr> items;
        for (size_t i = 0; i < 1 + r.below(3); ++i) items.push_back(lit_int(r.join_key()));
        return in_list(col(c), items);
      }
      ExprPtr lhs = r.chance(25) ? binary(BinOp::Add, col(c), lit_int(r.int_in(1, 3))) : col(c);
      return binary(ops[r.below(6)], lhs, lit_int(r.join_key()));
    }
    case ValueType::Float64:
      return binary(r.chance(50) ? BinOp::Gt : BinOp::Le, col(c), lit_float(r.small_float()));
    case ValueType::String: {
      static const char* words[] = {"east", "west", "asia", "eu", "x", "y"};
      if (r.chance(30)) {
        std::vector<ExprPtr> items = {lit_string(words[r.below(6)]), lit_string(words[r.below(6)])};
        return in_list(col(c), items);
      }
      return binary(r.chance(60) ? BinOp::Eq : BinOp::Ne, col(c), lit_string(words[r.below(6)]));
    }
    case ValueType::Bool:
      return r.chance(50) ? col(c) : not_expr(col(c));
    case ValueType::Date:
      return binary(r.chance(50) ? BinOp::Ge : BinOp::Lt, col(c),
                    lit_date(Date{static_cast<int32_t>(20000 + r.int_in(0, 60))}));
    case ValueType::Timestamp:
      return binary(BinOp::Ge, col(c), lit(Value(Timestamp{r.int_in(0, 1000000) * 1000000}),
                                           ValueType::Timestamp));
  }
  return lit_bool(true);
}

struct PlanGen {
  Rand& r;
  const std::vector<std::pair<std::string, Schema>>& tables;
  const Catalog& catalog;

  PlanPtr source(size_t table_idx) { return scan(tables[table_idx].first); }

  Schema schema_of(const PlanPtr& p) { return infer_schema(p, catalog)->out_schema(); }

  PlanPtr random_leaf() {
    size_t t = r.below(tables.size());
    PlanPtr p = source(t);
    if (r.chance(50)) p = filter(p, random_predicate(r, tables[t].second));
    return p;
  }

  std::vector<size_t> columns_of_type(const Schema& s, ValueType t) {
    std::vector<size_t> out;
    for (size_t i = 0; i < s.size(); ++i)
      if (s.at(i).type == t) out.push_back(i);
    return out;
  }

  PlanPtr random_join(size_t depth) {
    PlanPtr left = random_plan(depth - 1);
    PlanPtr right = random_leaf();
    Schema ls = schema_of(left), rs = schema_of(right);
    auto lcols = columns_of_type(ls, ValueType::Int64);
    auto rcols = columns_of_type(rs, ValueType::Int64);
    if (lcols.empty() || rcols.empty()) return left;
    ExprPtr cond = binary(BinOp::Eq, col(lcols[r.below(lcols.size())]),
                          col(ls.size() + rcols[r.below(rcols.size())]));
    static const JoinKind kinds[] = {JoinKind::Inner, JoinKind::Inner, JoinKind::LeftOuter,
                                     JoinKind::RightOuter, JoinKind::FullOuter};
    return join(kinds[r.below(5)], left, right, cond);
  }

  PlanPtr random_aggregate(PlanPtr input) {
    Schema s = schema_of(input);
    std::vector<ExprPtr> keys;
    std::vector<std::string> key_names;
    size_t nkeys = r.below(3);
    std::set<size_t> used;
    for (size_t i = 0; i < nkeys; ++i) {
      size_t c = r.below(s.size());
      if (used.count(c)) continue;
      used.insert(c);
      keys.push_back(col(c));
      key_names.push_back("k" + std::to_string(keys.size() - 1));
    }
    auto nums = columns_of_type(s, ValueType::Float64);
    auto ints = columns_of_type(s, ValueType::Int64);
    std::vector<AggregateSpec> aggs;
    size_t naggs = 1 + r.below(3);
    for (size_t i = 0; i < naggs; ++i) {
      std::string name = "a" + std::to_string(i);
      switch (r.below(8)) {
        case 0:
          if (!nums.empty()) {
            aggs.push_back({AggKind::Sum, col(nums[r.below(nums.size())]), nullptr, false, name});
            break;
          }
          [[fallthrough]];
        case 1:
          aggs.push_back({AggKind::CountStar, nullptr, nullptr, false, name});
          break;
        case 2:
          aggs.push_back({AggKind::Count, col(r.below(s.size())), nullptr, false, name});
          break;
        case 3:
          if (!nums.empty()) {
            aggs.push_back({AggKind::Avg, col(nums[r.below(nums.size())]), nullptr, false, name});
            break;
          }
          [[fallthrough]];
        case 4:
          aggs.push_back({AggKind::Min, col(r.below(s.size())), nullptr, false, name});
          break;
        case 5:
          aggs.push_back({AggKind::Max, col(r.below(s.size())), nullptr, false, name});
          break;
        case 6:
          if (!nums.empty()) {
            aggs.push_back({AggKind::Stddev, col(nums[r.below(nums.size())]), nullptr, false, name});
            break;
          }
          [[fallthrough]];
        default:
          if (!ints.empty()) {
            size_t order_col = ints[r.below(ints.size())];
            if (!s.at(order_col).nullable && r.chance(50)) {
              aggs.push_back({AggKind::First, col(r.below(s.size())), col(order_col), false, name});
              break;
            }
          }
          aggs.push_back({AggKind::CollectSet, col(r.below(s.size())), nullptr, false, name});
          break;
      }
    }
    return aggregate(input, keys, key_names, aggs);
  }

  PlanPtr random_window(PlanPtr input) {
    Schema s = schema_of(input);
    std::vector<ExprPtr> partition;
    if (r.chance(80)) partition.push_back(col(r.below(s.size())));
    std::vector<SortKey> order = {{col(r.below(s.size())), r.chance(70)}};
    std::vector<WindowFnSpec> fns;
    switch (r.below(3)) {
      case 0: fns.push_back({WindowFnKind::RowNumber, nullptr, "w0"}); break;
      case 1: fns.push_back({WindowFnKind::Rank, nullptr, "w0"}); break;
      default: {
        auto nums = columns_of_type(s, ValueType::Float64);
        if (!nums.empty())
          fns.push_back({WindowFnKind::Sum, col(nums[r.below(nums.size())]), "w0"});
        else
          fns.push_back({WindowFnKind::Count, nullptr, "w0"});
      }
    }
    return window(input, partition, order, fns);
  }

  PlanPtr random_temporal(size_t table_idx) {
    const Schema& s = tables[table_idx].second;
    auto dates = columns_of_type(s, ValueType::Date);
    if (dates.empty()) return random_leaf();
    size_t c = dates[r.below(dates.size())];
    int64_t window_days = r.int_in(5, 40);
    return filter(source(table_idx),
                  binary(BinOp::Ge, col(c),
                         binary(BinOp::Sub, current_date_expr(), interval_days_expr(window_days))));
  }

  PlanPtr random_plan(size_t depth) {
    if (depth == 0) return random_leaf();
    switch (r.below(10)) {
      case 0:
      case 1:
        return random_join(depth);
      case 2:
        return random_aggregate(random_plan(depth - 1));
      case 3:
        return random_window(random_plan(depth - 1));
      case 4: {
        size_t t = r.below(tables.size());
        PlanPtr a = filter(source(t), random_predicate(r, tables[t].second));
        PlanPtr b = filter(source(t), random_predicate(r, tables[t].second));
        return union_all({a, b});
      }
      case 5: {
        PlanPtr p = random_plan(depth - 1);
        Schema s = schema_of(p);
        std::vector<size_t> keep;
        for (size_t i = 0; i < s.size(); ++i)
          if (r.chance(70) || keep.empty()) keep.push_back(i);
        std::vector<ExprPtr> exprs;
        std::vector<std::string> names;
        for (size_t i : keep) {
          if (s.at(i).type == ValueType::Int64 && r.chance(25)) {
            exprs.push_back(binary(BinOp::Add, col(i), lit_int(r.int_in(1, 5))));
          } else if (s.at(i).type == ValueType::Float64 && r.chance(25)) {
            exprs.push_back(binary(BinOp::Mul, col(i), lit_float(2.0)));
          } else {
            exprs.push_back(col(i));
          }
          names.push_back("c" + std::to_string(names.size()));
        }
        return project(p, exprs, names);
      }
      case 6:
        return distinct(random_plan(depth - 1));
      case 7:
        return random_temporal(r.below(tables.size()));
      default: {
        PlanPtr p = random_plan(depth - 1);
        return filter(p, random_predicate(r, schema_of(p)));
      }
    }
  }
};

}  // namespace gen

/// Deterministic in the seed: schemas, data, one MV definition, and a list of
/// randomized change batches (inserts, predicate deletes, id-stable updates).
inline Case generate_case(uint64_t seed, const Limits& limits = {}) {
  gen::Rand r(seed * 0x9e3779b97f4a7c15ULL + 1);
  Case c;
  c.seed = seed;
  c.base_time = Timestamp{parse_timestamp("2025-01-01T00:00:00Z").micros +
                          r.int_in(0, 300) * 86400000000LL};
  c.clock_step_days = r.chance(40) ? r.int_in(0, 3) : 0;

  size_t ntables = 1 + r.below(limits.max_tables);
  static const ValueType pool[] = {ValueType::Int64, ValueType::Float64, ValueType::String,
                                   ValueType::Bool, ValueType::Date};
  for (size_t t = 0; t < ntables; ++t) {
    std::vector<Column> cols;
    cols.push_back({"id", ValueType::Int64, false});  // always a join-able key
    size_t extra = 1 + r.below(limits.max_columns - 1);
    bool has_date = false;
    for (size_t i = 0; i < extra; ++i) {
      ValueType vt = pool[r.below(5)];
      has_date = has_date || vt == ValueType::Date;
      cols.push_back({"c" + std::to_string(i), vt, r.chance(50)});
    }
    // keep temporal-filter definitions reachable from every table
    if (!has_date) cols.push_back({"d0", ValueType::Date, false});
    c.tables.emplace_back("t" + std::to_string(t), Schema(cols));
    std::vector<Row> rows;
    size_t n = r.below(limits.max_rows + 1);
    for (size_t i = 0; i < n; ++i) {
      Row row;
      for (const Column& columnDef : c.tables.back().second.columns())
        row.push_back(columnDef.name == "id" ? Value(r.join_key())
                                             : gen::random_value(r, columnDef.type, columnDef.nullable));
      rows.push_back(std::move(row));
    }
    c.initial.push_back(std::move(rows));
  }

  Catalog cat;
  for (const auto& [name, schema] : c.tables) cat.emplace(name, schema);
  gen::PlanGen pg{r, c.tables, cat};
  if (r.chance(3)) {
    // occasional opaque definition: the engine must fall back
    size_t t = r.below(c.tables.size());
    c.definition = filter(pg.source(t), binary(BinOp::Gt, func("rand", {}), lit_float(0.5)));
    c.expects_full_only = true;
  } else {
    c.definition = pg.random_plan(1 + r.below(limits.max_join_depth));
  }

  size_t nbatches = 1 + r.below(limits.max_batches);
  for (size_t b = 0; b < nbatches; ++b) {
    std::vector<Change> batch;
    size_t nchanges = 1 + r.below(limits.max_changes_per_batch);
    for (size_t i = 0; i < nchanges; ++i) {
      Change ch;
      ch.table = r.below(c.tables.size());
      const Schema& s = c.tables[ch.table].second;
      int what = static_cast<int>(r.below(3));
      if (what == 0 || r.chance(30)) {
        size_t n = 1 + r.below(4);
        for (size_t k = 0; k < n; ++k) {
          Row row;
          for (const Column& columnDef : s.columns())
            row.push_back(columnDef.name == "id" ? Value(r.join_key())
                                                 : gen::random_value(r, columnDef.type, columnDef.nullable));
          ch.inserts.push_back(std::move(row));
        }
      }
      if (what == 1) {
        size_t dc = r.below(s.size());
        ch.delete_col = dc;
        ch.delete_value = gen::random_value(r, s.at(dc).type, false);
      }
      if (what == 2) {
        size_t mc = r.below(s.size());
        size_t sc = r.below(s.size());
        ch.update_col = mc;
        ch.update_match = gen::random_value(r, s.at(mc).type, false);
        ch.update_set_col = sc;
        ch.update_set_value = gen::random_value(r, s.at(sc).type, s.at(sc).nullable);
      }
      batch.push_back(std::move(ch));
    }
    c.batches.push_back(std::move(batch));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Differential runner.

struct Verdict {
  bool ok = true;
  std::string detail;
  size_t failing_batch = 0;          // 1-based index of the first failing batch
  std::optional<Case> minimized;     // smallest reproduction found
  size_t content_checks = 0;         // incremental-vs-recompute comparisons run
  size_t oracle_checks = 0;          // changeset-vs-diff oracle comparisons run
};

namespace detail_rqg {

inline void apply_change(Workspace& ws, const Case& c, const Change& ch) {
  Table& t = ws.store().table(c.tables[ch.table].first);
  std::function<bool(const Row&)> del;
  if (ch.delete_col) {
    size_t dc = *ch.delete_col;
    Value v = ch.delete_value;
    del = [dc, v](const Row& r) { return r[dc] == v; };
  }
  t.commit(ch.inserts, del, {});
  if (ch.update_col) {
    size_t mc = *ch.update_col;
    size_t sc = ch.update_set_col;
    Value match = ch.update_match;
    Value set = ch.update_set_value;
    t.update_where([mc, match](const Row& r) { return r[mc] == match; },
                   [sc, set](const Row& r) {
                     Row u = r;
                     u[sc] = set;
                     return u;
                   });
  }
}

inline std::vector<Row> view_rows(Workspace& ws, const std::string& mv_name) {
  const MvDefinition& def = ws.mv(mv_name);
  EnabledPlan enabled = ws.enable_or_plain(def);
  Table& backing = ws.store().table(def.backing_table());
  auto snap = backing.snapshot(backing.current_version());
  EvalEnv env;
  std::vector<Row> out;
  for (const Row& r : snap->rows) {
    Row data(r.begin(), r.end() - 1);
    Row visible;
    for (const ExprPtr& e : enabled.top_exprs) visible.push_back(eval_expr(e, data, env));
    out.push_back(std::move(visible));
  }
  return out;
}

inline std::vector<Row> shadow_recompute(Workspace& ws, const Case& c, Timestamp now) {
  Catalog cat = ws.catalog();
  NormalizedPlan np = normalize(c.definition, cat, ws.registry());
  std::map<std::string, uint64_t> versions;
  for (const auto& [name, schema] : c.tables)
    versions[name] = ws.store().table(name).current_version();
  PlanPtr bound = bind_plan(np.plan, versions);
  // substitute the clock exactly like the refresh path
  std::function<PlanPtr(const PlanPtr&)> subst = [&](const PlanPtr& p) -> PlanPtr {
    auto n = clone_node(p);
    for (auto& ch : n->children) ch = subst(ch);
    walk_node_exprs(*n, [](const ExprPtr&) {});
    auto fix = [&](ExprPtr& e) {
      if (e) e = substitute_time(e, now);
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
  bound = infer_schema(subst(bound), cat, ws.registry());
  EvalContext ectx;
  ectx.store = &ws.store();
  ectx.now = now;
  return evaluate(bound, ectx)->rows;
}

inline std::vector<Row> changeset_net_rows(const Changeset& cs) {
  std::map<std::string, std::pair<Row, long>> net;
  for (const ChangeEntry& e : cs.entries) {
    auto& g = net[encode_values(e.row)];
    g.first = e.row;
    g.second += e.weight;
  }
  std::vector<Row> out;
  for (auto& [k, g] : net) {
    if (g.second == 0) continue;
    Row r = g.first;
    r.push_back(Value(static_cast<int64_t>(g.second)));
    out.push_back(r);
  }
  return out;
}

struct RunResult {
  bool ok = true;
  std::string detail;
  size_t failing_batch = 0;
  size_t content_checks = 0;
  size_t oracle_checks = 0;
};

inline RunResult run_once(const Case& c, size_t batch_limit) {
  static std::atomic<uint64_t> counter{0};
  std::filesystem::path root =
      std::filesystem::temp_directory_path() /
      ("enzyme_rqg_" + std::to_string(c.seed) + "_" + std::to_string(counter.fetch_add(1)) + "_" +
       std::to_string(batch_limit));
  std::filesystem::remove_all(root);
  RunResult result;
  {
    Workspace ws(root);
    for (size_t t = 0; t < c.tables.size(); ++t) {
      Table& table = ws.create_source(c.tables[t].first, c.tables[t].second);
      table.commit(c.initial[t], nullptr, {});
    }
    MvDefinition def;
    def.name = "mv";
    def.definition = c.definition;
    ws.create_mv(def);

    Timestamp now = c.base_time;
    RefreshOptions opts;
    opts.now = now;
    opts.capture_change_plan = true;
    opts.max_parallelism = 1;

    RefreshEntry first = refresh_mv(ws, "mv", opts);
    std::string fail;
    auto check_state = [&](const RefreshEntry& entry, size_t batch_idx) -> bool {
      if (entry.outcome == RefreshOutcome::Failed) {
        fail = "refresh failed: " + entry.error;
        return false;
      }
      if (c.expects_full_only) {
        // Non-deterministic definitions: verify the fallback strategy and
        // skip the content and delta oracles.
        if (entry.strategy != StrategyKind::FullRecompute) {
          fail = "opaque definition did not fall back to full recompute";
          return false;
        }
        return true;
      }
      std::vector<Row> actual = view_rows(ws, "mv");
      std::vector<Row> expected = shadow_recompute(ws, c, opts.now);
      ++result.content_checks;
      if (!bag_equal(actual, expected, 1e-9)) {
        fail = "view contents diverge from full recomputation at batch " + std::to_string(batch_idx);
        return false;
      }
      if (batch_idx > 0 && entry.fingerprint_changed) {
        fail = "fingerprint unstable across batches";
        return false;
      }
      // Changeset oracle when an incremental plan ran (skipped for opaque
      // fallback cases).
      if (entry.change_plan && entry.changeset && !c.expects_full_only) {
        DeltaEvalContext dctx;
        dctx.eval.store = &ws.store();
        dctx.eval.now = opts.now;
        auto pre = evaluate(entry.change_plan->pre, dctx.eval);
        auto post = evaluate(entry.change_plan->post, dctx.eval);
        auto diff = bag_difference(post->rows, pre->rows);
        std::vector<Row> oracle;
        for (auto& [k, g] : diff) {
          Row r = g.first;
          r.push_back(Value(static_cast<int64_t>(g.second)));
          oracle.push_back(r);
        }
        ++result.oracle_checks;
        if (!bag_equal(changeset_net_rows(*entry.changeset), oracle, 1e-9)) {
          fail = "delta changeset diverges from the recompute-and-diff oracle at batch " +
                 std::to_string(batch_idx);
          return false;
        }
      }
      return true;
    };

    if (!check_state(first, 0)) {
      result.ok = false;
      result.detail = fail;
      result.failing_batch = 0;
    } else {
      for (size_t b = 0; b < std::min(batch_limit, c.batches.size()); ++b) {
        for (const Change& ch : c.batches[b]) apply_change(ws, c, ch);
        opts.now = Timestamp{opts.now.micros + c.clock_step_days * 86400000000LL};
        RefreshEntry entry = refresh_mv(ws, "mv", opts);
        if (!check_state(entry, b + 1)) {
          result.ok = false;
          result.detail = fail;
          result.failing_batch = b + 1;
          break;
        }
      }
    }
  }
  std::filesystem::remove_all(root);
  return result;
}

}  // namespace detail_rqg

/// Applies each batch, refreshes incrementally, recomputes a shadow from
/// scratch, and asserts bag equality of the user-visible columns plus
/// fingerprint stability and the changeset oracle. On mismatch, minimizes to
/// the smallest failing batch prefix, then bisects the last batch's inserts.
inline Verdict run_differential(const Case& c) {
  Verdict v;
  detail_rqg::RunResult full = detail_rqg::run_once(c, c.batches.size());
  v.content_checks = full.content_checks;
  v.oracle_checks = full.oracle_checks;
  if (full.ok) return v;
  v.ok = false;
  v.detail = full.detail;
  v.failing_batch = full.failing_batch;

  // Batch-prefix minimization.
  size_t lo = full.failing_batch;
  Case reduced = c;
  reduced.batches.resize(lo);
  // Row bisection within the last batch's inserts.
  if (lo >= 1) {
    bool shrunk = true;
    while (shrunk) {
      shrunk = false;
      for (size_t ci = 0; ci < reduced.batches[lo - 1].size(); ++ci) {
        Change& ch = reduced.batches[lo - 1][ci];
        while (ch.inserts.size() > 1) {
          Case half = reduced;
          half.batches[lo - 1][ci].inserts.resize(ch.inserts.size() / 2);
          if (!detail_rqg::run_once(half, half.batches.size()).ok) {
            reduced = half;
            shrunk = true;
          } else {
            break;
          }
        }
      }
      // Drop whole changes when the failure persists without them.
      for (size_t ci = reduced.batches[lo - 1].size(); ci-- > 0;) {
        if (reduced.batches[lo - 1].size() <= 1) break;
        Case without = reduced;
        without.batches[lo - 1].erase(without.batches[lo - 1].begin() + ci);
        if (!detail_rqg::run_once(without, without.batches.size()).ok) {
          reduced = without;
          shrunk = true;
        }
      }
    }
  }
  v.minimized = reduced;
  return v;
}

/// Operator coverage over a seed range; every supported construct should be
/// exercised repeatedly.
inline std::map<std::string, size_t> coverage_report(uint64_t seed_begin, uint64_t seed_end,
                                                     const Limits& limits = {}) {
  std::map<std::string, size_t> counts;
  for (uint64_t s = seed_begin; s < seed_end; ++s) {
    Case c = generate_case(s, limits);
    walk_plan(c.definition, [&](const PlanPtr& p) {
      switch (p->kind) {
        case PlanKind::Scan: counts["scan"]++; break;
        case PlanKind::Filter:
          counts[expr_time_dependent(p->predicate) ? "temporal_filter" : "filter"]++;
          break;
        case PlanKind::Project: counts["project"]++; break;
        case PlanKind::Aggregate:
          counts["aggregate"]++;
          for (const auto& a : p->aggregates) counts[std::string("agg_") + agg_kind_name(a.kind)]++;
          break;
        case PlanKind::Window: counts["window"]++; break;
        case PlanKind::Join: counts[std::string("join_") + join_kind_name(p->join_kind)]++; break;
        case PlanKind::UnionAll: counts["union_all"]++; break;
        case PlanKind::Distinct: counts["distinct"]++; break;
        default: break;
      }
    });
  }
  return counts;
}

}  // namespace rqg
}  // namespace enzyme

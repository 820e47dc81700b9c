#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "enzyme/builtins.hpp"
#include "enzyme/expr.hpp"
#include "enzyme/schema.hpp"

namespace enzyme {

enum class PlanKind {
  Scan,
  Project,
  Filter,
  Aggregate,
  Window,
  Join,
  UnionAll,
  Distinct,
  With,     // CTE binding: children = [definition, body]
  CteRef,   // reference to an enclosing With, removed by the normalizer

  // Internal kinds produced by the incremental planner, never by the parser:
  // null-extended anti joins backing the outer-join delta decomposition.
  AntiLeft,   // left rows with no match, right columns null
  AntiRight,  // right rows with no match, left columns null
};

enum class JoinKind { Inner, LeftOuter, RightOuter, FullOuter };

inline const char* join_kind_name(JoinKind k) {
  switch (k) {
    case JoinKind::Inner: return "inner";
    case JoinKind::LeftOuter: return "left_outer";
    case JoinKind::RightOuter: return "right_outer";
    case JoinKind::FullOuter: return "full_outer";
  }
  return "?";
}

enum class AggKind { Sum, Count, CountStar, Min, Max, Avg, First, CollectList, CollectSet, Stddev };

inline const char* agg_kind_name(AggKind k) {
  switch (k) {
    case AggKind::Sum: return "sum";
    case AggKind::Count: return "count";
    case AggKind::CountStar: return "count_star";
    case AggKind::Min: return "min";
    case AggKind::Max: return "max";
    case AggKind::Avg: return "avg";
    case AggKind::First: return "first";
    case AggKind::CollectList: return "collect_list";
    case AggKind::CollectSet: return "collect_set";
    case AggKind::Stddev: return "stddev";
  }
  return "?";
}

enum class WindowFnKind { RowNumber, Rank, DenseRank, Sum, Count, Min, Max };

inline const char* window_fn_name(WindowFnKind k) {
  switch (k) {
    case WindowFnKind::RowNumber: return "row_number";
    case WindowFnKind::Rank: return "rank";
    case WindowFnKind::DenseRank: return "dense_rank";
    case WindowFnKind::Sum: return "sum";
    case WindowFnKind::Count: return "count";
    case WindowFnKind::Min: return "min";
    case WindowFnKind::Max: return "max";
  }
  return "?";
}

struct AggregateSpec {
  AggKind kind = AggKind::CountStar;
  ExprPtr arg;                 // absent for count(*)
  ExprPtr order_by;            // FIRST only
  bool ordered = false;        // COLLECT_*: deterministic local ordering attached
  std::string name;
};

struct WindowFnSpec {
  WindowFnKind kind = WindowFnKind::RowNumber;
  ExprPtr arg;  // absent for row_number/rank/dense_rank
  std::string name;
};

struct SortKey {
  ExprPtr expr;
  bool ascending = true;
};

struct PlanNode;
using PlanPtr = std::shared_ptr<const PlanNode>;

struct PlanNode {
  PlanKind kind = PlanKind::Scan;
  std::vector<PlanPtr> children;

  std::string table;                     // Scan
  std::optional<uint64_t> bound_version; // Scan, set when bound for evaluation

  std::vector<ExprPtr> exprs;            // Project
  std::vector<std::string> names;        // Project output names

  ExprPtr predicate;                     // Filter

  std::vector<ExprPtr> group_keys;       // Aggregate
  std::vector<std::string> key_names;
  std::vector<AggregateSpec> aggregates;

  std::vector<ExprPtr> partition_keys;   // Window
  std::vector<SortKey> order_keys;
  std::vector<WindowFnSpec> window_fns;

  JoinKind join_kind = JoinKind::Inner;  // Join
  ExprPtr condition;

  std::string cte_name;                  // With / CteRef

  /// Output schema; attached by infer_schema.
  std::optional<Schema> schema;

  const Schema& out_schema() const {
    if (!schema) raise(ErrorCode::Internal, "plan node lacks an inferred schema");
    return *schema;
  }
};

using MutablePlan = std::shared_ptr<PlanNode>;

inline MutablePlan clone_node(const PlanPtr& p) { return std::make_shared<PlanNode>(*p); }

// -- builders -----------------------------------------------------------------

inline PlanPtr scan(std::string table) {
  auto n = std::make_shared<PlanNode>();
  n->kind = PlanKind::Scan;
  n->table = std::move(table);
  return n;
}

inline PlanPtr project(PlanPtr child, std::vector<ExprPtr> exprs, std::vector<std::string> names) {
  auto n = std::make_shared<PlanNode>();
  n->kind = PlanKind::Project;
  n->children = {std::move(child)};
  n->exprs = std::move(exprs);
  n->names = std::move(names);
  return n;
}

inline PlanPtr filter(PlanPtr child, ExprPtr predicate) {
  auto n = std::make_shared<PlanNode>();
  n->kind = PlanKind::Filter;
  n->children = {std::move(child)};
  n->predicate = std::move(predicate);
  return n;
}

inline PlanPtr aggregate(PlanPtr child, std::vector<ExprPtr> keys, std::vector<std::string> key_names,
                         std::vector<AggregateSpec> aggs) {
  auto n = std::make_shared<PlanNode>();
  n->kind = PlanKind::Aggregate;
  n->children = {std::move(child)};
  n->group_keys = std::move(keys);
  n->key_names = std::move(key_names);
  n->aggregates = std::move(aggs);
  return n;
}

inline PlanPtr window(PlanPtr child, std::vector<ExprPtr> partition_keys, std::vector<SortKey> order_keys,
                      std::vector<WindowFnSpec> fns) {
  auto n = std::make_shared<PlanNode>();
  n->kind = PlanKind::Window;
  n->children = {std::move(child)};
  n->partition_keys = std::move(partition_keys);
  n->order_keys = std::move(order_keys);
  n->window_fns = std::move(fns);
  return n;
}

inline PlanPtr join(JoinKind kind, PlanPtr left, PlanPtr right, ExprPtr condition) {
  auto n = std::make_shared<PlanNode>();
  n->kind = PlanKind::Join;
  n->join_kind = kind;
  n->children = {std::move(left), std::move(right)};
  n->condition = std::move(condition);
  return n;
}

inline PlanPtr anti_join(PlanKind kind, PlanPtr left, PlanPtr right, ExprPtr condition) {
  auto n = std::make_shared<PlanNode>();
  n->kind = kind;
  n->children = {std::move(left), std::move(right)};
  n->condition = std::move(condition);
  return n;
}

inline PlanPtr union_all(std::vector<PlanPtr> children) {
  auto n = std::make_shared<PlanNode>();
  n->kind = PlanKind::UnionAll;
  n->children = std::move(children);
  return n;
}

inline PlanPtr distinct(PlanPtr child) {
  auto n = std::make_shared<PlanNode>();
  n->kind = PlanKind::Distinct;
  n->children = {std::move(child)};
  return n;
}

inline PlanPtr with_cte(std::string name, PlanPtr definition, PlanPtr body) {
  auto n = std::make_shared<PlanNode>();
  n->kind = PlanKind::With;
  n->cte_name = std::move(name);
  n->children = {std::move(definition), std::move(body)};
  return n;
}

inline PlanPtr cte_ref(std::string name) {
  auto n = std::make_shared<PlanNode>();
  n->kind = PlanKind::CteRef;
  n->cte_name = std::move(name);
  return n;
}

// -- schema inference ----------------------------------------------------------

using Catalog = std::map<std::string, Schema>;

namespace detail {

inline ValueType agg_result_type(const AggregateSpec& a, const Schema& in,
                                 const FunctionRegistry& reg) {
  switch (a.kind) {
    case AggKind::CountStar:
    case AggKind::Count:
      return ValueType::Int64;
    case AggKind::Avg:
    case AggKind::Stddev:
      return ValueType::Float64;
    case AggKind::Sum: {
      ValueType t = infer_expr(a.arg, in, reg).type;
      if (t != ValueType::Int64 && t != ValueType::Float64)
        raise(ErrorCode::TypeMismatch, "sum over non-numeric column");
      return t;
    }
    case AggKind::Min:
    case AggKind::Max:
    case AggKind::First:
      return infer_expr(a.arg, in, reg).type;
    case AggKind::CollectList:
    case AggKind::CollectSet:
      return ValueType::String;
  }
  raise(ErrorCode::Internal, "unreachable");
}

inline std::string dedup_name(std::vector<std::string>& used, const std::string& want) {
  std::string name = want;
  int suffix = 1;
  while (std::find(used.begin(), used.end(), name) != used.end())
    name = want + "_" + std::to_string(++suffix);
  used.push_back(name);
  return name;
}

}  // namespace detail

/// Rebuilds the tree with a fully resolved output schema on every node.
inline PlanPtr infer_schema(const PlanPtr& plan, const Catalog& catalog,
                            const FunctionRegistry& registry = FunctionRegistry::builtins(),
                            std::map<std::string, Schema>* cte_env = nullptr) {
  std::map<std::string, Schema> local_env;
  if (!cte_env) cte_env = &local_env;

  auto n = clone_node(plan);
  if (plan->kind == PlanKind::With) {
    n->children[0] = infer_schema(plan->children[0], catalog, registry, cte_env);
    auto saved = cte_env->find(plan->cte_name) != cte_env->end()
                     ? std::optional<Schema>((*cte_env)[plan->cte_name])
                     : std::nullopt;
    (*cte_env)[plan->cte_name] = n->children[0]->out_schema();
    n->children[1] = infer_schema(plan->children[1], catalog, registry, cte_env);
    if (saved)
      (*cte_env)[plan->cte_name] = *saved;
    else
      cte_env->erase(plan->cte_name);
    n->schema = n->children[1]->out_schema();
    return n;
  }
  for (auto& c : n->children) c = infer_schema(c, catalog, registry, cte_env);

  switch (n->kind) {
    case PlanKind::Scan: {
      auto it = catalog.find(n->table);
      if (it == catalog.end()) raise(ErrorCode::UnknownTable, "'" + n->table + "'");
      n->schema = it->second;
      break;
    }
    case PlanKind::CteRef: {
      auto it = cte_env->find(n->cte_name);
      if (it == cte_env->end()) raise(ErrorCode::UnknownTable, "CTE '" + n->cte_name + "'");
      n->schema = it->second;
      break;
    }
    case PlanKind::Project: {
      const Schema& in = n->children[0]->out_schema();
      if (n->exprs.size() != n->names.size()) raise(ErrorCode::Internal, "project name arity");
      std::vector<Column> cols;
      for (size_t i = 0; i < n->exprs.size(); ++i) {
        ExprType t = infer_expr(n->exprs[i], in, registry);
        if (t.is_interval) raise(ErrorCode::TypeMismatch, "interval projected as a column");
        cols.push_back({n->names[i], t.type, t.nullable});
      }
      n->schema = Schema(std::move(cols));
      break;
    }
    case PlanKind::Filter: {
      const Schema& in = n->children[0]->out_schema();
      ExprType t = infer_expr(n->predicate, in, registry);
      if (t.type != ValueType::Bool || t.is_interval)
        raise(ErrorCode::TypeMismatch, "filter predicate must be boolean");
      n->schema = in;
      break;
    }
    case PlanKind::Aggregate: {
      const Schema& in = n->children[0]->out_schema();
      if (n->group_keys.size() != n->key_names.size()) raise(ErrorCode::Internal, "key name arity");
      std::vector<Column> cols;
      for (size_t i = 0; i < n->group_keys.size(); ++i) {
        ExprType t = infer_expr(n->group_keys[i], in, registry);
        cols.push_back({n->key_names[i], t.type, t.nullable});
      }
      for (const AggregateSpec& a : n->aggregates) {
        if (a.kind == AggKind::First && !a.order_by)
          raise(ErrorCode::TypeMismatch, "first() requires an ordering expression");
        if (a.arg) infer_expr(a.arg, in, registry);
        if (a.order_by) infer_expr(a.order_by, in, registry);
        bool nullable = a.kind != AggKind::Count && a.kind != AggKind::CountStar &&
                        a.kind != AggKind::CollectList && a.kind != AggKind::CollectSet;
        cols.push_back({a.name, detail::agg_result_type(a, in, registry), nullable});
      }
      n->schema = Schema(std::move(cols));
      break;
    }
    case PlanKind::Window: {
      const Schema& in = n->children[0]->out_schema();
      for (const ExprPtr& k : n->partition_keys) infer_expr(k, in, registry);
      for (const SortKey& k : n->order_keys) infer_expr(k.expr, in, registry);
      std::vector<Column> cols = in.columns();
      std::vector<std::string> used;
      for (const Column& c : cols) used.push_back(c.name);
      for (const WindowFnSpec& f : n->window_fns) {
        ValueType t = ValueType::Int64;
        bool nullable = false;
        switch (f.kind) {
          case WindowFnKind::RowNumber:
          case WindowFnKind::Rank:
          case WindowFnKind::DenseRank:
            if (n->order_keys.empty())
              raise(ErrorCode::TypeMismatch, "ranking window function requires ORDER BY");
            break;
          case WindowFnKind::Count:
            if (f.arg) infer_expr(f.arg, in, registry);
            break;
          case WindowFnKind::Sum:
          case WindowFnKind::Min:
          case WindowFnKind::Max: {
            ExprType a = infer_expr(f.arg, in, registry);
            t = a.type;
            if (f.kind == WindowFnKind::Sum && t != ValueType::Int64 && t != ValueType::Float64)
              raise(ErrorCode::TypeMismatch, "sum window over non-numeric column");
            nullable = true;
            break;
          }
        }
        cols.push_back({detail::dedup_name(used, f.name), t, nullable});
      }
      n->schema = Schema(std::move(cols));
      break;
    }
    case PlanKind::Join:
    case PlanKind::AntiLeft:
    case PlanKind::AntiRight: {
      const Schema& l = n->children[0]->out_schema();
      const Schema& r = n->children[1]->out_schema();
      std::vector<Column> cols;
      std::vector<std::string> used;
      bool left_nullable = n->join_kind == JoinKind::RightOuter || n->join_kind == JoinKind::FullOuter ||
                           n->kind == PlanKind::AntiRight;
      bool right_nullable = n->join_kind == JoinKind::LeftOuter || n->join_kind == JoinKind::FullOuter ||
                            n->kind == PlanKind::AntiLeft;
      for (const Column& c : l.columns())
        cols.push_back({detail::dedup_name(used, c.name), c.type, c.nullable || left_nullable});
      for (const Column& c : r.columns())
        cols.push_back({detail::dedup_name(used, c.name), c.type, c.nullable || right_nullable});
      Schema combined(cols);
      ExprType t = infer_expr(n->condition, combined, registry);
      if (t.type != ValueType::Bool) raise(ErrorCode::TypeMismatch, "join condition must be boolean");
      n->schema = std::move(combined);
      break;
    }
    case PlanKind::UnionAll: {
      if (n->children.empty()) raise(ErrorCode::Internal, "union with no children");
      std::vector<Column> cols = n->children[0]->out_schema().columns();
      for (size_t ci = 1; ci < n->children.size(); ++ci) {
        const Schema& s = n->children[ci]->out_schema();
        if (s.size() != cols.size()) raise(ErrorCode::TypeMismatch, "union arity mismatch");
        for (size_t i = 0; i < cols.size(); ++i) {
          if (s.at(i).type != cols[i].type) raise(ErrorCode::TypeMismatch, "union column type mismatch");
          cols[i].nullable = cols[i].nullable || s.at(i).nullable;
        }
      }
      n->schema = Schema(std::move(cols));
      break;
    }
    case PlanKind::Distinct:
      n->schema = n->children[0]->out_schema();
      break;
    case PlanKind::With:
      break;  // handled above
  }
  return n;
}

// -- structural helpers ---------------------------------------------------------

inline PlanPtr map_children(const PlanPtr& p, const std::function<PlanPtr(const PlanPtr&)>& fn) {
  auto n = clone_node(p);
  for (auto& c : n->children) c = fn(c);
  return n;
}

inline void walk_plan(const PlanPtr& p, const std::function<void(const PlanPtr&)>& visit) {
  visit(p);
  for (const auto& c : p->children) walk_plan(c, visit);
}

inline void walk_node_exprs(const PlanNode& n, const std::function<void(const ExprPtr&)>& visit) {
  for (const auto& e : n.exprs) visit(e);
  if (n.predicate) visit(n.predicate);
  for (const auto& e : n.group_keys) visit(e);
  for (const auto& a : n.aggregates) {
    if (a.arg) visit(a.arg);
    if (a.order_by) visit(a.order_by);
  }
  for (const auto& e : n.partition_keys) visit(e);
  for (const auto& k : n.order_keys) visit(k.expr);
  for (const auto& f : n.window_fns)
    if (f.arg) visit(f.arg);
  if (n.condition) visit(n.condition);
}

// -- serialization ----------------------------------------------------------------

inline nlohmann::json plan_to_json(const PlanPtr& p) {
  nlohmann::json j;
  switch (p->kind) {
    case PlanKind::Scan:
      j["kind"] = "scan";
      j["table"] = p->table;
      if (p->bound_version) j["version"] = *p->bound_version;
      break;
    case PlanKind::Project: {
      j["kind"] = "project";
      nlohmann::json es = nlohmann::json::array();
      for (const auto& e : p->exprs) es.push_back(expr_to_json(e));
      j["exprs"] = es;
      j["names"] = p->names;
      break;
    }
    case PlanKind::Filter:
      j["kind"] = "filter";
      j["predicate"] = expr_to_json(p->predicate);
      break;
    case PlanKind::Aggregate: {
      j["kind"] = "aggregate";
      nlohmann::json ks = nlohmann::json::array();
      for (const auto& k : p->group_keys) ks.push_back(expr_to_json(k));
      j["keys"] = ks;
      j["key_names"] = p->key_names;
      nlohmann::json as = nlohmann::json::array();
      for (const auto& a : p->aggregates) {
        nlohmann::json aj;
        aj["fn"] = agg_kind_name(a.kind);
        aj["name"] = a.name;
        if (a.arg) aj["arg"] = expr_to_json(a.arg);
        if (a.order_by) aj["order_by"] = expr_to_json(a.order_by);
        if (a.ordered) aj["ordered"] = true;
        as.push_back(aj);
      }
      j["aggregates"] = as;
      break;
    }
    case PlanKind::Window: {
      j["kind"] = "window";
      nlohmann::json ps = nlohmann::json::array();
      for (const auto& k : p->partition_keys) ps.push_back(expr_to_json(k));
      j["partition"] = ps;
      nlohmann::json os = nlohmann::json::array();
      for (const auto& k : p->order_keys)
        os.push_back({{"asc", k.ascending}, {"expr", expr_to_json(k.expr)}});
      j["order"] = os;
      nlohmann::json fs = nlohmann::json::array();
      for (const auto& f : p->window_fns) {
        nlohmann::json fj;
        fj["fn"] = window_fn_name(f.kind);
        fj["name"] = f.name;
        if (f.arg) fj["arg"] = expr_to_json(f.arg);
        fs.push_back(fj);
      }
      j["functions"] = fs;
      break;
    }
    case PlanKind::Join:
      j["kind"] = "join";
      j["join"] = join_kind_name(p->join_kind);
      j["condition"] = expr_to_json(p->condition);
      break;
    case PlanKind::AntiLeft:
      j["kind"] = "anti_left";
      j["condition"] = expr_to_json(p->condition);
      break;
    case PlanKind::AntiRight:
      j["kind"] = "anti_right";
      j["condition"] = expr_to_json(p->condition);
      break;
    case PlanKind::UnionAll:
      j["kind"] = "union_all";
      break;
    case PlanKind::Distinct:
      j["kind"] = "distinct";
      break;
    case PlanKind::With:
      j["kind"] = "with";
      j["name"] = p->cte_name;
      break;
    case PlanKind::CteRef:
      j["kind"] = "cte_ref";
      j["name"] = p->cte_name;
      break;
  }
  if (!p->children.empty()) {
    nlohmann::json kids = nlohmann::json::array();
    for (const auto& c : p->children) kids.push_back(plan_to_json(c));
    j["children"] = kids;
  }
  return j;
}

inline PlanPtr plan_from_json(const nlohmann::json& j) {
  std::vector<PlanPtr> kids;
  if (j.contains("children"))
    for (const auto& c : j.at("children")) kids.push_back(plan_from_json(c));
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "scan") {
    auto n = clone_node(scan(j.at("table").get<std::string>()));
    if (j.contains("version")) n->bound_version = j.at("version").get<uint64_t>();
    return n;
  }
  if (kind == "project") {
    std::vector<ExprPtr> es;
    for (const auto& e : j.at("exprs")) es.push_back(expr_from_json(e));
    return project(kids.at(0), es, j.at("names").get<std::vector<std::string>>());
  }
  if (kind == "filter") return filter(kids.at(0), expr_from_json(j.at("predicate")));
  if (kind == "aggregate") {
    std::vector<ExprPtr> ks;
    for (const auto& k : j.at("keys")) ks.push_back(expr_from_json(k));
    std::vector<AggregateSpec> as;
    for (const auto& a : j.at("aggregates")) {
      AggregateSpec s;
      const std::string fn = a.at("fn").get<std::string>();
      for (int k = 0; k <= static_cast<int>(AggKind::Stddev); ++k)
        if (fn == agg_kind_name(static_cast<AggKind>(k))) s.kind = static_cast<AggKind>(k);
      s.name = a.at("name").get<std::string>();
      if (a.contains("arg")) s.arg = expr_from_json(a.at("arg"));
      if (a.contains("order_by")) s.order_by = expr_from_json(a.at("order_by"));
      if (a.contains("ordered")) s.ordered = a.at("ordered").get<bool>();
      as.push_back(s);
    }
    return aggregate(kids.at(0), ks, j.at("key_names").get<std::vector<std::string>>(), as);
  }
  if (kind == "window") {
    std::vector<ExprPtr> ps;
    for (const auto& k : j.at("partition")) ps.push_back(expr_from_json(k));
    std::vector<SortKey> os;
    for (const auto& k : j.at("order")) os.push_back({expr_from_json(k.at("expr")), k.at("asc").get<bool>()});
    std::vector<WindowFnSpec> fs;
    for (const auto& f : j.at("functions")) {
      WindowFnSpec s;
      const std::string fn = f.at("fn").get<std::string>();
      for (int k = 0; k <= static_cast<int>(WindowFnKind::Max); ++k)
        if (fn == window_fn_name(static_cast<WindowFnKind>(k))) s.kind = static_cast<WindowFnKind>(k);
      s.name = f.at("name").get<std::string>();
      if (f.contains("arg")) s.arg = expr_from_json(f.at("arg"));
      fs.push_back(s);
    }
    return window(kids.at(0), ps, os, fs);
  }
  if (kind == "join") {
    JoinKind k = JoinKind::Inner;
    const std::string name = j.at("join").get<std::string>();
    for (int i = 0; i <= static_cast<int>(JoinKind::FullOuter); ++i)
      if (name == join_kind_name(static_cast<JoinKind>(i))) k = static_cast<JoinKind>(i);
    return join(k, kids.at(0), kids.at(1), expr_from_json(j.at("condition")));
  }
  if (kind == "anti_left") return anti_join(PlanKind::AntiLeft, kids.at(0), kids.at(1), expr_from_json(j.at("condition")));
  if (kind == "anti_right") return anti_join(PlanKind::AntiRight, kids.at(0), kids.at(1), expr_from_json(j.at("condition")));
  if (kind == "union_all") return union_all(kids);
  if (kind == "distinct") return distinct(kids.at(0));
  if (kind == "with") return with_cte(j.at("name").get<std::string>(), kids.at(0), kids.at(1));
  if (kind == "cte_ref") return cte_ref(j.at("name").get<std::string>());
  raise(ErrorCode::ParseError, "unknown plan kind '" + kind + "'");
}

inline std::string plan_serialize(const PlanPtr& p) { return plan_to_json(p).dump(); }

inline bool plan_equal(const PlanPtr& a, const PlanPtr& b) {
  return plan_serialize(a) == plan_serialize(b);
}

inline void render_plan(const PlanPtr& p, std::string& out, int depth = 0) {
  out.append(static_cast<size_t>(depth) * 2, ' ');
  nlohmann::json j = plan_to_json(p);
  j.erase("children");
  out += j.dump();
  out += "\n";
  for (const auto& c : p->children) render_plan(c, out, depth + 1);
}

// -- determinism classification ---------------------------------------------------

enum class Determinism { Deterministic, Rewritable, TimeDependent, OpaqueNondeterministic };

inline const char* determinism_name(Determinism d) {
  switch (d) {
    case Determinism::Deterministic: return "deterministic";
    case Determinism::Rewritable: return "rewritable";
    case Determinism::TimeDependent: return "time_dependent";
    case Determinism::OpaqueNondeterministic: return "opaque_nondeterministic";
  }
  return "?";
}

struct DeterminismReport {
  struct Entry {
    std::string node;
    Determinism classification = Determinism::Deterministic;
    std::string note;
  };
  std::vector<Entry> entries;  // preorder
  bool full_recompute_only = false;
  bool has_time_dependent = false;
  bool has_rewritable = false;
};

/// Classifies every node. Opaque non-determinism anywhere flags the plan as
/// full-recompute-only; time-dependent functions are only tolerated inside
/// filter predicates, where the temporal-filter rule can reconstruct state.
inline DeterminismReport classify_determinism(const PlanPtr& plan,
                                              const FunctionRegistry& registry = FunctionRegistry::builtins()) {
  DeterminismReport report;
  std::function<void(const PlanPtr&)> visit = [&](const PlanPtr& p) {
    DeterminismReport::Entry entry;
    entry.node = plan_to_json(p).value("kind", "?");
    bool nondet_fn = false;
    bool time_outside_filter = false;
    walk_node_exprs(*p, [&](const ExprPtr& e) {
      if (expr_has_nondeterministic_fn(e, registry)) nondet_fn = true;
    });
    if (p->kind == PlanKind::Filter) {
      if (expr_time_dependent(p->predicate)) {
        entry.classification = Determinism::TimeDependent;
        entry.note = "temporal-filter eligible";
        report.has_time_dependent = true;
      }
    } else {
      walk_node_exprs(*p, [&](const ExprPtr& e) {
        if (expr_time_dependent(e)) time_outside_filter = true;
      });
    }
    if (p->kind == PlanKind::Aggregate) {
      for (const auto& a : p->aggregates) {
        if ((a.kind == AggKind::CollectList || a.kind == AggKind::CollectSet) && !a.ordered) {
          entry.classification = Determinism::Rewritable;
          entry.note = "collect output order fixed by an explicit local sort";
          report.has_rewritable = true;
        }
        if (a.kind == AggKind::First) {
          entry.classification = Determinism::Rewritable;
          entry.note = "first() made deterministic by value ordering";
          report.has_rewritable = true;
        }
      }
    }
    if (p->kind == PlanKind::Window && !p->order_keys.empty()) {
      entry.classification = Determinism::Rewritable;
      entry.note = "order-by ties broken by row identity";
      report.has_rewritable = true;
    }
    if (nondet_fn || time_outside_filter) {
      entry.classification = Determinism::OpaqueNondeterministic;
      entry.note = nondet_fn ? "non-deterministic function" : "time-dependent expression outside a filter";
      report.full_recompute_only = true;
    }
    report.entries.push_back(entry);
    for (const auto& c : p->children) visit(c);
  };
  visit(plan);
  return report;
}

}  // namespace enzyme

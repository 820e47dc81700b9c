#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "enzyme/error.hpp"
#include "enzyme/schema.hpp"

namespace enzyme {

enum class ExprKind {
  ColumnRef,
  Literal,
  Interval,
  Binary,
  Not,
  IsNull,
  InList,
  Case,
  Func,
  CurrentDate,
  CurrentTimestamp,
  KeyProbe,  // internal: set-membership probe on a key tuple, null-safe
};

enum class BinOp { Add, Sub, Mul, Div, Eq, Ne, Lt, Le, Gt, Ge, And, Or, NullSafeEq };

inline const char* binop_name(BinOp op) {
  switch (op) {
    case BinOp::Add: return "+";
    case BinOp::Sub: return "-";
    case BinOp::Mul: return "*";
    case BinOp::Div: return "/";
    case BinOp::Eq: return "=";
    case BinOp::Ne: return "!=";
    case BinOp::Lt: return "<";
    case BinOp::Le: return "<=";
    case BinOp::Gt: return ">";
    case BinOp::Ge: return ">=";
    case BinOp::And: return "and";
    case BinOp::Or: return "or";
    case BinOp::NullSafeEq: return "<=>";
  }
  return "?";
}

inline BinOp binop_from_name(const std::string& s) {
  static const std::map<std::string, BinOp> m = {
      {"+", BinOp::Add}, {"-", BinOp::Sub}, {"*", BinOp::Mul},  {"/", BinOp::Div},
      {"=", BinOp::Eq},  {"!=", BinOp::Ne}, {"<", BinOp::Lt},   {"<=", BinOp::Le},
      {">", BinOp::Gt},  {">=", BinOp::Ge}, {"and", BinOp::And}, {"or", BinOp::Or},
      {"<=>", BinOp::NullSafeEq}};
  auto it = m.find(s);
  if (it == m.end()) raise(ErrorCode::ParseError, "unknown operator '" + s + "'");
  return it->second;
}

struct Expression;
using ExprPtr = std::shared_ptr<const Expression>;

struct Expression {
  ExprKind kind = ExprKind::Literal;

  size_t column = 0;              // ColumnRef
  Value literal;                  // Literal
  ValueType literal_type = ValueType::Int64;
  int64_t interval_days = 0;      // Interval
  int64_t interval_micros = 0;
  BinOp op = BinOp::Add;          // Binary
  std::string fn_name;            // Func
  std::optional<ValueType> fn_result_type;   // internal functions carry it
  std::vector<ValueType> fn_type_args;       // internal functions
  std::vector<ExprPtr> children;  // operands; Case: [w1,t1,w2,t2,...] + optional else at end
  bool case_has_else = false;
  std::shared_ptr<const std::unordered_set<std::string>> probe_keys;  // KeyProbe
};

// -- builders ---------------------------------------------------------------

inline ExprPtr col(size_t index) {
  auto e = std::make_shared<Expression>();
  e->kind = ExprKind::ColumnRef;
  e->column = index;
  return e;
}

inline ExprPtr lit(Value v, ValueType t) {
  auto e = std::make_shared<Expression>();
  e->kind = ExprKind::Literal;
  e->literal = std::move(v);
  e->literal_type = t;
  return e;
}

inline ExprPtr lit_int(int64_t v) { return lit(Value(v), ValueType::Int64); }
inline ExprPtr lit_float(double v) { return lit(Value(v), ValueType::Float64); }
inline ExprPtr lit_string(std::string v) { return lit(Value(std::move(v)), ValueType::String); }
inline ExprPtr lit_bool(bool v) { return lit(Value(v), ValueType::Bool); }
inline ExprPtr lit_date(Date v) { return lit(Value(v), ValueType::Date); }
inline ExprPtr lit_null(ValueType t) { return lit(Value::null(), t); }

inline ExprPtr interval_days_expr(int64_t days) {
  auto e = std::make_shared<Expression>();
  e->kind = ExprKind::Interval;
  e->interval_days = days;
  return e;
}

inline ExprPtr binary(BinOp op, ExprPtr l, ExprPtr r) {
  auto e = std::make_shared<Expression>();
  e->kind = ExprKind::Binary;
  e->op = op;
  e->children = {std::move(l), std::move(r)};
  return e;
}

inline ExprPtr not_expr(ExprPtr c) {
  auto e = std::make_shared<Expression>();
  e->kind = ExprKind::Not;
  e->children = {std::move(c)};
  return e;
}

inline ExprPtr is_null_expr(ExprPtr c) {
  auto e = std::make_shared<Expression>();
  e->kind = ExprKind::IsNull;
  e->children = {std::move(c)};
  return e;
}

inline ExprPtr in_list(ExprPtr needle, std::vector<ExprPtr> items) {
  auto e = std::make_shared<Expression>();
  e->kind = ExprKind::InList;
  e->children.push_back(std::move(needle));
  for (auto& i : items) e->children.push_back(std::move(i));
  return e;
}

/// children: alternating when/then pairs, optionally followed by else.
inline ExprPtr case_expr(std::vector<ExprPtr> children, bool has_else) {
  auto e = std::make_shared<Expression>();
  e->kind = ExprKind::Case;
  e->children = std::move(children);
  e->case_has_else = has_else;
  return e;
}

inline ExprPtr func(std::string name, std::vector<ExprPtr> args) {
  auto e = std::make_shared<Expression>();
  e->kind = ExprKind::Func;
  e->fn_name = std::move(name);
  e->children = std::move(args);
  return e;
}

inline ExprPtr current_date_expr() {
  auto e = std::make_shared<Expression>();
  e->kind = ExprKind::CurrentDate;
  return e;
}

inline ExprPtr current_timestamp_expr() {
  auto e = std::make_shared<Expression>();
  e->kind = ExprKind::CurrentTimestamp;
  return e;
}

inline ExprPtr key_probe(std::vector<ExprPtr> keys,
                         std::shared_ptr<const std::unordered_set<std::string>> set) {
  auto e = std::make_shared<Expression>();
  e->kind = ExprKind::KeyProbe;
  e->children = std::move(keys);
  e->probe_keys = std::move(set);
  return e;
}

// -- scalar function registry -----------------------------------------------

struct EvalEnv;

struct ScalarFunction {
  std::string name;
  bool deterministic = true;
  std::string signature_digest;  // participates in the definition fingerprint
  std::function<ValueType(const std::vector<ValueType>&)> infer;
  std::function<Value(const std::vector<Value>&, const Expression&, const EvalEnv&)> eval;
};

class FunctionRegistry {
public:
  void add(ScalarFunction fn) { fns_[fn.name] = std::move(fn); }

  bool has(const std::string& name) const { return fns_.count(name) > 0; }

  const ScalarFunction& get(const std::string& name) const {
    auto it = fns_.find(name);
    if (it == fns_.end()) raise(ErrorCode::TypeMismatch, "unknown function '" + name + "'");
    return it->second;
  }

  std::map<std::string, std::string> signature_digests() const {
    std::map<std::string, std::string> out;
    for (const auto& [n, f] : fns_) out[n] = f.signature_digest;
    return out;
  }

  static const FunctionRegistry& builtins();

private:
  std::map<std::string, ScalarFunction> fns_;
};

struct EvalEnv {
  Timestamp now{0};
  const FunctionRegistry* registry = &FunctionRegistry::builtins();
};

// -- type inference ----------------------------------------------------------

struct ExprType {
  ValueType type = ValueType::Int64;
  bool nullable = true;
  bool is_interval = false;
};

inline ExprType infer_expr(const ExprPtr& e, const Schema& schema,
                           const FunctionRegistry& registry = FunctionRegistry::builtins());

namespace detail {

inline ExprType numeric_result(const ExprType& a, const ExprType& b, BinOp op) {
  bool nullable = a.nullable || b.nullable || op == BinOp::Div;  // x/0 is null
  if (a.type == ValueType::Float64 || b.type == ValueType::Float64)
    return {ValueType::Float64, nullable, false};
  return {ValueType::Int64, nullable, false};
}

inline bool comparable(ValueType a, ValueType b) {
  if (a == b) return true;
  auto num = [](ValueType t) { return t == ValueType::Int64 || t == ValueType::Float64; };
  return num(a) && num(b);
}

}  // namespace detail

inline ExprType infer_expr(const ExprPtr& e, const Schema& schema, const FunctionRegistry& registry) {
  switch (e->kind) {
    case ExprKind::ColumnRef: {
      if (e->column >= schema.size())
        raise(ErrorCode::UnresolvedColumn, "ordinal " + std::to_string(e->column));
      const Column& c = schema.at(e->column);
      return {c.type, c.nullable, false};
    }
    case ExprKind::Literal:
      return {e->literal_type, e->literal.is_null(), false};
    case ExprKind::Interval:
      return {ValueType::Int64, false, true};
    case ExprKind::Binary: {
      ExprType l = infer_expr(e->children[0], schema, registry);
      ExprType r = infer_expr(e->children[1], schema, registry);
      switch (e->op) {
        case BinOp::Add:
        case BinOp::Sub:
          if (l.type == ValueType::Date && r.is_interval) return {ValueType::Date, l.nullable, false};
          if (l.type == ValueType::Timestamp && r.is_interval)
            return {ValueType::Timestamp, l.nullable, false};
          [[fallthrough]];
        case BinOp::Mul:
        case BinOp::Div:
          if (l.is_interval || r.is_interval) raise(ErrorCode::TypeMismatch, "interval arithmetic");
          if ((l.type != ValueType::Int64 && l.type != ValueType::Float64) ||
              (r.type != ValueType::Int64 && r.type != ValueType::Float64))
            raise(ErrorCode::TypeMismatch, std::string("arithmetic on ") + type_name(l.type) + " and " +
                                               type_name(r.type));
          return detail::numeric_result(l, r, e->op);
        case BinOp::Eq:
        case BinOp::Ne:
        case BinOp::Lt:
        case BinOp::Le:
        case BinOp::Gt:
        case BinOp::Ge:
          if (l.is_interval || r.is_interval || !detail::comparable(l.type, r.type))
            raise(ErrorCode::TypeMismatch, std::string("cannot compare ") + type_name(l.type) + " with " +
                                               type_name(r.type));
          return {ValueType::Bool, l.nullable || r.nullable, false};
        case BinOp::NullSafeEq:
          if (!detail::comparable(l.type, r.type)) raise(ErrorCode::TypeMismatch, "null-safe compare");
          return {ValueType::Bool, false, false};
        case BinOp::And:
        case BinOp::Or:
          if (l.type != ValueType::Bool || r.type != ValueType::Bool)
            raise(ErrorCode::TypeMismatch, "boolean operator on non-bool");
          return {ValueType::Bool, l.nullable || r.nullable, false};
      }
      raise(ErrorCode::Internal, "unreachable");
    }
    case ExprKind::Not: {
      ExprType c = infer_expr(e->children[0], schema, registry);
      if (c.type != ValueType::Bool) raise(ErrorCode::TypeMismatch, "NOT on non-bool");
      return {ValueType::Bool, c.nullable, false};
    }
    case ExprKind::IsNull:
      infer_expr(e->children[0], schema, registry);
      return {ValueType::Bool, false, false};
    case ExprKind::InList: {
      ExprType n = infer_expr(e->children[0], schema, registry);
      bool any_nullable = n.nullable;
      for (size_t i = 1; i < e->children.size(); ++i) {
        ExprType it = infer_expr(e->children[i], schema, registry);
        if (!detail::comparable(n.type, it.type)) raise(ErrorCode::TypeMismatch, "IN list element type");
        any_nullable = any_nullable || it.nullable;
      }
      return {ValueType::Bool, any_nullable, false};
    }
    case ExprKind::Case: {
      size_t pairs = e->children.size() / 2;
      std::optional<ExprType> result;
      bool nullable = !e->case_has_else;
      for (size_t i = 0; i < pairs; ++i) {
        ExprType w = infer_expr(e->children[2 * i], schema, registry);
        if (w.type != ValueType::Bool) raise(ErrorCode::TypeMismatch, "CASE condition not bool");
        ExprType t = infer_expr(e->children[2 * i + 1], schema, registry);
        nullable = nullable || t.nullable;
        if (!result) {
          result = t;
        } else if (result->type != t.type) {
          if (detail::comparable(result->type, t.type))
            result->type = ValueType::Float64;
          else
            raise(ErrorCode::TypeMismatch, "CASE branch types differ");
        }
      }
      if (e->case_has_else) {
        ExprType t = infer_expr(e->children.back(), schema, registry);
        nullable = nullable || t.nullable;
        if (!result) {
          result = t;
        } else if (result->type != t.type) {
          if (detail::comparable(result->type, t.type))
            result->type = ValueType::Float64;
          else
            raise(ErrorCode::TypeMismatch, "CASE branch types differ");
        }
      }
      if (!result) raise(ErrorCode::TypeMismatch, "CASE with no branches");
      result->nullable = nullable;
      return *result;
    }
    case ExprKind::Func: {
      const ScalarFunction& fn = registry.get(e->fn_name);
      std::vector<ValueType> arg_types;
      for (const auto& c : e->children) arg_types.push_back(infer_expr(c, schema, registry).type);
      if (e->fn_result_type) return {*e->fn_result_type, true, false};
      return {fn.infer(arg_types), true, false};
    }
    case ExprKind::CurrentDate:
      return {ValueType::Date, false, false};
    case ExprKind::CurrentTimestamp:
      return {ValueType::Timestamp, false, false};
    case ExprKind::KeyProbe:
      for (const auto& c : e->children) infer_expr(c, schema, registry);
      return {ValueType::Bool, false, false};
  }
  raise(ErrorCode::Internal, "unreachable");
}

// -- evaluation ---------------------------------------------------------------

inline Value eval_expr(const ExprPtr& e, const Row& row, const EvalEnv& env);

namespace detail {

inline Value add_checked(int64_t a, int64_t b) {
  int64_t r;
  if (__builtin_add_overflow(a, b, &r)) raise(ErrorCode::IntegerOverflow, "add");
  return Value(r);
}

inline Value sub_checked(int64_t a, int64_t b) {
  int64_t r;
  if (__builtin_sub_overflow(a, b, &r)) raise(ErrorCode::IntegerOverflow, "subtract");
  return Value(r);
}

inline Value mul_checked(int64_t a, int64_t b) {
  int64_t r;
  if (__builtin_mul_overflow(a, b, &r)) raise(ErrorCode::IntegerOverflow, "multiply");
  return Value(r);
}

inline int compare_scalars(const Value& a, const Value& b) {
  if ((a.is_int() || a.is_float()) && (b.is_int() || b.is_float())) {
    double x = a.numeric(), y = b.numeric();
    if (a.is_int() && b.is_int()) {
      int64_t i = a.as_int(), j = b.as_int();
      return i < j ? -1 : (i == j ? 0 : 1);
    }
    return x < y ? -1 : (x == y ? 0 : 1);
  }
  return compare_values(a, b);
}

}  // namespace detail

inline Value eval_expr(const ExprPtr& e, const Row& row, const EvalEnv& env) {
  switch (e->kind) {
    case ExprKind::ColumnRef:
      if (e->column >= row.size()) raise(ErrorCode::RuntimeTypeError, "column ordinal out of range");
      return row[e->column];
    case ExprKind::Literal:
      return e->literal;
    case ExprKind::Interval:
      raise(ErrorCode::RuntimeTypeError, "interval outside date arithmetic");
    case ExprKind::Binary: {
      if (e->op == BinOp::And || e->op == BinOp::Or) {
        Value l = eval_expr(e->children[0], row, env);
        Value r = eval_expr(e->children[1], row, env);
        // three-valued logic
        auto tv = [](const Value& v) { return v.is_null() ? -1 : (v.as_bool() ? 1 : 0); };
        int a = tv(l), b = tv(r);
        if (e->op == BinOp::And) {
          if (a == 0 || b == 0) return Value(false);
          if (a == 1 && b == 1) return Value(true);
          return Value::null();
        }
        if (a == 1 || b == 1) return Value(true);
        if (a == 0 && b == 0) return Value(false);
        return Value::null();
      }
      if (e->op == BinOp::NullSafeEq) {
        Value l = eval_expr(e->children[0], row, env);
        Value r = eval_expr(e->children[1], row, env);
        if (l.is_null() || r.is_null()) return Value(l.is_null() && r.is_null());
        return Value(detail::compare_scalars(l, r) == 0);
      }
      if ((e->op == BinOp::Add || e->op == BinOp::Sub) && e->children[1]->kind == ExprKind::Interval) {
        Value l = eval_expr(e->children[0], row, env);
        if (l.is_null()) return Value::null();
        int64_t sign = e->op == BinOp::Add ? 1 : -1;
        const Expression& iv = *e->children[1];
        if (l.is_date()) {
          if (iv.interval_micros % 86400000000LL != 0)
            raise(ErrorCode::RuntimeTypeError, "sub-day interval on date");
          int64_t days = iv.interval_days + iv.interval_micros / 86400000000LL;
          return Value(Date{static_cast<int32_t>(l.as_date().days + sign * days)});
        }
        return Value(Timestamp{l.as_timestamp().micros +
                               sign * (iv.interval_days * 86400000000LL + iv.interval_micros)});
      }
      {
        Value l = eval_expr(e->children[0], row, env);
        Value r = eval_expr(e->children[1], row, env);
        if (l.is_null() || r.is_null()) return Value::null();
        switch (e->op) {
          case BinOp::Add:
          case BinOp::Sub:
          case BinOp::Mul: {
            if (l.is_int() && r.is_int()) {
              if (e->op == BinOp::Add) return detail::add_checked(l.as_int(), r.as_int());
              if (e->op == BinOp::Sub) return detail::sub_checked(l.as_int(), r.as_int());
              return detail::mul_checked(l.as_int(), r.as_int());
            }
            double x = l.numeric(), y = r.numeric();
            return Value(e->op == BinOp::Add ? x + y : (e->op == BinOp::Sub ? x - y : x * y));
          }
          case BinOp::Div: {
            if (l.is_int() && r.is_int()) {
              if (r.as_int() == 0) return Value::null();
              if (l.as_int() == INT64_MIN && r.as_int() == -1) raise(ErrorCode::IntegerOverflow, "divide");
              return Value(l.as_int() / r.as_int());
            }
            double y = r.numeric();
            if (y == 0.0) return Value::null();
            return Value(l.numeric() / y);
          }
          case BinOp::Eq: return Value(detail::compare_scalars(l, r) == 0);
          case BinOp::Ne: return Value(detail::compare_scalars(l, r) != 0);
          case BinOp::Lt: return Value(detail::compare_scalars(l, r) < 0);
          case BinOp::Le: return Value(detail::compare_scalars(l, r) <= 0);
          case BinOp::Gt: return Value(detail::compare_scalars(l, r) > 0);
          case BinOp::Ge: return Value(detail::compare_scalars(l, r) >= 0);
          default: raise(ErrorCode::Internal, "unreachable");
        }
      }
    }
    case ExprKind::Not: {
      Value c = eval_expr(e->children[0], row, env);
      if (c.is_null()) return Value::null();
      return Value(!c.as_bool());
    }
    case ExprKind::IsNull:
      return Value(eval_expr(e->children[0], row, env).is_null());
    case ExprKind::InList: {
      Value n = eval_expr(e->children[0], row, env);
      if (n.is_null()) return Value::null();
      bool saw_null = false;
      for (size_t i = 1; i < e->children.size(); ++i) {
        Value item = eval_expr(e->children[i], row, env);
        if (item.is_null()) {
          saw_null = true;
        } else if (detail::compare_scalars(n, item) == 0) {
          return Value(true);
        }
      }
      return saw_null ? Value::null() : Value(false);
    }
    case ExprKind::Case: {
      size_t pairs = (e->children.size() - (e->case_has_else ? 1 : 0)) / 2;
      for (size_t i = 0; i < pairs; ++i) {
        Value w = eval_expr(e->children[2 * i], row, env);
        if (!w.is_null() && w.as_bool()) return eval_expr(e->children[2 * i + 1], row, env);
      }
      if (e->case_has_else) return eval_expr(e->children.back(), row, env);
      return Value::null();
    }
    case ExprKind::Func: {
      const ScalarFunction& fn = env.registry->get(e->fn_name);
      std::vector<Value> args;
      for (const auto& c : e->children) args.push_back(eval_expr(c, row, env));
      return fn.eval(args, *e, env);
    }
    case ExprKind::CurrentDate: {
      int64_t days = env.now.micros / 86400000000LL;
      if (env.now.micros < 0 && env.now.micros % 86400000000LL != 0) days -= 1;
      return Value(Date{static_cast<int32_t>(days)});
    }
    case ExprKind::CurrentTimestamp:
      return Value(env.now);
    case ExprKind::KeyProbe: {
      std::string key;
      for (const auto& c : e->children) encode_value(key, eval_expr(c, row, env));
      return Value(e->probe_keys->count(key) > 0);
    }
  }
  raise(ErrorCode::Internal, "unreachable");
}

// -- structural walks ----------------------------------------------------------

inline void walk_expr(const ExprPtr& e, const std::function<void(const ExprPtr&)>& visit) {
  visit(e);
  for (const auto& c : e->children) walk_expr(c, visit);
}

inline bool expr_time_dependent(const ExprPtr& e) {
  bool found = false;
  walk_expr(e, [&](const ExprPtr& x) {
    if (x->kind == ExprKind::CurrentDate || x->kind == ExprKind::CurrentTimestamp) found = true;
  });
  return found;
}

inline bool expr_has_nondeterministic_fn(const ExprPtr& e, const FunctionRegistry& registry) {
  bool found = false;
  walk_expr(e, [&](const ExprPtr& x) {
    if (x->kind == ExprKind::Func && registry.has(x->fn_name) && !registry.get(x->fn_name).deterministic)
      found = true;
  });
  return found;
}

inline void collect_fn_names(const ExprPtr& e, std::unordered_set<std::string>& out) {
  walk_expr(e, [&](const ExprPtr& x) {
    if (x->kind == ExprKind::Func) out.insert(x->fn_name);
  });
}

/// Rebuilds the tree with children replaced via `fn` (post-order).
inline ExprPtr transform_expr(const ExprPtr& e, const std::function<ExprPtr(const ExprPtr&)>& fn) {
  auto copy = std::make_shared<Expression>(*e);
  for (auto& c : copy->children) c = transform_expr(c, fn);
  return fn(copy);
}

/// Remaps column ordinals through `mapping` (old index -> new index).
inline ExprPtr remap_columns(const ExprPtr& e, const std::vector<size_t>& mapping) {
  return transform_expr(e, [&](const ExprPtr& x) -> ExprPtr {
    if (x->kind != ExprKind::ColumnRef) return x;
    if (x->column >= mapping.size()) raise(ErrorCode::Internal, "remap out of range");
    auto copy = std::make_shared<Expression>(*x);
    copy->column = mapping[x->column];
    return copy;
  });
}

/// Replaces each column reference with the corresponding expression.
inline ExprPtr substitute_columns(const ExprPtr& e, const std::vector<ExprPtr>& replacements) {
  return transform_expr(e, [&](const ExprPtr& x) -> ExprPtr {
    if (x->kind != ExprKind::ColumnRef) return x;
    if (x->column >= replacements.size()) raise(ErrorCode::Internal, "substitute out of range");
    return replacements[x->column];
  });
}

/// Replaces current_date / current_timestamp with literals bound to `now`.
inline ExprPtr substitute_time(const ExprPtr& e, Timestamp now) {
  EvalEnv env;
  env.now = now;
  return transform_expr(e, [&](const ExprPtr& x) -> ExprPtr {
    if (x->kind == ExprKind::CurrentDate) return lit(eval_expr(x, {}, env), ValueType::Date);
    if (x->kind == ExprKind::CurrentTimestamp) return lit(Value(now), ValueType::Timestamp);
    return x;
  });
}

// -- serialization ----------------------------------------------------------

inline nlohmann::json expr_to_json(const ExprPtr& e) {
  nlohmann::json j;
  switch (e->kind) {
    case ExprKind::ColumnRef:
      j["kind"] = "col";
      j["index"] = e->column;
      return j;
    case ExprKind::Literal:
      j["kind"] = "lit";
      j["type"] = type_name(e->literal_type);
      j["value"] = value_to_json(e->literal);
      return j;
    case ExprKind::Interval:
      j["kind"] = "interval";
      j["days"] = e->interval_days;
      j["micros"] = e->interval_micros;
      return j;
    case ExprKind::Binary:
      j["kind"] = "bin";
      j["op"] = binop_name(e->op);
      break;
    case ExprKind::Not:
      j["kind"] = "not";
      break;
    case ExprKind::IsNull:
      j["kind"] = "isnull";
      break;
    case ExprKind::InList:
      j["kind"] = "in";
      break;
    case ExprKind::Case:
      j["kind"] = "case";
      j["has_else"] = e->case_has_else;
      break;
    case ExprKind::Func:
      j["kind"] = "fn";
      j["name"] = e->fn_name;
      if (e->fn_result_type) j["result_type"] = type_name(*e->fn_result_type);
      if (!e->fn_type_args.empty()) {
        nlohmann::json ta = nlohmann::json::array();
        for (auto t : e->fn_type_args) ta.push_back(type_name(t));
        j["type_args"] = ta;
      }
      break;
    case ExprKind::CurrentDate:
      j["kind"] = "current_date";
      return j;
    case ExprKind::CurrentTimestamp:
      j["kind"] = "current_timestamp";
      return j;
    case ExprKind::KeyProbe:
      raise(ErrorCode::Internal, "key probe is not serializable");
  }
  nlohmann::json kids = nlohmann::json::array();
  for (const auto& c : e->children) kids.push_back(expr_to_json(c));
  j["args"] = kids;
  return j;
}

inline ExprPtr expr_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  auto children_of = [&]() {
    std::vector<ExprPtr> out;
    if (j.contains("args"))
      for (const auto& c : j.at("args")) out.push_back(expr_from_json(c));
    return out;
  };
  if (kind == "col") return col(j.at("index").get<size_t>());
  if (kind == "lit") {
    ValueType t = type_from_name(j.at("type").get<std::string>());
    return lit(value_from_json(j.at("value"), t), t);
  }
  if (kind == "interval") {
    auto e = std::make_shared<Expression>();
    e->kind = ExprKind::Interval;
    e->interval_days = j.at("days").get<int64_t>();
    e->interval_micros = j.at("micros").get<int64_t>();
    return e;
  }
  if (kind == "bin") {
    auto kids = children_of();
    return binary(binop_from_name(j.at("op").get<std::string>()), kids.at(0), kids.at(1));
  }
  if (kind == "not") return not_expr(children_of().at(0));
  if (kind == "isnull") return is_null_expr(children_of().at(0));
  if (kind == "in") {
    auto kids = children_of();
    ExprPtr needle = kids.front();
    kids.erase(kids.begin());
    return in_list(needle, kids);
  }
  if (kind == "case") return case_expr(children_of(), j.at("has_else").get<bool>());
  if (kind == "fn") {
    auto e = std::make_shared<Expression>();
    e->kind = ExprKind::Func;
    e->fn_name = j.at("name").get<std::string>();
    e->children = children_of();
    if (j.contains("result_type")) e->fn_result_type = type_from_name(j.at("result_type").get<std::string>());
    if (j.contains("type_args"))
      for (const auto& t : j.at("type_args")) e->fn_type_args.push_back(type_from_name(t.get<std::string>()));
    return e;
  }
  if (kind == "current_date") return current_date_expr();
  if (kind == "current_timestamp") return current_timestamp_expr();
  raise(ErrorCode::ParseError, "unknown expression kind '" + kind + "'");
}

}  // namespace enzyme

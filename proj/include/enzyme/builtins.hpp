#pragma once

#include <cmath>
#include <random>

#include "enzyme/expr.hpp"

namespace enzyme {

namespace detail {

inline ValueType numeric_arg(const std::vector<ValueType>& ts, const char* fn) {
  if (ts.size() != 1 || (ts[0] != ValueType::Int64 && ts[0] != ValueType::Float64))
    raise(ErrorCode::TypeMismatch, std::string(fn) + " expects one numeric argument");
  return ts[0];
}

inline std::mt19937_64& nondet_rng() {
  static thread_local std::mt19937_64 rng{std::random_device{}()};
  return rng;
}

}  // namespace detail

inline const FunctionRegistry& FunctionRegistry::builtins() {
  static const FunctionRegistry reg = [] {
    FunctionRegistry r;

    r.add({"abs", true, "builtin:abs:1",
           [](const std::vector<ValueType>& ts) { return detail::numeric_arg(ts, "abs"); },
           [](const std::vector<Value>& a, const Expression&, const EvalEnv&) -> Value {
             if (a[0].is_null()) return Value::null();
             if (a[0].is_int()) {
               if (a[0].as_int() == INT64_MIN) raise(ErrorCode::IntegerOverflow, "abs");
               return Value(a[0].as_int() < 0 ? -a[0].as_int() : a[0].as_int());
             }
             return Value(std::fabs(a[0].as_float()));
           }});

    r.add({"sqrt", true, "builtin:sqrt:1",
           [](const std::vector<ValueType>& ts) {
             detail::numeric_arg(ts, "sqrt");
             return ValueType::Float64;
           },
           [](const std::vector<Value>& a, const Expression&, const EvalEnv&) -> Value {
             if (a[0].is_null()) return Value::null();
             double x = a[0].numeric();
             if (x < 0) return Value::null();
             return Value(std::sqrt(x));
           }});

    r.add({"mod", true, "builtin:mod:1",
           [](const std::vector<ValueType>& ts) {
             if (ts.size() != 2 || ts[0] != ValueType::Int64 || ts[1] != ValueType::Int64)
               raise(ErrorCode::TypeMismatch, "mod expects two int64 arguments");
             return ValueType::Int64;
           },
           [](const std::vector<Value>& a, const Expression&, const EvalEnv&) -> Value {
             if (a[0].is_null() || a[1].is_null()) return Value::null();
             if (a[1].as_int() == 0) return Value::null();
             return Value(a[0].as_int() % a[1].as_int());
           }});

    r.add({"floor", true, "builtin:floor:1",
           [](const std::vector<ValueType>& ts) {
             detail::numeric_arg(ts, "floor");
             return ValueType::Int64;
           },
           [](const std::vector<Value>& a, const Expression&, const EvalEnv&) -> Value {
             if (a[0].is_null()) return Value::null();
             return Value(static_cast<int64_t>(std::floor(a[0].numeric())));
           }});

    r.add({"upper", true, "builtin:upper:1",
           [](const std::vector<ValueType>& ts) {
             if (ts.size() != 1 || ts[0] != ValueType::String)
               raise(ErrorCode::TypeMismatch, "upper expects a string");
             return ValueType::String;
           },
           [](const std::vector<Value>& a, const Expression&, const EvalEnv&) -> Value {
             if (a[0].is_null()) return Value::null();
             std::string s = a[0].as_string();
             for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
             return Value(std::move(s));
           }});

    r.add({"length", true, "builtin:length:1",
           [](const std::vector<ValueType>& ts) {
             if (ts.size() != 1 || ts[0] != ValueType::String)
               raise(ErrorCode::TypeMismatch, "length expects a string");
             return ValueType::Int64;
           },
           [](const std::vector<Value>& a, const Expression&, const EvalEnv&) -> Value {
             if (a[0].is_null()) return Value::null();
             return Value(static_cast<int64_t>(a[0].as_string().size()));
           }});

    r.add({"concat", true, "builtin:concat:1",
           [](const std::vector<ValueType>& ts) {
             for (ValueType t : ts)
               if (t != ValueType::String) raise(ErrorCode::TypeMismatch, "concat expects strings");
             return ValueType::String;
           },
           [](const std::vector<Value>& a, const Expression&, const EvalEnv&) -> Value {
             std::string out;
             for (const Value& v : a) {
               if (v.is_null()) return Value::null();
               out += v.as_string();
             }
             return Value(std::move(out));
           }});

    r.add({"coalesce", true, "builtin:coalesce:1",
           [](const std::vector<ValueType>& ts) {
             if (ts.empty()) raise(ErrorCode::TypeMismatch, "coalesce needs arguments");
             for (ValueType t : ts)
               if (t != ts[0]) raise(ErrorCode::TypeMismatch, "coalesce argument types differ");
             return ts[0];
           },
           [](const std::vector<Value>& a, const Expression&, const EvalEnv&) -> Value {
             for (const Value& v : a)
               if (!v.is_null()) return v;
             return Value::null();
           }});

    // Explicitly non-deterministic; plans containing it can only be fully
    // recomputed.
    r.add({"rand", false, "builtin:rand:1",
           [](const std::vector<ValueType>& ts) {
             if (!ts.empty()) raise(ErrorCode::TypeMismatch, "rand takes no arguments");
             return ValueType::Float64;
           },
           [](const std::vector<Value>&, const Expression&, const EvalEnv&) -> Value {
             return Value(std::uniform_real_distribution<double>(0.0, 1.0)(detail::nondet_rng()));
           }});

    // Internal: order-preserving (key, value) pair used to express
    // ordering-sensitive aggregates as MIN. Rendered as hex so the stored
    // value stays printable; hex preserves byte-lexicographic order.
    r.add({"__pair_encode", true, "builtin:__pair_encode:1",
           [](const std::vector<ValueType>& ts) {
             if (ts.size() != 2) raise(ErrorCode::TypeMismatch, "__pair_encode expects two arguments");
             return ValueType::String;
           },
           [](const std::vector<Value>& a, const Expression& e, const EvalEnv&) -> Value {
             std::string out;
             encode_typed(out, a[0], e.fn_type_args.at(0));
             encode_typed(out, a[1], e.fn_type_args.at(1));
             return Value(to_hex(out));
           }});

    r.add({"__pair_second", true, "builtin:__pair_second:1",
           [](const std::vector<ValueType>& ts) {
             if (ts.size() != 1 || ts[0] != ValueType::String)
               raise(ErrorCode::TypeMismatch, "__pair_second expects an encoded pair");
             return ValueType::String;  // overridden by fn_result_type
           },
           [](const std::vector<Value>& a, const Expression&, const EvalEnv&) -> Value {
             if (a[0].is_null()) return Value::null();
             const std::string& hex = a[0].as_string();
             std::string bytes;
             bytes.reserve(hex.size() / 2);
             for (size_t h = 0; h + 1 < hex.size(); h += 2)
               bytes.push_back(static_cast<char>(std::stoi(hex.substr(h, 2), nullptr, 16)));
             size_t pos = 0;
             decode_typed(bytes, pos);
             return decode_typed(bytes, pos);
           }});

    return r;
  }();
  return reg;
}

}  // namespace enzyme

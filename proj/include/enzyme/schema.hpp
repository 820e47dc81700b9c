#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "enzyme/error.hpp"
#include "enzyme/value.hpp"

namespace enzyme {

struct Column {
  std::string name;
  ValueType type = ValueType::Int64;
  bool nullable = true;

  friend bool operator==(const Column& a, const Column& b) {
    return a.name == b.name && a.type == b.type && a.nullable == b.nullable;
  }
};

/// Ordered, uniquely named columns.
class Schema {
public:
  Schema() = default;
  explicit Schema(std::vector<Column> cols) : columns_(std::move(cols)) {
    std::unordered_set<std::string> seen;
    for (const Column& c : columns_) {
      if (!seen.insert(c.name).second)
        raise(ErrorCode::SchemaMismatch, "duplicate column name '" + c.name + "'");
    }
  }

  size_t size() const { return columns_.size(); }
  const Column& at(size_t i) const { return columns_.at(i); }
  const std::vector<Column>& columns() const { return columns_; }

  std::optional<size_t> index_of(const std::string& name) const {
    for (size_t i = 0; i < columns_.size(); ++i)
      if (columns_[i].name == name) return i;
    return std::nullopt;
  }

  friend bool operator==(const Schema& a, const Schema& b) { return a.columns_ == b.columns_; }

private:
  std::vector<Column> columns_;
};

using Row = std::vector<Value>;

inline void check_row(const Schema& schema, const Row& row) {
  if (row.size() != schema.size())
    raise(ErrorCode::SchemaMismatch, "row arity " + std::to_string(row.size()) + " vs schema " +
                                         std::to_string(schema.size()));
  for (size_t i = 0; i < row.size(); ++i) {
    const Column& c = schema.at(i);
    if (row[i].is_null()) {
      if (!c.nullable) raise(ErrorCode::SchemaMismatch, "null in non-nullable column '" + c.name + "'");
    } else if (!row[i].matches(c.type)) {
      raise(ErrorCode::SchemaMismatch, "column '" + c.name + "' expects " + type_name(c.type));
    }
  }
}

/// A bag of rows. `row_ids` is parallel to `rows`; each id is an opaque byte
/// string unique within the relation.
struct Relation {
  Schema schema;
  std::vector<Row> rows;
  std::vector<std::string> row_ids;

  size_t size() const { return rows.size(); }

  void add(Row row, std::string id) {
    rows.push_back(std::move(row));
    row_ids.push_back(std::move(id));
  }
};

// ---------------------------------------------------------------------------
// Bag comparison.

inline int compare_rows(const Row& a, const Row& b) {
  std::string ea = encode_values(a), eb = encode_values(b);
  return ea.compare(eb) < 0 ? -1 : (ea == eb ? 0 : 1);
}

inline bool float_close(double a, double b, double rel_tol) {
  if (std::isnan(a) && std::isnan(b)) return true;
  if (a == b) return true;
  double diff = std::fabs(a - b);
  double scale = std::max(std::fabs(a), std::fabs(b));
  return diff <= rel_tol * scale || diff <= 1e-12;
}

inline bool rows_close(const Row& a, const Row& b, double rel_tol) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].is_float() && b[i].is_float()) {
      if (!float_close(a[i].as_float(), b[i].as_float(), rel_tol)) return false;
    } else if (!(a[i] == b[i])) {
      return false;
    }
  }
  return true;
}

/// Multiset equality over rows. Float columns compared within `rel_tol`
/// after canonical sorting; everything else exact.
inline bool bag_equal(std::vector<Row> a, std::vector<Row> b, double rel_tol = 0.0) {
  if (a.size() != b.size()) return false;
  auto lt = [](const Row& x, const Row& y) { return compare_rows(x, y) < 0; };
  std::sort(a.begin(), a.end(), lt);
  std::sort(b.begin(), b.end(), lt);
  for (size_t i = 0; i < a.size(); ++i) {
    if (rel_tol == 0.0 ? !(compare_rows(a[i], b[i]) == 0) : !rows_close(a[i], b[i], rel_tol)) return false;
  }
  return true;
}

/// Signed multiset difference a - b keyed on encoded row values.
/// Result maps encoded row -> (sample row, net count).
inline std::map<std::string, std::pair<Row, long>> bag_difference(const std::vector<Row>& a,
                                                                  const std::vector<Row>& b) {
  std::map<std::string, std::pair<Row, long>> net;
  for (const Row& r : a) {
    auto& e = net[encode_values(r)];
    e.first = r;
    e.second += 1;
  }
  for (const Row& r : b) {
    auto& e = net[encode_values(r)];
    e.first = r;
    e.second -= 1;
  }
  for (auto it = net.begin(); it != net.end();) {
    it = it->second.second == 0 ? net.erase(it) : std::next(it);
  }
  return net;
}

// ---------------------------------------------------------------------------
// JSON encoding. Dates and timestamps are ISO-8601 strings; non-finite
// floats are strings decoded via the column type.

inline nlohmann::json value_to_json(const Value& v) {
  if (v.is_null()) return nullptr;
  if (v.is_int()) return v.as_int();
  if (v.is_bool()) return v.as_bool();
  if (v.is_string()) return v.as_string();
  if (v.is_date()) return format_date(v.as_date());
  if (v.is_timestamp()) return format_timestamp(v.as_timestamp());
  double d = v.as_float();
  if (std::isnan(d)) return "NaN";
  if (std::isinf(d)) return d > 0 ? "Infinity" : "-Infinity";
  return d;
}

inline Value value_from_json(const nlohmann::json& j, ValueType type) {
  if (j.is_null()) return Value::null();
  switch (type) {
    case ValueType::Int64: return Value(j.get<int64_t>());
    case ValueType::Float64:
      if (j.is_string()) {
        const std::string s = j.get<std::string>();
        if (s == "NaN") return Value(std::numeric_limits<double>::quiet_NaN());
        if (s == "Infinity") return Value(std::numeric_limits<double>::infinity());
        if (s == "-Infinity") return Value(-std::numeric_limits<double>::infinity());
        raise(ErrorCode::ParseError, "bad float literal '" + s + "'");
      }
      return Value(j.get<double>());
    case ValueType::String: return Value(j.get<std::string>());
    case ValueType::Bool: return Value(j.get<bool>());
    case ValueType::Date: return Value(parse_date(j.get<std::string>()));
    case ValueType::Timestamp: return Value(parse_timestamp(j.get<std::string>()));
  }
  raise(ErrorCode::Internal, "unreachable");
}

inline nlohmann::json schema_to_json(const Schema& s) {
  nlohmann::json cols = nlohmann::json::array();
  for (const Column& c : s.columns()) {
    cols.push_back({{"name", c.name}, {"nullable", c.nullable}, {"type", type_name(c.type)}});
  }
  return cols;
}

inline Schema schema_from_json(const nlohmann::json& j) {
  std::vector<Column> cols;
  for (const auto& c : j) {
    cols.push_back(Column{c.at("name").get<std::string>(), type_from_name(c.at("type").get<std::string>()),
                          c.at("nullable").get<bool>()});
  }
  return Schema(std::move(cols));
}

inline nlohmann::json row_to_json(const Row& r) {
  nlohmann::json a = nlohmann::json::array();
  for (const Value& v : r) a.push_back(value_to_json(v));
  return a;
}

inline Row row_from_json(const nlohmann::json& j, const Schema& s) {
  Row r;
  if (j.size() != s.size()) raise(ErrorCode::SchemaMismatch, "row arity mismatch in JSON");
  for (size_t i = 0; i < s.size(); ++i) r.push_back(value_from_json(j[i], s.at(i).type));
  return r;
}

}  // namespace enzyme

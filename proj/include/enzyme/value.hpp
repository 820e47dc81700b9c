#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include "enzyme/error.hpp"

namespace enzyme {

enum class ValueType { Int64, Float64, String, Bool, Date, Timestamp };

inline const char* type_name(ValueType t) {
  switch (t) {
    case ValueType::Int64: return "int64";
    case ValueType::Float64: return "float64";
    case ValueType::String: return "string";
    case ValueType::Bool: return "bool";
    case ValueType::Date: return "date";
    case ValueType::Timestamp: return "timestamp";
  }
  return "?";
}

inline ValueType type_from_name(const std::string& s) {
  if (s == "int64") return ValueType::Int64;
  if (s == "float64") return ValueType::Float64;
  if (s == "string") return ValueType::String;
  if (s == "bool") return ValueType::Bool;
  if (s == "date") return ValueType::Date;
  if (s == "timestamp") return ValueType::Timestamp;
  raise(ErrorCode::ParseError, "unknown type name '" + s + "'");
}

/// Days since 1970-01-01.
struct Date {
  int32_t days = 0;
  friend bool operator==(Date a, Date b) { return a.days == b.days; }
  friend auto operator<=>(Date a, Date b) { return a.days <=> b.days; }
};

/// Microseconds since 1970-01-01T00:00:00Z.
struct Timestamp {
  int64_t micros = 0;
  friend bool operator==(Timestamp a, Timestamp b) { return a.micros == b.micros; }
  friend auto operator<=>(Timestamp a, Timestamp b) { return a.micros <=> b.micros; }
};

// ---------------------------------------------------------------------------
// Civil-date conversions (proleptic Gregorian).

inline int64_t days_from_civil(int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<int64_t>(doe) - 719468;
}

inline void civil_from_days(int64_t z, int64_t& y, unsigned& m, unsigned& d) {
  z += 719468;
  const int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  y = static_cast<int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp + (mp < 10 ? 3 : -9);
  y += m <= 2;
}

inline std::string format_date(Date dt) {
  int64_t y;
  unsigned m, d;
  civil_from_days(dt.days, y, m, d);
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04lld-%02u-%02u", static_cast<long long>(y), m, d);
  return buf;
}

inline Date parse_date(const std::string& s) {
  int y, m, d;
  if (std::sscanf(s.c_str(), "%d-%d-%d", &y, &m, &d) != 3 || m < 1 || m > 12 || d < 1 || d > 31)
    raise(ErrorCode::ParseError, "bad date '" + s + "'");
  return Date{static_cast<int32_t>(days_from_civil(y, static_cast<unsigned>(m), static_cast<unsigned>(d)))};
}

inline std::string format_timestamp(Timestamp ts) {
  int64_t days = ts.micros / 86400000000LL;
  int64_t rem = ts.micros % 86400000000LL;
  if (rem < 0) {
    rem += 86400000000LL;
    days -= 1;
  }
  int64_t y;
  unsigned m, d;
  civil_from_days(days, y, m, d);
  int64_t secs = rem / 1000000;
  int64_t micros = rem % 1000000;
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%04lld-%02u-%02uT%02lld:%02lld:%02lld.%06lldZ",
                static_cast<long long>(y), m, d, static_cast<long long>(secs / 3600),
                static_cast<long long>((secs / 60) % 60), static_cast<long long>(secs % 60),
                static_cast<long long>(micros));
  return buf;
}

inline Timestamp parse_timestamp(const std::string& s) {
  int y, mo, d, h = 0, mi = 0;
  double sec = 0.0;
  int n = std::sscanf(s.c_str(), "%d-%d-%dT%d:%d:%lf", &y, &mo, &d, &h, &mi, &sec);
  if (n < 3) raise(ErrorCode::ParseError, "bad timestamp '" + s + "'");
  int64_t days = days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d));
  int64_t micros = days * 86400000000LL + (static_cast<int64_t>(h) * 3600 + mi * 60) * 1000000 +
                   static_cast<int64_t>(std::llround(sec * 1e6));
  return Timestamp{micros};
}

// ---------------------------------------------------------------------------
// Value: a nullable scalar.

class Value {
public:
  Value() : v_(std::monostate{}) {}
  explicit Value(int64_t x) : v_(x) {}
  explicit Value(double x) : v_(x) {}
  explicit Value(std::string x) : v_(std::move(x)) {}
  explicit Value(const char* x) : v_(std::string(x)) {}
  explicit Value(bool x) : v_(x) {}
  explicit Value(Date x) : v_(x) {}
  explicit Value(Timestamp x) : v_(x) {}

  static Value null() { return Value(); }

  bool is_null() const { return std::holds_alternative<std::monostate>(v_); }
  bool is_int() const { return std::holds_alternative<int64_t>(v_); }
  bool is_float() const { return std::holds_alternative<double>(v_); }
  bool is_string() const { return std::holds_alternative<std::string>(v_); }
  bool is_bool() const { return std::holds_alternative<bool>(v_); }
  bool is_date() const { return std::holds_alternative<Date>(v_); }
  bool is_timestamp() const { return std::holds_alternative<Timestamp>(v_); }

  int64_t as_int() const { return get<int64_t>("int64"); }
  double as_float() const { return get<double>("float64"); }
  const std::string& as_string() const { return get<std::string>("string"); }
  bool as_bool() const { return get<bool>("bool"); }
  Date as_date() const { return get<Date>("date"); }
  Timestamp as_timestamp() const { return get<Timestamp>("timestamp"); }

  /// Numeric read that accepts both int64 and float64.
  double numeric() const {
    if (is_int()) return static_cast<double>(as_int());
    return as_float();
  }

  bool matches(ValueType t) const {
    switch (t) {
      case ValueType::Int64: return is_int();
      case ValueType::Float64: return is_float();
      case ValueType::String: return is_string();
      case ValueType::Bool: return is_bool();
      case ValueType::Date: return is_date();
      case ValueType::Timestamp: return is_timestamp();
    }
    return false;
  }

  friend bool operator==(const Value& a, const Value& b) {
    if (a.is_null() || b.is_null()) return a.is_null() && b.is_null();
    if (a.is_float() && b.is_float()) return canonical_float_bits(a.as_float()) == canonical_float_bits(b.as_float());
    return a.v_ == b.v_;
  }

  std::string to_display() const;

private:
  template <typename T>
  const T& get(const char* what) const {
    const T* p = std::get_if<T>(&v_);
    if (!p) raise(ErrorCode::RuntimeTypeError, std::string("value is not ") + what);
    return *p;
  }

  // -0.0 folds to +0.0 and every NaN to one canonical NaN so grouping is a
  // total equivalence.
  static uint64_t canonical_float_bits(double d) {
    if (std::isnan(d)) return 0x7ff8000000000000ULL;
    if (d == 0.0) return 0;
    return std::bit_cast<uint64_t>(d);
  }

  friend void encode_value(std::string& out, const Value& v);

  std::variant<std::monostate, int64_t, double, std::string, bool, Date, Timestamp> v_;
};

inline std::string Value::to_display() const {
  if (is_null()) return "null";
  if (is_int()) return std::to_string(as_int());
  if (is_bool()) return as_bool() ? "true" : "false";
  if (is_string()) return as_string();
  if (is_date()) return format_date(as_date());
  if (is_timestamp()) return format_timestamp(as_timestamp());
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", as_float());
  return buf;
}

// ---------------------------------------------------------------------------
// Order-preserving byte encoding. Lexicographic comparison of encodings
// matches value order (null smallest); encodings of tuples are prefix-free.

namespace detail {

inline void put_u64_be(std::string& out, uint64_t x) {
  for (int i = 7; i >= 0; --i) out.push_back(static_cast<char>((x >> (i * 8)) & 0xff));
}

inline void put_u32_be(std::string& out, uint32_t x) {
  for (int i = 3; i >= 0; --i) out.push_back(static_cast<char>((x >> (i * 8)) & 0xff));
}

inline uint64_t order_bits_int(int64_t v) { return static_cast<uint64_t>(v) ^ 0x8000000000000000ULL; }

inline uint64_t order_bits_float(double d) {
  if (std::isnan(d)) d = std::numeric_limits<double>::quiet_NaN();
  if (d == 0.0) d = 0.0;  // normalize -0.0
  uint64_t b = std::bit_cast<uint64_t>(d);
  return (b & 0x8000000000000000ULL) ? ~b : (b | 0x8000000000000000ULL);
}

}  // namespace detail

inline void encode_value(std::string& out, const Value& v) {
  if (v.is_null()) {
    out.push_back('\x00');
    return;
  }
  out.push_back('\x01');
  if (v.is_int()) {
    detail::put_u64_be(out, detail::order_bits_int(v.as_int()));
  } else if (v.is_float()) {
    detail::put_u64_be(out, detail::order_bits_float(v.as_float()));
  } else if (v.is_bool()) {
    out.push_back(v.as_bool() ? '\x01' : '\x00');
  } else if (v.is_date()) {
    detail::put_u32_be(out, static_cast<uint32_t>(v.as_date().days) ^ 0x80000000u);
  } else if (v.is_timestamp()) {
    detail::put_u64_be(out, detail::order_bits_int(v.as_timestamp().micros));
  } else {
    // 0x00 bytes escaped so the 0x00 0x00 terminator keeps encodings
    // prefix-free and order-preserving.
    for (char c : v.as_string()) {
      if (c == '\x00') {
        out.push_back('\x00');
        out.push_back('\xff');
      } else {
        out.push_back(c);
      }
    }
    out.push_back('\x00');
    out.push_back('\x00');
  }
}

inline std::string encode_values(const std::vector<Value>& vs) {
  std::string out;
  for (const Value& v : vs) encode_value(out, v);
  return out;
}

/// Total order used for grouping keys, sort keys, and deterministic output
/// ordering: null first, then by value.
inline int compare_values(const Value& a, const Value& b) {
  std::string ea, eb;
  encode_value(ea, a);
  encode_value(eb, b);
  return ea.compare(eb) < 0 ? -1 : (ea == eb ? 0 : 1);
}

/// Inverse of encode_value given the column type; advances `pos`.
inline Value decode_value(const std::string& bytes, size_t& pos, ValueType type) {
  auto need = [&](size_t n) {
    if (pos + n > bytes.size()) raise(ErrorCode::Internal, "truncated value encoding");
  };
  need(1);
  char tag = bytes[pos++];
  if (tag == '\x00') return Value::null();
  auto read_u64 = [&]() {
    need(8);
    uint64_t x = 0;
    for (int i = 0; i < 8; ++i) x = (x << 8) | static_cast<unsigned char>(bytes[pos++]);
    return x;
  };
  switch (type) {
    case ValueType::Int64:
      return Value(static_cast<int64_t>(read_u64() ^ 0x8000000000000000ULL));
    case ValueType::Float64: {
      uint64_t e = read_u64();
      uint64_t b = (e & 0x8000000000000000ULL) ? (e & ~0x8000000000000000ULL) : ~e;
      return Value(std::bit_cast<double>(b));
    }
    case ValueType::Bool:
      need(1);
      return Value(bytes[pos++] != '\x00');
    case ValueType::Date: {
      need(4);
      uint32_t x = 0;
      for (int i = 0; i < 4; ++i) x = (x << 8) | static_cast<unsigned char>(bytes[pos++]);
      return Value(Date{static_cast<int32_t>(x ^ 0x80000000u)});
    }
    case ValueType::Timestamp:
      return Value(Timestamp{static_cast<int64_t>(read_u64() ^ 0x8000000000000000ULL)});
    case ValueType::String: {
      std::string s;
      while (true) {
        need(1);
        char c = bytes[pos++];
        if (c == '\x00') {
          need(1);
          char next = bytes[pos++];
          if (next == '\x00') break;
          s.push_back('\x00');
        } else {
          s.push_back(c);
        }
      }
      return Value(std::move(s));
    }
  }
  raise(ErrorCode::Internal, "unreachable");
}

// Self-describing encoding: a type byte ahead of each value, so composite
// encodings (ordering-key pairs) can be decoded without side tables. The
// constant type byte preserves lexicographic order within a column.
inline void encode_typed(std::string& out, const Value& v, ValueType type) {
  out.push_back(static_cast<char>(static_cast<int>(type) + 1));
  encode_value(out, v);
}

inline Value decode_typed(const std::string& bytes, size_t& pos) {
  if (pos >= bytes.size()) raise(ErrorCode::Internal, "truncated typed encoding");
  int t = static_cast<int>(bytes[pos++]) - 1;
  if (t < 0 || t > 5) raise(ErrorCode::Internal, "bad type byte");
  return decode_value(bytes, pos, static_cast<ValueType>(t));
}

inline std::string to_hex(const std::string& bytes) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (unsigned char c : bytes) {
    out.push_back(digits[c >> 4]);
    out.push_back(digits[c & 0xf]);
  }
  return out;
}

}  // namespace enzyme

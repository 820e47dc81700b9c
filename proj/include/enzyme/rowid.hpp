#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "enzyme/value.hpp"

namespace enzyme {

// Derived row identifiers are opaque byte strings, unique per output tuple of
// every plan node. Leaves use the store-assigned id; joins concatenate the
// child ids (kept whole, not hashed, so uniqueness is structural); aggregates
// use the grouping-key tuple; union branches are tagged to keep sibling ids
// disjoint.

inline std::string leaf_row_id(int64_t store_id) {
  std::string out;
  out.push_back('L');
  detail::put_u64_be(out, static_cast<uint64_t>(store_id));
  return out;
}

inline std::string pair_row_id(const std::string& left, const std::string& right) {
  std::string out;
  out.push_back('J');
  detail::put_u32_be(out, static_cast<uint32_t>(left.size()));
  out += left;
  detail::put_u32_be(out, static_cast<uint32_t>(right.size()));
  out += right;
  return out;
}

/// Stands in for the missing side of an outer-join null extension.
inline std::string null_side_row_id() { return std::string(1, 'N'); }

inline std::string group_row_id(const std::vector<Value>& keys) {
  std::string out;
  out.push_back('G');
  for (const Value& v : keys) encode_value(out, v);
  return out;
}

inline std::string union_branch_row_id(size_t branch, const std::string& child) {
  std::string out;
  out.push_back('U');
  detail::put_u32_be(out, static_cast<uint32_t>(branch));
  out += child;
  return out;
}

}  // namespace enzyme

#pragma once

#include <map>
#include <string>
#include <vector>

#include "enzyme/schema.hpp"

namespace enzyme {

/// One inserted (+1) or deleted (-1) row. `row_id` may be empty when the
/// producer tracks no identity.
struct ChangeEntry {
  Row row;
  int weight = +1;  // +1 or -1
  std::string row_id;
};

/// A relation extended with a change-type annotation per row.
struct Changeset {
  Schema schema;
  std::vector<ChangeEntry> entries;

  size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }

  void add(Row row, int weight, std::string row_id = {}) {
    entries.push_back(ChangeEntry{std::move(row), weight, std::move(row_id)});
  }

  long net_count() const {
    long n = 0;
    for (const auto& e : entries) n += e.weight;
    return n;
  }
};

/// Collapses a changeset to its net effect: entries are grouped, change types
/// summed per group, and |net| entries emitted with the net's sign. Entries
/// carrying row ids group by (columns, id) so that surviving deletions still
/// address the rows they refer to; id-less entries group by columns alone.
/// Idempotent, and application-equivalent to the input.
inline Changeset effectivize(const Changeset& cs) {
  struct Group {
    Row row;
    std::string row_id;
    long net = 0;
  };
  std::map<std::string, Group> groups;
  for (const ChangeEntry& e : cs.entries) {
    std::string key = encode_values(e.row);
    key.push_back('\x01');
    key += e.row_id;
    auto& g = groups[key];
    if (g.net == 0 && g.row.empty()) {
      g.row = e.row;
      g.row_id = e.row_id;
    }
    g.net += e.weight;
  }
  Changeset out;
  out.schema = cs.schema;
  for (auto& [key, g] : groups) {
    int sign = g.net > 0 ? +1 : -1;
    for (long i = 0; i < std::abs(g.net); ++i) out.add(g.row, sign, g.row_id);
  }
  return out;
}

/// Applies a changeset to a bag of rows: +1 adds, -1 removes one matching
/// occurrence. Returns false if a deletion finds no matching row.
inline bool apply_changeset(std::vector<Row>& rows, const Changeset& cs) {
  std::map<std::string, long> net;
  for (const ChangeEntry& e : cs.entries) net[encode_values(e.row)] += e.weight;

  std::map<std::string, std::pair<Row, long>> counts;
  for (const Row& r : rows) {
    auto& c = counts[encode_values(r)];
    c.first = r;
    c.second += 1;
  }
  for (const ChangeEntry& e : cs.entries) {
    auto& c = counts[encode_values(e.row)];
    if (c.second == 0) c.first = e.row;
  }
  for (const auto& [key, delta] : net) counts[key].second += 0;  // ensure key exists
  for (const auto& [key, delta] : net) {
    auto& c = counts[key];
    c.second += delta;
    if (c.second < 0) return false;
  }
  std::vector<Row> out;
  for (const auto& [key, c] : counts) {
    for (long i = 0; i < c.second; ++i) out.push_back(c.first);
  }
  rows = std::move(out);
  return true;
}

}  // namespace enzyme

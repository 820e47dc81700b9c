#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>

#include "enzyme/deltagen.hpp"
#include "enzyme/fingerprint.hpp"
#include "enzyme/storage.hpp"

namespace enzyme {

inline constexpr const char* kProvenanceKey = "enzyme.provenance";

/// Everything needed to validate consistency and plan the next refresh,
/// committed in the same transaction as the data it describes.
struct Provenance {
  FingerprintHistory fingerprints;
  std::map<std::string, Version> source_versions;
  Timestamp refresh_time{0};
  std::map<std::string, std::string> captured_params;  // expression id -> captured value
  std::string cost_feedback_ref;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["fingerprints"] = fingerprint_history_to_json(fingerprints);
    nlohmann::json sv;
    for (const auto& [t, v] : source_versions) sv[t] = v;
    j["source_versions"] = sv;
    j["refresh_time"] = format_timestamp(refresh_time);
    j["captured_params"] = captured_params;
    j["cost_feedback_ref"] = cost_feedback_ref;
    return j;
  }

  static Provenance from_json(const nlohmann::json& j) {
    Provenance p;
    p.fingerprints = fingerprint_history_from_json(j.at("fingerprints"));
    for (const auto& [t, v] : j.at("source_versions").items()) p.source_versions[t] = v.get<Version>();
    p.refresh_time = parse_timestamp(j.at("refresh_time").get<std::string>());
    p.captured_params = j.at("captured_params").get<std::map<std::string, std::string>>();
    p.cost_feedback_ref = j.value("cost_feedback_ref", "");
    return p;
  }

  std::map<std::string, std::string> as_metadata() const { return {{kProvenanceKey, to_json().dump()}}; }
};

/// Latest provenance recorded in the backing table's commit log, if any.
inline std::optional<Provenance> read_provenance(const Table& backing) {
  for (Version v = backing.current_version(); v >= 1; --v) {
    const CommitRecord& c = backing.commit_at(v);
    auto it = c.metadata.find(kProvenanceKey);
    if (it != c.metadata.end()) return Provenance::from_json(nlohmann::json::parse(it->second));
  }
  return std::nullopt;
}

namespace detail {

inline size_t row_id_column(const Table& backing) {
  auto idx = backing.schema().index_of(kRowIdColumn);
  if (!idx) raise(ErrorCode::Internal, "backing table lacks the row id column");
  return *idx;
}

/// Refreshes must see the source versions they planned against; a mismatch
/// means another refresh landed in between, and retrying is the safe path.
inline void check_provenance_fresh(const Table& backing,
                                   const std::map<std::string, Version>& expected_from) {
  if (expected_from.empty()) return;
  auto prov = read_provenance(backing);
  if (!prov) {
    for (const auto& [t, v] : expected_from) {
      if (v != 0)
        raise(ErrorCode::StaleProvenance, "no provenance recorded but refresh starts at v" +
                                              std::to_string(v) + " for '" + t + "'");
    }
    return;
  }
  for (const auto& [t, v] : expected_from) {
    auto it = prov->source_versions.find(t);
    Version recorded = it == prov->source_versions.end() ? 0 : it->second;
    if (recorded != v)
      raise(ErrorCode::StaleProvenance, "'" + t + "' recorded v" + std::to_string(recorded) +
                                            ", expected v" + std::to_string(v));
  }
}

}  // namespace detail

/// Atomic delete-then-insert. The incoming changeset is effectivized here
/// unconditionally; REPLACE-WHERE applies all deletions before any
/// insertions, so unresolved insert/delete pairs would corrupt the view.
inline CommitRecord apply_replace_where(Table& backing, const Changeset& changes, const Provenance& prov,
                                        const std::map<std::string, Version>& expected_from = {}) {
  fault_point("apply.replace_where");
  detail::check_provenance_fresh(backing, expected_from);
  // Test switch reproducing the corruption this effectivization prevents:
  // with deletions applied before insertions, an unresolved insert/delete
  // pair leaves a phantom row behind.
  Changeset eff = FaultInjector::instance().is_armed("apply.skip_effectivization") ? changes
                                                                                   : effectivize(changes);

  const size_t id_col = detail::row_id_column(backing);
  auto deletes = std::make_shared<std::unordered_set<std::string>>();
  for (const ChangeEntry& e : eff.entries) {
    if (e.weight < 0) deletes->insert(to_hex(e.row_id));
  }
  fault_point("apply.between_delete_insert");
  std::vector<Row> inserts;
  for (const ChangeEntry& e : eff.entries) {
    if (e.weight > 0) {
      Row r = e.row;
      r.push_back(Value(to_hex(e.row_id)));
      inserts.push_back(std::move(r));
    }
  }
  auto pred = deletes->empty() ? std::function<bool(const Row&)>(nullptr)
                               : std::function<bool(const Row&)>([deletes, id_col](const Row& r) {
                                   return deletes->count(r[id_col].as_string()) > 0;
                                 });
  return backing.commit(inserts, pred, prov.as_metadata());
}

/// MERGE semantics for decomposed aggregates: matched groups get their
/// components adjusted in place (rows whose group count reaches zero are
/// removed), unmatched groups are inserted. One atomic commit.
inline CommitRecord apply_merge_aggregate(Table& backing, const DeltaNode& merge_node,
                                          const std::vector<GroupAdjustment>& adjustments,
                                          const Provenance& prov,
                                          const std::map<std::string, Version>& expected_from = {}) {
  fault_point("apply.merge_aggregate");
  if (merge_node.kind != DeltaKind::MergeAdjust) raise(ErrorCode::Internal, "wrong delta for merge apply");
  detail::check_provenance_fresh(backing, expected_from);

  const size_t id_col = detail::row_id_column(backing);
  auto snapshot = backing.snapshot(backing.current_version());
  std::unordered_map<std::string, size_t> by_id;
  for (size_t i = 0; i < snapshot->size(); ++i) by_id[snapshot->rows[i][id_col].as_string()] = i;

  auto touched = std::make_shared<std::unordered_set<std::string>>();
  std::vector<Row> inserts;
  for (const GroupAdjustment& adj : adjustments) {
    std::string hex = to_hex(group_row_id(adj.keys));
    const Row* old_row = nullptr;
    Row old_data;
    auto hit = by_id.find(hex);
    if (hit != by_id.end()) {
      old_data.assign(snapshot->rows[hit->second].begin(), snapshot->rows[hit->second].end() - 1);
      old_row = &old_data;
    }
    std::optional<Row> merged = merge_group_row(merge_node, old_row, adj);
    if (old_row) touched->insert(hex);
    if (merged) {
      merged->push_back(Value(hex));
      inserts.push_back(std::move(*merged));
    }
  }
  auto pred = touched->empty() ? std::function<bool(const Row&)>(nullptr)
                               : std::function<bool(const Row&)>([touched, id_col](const Row& r) {
                                   return touched->count(r[id_col].as_string()) > 0;
                                 });
  return backing.commit(inserts, pred, prov.as_metadata());
}

/// Replaces whole partitions: rows in the listed partitions are deleted and
/// the replacement inserted, atomically. Replacement rows must fall inside
/// the listed partitions.
inline CommitRecord apply_partition_overwrite(Table& backing, const std::vector<size_t>& partition_cols,
                                              const std::set<std::string>& partitions,
                                              const Relation& replacement, const Provenance& prov,
                                              const std::map<std::string, Version>& expected_from = {}) {
  fault_point("apply.partition_overwrite");
  detail::check_provenance_fresh(backing, expected_from);

  auto partition_key = [&](const Row& r) {
    std::string k;
    for (size_t c : partition_cols) encode_value(k, r[c]);
    return k;
  };
  std::vector<Row> inserts;
  for (size_t i = 0; i < replacement.size(); ++i) {
    if (!partitions.count(partition_key(replacement.rows[i])))
      raise(ErrorCode::RowOutsidePartition, "replacement row outside the overwritten partitions");
    Row r = replacement.rows[i];
    r.push_back(Value(to_hex(replacement.row_ids[i])));
    inserts.push_back(std::move(r));
  }
  auto pred = partitions.empty()
                  ? std::function<bool(const Row&)>(nullptr)
                  : std::function<bool(const Row&)>(
                        [&partition_key, partitions](const Row& r) { return partitions.count(partition_key(r)) > 0; });
  return backing.commit(inserts, pred, prov.as_metadata());
}

/// Truncate-and-repopulate in one commit; the universal fallback.
inline CommitRecord full_recompute(Table& backing, const Relation& rows, const Provenance& prov) {
  std::vector<Row> inserts;
  inserts.reserve(rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    Row r = rows.rows[i];
    r.push_back(Value(to_hex(rows.row_ids[i])));
    inserts.push_back(std::move(r));
  }
  return backing.commit(inserts, [](const Row&) { return true; }, prov.as_metadata());
}

}  // namespace enzyme

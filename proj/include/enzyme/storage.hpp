#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "enzyme/changeset.hpp"
#include "enzyme/error.hpp"
#include "enzyme/faults.hpp"
#include "enzyme/rowid.hpp"
#include "enzyme/schema.hpp"

namespace enzyme {

using RowIdValue = int64_t;
using Version = uint64_t;

struct CommitRecord {
  Version version = 0;
  std::vector<std::pair<RowIdValue, Row>> inserted;
  std::vector<std::pair<RowIdValue, Row>> deleted;  // values kept for the change feed
  std::map<std::string, std::string> metadata;
};

namespace fs = std::filesystem;

namespace detail {

inline void atomic_write(const fs::path& path, const std::string& contents) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) raise(ErrorCode::IoError, "cannot write " + tmp.string());
    out << contents;
    out.flush();
    if (!out) raise(ErrorCode::IoError, "short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace detail

/// One versioned table: an append-only commit log plus replayed snapshots.
/// Version 0 is the empty table; every commit advances the version by one.
/// Commits are serialized per table; snapshots are immutable shared values.
class Table {
public:
  Table(fs::path dir, std::string name, Schema schema, std::vector<std::string> partition_columns)
      : dir_(std::move(dir)), name_(std::move(name)), schema_(std::move(schema)),
        partition_columns_(std::move(partition_columns)) {
    for (const auto& p : partition_columns_) {
      if (!schema_.index_of(p))
        raise(ErrorCode::UnknownPartitionColumn, "'" + p + "' in table '" + name_ + "'");
    }
    fs::create_directories(dir_ / "commits");
    persist_meta();
  }

  /// Reopens a table from its directory.
  explicit Table(fs::path dir) : dir_(std::move(dir)) {
    std::ifstream in(dir_ / "meta.json");
    if (!in) raise(ErrorCode::IoError, "missing meta.json in " + dir_.string());
    nlohmann::json meta = nlohmann::json::parse(in);
    name_ = meta.at("name").get<std::string>();
    schema_ = schema_from_json(meta.at("schema"));
    partition_columns_ = meta.at("partition_columns").get<std::vector<std::string>>();
    next_row_id_ = meta.at("next_row_id").get<int64_t>();
    Version current = meta.at("current_version").get<Version>();
    for (Version v = 1; v <= current; ++v) commits_.push_back(load_commit(v));
  }

  const std::string& name() const { return name_; }
  const Schema& schema() const { return schema_; }
  const std::vector<std::string>& partition_columns() const { return partition_columns_; }

  Version current_version() const {
    std::lock_guard<std::mutex> lk(mu_);
    return commits_.size();
  }

  const CommitRecord& commit_at(Version v) const {
    std::lock_guard<std::mutex> lk(mu_);
    if (v == 0 || v > commits_.size()) raise(ErrorCode::VersionOutOfRange, "commit " + std::to_string(v));
    return commits_[v - 1];
  }

  /// Appends one commit: rows matching `delete_predicate` are removed, then
  /// `inserts` are added with fresh RowIds. The commit is durable (written
  /// atomically) before it becomes visible.
  CommitRecord commit(const std::vector<Row>& inserts,
                      const std::function<bool(const Row&)>& delete_predicate,
                      const std::map<std::string, std::string>& metadata = {}) {
    std::lock_guard<std::mutex> lk(write_mu_);
    CommitRecord rec;
    rec.version = current_version() + 1;
    rec.metadata = metadata;
    if (delete_predicate) {
      auto snap = snapshot(current_version());
      for (size_t i = 0; i < snap->rows.size(); ++i) {
        if (delete_predicate(snap->rows[i]))
          rec.deleted.emplace_back(decode_leaf_id(snap->row_ids[i]), snap->rows[i]);
      }
    }
    for (const Row& r : inserts) {
      check_row(schema_, r);
      rec.inserted.emplace_back(next_row_id_++, r);
    }
    finalize(rec);
    return rec;
  }

  /// Update-in-place: rows matching `predicate` are deleted and re-inserted,
  /// transformed by `transform`, under their existing RowIds.
  CommitRecord update_where(const std::function<bool(const Row&)>& predicate,
                            const std::function<Row(const Row&)>& transform,
                            const std::map<std::string, std::string>& metadata = {}) {
    std::lock_guard<std::mutex> lk(write_mu_);
    CommitRecord rec;
    rec.version = current_version() + 1;
    rec.metadata = metadata;
    auto snap = snapshot(current_version());
    for (size_t i = 0; i < snap->rows.size(); ++i) {
      if (!predicate(snap->rows[i])) continue;
      RowIdValue id = decode_leaf_id(snap->row_ids[i]);
      Row updated = transform(snap->rows[i]);
      check_row(schema_, updated);
      rec.deleted.emplace_back(id, snap->rows[i]);
      rec.inserted.emplace_back(id, std::move(updated));
    }
    finalize(rec);
    return rec;
  }

  /// Commit with caller-chosen RowIds on inserts; ids must be fresh or reused
  /// from rows deleted in the same commit.
  CommitRecord commit_raw(CommitRecord rec) {
    std::lock_guard<std::mutex> lk(write_mu_);
    rec.version = current_version() + 1;
    for (auto& [id, row] : rec.inserted) {
      check_row(schema_, row);
      if (id >= next_row_id_) next_row_id_ = id + 1;
    }
    finalize(rec);
    return rec;
  }

  /// Rows live at version `at`, each carrying its RowId. Independent of any
  /// later commit.
  std::shared_ptr<const Relation> snapshot(Version at) const {
    std::lock_guard<std::mutex> lk(mu_);
    if (at > commits_.size()) raise(ErrorCode::VersionOutOfRange, "snapshot at v" + std::to_string(at));
    auto it = snapshots_.find(at);
    if (it != snapshots_.end()) return it->second;

    // Replay from the nearest cached earlier version.
    Version base = 0;
    std::shared_ptr<const Relation> base_rel;
    for (auto& [v, rel] : snapshots_) {
      if (v <= at && v >= base) {
        base = v;
        base_rel = rel;
      }
    }
    std::vector<std::pair<RowIdValue, Row>> live;
    if (base_rel) {
      for (size_t i = 0; i < base_rel->rows.size(); ++i)
        live.emplace_back(decode_leaf_id(base_rel->row_ids[i]), base_rel->rows[i]);
    }
    for (Version v = base + 1; v <= at; ++v) {
      const CommitRecord& c = commits_[v - 1];
      for (const auto& [id, row] : c.deleted) {
        for (auto it2 = live.begin(); it2 != live.end(); ++it2) {
          if (it2->first == id) {
            live.erase(it2);
            break;
          }
        }
      }
      for (const auto& [id, row] : c.inserted) live.emplace_back(id, row);
    }
    auto rel = std::make_shared<Relation>();
    rel->schema = schema_;
    for (auto& [id, row] : live) rel->add(row, leaf_row_id(id));
    snapshots_[at] = rel;
    return rel;
  }

  /// Row-level changes for versions in (from, to]: every insert as +1 and
  /// every delete as -1, in commit order, not effectivized, with RowIds.
  Changeset change_feed(Version from, Version to) const {
    std::lock_guard<std::mutex> lk(mu_);
    if (from > to || to > commits_.size())
      raise(ErrorCode::VersionOutOfRange,
            "feed (" + std::to_string(from) + ", " + std::to_string(to) + "]");
    Changeset cs;
    cs.schema = schema_;
    for (Version v = from + 1; v <= to; ++v) {
      const CommitRecord& c = commits_[v - 1];
      for (const auto& [id, row] : c.deleted) cs.add(row, -1, leaf_row_id(id));
      for (const auto& [id, row] : c.inserted) cs.add(row, +1, leaf_row_id(id));
    }
    return cs;
  }

  /// Total feed entries in (from, to]; cheap relative to materializing.
  size_t feed_size(Version from, Version to) const {
    std::lock_guard<std::mutex> lk(mu_);
    if (from > to || to > commits_.size()) raise(ErrorCode::VersionOutOfRange, "feed size");
    size_t n = 0;
    for (Version v = from + 1; v <= to; ++v)
      n += commits_[v - 1].inserted.size() + commits_[v - 1].deleted.size();
    return n;
  }

  size_t live_count(Version at) const { return snapshot(at)->size(); }

  static RowIdValue decode_leaf_id(const std::string& id) {
    if (id.size() != 9 || id[0] != 'L') raise(ErrorCode::Internal, "not a leaf row id");
    uint64_t x = 0;
    for (size_t i = 1; i < 9; ++i) x = (x << 8) | static_cast<unsigned char>(id[i]);
    return static_cast<RowIdValue>(x);
  }

private:
  void finalize(CommitRecord& rec) {
    // The commit file lands first; meta.json carries the authoritative
    // current version, so a crash in between leaves the previous version
    // intact and the orphan file is overwritten on the next commit.
    std::string body;
    for (const auto& [id, row] : rec.deleted) {
      nlohmann::json line = {{"op", "delete"}, {"row_id", id}, {"values", row_to_json(row)}};
      body += line.dump();
      body += "\n";
    }
    for (const auto& [id, row] : rec.inserted) {
      nlohmann::json line = {{"op", "insert"}, {"row_id", id}, {"values", row_to_json(row)}};
      body += line.dump();
      body += "\n";
    }
    nlohmann::json meta_line = {{"metadata", rec.metadata}};
    body += meta_line.dump();
    body += "\n";
    detail::atomic_write(dir_ / "commits" / (std::to_string(rec.version) + ".jsonl"), body);
    fault_point("storage.before_meta_write");

    {
      std::lock_guard<std::mutex> lk(mu_);
      commits_.push_back(rec);
      // Advance the cached head snapshot.
      auto it = snapshots_.find(rec.version - 1);
      if (it != snapshots_.end()) {
        auto rel = std::make_shared<Relation>();
        rel->schema = schema_;
        std::unordered_map<RowIdValue, bool> dead;
        for (const auto& [id, row] : rec.deleted) dead[id] = true;
        for (size_t i = 0; i < it->second->rows.size(); ++i) {
          RowIdValue id = decode_leaf_id(it->second->row_ids[i]);
          if (!dead.count(id)) rel->add(it->second->rows[i], it->second->row_ids[i]);
        }
        for (const auto& [id, row] : rec.inserted) rel->add(row, leaf_row_id(id));
        snapshots_[rec.version] = rel;
      }
    }
    persist_meta();
  }

  void persist_meta() {
    nlohmann::json meta = {{"current_version", current_version()},
                           {"name", name_},
                           {"next_row_id", next_row_id_},
                           {"partition_columns", partition_columns_},
                           {"schema", schema_to_json(schema_)}};
    detail::atomic_write(dir_ / "meta.json", meta.dump(2));
  }

  CommitRecord load_commit(Version v) const {
    std::ifstream in(dir_ / "commits" / (std::to_string(v) + ".jsonl"));
    if (!in) raise(ErrorCode::IoError, "missing commit file v" + std::to_string(v));
    CommitRecord rec;
    rec.version = v;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      nlohmann::json j = nlohmann::json::parse(line);
      if (j.contains("metadata")) {
        rec.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
      } else if (j.at("op") == "insert") {
        rec.inserted.emplace_back(j.at("row_id").get<RowIdValue>(), row_from_json(j.at("values"), schema_));
      } else {
        rec.deleted.emplace_back(j.at("row_id").get<RowIdValue>(), row_from_json(j.at("values"), schema_));
      }
    }
    return rec;
  }

  fs::path dir_;
  std::string name_;
  Schema schema_;
  std::vector<std::string> partition_columns_;
  RowIdValue next_row_id_ = 1;
  std::vector<CommitRecord> commits_;
  mutable std::map<Version, std::shared_ptr<const Relation>> snapshots_;
  mutable std::mutex mu_;
  std::mutex write_mu_;
};

/// Directory of tables under one root: `<root>/<table>/meta.json` plus
/// `<root>/<table>/commits/<version>.jsonl`.
class TableStore {
public:
  explicit TableStore(fs::path root) : root_(std::move(root)) {
    fs::create_directories(root_);
    for (const auto& entry : fs::directory_iterator(root_)) {
      if (entry.is_directory() && fs::exists(entry.path() / "meta.json"))
        tables_[entry.path().filename().string()] = std::make_unique<Table>(entry.path());
    }
  }

  const fs::path& root() const { return root_; }

  Table& create_table(const std::string& name, Schema schema,
                      std::vector<std::string> partition_columns = {}) {
    std::lock_guard<std::mutex> lk(mu_);
    if (tables_.count(name)) raise(ErrorCode::DuplicateTable, "'" + name + "'");
    auto t = std::make_unique<Table>(root_ / name, name, std::move(schema), std::move(partition_columns));
    Table& ref = *t;
    tables_[name] = std::move(t);
    return ref;
  }

  bool has_table(const std::string& name) const {
    std::lock_guard<std::mutex> lk(mu_);
    return tables_.count(name) > 0;
  }

  Table& table(const std::string& name) const {
    std::lock_guard<std::mutex> lk(mu_);
    auto it = tables_.find(name);
    if (it == tables_.end()) raise(ErrorCode::UnknownTable, "'" + name + "'");
    return *it->second;
  }

  std::vector<std::string> table_names() const {
    std::lock_guard<std::mutex> lk(mu_);
    std::vector<std::string> out;
    for (const auto& [n, t] : tables_) out.push_back(n);
    return out;
  }

private:
  fs::path root_;
  std::map<std::string, std::unique_ptr<Table>> tables_;
  mutable std::mutex mu_;
};

}  // namespace enzyme

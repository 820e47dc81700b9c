#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "enzyme/apply.hpp"
#include "enzyme/cost.hpp"
#include "enzyme/enable.hpp"
#include "enzyme/plan.hpp"
#include "enzyme/storage.hpp"

namespace enzyme {

struct MvDefinition {
  std::string name;
  PlanPtr definition;  // unbound logical plan
  std::vector<std::string> partition_columns;
  std::string schedule_tag;
  std::string sql;  // original text when defined through the CLI

  std::string backing_table() const { return name + "__backing"; }
};

/// A pipeline workspace: the table store plus the MV catalog, cost parameters
/// and execution history, all rooted in one directory.
class Workspace {
public:
  explicit Workspace(std::filesystem::path root)
      : root_(std::move(root)), store_(root_), history_(meta_dir() / "cost_history.jsonl") {
    std::filesystem::create_directories(meta_dir());
    load_params();
    load_catalog();
  }

  const std::filesystem::path& root() const { return root_; }
  TableStore& store() { return store_; }
  const TableStore& store() const { return store_; }
  CostHistory& history() { return history_; }
  const CostParams& params() const { return params_; }
  void set_params(const CostParams& p) {
    params_ = p;
    save_params();
  }

  const FunctionRegistry& registry() const { return FunctionRegistry::builtins(); }

  Table& create_source(const std::string& name, Schema schema,
                       std::vector<std::string> partition_columns = {}) {
    if (is_mv(name)) raise(ErrorCode::DuplicateTable, "'" + name + "' is a materialized view");
    Table& t = store_.create_table(name, std::move(schema), std::move(partition_columns));
    sources_.push_back(name);
    save_catalog();
    return t;
  }

  /// Registers an MV and creates its empty backing table (version 0); the
  /// first refresh populates it.
  void create_mv(MvDefinition def) {
    if (mv_index_.count(def.name) || store_.has_table(def.name))
      raise(ErrorCode::DuplicateTable, "'" + def.name + "'");
    EnabledPlan enabled = enable_or_plain(def);
    Schema storage_schema = enabled.storage_schema();
    // Partition columns are declared on user-visible names; map them through
    // the top-level projection onto backing columns.
    std::vector<std::string> backing_parts;
    for (const std::string& p : def.partition_columns) {
      bool found = false;
      for (size_t i = 0; i < enabled.top_names.size(); ++i) {
        if (enabled.top_names[i] == p && enabled.top_exprs[i]->kind == ExprKind::ColumnRef) {
          backing_parts.push_back(enabled.backing_schema().at(enabled.top_exprs[i]->column).name);
          found = true;
          break;
        }
      }
      if (!found) raise(ErrorCode::UnknownPartitionColumn, "'" + p + "' in MV '" + def.name + "'");
    }
    store_.create_table(def.backing_table(), storage_schema, backing_parts);
    mv_index_[def.name] = mvs_.size();
    mvs_.push_back(std::move(def));
    save_catalog();
  }

  bool is_mv(const std::string& name) const { return mv_index_.count(name) > 0; }
  const std::vector<MvDefinition>& mvs() const { return mvs_; }
  const std::vector<std::string>& sources() const { return sources_; }

  const MvDefinition& mv(const std::string& name) const {
    auto it = mv_index_.find(name);
    if (it == mv_index_.end()) raise(ErrorCode::UnknownTable, "MV '" + name + "'");
    return mvs_[it->second];
  }

  /// Name -> schema for every source table and MV top view, resolved in
  /// dependency order.
  Catalog catalog() const {
    Catalog cat;
    for (const std::string& s : sources_) cat.emplace(s, store_.table(s).schema());
    // MVs may reference each other; resolve until a fixpoint.
    size_t resolved = 0;
    while (resolved < mvs_.size()) {
      bool progress = false;
      for (const MvDefinition& def : mvs_) {
        if (cat.count(def.name)) continue;
        try {
          PlanPtr inferred = infer_schema(def.definition, cat, registry());
          cat.emplace(def.name, inferred->out_schema());
          ++resolved;
          progress = true;
        } catch (const Error&) {
          // dependency not yet resolved
        }
      }
      if (!progress) break;
    }
    return cat;
  }

  /// Tables/MVs referenced by an MV definition.
  std::vector<std::string> references(const MvDefinition& def) const {
    std::vector<std::string> out;
    walk_plan(def.definition, [&](const PlanPtr& p) {
      if (p->kind == PlanKind::Scan &&
          std::find(out.begin(), out.end(), p->table) == out.end())
        out.push_back(p->table);
    });
    return out;
  }

  size_t downstream_count(const std::string& mv_name) const {
    size_t n = 0;
    for (const MvDefinition& def : mvs_) {
      for (const std::string& r : references(def))
        if (r == mv_name) ++n;
    }
    return n;
  }

  EnabledPlan enable_or_plain(const MvDefinition& def) const {
    Catalog cat = catalog();
    NormalizedPlan np = normalize(def.definition, cat, registry());
    try {
      return enable(np, cat, registry());
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NotIncrementalizable) throw;
      // Full-recompute-only: store the plan output as-is.
      EnabledPlan plain;
      plain.backing_plan = np.plan;
      for (size_t i = 0; i < np.plan->out_schema().size(); ++i) {
        plain.top_exprs.push_back(col(i));
        plain.top_names.push_back(np.plan->out_schema().at(i).name);
      }
      return plain;
    }
  }

private:
  std::filesystem::path meta_dir() const { return root_ / "_enzyme"; }

  void load_params() {
    std::ifstream in(meta_dir() / "cost_params.json");
    if (in) {
      params_ = CostParams::from_json(nlohmann::json::parse(in));
    } else {
      save_params();
    }
  }

  void save_params() {
    std::ofstream out(meta_dir() / "cost_params.json", std::ios::trunc);
    out << params_.to_json().dump(2);
  }

  void load_catalog() {
    std::ifstream in(meta_dir() / "catalog.json");
    if (!in) return;
    nlohmann::json j = nlohmann::json::parse(in);
    for (const auto& s : j.value("sources", nlohmann::json::array()))
      sources_.push_back(s.at("name").get<std::string>());
    for (const auto& m : j.value("mvs", nlohmann::json::array())) {
      MvDefinition def;
      def.name = m.at("name").get<std::string>();
      def.definition = plan_from_json(m.at("plan"));
      def.partition_columns = m.value("partition_columns", std::vector<std::string>{});
      def.schedule_tag = m.value("schedule", "");
      def.sql = m.value("sql", "");
      mv_index_[def.name] = mvs_.size();
      mvs_.push_back(std::move(def));
    }
  }

  void save_catalog() {
    nlohmann::json j;
    nlohmann::json srcs = nlohmann::json::array();
    for (const std::string& s : sources_) srcs.push_back({{"name", s}});
    j["sources"] = srcs;
    nlohmann::json mvs = nlohmann::json::array();
    for (const MvDefinition& def : mvs_) {
      nlohmann::json m;
      m["name"] = def.name;
      m["plan"] = plan_to_json(def.definition);
      m["partition_columns"] = def.partition_columns;
      m["schedule"] = def.schedule_tag;
      if (!def.sql.empty()) m["sql"] = def.sql;
      mvs.push_back(m);
    }
    j["mvs"] = mvs;
    std::ofstream out(meta_dir() / "catalog.json", std::ios::trunc);
    out << j.dump(2);
  }

  std::filesystem::path root_;
  TableStore store_;
  CostParams params_;
  CostHistory history_;
  std::vector<std::string> sources_;
  std::vector<MvDefinition> mvs_;
  std::map<std::string, size_t> mv_index_;
};

}  // namespace enzyme

#pragma once

#include <deque>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "enzyme/detail/sha256.hpp"
#include "enzyme/plan.hpp"

namespace enzyme {

enum class StrategyKind { FullRecompute, RowIncremental, PartitionOverwrite };
enum class ApplyMode { ReplaceWhere, MergeAggregate };

inline const char* strategy_name(StrategyKind k) {
  switch (k) {
    case StrategyKind::FullRecompute: return "full_recompute";
    case StrategyKind::RowIncremental: return "row_incremental";
    case StrategyKind::PartitionOverwrite: return "partition_overwrite";
  }
  return "?";
}

inline const char* apply_mode_name(ApplyMode m) {
  return m == ApplyMode::ReplaceWhere ? "replace_where" : "merge_aggregate";
}

struct SourceChangeStats {
  size_t rows_changed = 0;
  size_t rows_total = 0;
  double effectivized_estimate = 0;  // <= rows_changed
};

struct ChangeStats {
  std::map<std::string, SourceChangeStats> per_source;
  std::vector<size_t> historical_changeset_sizes;  // last K refreshes of this MV
  size_t mv_rows = 0;                              // current backing cardinality

  size_t total_changed() const {
    size_t n = 0;
    for (const auto& [t, s] : per_source) n += s.rows_changed;
    return n;
  }
  double total_effectivized() const {
    double n = 0;
    for (const auto& [t, s] : per_source) n += s.effectivized_estimate;
    return n;
  }
};

/// Abstract cost units: a normalized CPU-time proxy. Defaults are
/// configuration values stored per workspace.
struct CostParams {
  double scan = 1.0;    // per row read
  double join = 1.2;    // per row on either join input
  double output = 1.0;  // per row produced
  double agg = 1.5;     // per row into an aggregate or window
  double write = 2.0;   // per row written

  nlohmann::json to_json() const {
    return {{"agg", agg}, {"join", join}, {"output", output}, {"scan", scan}, {"write", write}};
  }
  static CostParams from_json(const nlohmann::json& j) {
    CostParams p;
    p.scan = j.value("scan", 1.0);
    p.join = j.value("join", 1.2);
    p.output = j.value("output", 1.0);
    p.agg = j.value("agg", 1.5);
    p.write = j.value("write", 2.0);
    return p;
  }
};

struct CostEstimate {
  double total = 0;                         // abstract units
  std::map<std::string, double> breakdown;  // operator kind -> units
  enum class Provenance { HistoryMatched, DefaultParameters } provenance = Provenance::DefaultParameters;
  // Expected wall time derived from structurally similar historical
  // executions; comparable across candidates only when every candidate has
  // one.
  std::optional<double> history_ms;

  void add(const std::string& op, double units) {
    breakdown[op] += units;
    total += units;
  }
};

/// Digest of the plan skeleton (operator kinds and arities only); used to
/// match structurally similar historical executions.
inline std::string plan_shape_digest(const PlanPtr& p) {
  std::function<nlohmann::json(const PlanPtr&)> shape = [&](const PlanPtr& n) {
    nlohmann::json j;
    j["k"] = static_cast<int>(n->kind);
    nlohmann::json kids = nlohmann::json::array();
    for (const auto& c : n->children) kids.push_back(shape(c));
    j["c"] = kids;
    return j;
  };
  return detail::sha256_hex(shape(p).dump());
}

struct CostObservation {
  std::string mv;
  std::string strategy;  // strategy_name + apply mode
  std::string shape_digest;
  double wall_ms = 0;
  size_t input_rows = 0;
  size_t output_rows = 0;
};

/// Append-only execution profile store, ring-buffered per key, persisted as
/// JSON lines under the workspace.
class CostHistory {
public:
  static constexpr size_t kRingSize = 20;

  CostHistory() = default;
  explicit CostHistory(std::filesystem::path file) : file_(std::move(file)) { load(); }

  void record(const CostObservation& obs) {
    std::lock_guard<std::mutex> lk(mu_);
    auto& ring = rings_[key(obs.mv, obs.strategy, obs.shape_digest)];
    ring.push_back(obs);
    while (ring.size() > kRingSize) ring.pop_front();
    if (!file_.empty()) persist();
  }

  /// Mean observed milliseconds per input row for a matching shape.
  std::optional<double> rate_per_row(const std::string& mv, const std::string& strategy,
                                     const std::string& shape) const {
    std::lock_guard<std::mutex> lk(mu_);
    auto it = rings_.find(key(mv, strategy, shape));
    if (it == rings_.end() || it->second.empty()) return std::nullopt;
    double total_ms = 0;
    double total_rows = 0;
    for (const auto& o : it->second) {
      total_ms += o.wall_ms;
      total_rows += static_cast<double>(o.input_rows);
    }
    if (total_rows <= 0) return std::nullopt;
    return total_ms / total_rows;
  }

  size_t entry_count(const std::string& mv, const std::string& strategy, const std::string& shape) const {
    std::lock_guard<std::mutex> lk(mu_);
    auto it = rings_.find(key(mv, strategy, shape));
    return it == rings_.end() ? 0 : it->second.size();
  }

private:
  static std::string key(const std::string& mv, const std::string& strategy, const std::string& shape) {
    return mv + "\x1f" + strategy + "\x1f" + shape;
  }

  void load() {
    std::ifstream in(file_);
    if (!in) return;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      nlohmann::json j = nlohmann::json::parse(line);
      CostObservation o{j.at("mv"), j.at("strategy"), j.at("shape"), j.at("wall_ms"),
                        j.at("input_rows"), j.at("output_rows")};
      auto& ring = rings_[key(o.mv, o.strategy, o.shape_digest)];
      ring.push_back(o);
      while (ring.size() > kRingSize) ring.pop_front();
    }
  }

  void persist() {
    std::string body;
    for (const auto& [k, ring] : rings_) {
      for (const auto& o : ring) {
        nlohmann::json j = {{"mv", o.mv},           {"strategy", o.strategy},
                            {"shape", o.shape_digest}, {"wall_ms", o.wall_ms},
                            {"input_rows", o.input_rows}, {"output_rows", o.output_rows}};
        body += j.dump();
        body += "\n";
      }
    }
    std::ofstream out(file_, std::ios::trunc);
    out << body;
  }

  std::filesystem::path file_;
  std::map<std::string, std::deque<CostObservation>> rings_;
  mutable std::mutex mu_;
};

namespace detail {

/// Crude cardinality estimate per plan node.
inline double estimate_rows(const PlanPtr& p, const ChangeStats& stats) {
  switch (p->kind) {
    case PlanKind::Scan: {
      auto it = stats.per_source.find(p->table);
      return it == stats.per_source.end() ? 100.0 : static_cast<double>(it->second.rows_total);
    }
    case PlanKind::Filter:
      return 0.5 * estimate_rows(p->children[0], stats);
    case PlanKind::Project:
      return estimate_rows(p->children[0], stats);
    case PlanKind::Aggregate:
    case PlanKind::Distinct:
      return std::max(1.0, 0.5 * estimate_rows(p->children[0], stats));
    case PlanKind::Window:
      return estimate_rows(p->children[0], stats);
    case PlanKind::Join:
    case PlanKind::AntiLeft:
    case PlanKind::AntiRight:
      return std::max(estimate_rows(p->children[0], stats), estimate_rows(p->children[1], stats));
    case PlanKind::UnionAll: {
      double n = 0;
      for (const auto& c : p->children) n += estimate_rows(c, stats);
      return n;
    }
    default:
      return 100.0;
  }
}

inline void full_terms(const PlanPtr& p, const ChangeStats& stats, const CostParams& k, CostEstimate& e) {
  for (const auto& c : p->children) full_terms(c, stats, k, e);
  switch (p->kind) {
    case PlanKind::Scan:
      e.add("scan", k.scan * estimate_rows(p, stats));
      break;
    case PlanKind::Join:
      e.add("join", k.join * (estimate_rows(p->children[0], stats) + estimate_rows(p->children[1], stats)) +
                        k.output * estimate_rows(p, stats));
      break;
    case PlanKind::Aggregate:
    case PlanKind::Window:
    case PlanKind::Distinct:
      e.add("aggregate", k.agg * estimate_rows(p->children[0], stats) + k.output * estimate_rows(p, stats));
      break;
    default:
      break;
  }
}

inline void incremental_terms(const PlanPtr& p, const ChangeStats& stats, const CostParams& k,
                              double change_fraction, CostEstimate& e) {
  for (const auto& c : p->children) incremental_terms(c, stats, k, change_fraction, e);
  switch (p->kind) {
    case PlanKind::Scan: {
      auto it = stats.per_source.find(p->table);
      double changed = it == stats.per_source.end() ? 0.0 : static_cast<double>(it->second.rows_changed);
      e.add("scan_feed", k.scan * changed);
      break;
    }
    case PlanKind::Join: {
      // One full side is consulted per delta term.
      double rel = estimate_rows(p->children[0], stats) + estimate_rows(p->children[1], stats);
      double delta_rows = static_cast<double>(stats.total_changed());
      e.add("join", k.join * (0.5 * rel + delta_rows) + k.output * delta_rows);
      if (p->join_kind != JoinKind::Inner)
        e.add("outer_join_diff", k.join * rel);
      break;
    }
    case PlanKind::Aggregate:
    case PlanKind::Window:
    case PlanKind::Distinct: {
      double input = estimate_rows(p->children[0], stats);
      e.add("aggregate", k.agg * (k.scan * input * 0.1 + change_fraction * input) +
                             k.output * change_fraction * estimate_rows(p, stats));
      break;
    }
    default:
      break;
  }
}

}  // namespace detail

/// Estimates refresh cost: per-operator terms grounded by historical
/// execution profiles when a matching shape exists, default parameters
/// otherwise.
inline CostEstimate estimate(StrategyKind kind, ApplyMode mode, const std::string& mv,
                             const PlanPtr& backing_plan, const ChangeStats& stats,
                             const CostHistory& history, const CostParams& params) {
  CostEstimate e;
  std::string strategy = std::string(strategy_name(kind)) +
                         (kind == StrategyKind::RowIncremental ? std::string(":") + apply_mode_name(mode) : "");
  std::string shape = plan_shape_digest(backing_plan);

  double input_rows = 0;
  for (const auto& [t, s] : stats.per_source)
    input_rows += static_cast<double>(kind == StrategyKind::FullRecompute ? s.rows_total : s.rows_changed);

  if (auto rate = history.rate_per_row(mv, strategy, shape)) {
    e.provenance = CostEstimate::Provenance::HistoryMatched;
    e.history_ms = std::max(0.01, *rate * std::max(1.0, input_rows));
  }

  switch (kind) {
    case StrategyKind::FullRecompute: {
      detail::full_terms(backing_plan, stats, params, e);
      e.add("write", params.write * std::max(1.0, static_cast<double>(stats.mv_rows)));
      break;
    }
    case StrategyKind::RowIncremental: {
      size_t changed = stats.total_changed();
      if (changed == 0) {
        e.add("noop", 1.0);
        break;
      }
      double frac = 0.0;
      for (const auto& [t, s] : stats.per_source) {
        if (s.rows_total > 0)
          frac = std::max(frac, std::min(1.0, static_cast<double>(s.rows_changed) /
                                                  static_cast<double>(s.rows_total)));
        else if (s.rows_changed > 0)
          frac = 1.0;
      }
      detail::incremental_terms(backing_plan, stats, params, frac, e);
      double delta_out = 2.0 * std::max(stats.total_effectivized(), 1.0);
      if (mode == ApplyMode::MergeAggregate)
        e.add("merge_write", params.write * std::max(1.0, stats.total_effectivized()));
      else
        e.add("write", params.write * delta_out);
      break;
    }
    case StrategyKind::PartitionOverwrite: {
      size_t changed = stats.total_changed();
      if (changed == 0) {
        e.add("noop", 1.0);
        break;
      }
      double frac = 0.0;
      for (const auto& [t, s] : stats.per_source)
        if (s.rows_total > 0)
          frac = std::max(frac, std::min(1.0, static_cast<double>(s.rows_changed) /
                                                  static_cast<double>(s.rows_total)));
      double replaced = std::max(1.0, frac * static_cast<double>(stats.mv_rows) * 2.0);
      e.add("scan_feed", params.scan * static_cast<double>(changed));
      e.add("partition_recompute", params.agg * replaced);
      e.add("write", params.write * replaced);
      break;
    }
  }
  return e;
}

struct Candidate {
  StrategyKind kind = StrategyKind::FullRecompute;
  ApplyMode mode = ApplyMode::ReplaceWhere;
  CostEstimate cost;
};

/// Picks the candidate minimizing own cost plus the estimated delta-consumption
/// cost of downstream consumers: a full recompute forces them to treat the
/// whole MV as changed, an incremental refresh feeds only the effectivized
/// changes. Observed wall times are used only when every candidate has a
/// matching history, keeping the comparison on one scale; ties break toward
/// incremental.
inline const Candidate& choose(const std::vector<Candidate>& candidates, const ChangeStats& stats,
                               size_t downstream_consumers, const CostParams& params) {
  if (candidates.empty()) raise(ErrorCode::Internal, "no refresh candidates");
  bool all_history = true;
  for (const Candidate& c : candidates) all_history = all_history && c.cost.history_ms.has_value();
  double scale = 1.0;
  if (all_history) {
    double ratio_sum = 0;
    for (const Candidate& c : candidates) ratio_sum += *c.cost.history_ms / std::max(1.0, c.cost.total);
    scale = ratio_sum / static_cast<double>(candidates.size());
  }

  const Candidate* best = nullptr;
  double best_score = 0;
  for (const Candidate& c : candidates) {
    double feed = 0;
    switch (c.kind) {
      case StrategyKind::FullRecompute:
        feed = static_cast<double>(stats.mv_rows) * 2.0;  // everything rewritten
        break;
      case StrategyKind::RowIncremental:
        feed = 2.0 * stats.total_effectivized();
        break;
      case StrategyKind::PartitionOverwrite:
        feed = std::max(2.0 * stats.total_effectivized(),
                        0.25 * static_cast<double>(stats.mv_rows));
        break;
    }
    double base = all_history ? *c.cost.history_ms : c.cost.total;
    double score = base + scale * params.agg * feed * static_cast<double>(downstream_consumers);
    bool better = best == nullptr || score < best_score ||
                  (score == best_score && best->kind == StrategyKind::FullRecompute &&
                   c.kind != StrategyKind::FullRecompute);
    if (better) {
      best = &c;
      best_score = score;
    }
  }
  return *best;
}

}  // namespace enzyme

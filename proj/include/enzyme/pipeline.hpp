#pragma once

#include <chrono>
#include <future>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "enzyme/apply.hpp"
#include "enzyme/deltagen.hpp"
#include "enzyme/workspace.hpp"

namespace enzyme {

struct RefreshOptions {
  Timestamp now{0};
  std::optional<StrategyKind> force_strategy;
  bool capture_change_plan = false;  // keep the change plan and changeset for verification
  size_t max_parallelism = 4;
};

enum class RefreshOutcome { Ok, FellBack, Failed };

inline const char* refresh_outcome_name(RefreshOutcome o) {
  switch (o) {
    case RefreshOutcome::Ok: return "ok";
    case RefreshOutcome::FellBack: return "fell_back";
    case RefreshOutcome::Failed: return "failed";
  }
  return "?";
}

struct RefreshEntry {
  std::string mv;
  StrategyKind strategy = StrategyKind::FullRecompute;
  ApplyMode apply_mode = ApplyMode::ReplaceWhere;
  std::vector<Candidate> candidates;
  size_t rows_read = 0;
  size_t rows_written = 0;
  size_t changeset_raw = 0;
  size_t changeset_effectivized = 0;
  double wall_ms = 0;
  RefreshOutcome outcome = RefreshOutcome::Ok;
  std::string error;
  bool fingerprint_changed = false;
  bool first_refresh = false;

  // verification payload (capture_change_plan)
  std::shared_ptr<const ChangePlan> change_plan;
  std::shared_ptr<const Changeset> changeset;
  Version from_backing_version = 0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["mv"] = mv;
    j["strategy"] = strategy_name(strategy);
    if (strategy == StrategyKind::RowIncremental) j["apply_mode"] = apply_mode_name(apply_mode);
    nlohmann::json cands = nlohmann::json::array();
    for (const Candidate& c : candidates) {
      nlohmann::json cj;
      cj["strategy"] = strategy_name(c.kind);
      cj["apply_mode"] = apply_mode_name(c.mode);
      cj["total"] = c.cost.total;
      cj["provenance"] = c.cost.provenance == CostEstimate::Provenance::HistoryMatched
                             ? "history_matched"
                             : "default_parameters";
      cj["breakdown"] = c.cost.breakdown;
      cands.push_back(cj);
    }
    j["candidates"] = cands;
    j["rows_read"] = rows_read;
    j["rows_written"] = rows_written;
    j["changeset_raw"] = changeset_raw;
    j["changeset_effectivized"] = changeset_effectivized;
    j["wall_ms"] = wall_ms;
    j["outcome"] = refresh_outcome_name(outcome);
    if (!error.empty()) j["error"] = error;
    j["fingerprint_changed"] = fingerprint_changed;
    j["first_refresh"] = first_refresh;
    return j;
  }
};

struct RefreshReport {
  std::vector<RefreshEntry> entries;

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : entries) arr.push_back(e.to_json());
    return arr;
  }

  std::string to_table() const {
    std::string out = "mv                        strategy              outcome    rows_w  wall_ms\n";
    for (const auto& e : entries) {
      char buf[160];
      std::string strat = strategy_name(e.strategy);
      if (e.strategy == StrategyKind::RowIncremental) strat += std::string(":") + apply_mode_name(e.apply_mode);
      std::snprintf(buf, sizeof(buf), "%-25s %-21s %-10s %6zu  %7.1f\n", e.mv.c_str(), strat.c_str(),
                    refresh_outcome_name(e.outcome), e.rows_written, e.wall_ms);
      out += buf;
    }
    return out;
  }
};

// ---------------------------------------------------------------------------

/// Topological layering of the MV dependency DAG; MVs within a batch are
/// mutually independent.
inline std::vector<std::vector<std::string>> plan_run(const Workspace& ws) {
  std::map<std::string, std::set<std::string>> deps;  // mv -> upstream MVs
  for (const MvDefinition& def : ws.mvs()) {
    auto& d = deps[def.name];
    for (const std::string& r : ws.references(def))
      if (ws.is_mv(r)) d.insert(r);
    if (d.count(def.name)) raise(ErrorCode::CycleDetected, "MV '" + def.name + "' references itself");
  }
  std::vector<std::vector<std::string>> batches;
  std::set<std::string> done;
  while (done.size() < deps.size()) {
    std::vector<std::string> batch;
    for (const auto& [name, d] : deps) {
      if (done.count(name)) continue;
      bool ready = true;
      for (const std::string& u : d)
        if (!done.count(u)) ready = false;
      if (ready) batch.push_back(name);
    }
    if (batch.empty()) raise(ErrorCode::CycleDetected, "dependency cycle among materialized views");
    for (const std::string& n : batch) done.insert(n);
    batches.push_back(std::move(batch));
  }
  return batches;
}

namespace detail {

struct RefreshSetup {
  NormalizedPlan normalized;
  EnabledPlan enabled;
  bool full_only = false;  // opaque non-determinism
  RefreshContext ctx;
  std::optional<Provenance> prov;
  bool first_refresh = false;
  bool fingerprint_changed = false;
  FingerprintHistory next_history;
  ChangeStats stats;
};

inline RefreshSetup prepare_refresh(Workspace& ws, const MvDefinition& def, Timestamp now) {
  RefreshSetup s;
  Catalog cat = ws.catalog();
  s.normalized = normalize(def.definition, cat, ws.registry());
  try {
    s.enabled = enable(s.normalized, cat, ws.registry());
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NotIncrementalizable) throw;
    s.full_only = true;
    s.enabled.backing_plan = s.normalized.plan;
    for (size_t i = 0; i < s.normalized.plan->out_schema().size(); ++i) {
      s.enabled.top_exprs.push_back(col(i));
      s.enabled.top_names.push_back(s.normalized.plan->out_schema().at(i).name);
    }
  }

  Table& backing = ws.store().table(def.backing_table());
  s.prov = read_provenance(backing);
  s.first_refresh = !s.prov.has_value();

  auto sigs = ws.registry().signature_digests();
  if (s.prov) {
    UnchangedCheck chk = check_unchanged(s.prov->fingerprints, s.normalized, sigs);
    s.fingerprint_changed = !chk.unchanged;
    s.next_history = chk.unchanged ? chk.updated : record_fingerprints(s.normalized, sigs);
  } else {
    s.next_history = record_fingerprints(s.normalized, sigs);
  }

  // Version pinning: sources are pinned at refresh start; upstream MVs are
  // read at the version committed earlier in this run.
  s.ctx.store = &ws.store();
  s.ctx.registry = &ws.registry();
  s.ctx.curr_time = now;
  s.ctx.prev_time = s.prov ? s.prov->refresh_time : now;
  for (const std::string& r : ws.references(def)) {
    std::string physical = r;
    if (ws.is_mv(r)) {
      const MvDefinition& up = ws.mv(r);
      EnabledPlan up_enabled = ws.enable_or_plain(up);
      s.ctx.mv_sources[r] = MvSourceView{up.backing_table(), up_enabled.top_exprs, up_enabled.top_names};
      physical = up.backing_table();
    }
    Version current = ws.store().table(physical).current_version();
    s.ctx.to_versions[r] = current;
    Version from = 0;
    if (s.prov) {
      auto it = s.prov->source_versions.find(r);
      if (it == s.prov->source_versions.end()) {
        s.fingerprint_changed = true;  // definition gained a source; recompute
      } else {
        from = it->second;
      }
    }
    s.ctx.from_versions[r] = from;

    SourceChangeStats sc;
    const Table& t = ws.store().table(physical);
    sc.rows_total = t.live_count(current);
    sc.rows_changed = t.feed_size(from, current);
    sc.effectivized_estimate = static_cast<double>(sc.rows_changed);
    s.stats.per_source[r] = sc;
  }
  s.stats.mv_rows = backing.live_count(backing.current_version());
  return s;
}

inline Provenance make_provenance(const RefreshSetup& s, Timestamp now, const std::string& ref) {
  Provenance p;
  p.fingerprints = s.next_history;
  p.source_versions = s.ctx.to_versions;
  p.refresh_time = now;
  EvalEnv env;
  env.now = now;
  p.captured_params["current_timestamp"] = format_timestamp(now);
  p.captured_params["current_date"] = format_date(eval_expr(current_date_expr(), {}, env).as_date());
  p.cost_feedback_ref = ref;
  return p;
}

inline size_t run_full_recompute(Workspace& ws, const MvDefinition& def, RefreshSetup& s, Timestamp now) {
  Table& backing = ws.store().table(def.backing_table());
  PlanPtr bound = bind_side(s.enabled.backing_plan, s.ctx, /*post=*/true);
  EvalContext ectx;
  ectx.store = &ws.store();
  ectx.now = now;
  ectx.registry = &ws.registry();
  auto rows = evaluate(bound, ectx);
  Provenance prov = make_provenance(s, now, def.name + "@full");
  full_recompute(backing, *rows, prov);
  return rows->size();
}

}  // namespace detail

/// Refreshes one MV: fingerprint check, enablement, candidate strategies,
/// cost-based choice, execution, transactional apply, and feedback recording.
/// Any error on the incremental path falls back to full recomputation.
inline RefreshEntry refresh_mv(Workspace& ws, const std::string& mv_name, const RefreshOptions& opts) {
  auto t0 = std::chrono::steady_clock::now();
  RefreshEntry entry;
  entry.mv = mv_name;
  const MvDefinition& def = ws.mv(mv_name);
  Table& backing = ws.store().table(def.backing_table());
  entry.from_backing_version = backing.current_version();

  auto elapsed_ms = [&] {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  };

  std::optional<detail::RefreshSetup> setup;
  try {
    setup = detail::prepare_refresh(ws, def, opts.now);
    detail::RefreshSetup& s = *setup;
    entry.first_refresh = s.first_refresh;
    entry.fingerprint_changed = s.fingerprint_changed;

    bool must_full = s.first_refresh || s.fingerprint_changed || s.full_only;
    if (opts.force_strategy && *opts.force_strategy == StrategyKind::FullRecompute) must_full = true;

    if (!must_full) {
      // Fast path: nothing changed and the clock cannot move data either.
      bool clock_safe = !classify_determinism(s.normalized.plan).has_time_dependent ||
                        s.ctx.prev_time == s.ctx.curr_time;
      if (s.stats.total_changed() == 0 && clock_safe) {
        Provenance prov = detail::make_provenance(s, opts.now, def.name + "@noop");
        backing.commit({}, nullptr, prov.as_metadata());
        entry.strategy = StrategyKind::RowIncremental;
        entry.wall_ms = elapsed_ms();
        return entry;
      }

      RefreshStrategy strategy = select_strategy(
          s.enabled, s.ctx, s.stats, ws.history(), ws.params(), mv_name, def.backing_table(),
          backing.current_version(), def.partition_columns, ws.downstream_count(mv_name),
          /*has_backing_state=*/!s.first_refresh);
      if (opts.force_strategy && *opts.force_strategy != strategy.kind) {
        if (*opts.force_strategy == StrategyKind::RowIncremental) {
          bool materialized = s.enabled.has_top_aggregate || s.enabled.has_top_window;
          strategy.kind = StrategyKind::RowIncremental;
          strategy.apply_mode = (s.enabled.has_top_aggregate && s.enabled.merge_adjustable)
                                    ? ApplyMode::MergeAggregate
                                    : ApplyMode::ReplaceWhere;
          strategy.change_plan =
              materialized ? build_materialized_aggregate_delta(s.enabled, s.ctx, def.backing_table(),
                                                                backing.current_version(), &s.stats)
                           : build_change_plan(s.enabled, s.ctx, &s.stats);
        } else {
          strategy.kind = StrategyKind::FullRecompute;
        }
      }
      entry.candidates = strategy.candidates;
      entry.strategy = strategy.kind;
      entry.apply_mode = strategy.apply_mode;
      entry.rows_read = s.stats.total_changed();

      if (strategy.kind == StrategyKind::RowIncremental) {
        const ChangePlan& cp = *strategy.change_plan;
        DeltaEvalContext dctx;
        dctx.eval.store = &ws.store();
        dctx.eval.now = opts.now;
        dctx.eval.registry = &ws.registry();
        Provenance prov = detail::make_provenance(s, opts.now, def.name + "@incr");

        CommitRecord commit;
        if (strategy.apply_mode == ApplyMode::MergeAggregate) {
          auto adjustments = evaluate_adjustments(*cp.delta, dctx);
          entry.changeset_raw = adjustments.size();
          entry.changeset_effectivized = adjustments.size();
          commit = apply_merge_aggregate(backing, *cp.delta, adjustments, prov, s.ctx.from_versions);
        } else {
          auto cs = evaluate_delta(cp.delta, dctx);
          entry.changeset_raw = cs->size();
          entry.changeset_effectivized = effectivize(*cs).size();
          // the raw changeset: mandatory effectivization is apply's contract
          commit = apply_replace_where(backing, *cs, prov, s.ctx.from_versions);
          if (opts.capture_change_plan) entry.changeset = cs;
        }
        entry.rows_written = commit.inserted.size() + commit.deleted.size();
        if (opts.capture_change_plan) {
          entry.change_plan = std::make_shared<ChangePlan>(cp);
          if (strategy.apply_mode == ApplyMode::MergeAggregate) {
            DeltaEvalContext vctx;
            vctx.eval.store = &ws.store();
            vctx.eval.now = opts.now;
            vctx.eval.registry = &ws.registry();
            // Row-level view resolved against the pre-state backing.
            entry.changeset = evaluate_delta(cp.delta, vctx);
          }
        }
      } else if (strategy.kind == StrategyKind::PartitionOverwrite) {
        const PartitionOverwriteInfo& info = *strategy.partitions;
        std::set<std::string> affected;
        for (const auto& [table, cols] : info.source_cols) {
          const Table& t = ws.store().table(table);
          std::vector<size_t> ords;
          for (const std::string& c : cols) ords.push_back(*t.schema().index_of(c));
          Changeset feed = t.change_feed(s.ctx.from_versions.at(table), s.ctx.to_versions.at(table));
          for (const ChangeEntry& e : feed.entries) {
            std::string k;
            for (size_t c : ords) encode_value(k, e.row[c]);
            affected.insert(k);
          }
        }
        std::vector<ExprPtr> pcol_refs;
        for (size_t c : info.backing_cols) pcol_refs.push_back(col(c));
        auto key_set = std::make_shared<std::unordered_set<std::string>>(affected.begin(), affected.end());
        PlanPtr bound = detail::bind_side(s.enabled.backing_plan, s.ctx, /*post=*/true);
        EvalContext ectx;
        ectx.store = &ws.store();
        ectx.now = opts.now;
        ectx.registry = &ws.registry();
        auto replacement = evaluate(push_restriction(bound, key_probe(pcol_refs, key_set)), ectx);
        Provenance prov = detail::make_provenance(s, opts.now, def.name + "@po");
        CommitRecord commit = apply_partition_overwrite(backing, info.backing_cols, affected, *replacement,
                                                        prov, s.ctx.from_versions);
        entry.rows_written = commit.inserted.size() + commit.deleted.size();
        entry.changeset_raw = s.stats.total_changed();
        entry.changeset_effectivized = entry.changeset_raw;
      } else {
        entry.rows_written = detail::run_full_recompute(ws, def, s, opts.now);
      }
      entry.wall_ms = elapsed_ms();

      std::string strat = std::string(strategy_name(entry.strategy)) +
                          (entry.strategy == StrategyKind::RowIncremental
                               ? std::string(":") + apply_mode_name(entry.apply_mode)
                               : "");
      size_t input_rows = 0;
      if (entry.strategy == StrategyKind::FullRecompute) {
        for (const auto& [t, sc] : s.stats.per_source) input_rows += sc.rows_total;
      } else {
        input_rows = s.stats.total_changed();
      }
      ws.history().record({mv_name, strat, plan_shape_digest(s.enabled.backing_plan), entry.wall_ms,
                           input_rows, entry.rows_written});
      return entry;
    }
  } catch (const std::exception& e) {
    entry.outcome = RefreshOutcome::FellBack;
    entry.error = e.what();
  }

  // Full recompute: first refresh, changed definition, opaque plan, forced,
  // or fallback after an incremental-path error.
  try {
    if (!setup) setup = detail::prepare_refresh(ws, def, opts.now);
    detail::RefreshSetup& s = *setup;
    entry.strategy = StrategyKind::FullRecompute;
    entry.rows_written = detail::run_full_recompute(ws, def, s, opts.now);
    entry.rows_read = 0;
    for (const auto& [t, sc] : s.stats.per_source) entry.rows_read += sc.rows_total;
    entry.wall_ms = elapsed_ms();
    ws.history().record({mv_name, strategy_name(StrategyKind::FullRecompute),
                         plan_shape_digest(s.enabled.backing_plan), entry.wall_ms, entry.rows_read,
                         entry.rows_written});
  } catch (const std::exception& e) {
    entry.outcome = RefreshOutcome::Failed;
    entry.error = entry.error.empty() ? e.what() : entry.error + "; full recompute: " + e.what();
    entry.wall_ms = elapsed_ms();
  }
  return entry;
}

/// Refreshes every MV in dependency order, batch by batch; MVs inside a batch are
/// independent and may run concurrently.
inline RefreshReport run_pipeline(Workspace& ws, const RefreshOptions& opts) {
  RefreshReport report;
  for (const auto& batch : plan_run(ws)) {
    std::vector<RefreshEntry> batch_entries(batch.size());
    size_t width = std::min(opts.max_parallelism, batch.size());
    if (width <= 1) {
      for (size_t i = 0; i < batch.size(); ++i) batch_entries[i] = refresh_mv(ws, batch[i], opts);
    } else {
      std::vector<std::future<RefreshEntry>> futures;
      for (size_t i = 0; i < batch.size(); ++i)
        futures.push_back(std::async(std::launch::async,
                                     [&ws, &batch, &opts, i] { return refresh_mv(ws, batch[i], opts); }));
      for (size_t i = 0; i < batch.size(); ++i) batch_entries[i] = futures[i].get();
    }
    for (auto& e : batch_entries) report.entries.push_back(std::move(e));
  }
  return report;
}

}  // namespace enzyme

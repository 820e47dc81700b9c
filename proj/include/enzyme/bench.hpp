#pragma once

#include <chrono>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "enzyme/pipeline.hpp"
#include "enzyme/workspace.hpp"

namespace enzyme {
namespace bench {

// Desk-scale pipeline modeled on a trading data warehouse: append-only trade
// and market feeds, slowly changing customer/account dimensions, and an
// update-heavy prospect list, refreshed over one historical load plus two
// single-day incremental batches.

struct BenchSizes {
  size_t customers = 300;
  size_t accounts = 450;
  size_t symbols = 60;
  size_t prospects = 1500;
  size_t history_days = 730;
  size_t trades_per_day = 30;
  // Market history concentrates in the trailing window so single-day clock
  // movement touches few symbol partitions.
  size_t market_history_span = 300;
  size_t market_rows_per_symbol = 150;
  double batch_symbol_fraction = 0.10;
};

inline BenchSizes sizes_for_scale(const std::string& scale) {
  BenchSizes s;
  if (scale == "small") {
    s.customers = 1500;
    s.accounts = 2200;
    s.symbols = 150;
    s.prospects = 8000;
    s.trades_per_day = 120;
    s.market_rows_per_symbol = 250;
  } else if (scale != "tiny") {
    raise(ErrorCode::ParseError, "unknown scale '" + scale + "' (expected tiny or small)");
  }
  return s;
}

struct TableBatch {
  std::vector<Row> inserts;
  // updates preserve row ids: match column == value, set column to value
  struct Update {
    size_t match_col;
    Value match_value;
    size_t set_col;
    Value set_value;
  };
  std::vector<Update> updates;
  bool update_all = false;  // prospect-style rewrite of nearly every row
  size_t update_all_set_col = 0;
  Value update_all_set_value;
};

struct BenchSpec {
  uint64_t seed = 0;
  std::string scale = "tiny";
  BenchSizes sizes;
  Date history_end{0};
  std::vector<std::pair<std::string, Schema>> tables;
  std::vector<std::vector<Row>> historical;
  // batches[i][table] for the two incremental days
  std::vector<std::map<std::string, TableBatch>> batches;
  Timestamp t0{0};
};

namespace detail_bench {

inline std::string symbol_name(size_t i) {
  std::string s = "SYM";
  s.push_back(static_cast<char>('A' + i / 26 % 26));
  s.push_back(static_cast<char>('A' + i % 26));
  s += std::to_string(i);
  return s;
}

}  // namespace detail_bench

inline BenchSpec generate_bench(const std::string& scale, uint64_t seed) {
  BenchSpec spec;
  spec.seed = seed;
  spec.scale = scale;
  spec.sizes = sizes_for_scale(scale);
  const BenchSizes& sz = spec.sizes;
  std::mt19937_64 rng(seed * 0x2545f4914f6cdd1dULL + 17);
  auto below = [&](size_t n) { return static_cast<size_t>(rng() % n); };
  auto quarters = [&](int64_t lo, int64_t hi) {
    return static_cast<double>(lo * 4 + static_cast<int64_t>(rng() % static_cast<uint64_t>((hi - lo) * 4))) /
           4.0;
  };

  Date start = parse_date("2023-01-02");
  spec.history_end = Date{static_cast<int32_t>(start.days + static_cast<int32_t>(sz.history_days) - 1)};
  spec.t0 = Timestamp{static_cast<int64_t>(spec.history_end.days + 1) * 86400000000LL};

  spec.tables = {
      {"customer", Schema({{"customer_id", ValueType::Int64, false},
                           {"region", ValueType::String, false},
                           {"tier", ValueType::String, false}})},
      {"account", Schema({{"account_id", ValueType::Int64, false},
                          {"customer_id", ValueType::Int64, false},
                          {"status", ValueType::String, false}})},
      {"trade", Schema({{"trade_id", ValueType::Int64, false},
                        {"account_id", ValueType::Int64, false},
                        {"symbol", ValueType::String, false},
                        {"amount", ValueType::Float64, false},
                        {"trade_date", ValueType::Date, false}})},
      {"daily_market", Schema({{"symbol", ValueType::String, false},
                               {"trade_date", ValueType::Date, false},
                               {"close_price", ValueType::Float64, false},
                               {"high", ValueType::Float64, false},
                               {"low", ValueType::Float64, false}})},
      {"prospect", Schema({{"prospect_id", ValueType::Int64, false},
                           {"name", ValueType::String, false},
                           {"last_seen", ValueType::Date, false}})},
  };

  static const char* regions[] = {"us-east", "us-west", "asia", "eu"};
  static const char* tiers[] = {"gold", "silver", "bronze"};
  static const char* statuses[] = {"active", "inactive"};

  std::vector<Row> customers, accounts, trades, market, prospects;
  for (size_t i = 0; i < sz.customers; ++i)
    customers.push_back({Value(static_cast<int64_t>(i)), Value(regions[below(4)]), Value(tiers[below(3)])});
  for (size_t i = 0; i < sz.accounts; ++i)
    accounts.push_back({Value(static_cast<int64_t>(i)), Value(static_cast<int64_t>(below(sz.customers))),
                        Value(statuses[below(2)])});
  int64_t trade_id = 0;
  for (size_t d = 0; d < sz.history_days; ++d) {
    Date day{static_cast<int32_t>(start.days + static_cast<int32_t>(d))};
    for (size_t t = 0; t < sz.trades_per_day; ++t) {
      trades.push_back({Value(trade_id++), Value(static_cast<int64_t>(below(sz.accounts))),
                        Value(detail_bench::symbol_name(below(sz.symbols))), Value(quarters(10, 500)),
                        Value(day)});
    }
  }
  for (size_t s = 0; s < sz.symbols; ++s) {
    for (size_t k = 0; k < sz.market_rows_per_symbol; ++k) {
      Date day{static_cast<int32_t>(spec.history_end.days - static_cast<int32_t>(below(sz.market_history_span)))};
      double px = quarters(20, 400);
      market.push_back({Value(detail_bench::symbol_name(s)), Value(day), Value(px),
                        Value(px + quarters(0, 10)), Value(px - quarters(0, 10))});
    }
  }
  for (size_t i = 0; i < sz.prospects; ++i)
    prospects.push_back({Value(static_cast<int64_t>(i)),
                         Value("prospect_" + std::to_string(i)), Value(spec.history_end)});
  spec.historical = {customers, accounts, trades, market, prospects};

  // Two single-day incremental batches.
  for (int b = 1; b <= 2; ++b) {
    std::map<std::string, TableBatch> batch;
    Date day{static_cast<int32_t>(spec.history_end.days + b)};

    TableBatch trade_batch;
    size_t day_symbols = std::max<size_t>(1, static_cast<size_t>(sz.symbols * sz.batch_symbol_fraction));
    for (size_t t = 0; t < sz.trades_per_day; ++t)
      trade_batch.inserts.push_back({Value(trade_id++), Value(static_cast<int64_t>(below(sz.accounts))),
                                     Value(detail_bench::symbol_name(below(day_symbols))),
                                     Value(quarters(10, 500)), Value(day)});
    batch["trade"] = trade_batch;

    TableBatch market_batch;
    for (size_t s = 0; s < day_symbols; ++s) {
      double px = quarters(20, 400);
      market_batch.inserts.push_back({Value(detail_bench::symbol_name(s)), Value(day), Value(px),
                                      Value(px + quarters(0, 10)), Value(px - quarters(0, 10))});
    }
    batch["daily_market"] = market_batch;

    if (b == 2) {
      // a sprinkle of dimension churn in the second day
      TableBatch cust_batch;
      for (size_t i = 0; i < sz.customers / 50 + 1; ++i)
        cust_batch.updates.push_back({0, Value(static_cast<int64_t>(below(sz.customers))), 2,
                                      Value(tiers[below(3)])});
      batch["customer"] = cust_batch;
      TableBatch acct_batch;
      for (size_t i = 0; i < sz.accounts / 50 + 1; ++i)
        acct_batch.updates.push_back({0, Value(static_cast<int64_t>(below(sz.accounts))), 2,
                                      Value(statuses[below(2)])});
      batch["account"] = acct_batch;
    }

    // Nearly every prospect persists and gets its last-seen date rewritten.
    TableBatch prospect_batch;
    prospect_batch.update_all = true;
    prospect_batch.update_all_set_col = 2;
    prospect_batch.update_all_set_value = Value(day);
    batch["prospect"] = prospect_batch;

    spec.batches.push_back(std::move(batch));
  }
  return spec;
}

/// MV definitions for the pipeline; four primary views plus one downstream
/// consumer of the account dimension.
inline std::vector<MvDefinition> bench_mvs() {
  std::vector<MvDefinition> out;

  // average trade amount by customer region (merge-adjustable aggregate)
  {
    PlanPtr j1 = join(JoinKind::Inner, scan("customer"), scan("account"),
                      binary(BinOp::Eq, col(0), col(4)));  // customer_id == account.customer_id
    PlanPtr j2 = join(JoinKind::Inner, j1, scan("trade"),
                      binary(BinOp::Eq, col(3), col(7)));  // account_id == trade.account_id
    PlanPtr agg = aggregate(j2, {col(1)}, {"region"},
                            {{AggKind::Avg, col(9), nullptr, false, "avg_trade_amount"},
                             {AggKind::CountStar, nullptr, nullptr, false, "trade_count"}});
    MvDefinition def;
    def.name = "regional_avg_trade";
    def.definition = agg;
    out.push_back(def);
  }
  // rolling 52-week high/low per symbol (temporal filter + group recompute)
  {
    ExprPtr in_window = binary(BinOp::Ge, col(1),
                               binary(BinOp::Sub, current_date_expr(), interval_days_expr(364)));
    PlanPtr agg = aggregate(filter(scan("daily_market"), in_window), {col(0)}, {"symbol"},
                            {{AggKind::Max, col(3), nullptr, false, "high_52wk"},
                             {AggKind::Min, col(4), nullptr, false, "low_52wk"},
                             {AggKind::CountStar, nullptr, nullptr, false, "days_observed"}});
    MvDefinition def;
    def.name = "market_52wk";
    def.definition = agg;
    out.push_back(def);
  }
  // prospect snapshot: nearly every source row is rewritten each batch
  {
    MvDefinition def;
    def.name = "prospect_snapshot";
    def.definition = project(scan("prospect"), {col(0), col(1), col(2)},
                             {"prospect_id", "name", "last_seen"});
    out.push_back(def);
  }
  // small dimension join
  {
    PlanPtr j = join(JoinKind::Inner, scan("account"), scan("customer"),
                     binary(BinOp::Eq, col(1), col(3)));
    MvDefinition def;
    def.name = "dim_account";
    def.definition = project(j, {col(0), col(2), col(4), col(5)},
                             {"account_id", "status", "region", "tier"});
    out.push_back(def);
  }
  // downstream consumer reading the dimension MV
  {
    PlanPtr agg = aggregate(scan("dim_account"), {col(2)}, {"region"},
                            {{AggKind::CountStar, nullptr, nullptr, false, "accounts"}});
    MvDefinition def;
    def.name = "region_account_counts";
    def.definition = agg;
    out.push_back(def);
  }
  return out;
}

inline void materialize(const BenchSpec& spec, Workspace& ws) {
  for (size_t t = 0; t < spec.tables.size(); ++t) {
    Table& table = ws.create_source(spec.tables[t].first, spec.tables[t].second);
    table.commit(spec.historical[t], nullptr, {});
  }
  for (const MvDefinition& def : bench_mvs()) ws.create_mv(def);
}

inline void apply_batch(const BenchSpec& spec, Workspace& ws, size_t batch_index) {
  for (const auto& [table_name, tb] : spec.batches[batch_index]) {
    Table& t = ws.store().table(table_name);
    if (!tb.inserts.empty()) t.commit(tb.inserts, nullptr, {});
    for (const auto& u : tb.updates) {
      t.update_where([&](const Row& r) { return r[u.match_col] == u.match_value; },
                     [&](const Row& r) {
                       Row out = r;
                       out[u.set_col] = u.set_value;
                       return out;
                     });
    }
    if (tb.update_all) {
      t.update_where([](const Row&) { return true; },
                     [&](const Row& r) {
                       Row out = r;
                       out[tb.update_all_set_col] = tb.update_all_set_value;
                       return out;
                     });
    }
  }
}

struct BenchEntry {
  std::string mv;
  int batch = 0;
  std::string strategy;  // chosen by the cost model
  double t_incr_ms = 0;
  double t_full_ms = 0;
  double speedup = 0;
  bool cost_model_correct = false;

  nlohmann::json to_json() const {
    return {{"mv", mv},
            {"batch", batch},
            {"strategy", strategy},
            {"t_incr_ms", t_incr_ms},
            {"t_full_ms", t_full_ms},
            {"speedup", speedup},
            {"cost_model_correct", cost_model_correct}};
  }
};

struct BenchReport {
  std::vector<BenchEntry> entries;
  double total_ms = 0;  // wall time of the whole run

  double total_incremental_ms() const {
    double t = 0;
    for (const auto& e : entries) t += e.t_incr_ms;
    return t;
  }
  double total_full_ms() const {
    double t = 0;
    for (const auto& e : entries) t += e.t_full_ms;
    return t;
  }

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : entries) arr.push_back(e.to_json());
    return {{"entries", arr},
            {"total_ms", total_ms},
            {"total_incremental_ms", total_incremental_ms()},
            {"total_full_ms", total_full_ms()}};
  }
};

/// Runs three passes over identically generated workspaces: the engine's own
/// choices, forced incremental, and forced full recomputation. Speedups are
/// reported per MV for the incremental batches, measured sequentially; with
/// `repeats` > 1 the per-entry times are medians across repeated runs.
/// After every batch each pass re-verifies its views against a fresh
/// recompute.
inline BenchReport run_bench(const BenchSpec& spec, const std::filesystem::path& scratch,
                             bool verify = true, size_t repeats = 1) {
  auto t_start = std::chrono::steady_clock::now();
  struct Pass {
    std::string name;
    std::optional<StrategyKind> force;
    std::map<std::pair<std::string, int>, RefreshEntry> entries;
    std::map<std::pair<std::string, int>, std::vector<double>> times;
  };
  std::vector<Pass> passes;
  passes.push_back({"choice", std::nullopt, {}, {}});
  passes.push_back({"incremental", StrategyKind::RowIncremental, {}, {}});
  passes.push_back({"full", StrategyKind::FullRecompute, {}, {}});

  for (size_t repeat = 0; repeat < repeats; ++repeat) {
    for (Pass& p : passes) {
      std::filesystem::path root = scratch / ("bench_" + p.name);
      std::filesystem::remove_all(root);
      Workspace ws(root);
      materialize(spec, ws);
      RefreshOptions opts;
      opts.now = spec.t0;
      opts.max_parallelism = 1;  // sequential for timing stability
      for (const auto& e : run_pipeline(ws, opts).entries) {
        if (repeat == 0) p.entries[{e.mv, 0}] = e;
        p.times[{e.mv, 0}].push_back(e.wall_ms);
      }

      for (size_t b = 0; b < spec.batches.size(); ++b) {
        apply_batch(spec, ws, b);
        RefreshOptions batch_opts;
        batch_opts.now = Timestamp{spec.t0.micros + static_cast<int64_t>(b + 1) * 86400000000LL};
        batch_opts.max_parallelism = 1;
        batch_opts.force_strategy = p.force;
        for (const auto& e : run_pipeline(ws, batch_opts).entries) {
          if (repeat == 0) p.entries[{e.mv, static_cast<int>(b + 1)}] = e;
          p.times[{e.mv, static_cast<int>(b + 1)}].push_back(e.wall_ms);
        }

        if (verify && repeat == 0) {
          // correctness gate: every view equals its recompute after the batch
          for (const MvDefinition& def : bench_mvs()) {
            EnabledPlan enabled = ws.enable_or_plain(def);
            RefreshContext vctx;
            vctx.store = &ws.store();
            vctx.curr_time = batch_opts.now;
            vctx.prev_time = batch_opts.now;
            for (const std::string& r : ws.references(def)) {
              std::string phys = ws.is_mv(r) ? ws.mv(r).backing_table() : r;
              if (ws.is_mv(r)) {
                EnabledPlan up = ws.enable_or_plain(ws.mv(r));
                vctx.mv_sources[r] = MvSourceView{phys, up.top_exprs, up.top_names};
              }
              vctx.to_versions[r] = ws.store().table(phys).current_version();
              vctx.from_versions[r] = vctx.to_versions[r];
            }
            EvalContext ectx;
            ectx.store = &ws.store();
            ectx.now = batch_opts.now;
            auto expect = evaluate(enzyme::detail::bind_side(enabled.backing_plan, vctx, true), ectx);
            Table& backing = ws.store().table(def.backing_table());
            auto snap = backing.snapshot(backing.current_version());
            std::vector<Row> stored;
            for (const Row& r : snap->rows) stored.emplace_back(r.begin(), r.end() - 1);
            if (!bag_equal(stored, expect->rows, 1e-9))
              raise(ErrorCode::Internal,
                    "bench verification failed for '" + def.name + "' in pass " + p.name);
          }
        }
      }
    }
  }

  auto median_of = [](std::vector<double> xs) {
    std::sort(xs.begin(), xs.end());
    return xs[xs.size() / 2];
  };
  BenchReport report;
  for (const MvDefinition& def : bench_mvs()) {
    for (int b = 1; b <= static_cast<int>(spec.batches.size()); ++b) {
      BenchEntry e;
      e.mv = def.name;
      e.batch = b;
      const RefreshEntry& chosen = passes[0].entries.at({def.name, b});
      e.strategy = strategy_name(chosen.strategy);
      e.t_incr_ms = median_of(passes[1].times.at({def.name, b}));
      e.t_full_ms = median_of(passes[2].times.at({def.name, b}));
      e.speedup = e.t_incr_ms > 0 ? e.t_full_ms / e.t_incr_ms : 0;
      bool chose_incremental = chosen.strategy != StrategyKind::FullRecompute;
      bool incremental_faster = e.t_incr_ms < e.t_full_ms;
      e.cost_model_correct = chose_incremental == incremental_faster;
      report.entries.push_back(e);
    }
  }
  report.total_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_start).count();
  return report;
}

}  // namespace bench
}  // namespace enzyme

// Command-line front end: define tables and materialized views, load data,
// run refreshes, explain plans and costs, run the benchmark and the random
// differential harness.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "enzyme/enzyme.hpp"

namespace {

using namespace enzyme;

constexpr int kExitUsage = 1;
constexpr int kExitRefreshFailure = 2;
constexpr int kExitMismatch = 3;

Schema parse_schema_arg(const std::string& text) {
  // name:type[:null] pairs, comma separated
  std::vector<Column> cols;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::stringstream fs(item);
    std::string name, type, null_flag;
    std::getline(fs, name, ':');
    std::getline(fs, type, ':');
    std::getline(fs, null_flag, ':');
    if (name.empty() || type.empty())
      raise(ErrorCode::ParseError, "schema entries look like name:type[:null]");
    cols.push_back({name, type_from_name(type), null_flag == "null"});
  }
  return Schema(cols);
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

Value parse_csv_value(const std::string& field, ValueType type) {
  if (field.empty()) return Value::null();
  switch (type) {
    case ValueType::Int64: return Value(static_cast<int64_t>(std::stoll(field)));
    case ValueType::Float64: return Value(std::stod(field));
    case ValueType::String: return Value(field);
    case ValueType::Bool: return Value(field == "true" || field == "1");
    case ValueType::Date: return Value(parse_date(field));
    case ValueType::Timestamp: return Value(parse_timestamp(field));
  }
  return Value::null();
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(field);
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  out.push_back(field);
  return out;
}

Timestamp now_or(const std::string& iso) {
  if (!iso.empty()) return parse_timestamp(iso);
  auto now = std::chrono::system_clock::now().time_since_epoch();
  return Timestamp{std::chrono::duration_cast<std::chrono::microseconds>(now).count()};
}

int cmd_explain(Workspace& ws, const std::string& mv_name, bool as_json) {
  const MvDefinition& def = ws.mv(mv_name);
  Catalog cat = ws.catalog();
  NormalizedPlan np = normalize(def.definition, cat, ws.registry());
  DeterminismReport det = classify_determinism(np.plan, ws.registry());
  auto sigs = ws.registry().signature_digests();

  detail::RefreshSetup setup = detail::prepare_refresh(ws, def, now_or(""));
  Table& backing = ws.store().table(def.backing_table());
  RefreshStrategy strategy;
  std::string change_plan_text;
  bool full_only = setup.full_only;
  if (!full_only) {
    strategy = select_strategy(setup.enabled, setup.ctx, setup.stats, ws.history(), ws.params(), def.name,
                               def.backing_table(), backing.current_version(), def.partition_columns,
                               ws.downstream_count(def.name), !setup.first_refresh);
    if (strategy.change_plan) change_plan_text = render_change_plan(*strategy.change_plan);
  }

  nlohmann::json j;
  j["mv"] = def.name;
  j["plan"] = plan_to_json(def.definition);
  j["normalized"] = plan_to_json(np.plan);
  nlohmann::json fps = nlohmann::json::array();
  for (int v : supported_fingerprint_versions()) {
    Fingerprint fp = fingerprint(np, sigs, v);
    fps.push_back({{"v", fp.version}, {"d", fp.digest}});
  }
  j["fingerprints"] = fps;
  nlohmann::json dets = nlohmann::json::array();
  for (const auto& e : det.entries)
    dets.push_back({{"node", e.node}, {"class", determinism_name(e.classification)}, {"note", e.note}});
  j["determinism"] = dets;
  j["full_recompute_only"] = full_only;
  if (!full_only) {
    j["backing_schema"] = schema_to_json(setup.enabled.backing_schema());
    nlohmann::json top = nlohmann::json::array();
    for (size_t i = 0; i < setup.enabled.top_exprs.size(); ++i)
      top.push_back({{"expr", expr_to_json(setup.enabled.top_exprs[i])}, {"name", setup.enabled.top_names[i]}});
    j["top_level_view"] = top;
    nlohmann::json cands = nlohmann::json::array();
    for (const Candidate& c : strategy.candidates) {
      cands.push_back({{"strategy", strategy_name(c.kind)},
                       {"apply_mode", apply_mode_name(c.mode)},
                       {"total", c.cost.total},
                       {"breakdown", c.cost.breakdown},
                       {"provenance", c.cost.provenance == CostEstimate::Provenance::HistoryMatched
                                          ? "history_matched"
                                          : "default_parameters"}});
    }
    j["candidates"] = cands;
    j["chosen"] = strategy_name(strategy.kind);
    if (strategy.kind == StrategyKind::RowIncremental) j["apply_mode"] = apply_mode_name(strategy.apply_mode);
    j["change_plan"] = change_plan_text;
  }

  if (as_json) {
    std::cout << j.dump(2) << "\n";
    return 0;
  }
  std::cout << "materialized view: " << def.name << "\n\nnormalized plan:\n";
  std::string plan_text;
  render_plan(np.plan, plan_text, 1);
  std::cout << plan_text << "\nfingerprints:\n";
  for (const auto& fp : j["fingerprints"])
    std::cout << "  v" << fp["v"] << "  " << fp["d"].get<std::string>() << "\n";
  std::cout << "\ndeterminism:\n";
  for (const auto& e : det.entries) {
    std::cout << "  " << e.node << ": " << determinism_name(e.classification);
    if (!e.note.empty()) std::cout << " (" << e.note << ")";
    std::cout << "\n";
  }
  if (full_only) {
    std::cout << "\nplan is full-recompute-only\n";
    return 0;
  }
  std::cout << "\nbacking columns:";
  for (const Column& c : setup.enabled.backing_schema().columns()) std::cout << " " << c.name;
  std::cout << "\n\ncandidates:\n";
  for (const Candidate& c : strategy.candidates) {
    std::cout << "  " << strategy_name(c.kind) << " (" << apply_mode_name(c.mode)
              << ") total=" << c.cost.total << " [";
    bool first = true;
    for (const auto& [op, units] : c.cost.breakdown) {
      if (!first) std::cout << ", ";
      std::cout << op << "=" << units;
      first = false;
    }
    std::cout << "]\n";
  }
  std::cout << "\nchosen: " << strategy_name(strategy.kind);
  if (strategy.kind == StrategyKind::RowIncremental)
    std::cout << " (" << apply_mode_name(strategy.apply_mode) << ")";
  std::cout << "\n";
  if (!change_plan_text.empty()) std::cout << "\nchange plan:\n" << change_plan_text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"incremental view maintenance engine"};
  app.require_subcommand(1);

  std::string root_env;
  if (const char* env = std::getenv("ENZYME_ROOT")) root_env = env;

  // create-table
  auto* create_table = app.add_subcommand("create-table", "create a source table");
  std::string ct_root = root_env, ct_name, ct_schema, ct_partition;
  create_table->add_option("name", ct_name)->required();
  create_table->add_option("--root", ct_root)->required(root_env.empty());
  create_table->add_option("--schema", ct_schema, "name:type[:null],... types: int64 float64 string bool date timestamp")
      ->required();
  create_table->add_option("--partition", ct_partition, "partition column names, comma separated");

  // create-mv
  auto* create_mv = app.add_subcommand("create-mv", "create a materialized view");
  std::string cm_root = root_env, cm_name, cm_sql, cm_plan_file, cm_partition;
  create_mv->add_option("name", cm_name)->required();
  create_mv->add_option("--root", cm_root)->required(root_env.empty());
  create_mv->add_option("--sql", cm_sql, "definition in the SQL-like text form");
  create_mv->add_option("--plan", cm_plan_file, "definition as serialized plan JSON");
  create_mv->add_option("--partition", cm_partition);

  // load
  auto* load = app.add_subcommand("load", "load CSV or JSON-lines into a table as one commit");
  std::string ld_root = root_env, ld_table, ld_file, ld_format = "auto";
  load->add_option("table", ld_table)->required();
  load->add_option("file", ld_file)->required();
  load->add_option("--root", ld_root)->required(root_env.empty());
  load->add_option("--format", ld_format, "csv, jsonl, or auto (by extension)");

  // refresh
  auto* refresh = app.add_subcommand("refresh", "refresh the pipeline (or one MV)");
  std::string rf_root = root_env, rf_mv, rf_now;
  bool rf_json = false;
  size_t rf_parallelism = 4;
  refresh->add_option("--root", rf_root)->required(root_env.empty());
  refresh->add_option("--mv", rf_mv, "refresh a single MV instead of the whole pipeline");
  refresh->add_option("--now", rf_now, "refresh clock, ISO-8601 (defaults to wall time)");
  refresh->add_option("--parallelism", rf_parallelism);
  refresh->add_flag("--json", rf_json);

  // explain
  auto* explain = app.add_subcommand("explain", "show the refresh plan for an MV");
  std::string ex_root = root_env, ex_mv;
  bool ex_json = false;
  explain->add_option("mv", ex_mv)->required();
  explain->add_option("--root", ex_root)->required(root_env.empty());
  explain->add_flag("--json", ex_json);

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "run the desk-scale benchmark pipeline");
  std::string bn_scale = "tiny", bn_out, bn_root;
  uint64_t bn_seed = 1;
  bench_cmd->add_option("--scale", bn_scale, "tiny or small");
  bench_cmd->add_option("--seed", bn_seed);
  bench_cmd->add_option("--out", bn_out, "write the report JSON here");
  bench_cmd->add_option("--root", bn_root, "scratch directory (defaults to a temp dir)");

  // rqg
  auto* rqg_cmd = app.add_subcommand("rqg", "random differential correctness harness");
  std::string rq_seeds = "0..100", rq_report;
  size_t rq_rows = 40, rq_batches = 5;
  rqg_cmd->add_option("--seeds", rq_seeds, "seed range, e.g. 0..1000");
  rqg_cmd->add_option("--rows", rq_rows, "max initial rows per table");
  rqg_cmd->add_option("--batches", rq_batches, "max change batches per case");
  rqg_cmd->add_option("--report", rq_report, "write the report JSON here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (create_table->parsed()) {
      Workspace ws(ct_root);
      ws.create_source(ct_name, parse_schema_arg(ct_schema), split_commas(ct_partition));
      std::cout << "created table " << ct_name << "\n";
      return 0;
    }
    if (create_mv->parsed()) {
      if (cm_sql.empty() == cm_plan_file.empty()) {
        std::cerr << "exactly one of --sql or --plan is required\n";
        return kExitUsage;
      }
      Workspace ws(cm_root);
      MvDefinition def;
      def.name = cm_name;
      def.partition_columns = split_commas(cm_partition);
      if (!cm_sql.empty()) {
        def.definition = parse_sql(cm_sql, ws.catalog(), ws.registry());
        def.sql = cm_sql;
      } else {
        std::ifstream in(cm_plan_file);
        if (!in) raise(ErrorCode::IoError, "cannot read " + cm_plan_file);
        def.definition = plan_from_json(nlohmann::json::parse(in));
      }
      ws.create_mv(def);
      std::cout << "created mv " << cm_name << "\n";
      return 0;
    }
    if (load->parsed()) {
      Workspace ws(ld_root);
      Table& t = ws.store().table(ld_table);
      std::ifstream in(ld_file);
      if (!in) raise(ErrorCode::IoError, "cannot read " + ld_file);
      std::string format = ld_format;
      if (format == "auto")
        format = ld_file.size() > 6 && ld_file.substr(ld_file.size() - 6) == ".jsonl" ? "jsonl" : "csv";
      std::vector<Row> rows;
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        Row r;
        if (format == "jsonl") {
          r = row_from_json(nlohmann::json::parse(line), t.schema());
        } else {
          auto fields = split_csv_line(line);
          if (fields.size() != t.schema().size())
            raise(ErrorCode::SchemaMismatch, "csv arity mismatch: " + line);
          for (size_t i = 0; i < fields.size(); ++i)
            r.push_back(parse_csv_value(fields[i], t.schema().at(i).type));
        }
        rows.push_back(std::move(r));
      }
      auto commit = t.commit(rows, nullptr, {});
      std::cout << "loaded " << commit.inserted.size() << " rows into " << ld_table << " at v"
                << commit.version << "\n";
      return 0;
    }
    if (refresh->parsed()) {
      Workspace ws(rf_root);
      RefreshOptions opts;
      opts.now = now_or(rf_now);
      opts.max_parallelism = rf_parallelism;
      RefreshReport report;
      if (rf_mv.empty()) {
        report = run_pipeline(ws, opts);
      } else {
        report.entries.push_back(refresh_mv(ws, rf_mv, opts));
      }
      if (rf_json)
        std::cout << report.to_json().dump(2) << "\n";
      else
        std::cout << report.to_table();
      for (const auto& e : report.entries)
        if (e.outcome == RefreshOutcome::Failed) return kExitRefreshFailure;
      return 0;
    }
    if (explain->parsed()) {
      Workspace ws(ex_root);
      return cmd_explain(ws, ex_mv, ex_json);
    }
    if (bench_cmd->parsed()) {
      bench::BenchSpec spec = bench::generate_bench(bn_scale, bn_seed);
      std::filesystem::path scratch = bn_root.empty()
                                          ? std::filesystem::temp_directory_path() / "enzyme_bench"
                                          : std::filesystem::path(bn_root);
      bench::BenchReport report = bench::run_bench(spec, scratch);
      std::cout << "mv                        batch  strategy             t_incr_ms  t_full_ms  speedup  cost_ok\n";
      for (const auto& e : report.entries) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%-25s %5d  %-20s %9.1f  %9.1f  %7.2f  %s\n", e.mv.c_str(),
                      e.batch, e.strategy.c_str(), e.t_incr_ms, e.t_full_ms, e.speedup,
                      e.cost_model_correct ? "yes" : "no");
        std::cout << buf;
      }
      std::cout << "total " << report.total_ms << " ms\n";
      if (!bn_out.empty()) {
        std::ofstream out(bn_out, std::ios::trunc);
        out << report.to_json().dump(2) << "\n";
      }
      return 0;
    }
    if (rqg_cmd->parsed()) {
      auto dots = rq_seeds.find("..");
      if (dots == std::string::npos) {
        std::cerr << "--seeds expects a range like 0..1000\n";
        return kExitUsage;
      }
      uint64_t begin = std::stoull(rq_seeds.substr(0, dots));
      uint64_t end = std::stoull(rq_seeds.substr(dots + 2));
      rqg::Limits limits;
      limits.max_rows = rq_rows;
      limits.max_batches = rq_batches;
      nlohmann::json failures = nlohmann::json::array();
      size_t ran = 0;
      for (uint64_t seed = begin; seed < end; ++seed) {
        rqg::Case c = rqg::generate_case(seed, limits);
        rqg::Verdict v = rqg::run_differential(c);
        ++ran;
        if (!v.ok) {
          std::cerr << "mismatch at seed " << seed << ": " << v.detail << "\n";
          nlohmann::json f;
          f["seed"] = seed;
          f["detail"] = v.detail;
          if (v.minimized) f["minimized"] = v.minimized->to_json();
          failures.push_back(f);
        }
      }
      nlohmann::json report;
      report["cases"] = ran;
      report["mismatches"] = failures;
      nlohmann::json cov;
      for (const auto& [k, n] : rqg::coverage_report(begin, std::min(end, begin + 200), limits)) cov[k] = n;
      report["coverage_sample"] = cov;
      if (!rq_report.empty()) {
        std::ofstream out(rq_report, std::ios::trunc);
        out << report.dump(2) << "\n";
      }
      std::cout << ran << " cases, " << failures.size() << " mismatches\n";
      return failures.empty() ? 0 : kExitMismatch;
    }
  } catch (const enzyme::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRefreshFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

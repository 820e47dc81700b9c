#include <doctest.h>

#include <random>

#include "enzyme/eval.hpp"
#include "enzyme/normalize.hpp"
#include "enzyme/storage.hpp"
#include "test_util.hpp"

using namespace enzyme;
using testutil::row;

namespace {

struct Fixture {
  testutil::TempDir dir{"eval"};
  TableStore store{dir.path()};

  EvalContext ctx(Timestamp now = Timestamp{0}) {
    EvalContext c;
    c.store = &store;
    c.now = now;
    return c;
  }

  Catalog catalog() const {
    Catalog cat;
    for (const std::string& t : store.table_names()) cat.emplace(t, store.table(t).schema());
    return cat;
  }

  PlanPtr bound(const PlanPtr& p) {
    std::map<std::string, uint64_t> versions;
    for (const std::string& t : store.table_names()) versions[t] = store.table(t).current_version();
    return infer_schema(bind_plan(p, versions), catalog());
  }
};

Value I(int64_t v) { return Value(v); }
Value F(double v) { return Value(v); }
Value S(const char* v) { return Value(v); }

}  // namespace

TEST_CASE("join plus grouped average over a two-table example") {
  Fixture fx;
  fx.store.create_table("customers", Schema({{"customer_id", ValueType::Int64, false},
                                             {"region", ValueType::String, false}}));
  fx.store.create_table("orders", Schema({{"customer_id", ValueType::Int64, false},
                                          {"amount", ValueType::Float64, true}}));
  fx.store.table("customers").commit({row({I(1), S("us-east")})}, nullptr, {});
  fx.store.table("orders").commit({row({I(1), F(100.0)}), row({I(1), F(200.0)})}, nullptr, {});

  PlanPtr p = aggregate(join(JoinKind::Inner, scan("customers"), scan("orders"),
                             binary(BinOp::Eq, col(0), col(2))),
                        {col(1)}, {"region"}, {{AggKind::Avg, col(3), nullptr, false, "avg_amount"}});
  auto ctx = fx.ctx();
  auto result = evaluate(fx.bound(p), ctx);
  REQUIRE(result->size() == 1);
  CHECK(result->rows[0][0] == S("us-east"));
  CHECK(result->rows[0][1] == F(150.0));
}

TEST_CASE("aggregate identities and empty inputs") {
  Fixture fx;
  fx.store.create_table("t", Schema({{"k", ValueType::Int64, false}, {"v", ValueType::Float64, true}}));

  SUBCASE("grouped aggregate over empty input is empty") {
    PlanPtr p = aggregate(scan("t"), {col(0)}, {"k"}, {{AggKind::Sum, col(1), nullptr, false, "s"}});
    auto ctx = fx.ctx();
    CHECK(evaluate(fx.bound(p), ctx)->size() == 0);
  }
  SUBCASE("global aggregate over empty input yields identity row") {
    PlanPtr p = aggregate(scan("t"), {}, {},
                          {{AggKind::Sum, col(1), nullptr, false, "s"},
                           {AggKind::Count, col(1), nullptr, false, "c"},
                           {AggKind::CountStar, nullptr, nullptr, false, "n"},
                           {AggKind::Min, col(1), nullptr, false, "mn"},
                           {AggKind::Avg, col(1), nullptr, false, "av"}});
    auto ctx = fx.ctx();
    auto r = evaluate(fx.bound(p), ctx);
    REQUIRE(r->size() == 1);
    CHECK(r->rows[0][0].is_null());
    CHECK(r->rows[0][1] == I(0));
    CHECK(r->rows[0][2] == I(0));
    CHECK(r->rows[0][3].is_null());
    CHECK(r->rows[0][4].is_null());
  }
  SUBCASE("nulls are skipped by aggregates") {
    fx.store.table("t").commit({row({I(1), F(2.0)}), row({I(1), Value::null()}), row({I(2), Value::null()})},
                               nullptr, {});
    PlanPtr p = aggregate(scan("t"), {col(0)}, {"k"},
                          {{AggKind::Sum, col(1), nullptr, false, "s"},
                           {AggKind::Count, col(1), nullptr, false, "c"},
                           {AggKind::CountStar, nullptr, nullptr, false, "n"}});
    auto ctx = fx.ctx();
    auto r = evaluate(fx.bound(p), ctx);
    REQUIRE(r->size() == 2);
    // group 1: sum 2.0 count 1 n 2; group 2: sum null count 0 n 1
    for (const Row& g : r->rows) {
      if (g[0] == I(1)) {
        CHECK(g[1] == F(2.0));
        CHECK(g[2] == I(1));
        CHECK(g[3] == I(2));
      } else {
        CHECK(g[1].is_null());
        CHECK(g[2] == I(0));
        CHECK(g[3] == I(1));
      }
    }
  }
  SUBCASE("first, collect and stddev are deterministic") {
    fx.store.table("t").commit({row({I(3), F(1.5)}), row({I(1), F(0.5)}), row({I(1), F(2.5)}),
                                row({I(2), F(0.5)})},
                               nullptr, {});
    PlanPtr p = aggregate(scan("t"), {}, {},
                          {{AggKind::First, col(1), col(0), false, "first_v"},
                           {AggKind::CollectList, col(1), nullptr, false, "all_v"},
                           {AggKind::CollectSet, col(1), nullptr, false, "set_v"},
                           {AggKind::Stddev, col(1), nullptr, false, "sd"}});
    auto ctx = fx.ctx();
    auto r = evaluate(fx.bound(p), ctx);
    REQUIRE(r->size() == 1);
    // first by k: k=1 has two rows (0.5, 2.5); value order breaks the tie -> 0.5
    CHECK(r->rows[0][0] == F(0.5));
    CHECK(r->rows[0][1] == S("[0.5,0.5,1.5,2.5]"));
    CHECK(r->rows[0][2] == S("[0.5,1.5,2.5]"));
    // sample stddev of {1.5, 0.5, 2.5, 0.5}
    CHECK(r->rows[0][3].as_float() == doctest::Approx(0.9574271077563381).epsilon(1e-12));
    auto ctx2 = fx.ctx();
    auto r2 = evaluate(fx.bound(p), ctx2);
    CHECK(bag_equal(r->rows, r2->rows));
  }
}

TEST_CASE("time functions are referentially transparent under a bound clock") {
  Fixture fx;
  fx.store.create_table("t", Schema({{"k", ValueType::Int64, false}}));
  fx.store.table("t").commit({row({I(1)})}, nullptr, {});
  PlanPtr p = project(scan("t"), {current_date_expr()}, {"today"});
  Timestamp now = parse_timestamp("2025-01-01T10:00:00Z");
  auto c1 = fx.ctx(now);
  auto r1 = evaluate(fx.bound(p), c1);
  auto c2 = fx.ctx(now);
  auto r2 = evaluate(fx.bound(p), c2);
  REQUIRE(r1->size() == 1);
  CHECK(r1->rows[0][0] == Value(parse_date("2025-01-01")));
  CHECK(bag_equal(r1->rows, r2->rows));
}

TEST_CASE("joins match a nested-loop oracle") {
  std::mt19937_64 rng(123);
  for (int trial = 0; trial < 25; ++trial) {
    Fixture fx;
    fx.store.create_table("l", Schema({{"k", ValueType::Int64, true}, {"a", ValueType::Int64, false}}));
    fx.store.create_table("r", Schema({{"k", ValueType::Int64, true}, {"b", ValueType::Int64, false}}));
    std::vector<Row> lrows, rrows;
    for (size_t i = 0; i < rng() % 20; ++i)
      lrows.push_back(row({rng() % 5 == 0 ? Value::null() : I(static_cast<int64_t>(rng() % 4)),
                           I(static_cast<int64_t>(i))}));
    for (size_t i = 0; i < rng() % 20; ++i)
      rrows.push_back(row({rng() % 5 == 0 ? Value::null() : I(static_cast<int64_t>(rng() % 4)),
                           I(static_cast<int64_t>(100 + i))}));
    fx.store.table("l").commit(lrows, nullptr, {});
    fx.store.table("r").commit(rrows, nullptr, {});

    for (JoinKind kind : {JoinKind::Inner, JoinKind::LeftOuter, JoinKind::RightOuter, JoinKind::FullOuter}) {
      ExprPtr cond = binary(BinOp::Eq, col(0), col(2));
      PlanPtr p = join(kind, scan("l"), scan("r"), cond);
      auto ctx = fx.ctx();
      auto got = evaluate(fx.bound(p), ctx);

      // Oracle: nested loops with explicit null-extension.
      std::vector<Row> expect;
      std::vector<bool> rmatched(rrows.size(), false);
      for (const Row& lr : lrows) {
        bool matched = false;
        for (size_t ri = 0; ri < rrows.size(); ++ri) {
          const Row& rr = rrows[ri];
          if (!lr[0].is_null() && !rr[0].is_null() && lr[0] == rr[0]) {
            expect.push_back(row({lr[0], lr[1], rr[0], rr[1]}));
            matched = true;
            rmatched[ri] = true;
          }
        }
        if (!matched && (kind == JoinKind::LeftOuter || kind == JoinKind::FullOuter))
          expect.push_back(row({lr[0], lr[1], Value::null(), Value::null()}));
      }
      if (kind == JoinKind::RightOuter || kind == JoinKind::FullOuter) {
        for (size_t ri = 0; ri < rrows.size(); ++ri)
          if (!rmatched[ri]) expect.push_back(row({Value::null(), Value::null(), rrows[ri][0], rrows[ri][1]}));
      }
      CHECK(bag_equal(got->rows, expect));

      // Derived row ids are pairwise distinct.
      std::set<std::string> ids(got->row_ids.begin(), got->row_ids.end());
      CHECK(ids.size() == got->row_ids.size());
    }
  }
}

TEST_CASE("union keeps multiplicities, distinct collapses them") {
  Fixture fx;
  fx.store.create_table("t", Schema({{"k", ValueType::Int64, false}}));
  fx.store.table("t").commit({row({I(1)}), row({I(1)}), row({I(2)})}, nullptr, {});

  PlanPtr u = union_all({scan("t"), scan("t")});
  auto ctx = fx.ctx();
  auto ur = evaluate(fx.bound(u), ctx);
  CHECK(ur->size() == 6);
  std::set<std::string> ids(ur->row_ids.begin(), ur->row_ids.end());
  CHECK(ids.size() == 6);

  auto ctx2 = fx.ctx();
  auto dr = evaluate(fx.bound(distinct(u)), ctx2);
  CHECK(dr->size() == 2);
}

TEST_CASE("window functions: ranking determinism and partition aggregates") {
  Fixture fx;
  fx.store.create_table("t", Schema({{"g", ValueType::String, false}, {"v", ValueType::Int64, false}}));
  fx.store.table("t").commit({row({S("a"), I(10)}), row({S("a"), I(10)}), row({S("a"), I(5)}),
                              row({S("b"), I(7)})},
                             nullptr, {});
  PlanPtr p = window(scan("t"), {col(0)}, {{col(1), true}},
                     {{WindowFnKind::RowNumber, nullptr, "rn"},
                      {WindowFnKind::Rank, nullptr, "rk"},
                      {WindowFnKind::DenseRank, nullptr, "drk"},
                      {WindowFnKind::Sum, col(1), "total"},
                      {WindowFnKind::Max, col(1), "mx"}});
  auto ctx = fx.ctx();
  auto r = evaluate(fx.bound(p), ctx);
  REQUIRE(r->size() == 4);
  std::vector<Row> expect = {
      row({S("a"), I(5), I(1), I(1), I(1), I(25), I(10)}),
      row({S("a"), I(10), I(2), I(2), I(2), I(25), I(10)}),
      row({S("a"), I(10), I(3), I(2), I(2), I(25), I(10)}),
      row({S("b"), I(7), I(1), I(1), I(1), I(7), I(7)}),
  };
  CHECK(bag_equal(r->rows, expect));
  auto ctx2 = fx.ctx();
  auto r2 = evaluate(fx.bound(p), ctx2);
  // Ties broken by row identity: byte-identical output across evaluations.
  REQUIRE(r2->size() == r->size());
  for (size_t i = 0; i < r->size(); ++i) CHECK(compare_rows(r->rows[i], r2->rows[i]) == 0);
}

TEST_CASE("three-valued logic in filters") {
  Fixture fx;
  fx.store.create_table("t", Schema({{"v", ValueType::Int64, true}}));
  fx.store.table("t").commit({row({I(1)}), row({Value::null()}), row({I(5)})}, nullptr, {});

  // v > 2: null comparisons drop the row
  auto ctx = fx.ctx();
  auto r = evaluate(fx.bound(filter(scan("t"), binary(BinOp::Gt, col(0), lit_int(2)))), ctx);
  CHECK(r->size() == 1);

  // v IN (1, null): true for 1, null (dropped) for 5 and null
  auto ctx2 = fx.ctx();
  auto r2 = evaluate(
      fx.bound(filter(scan("t"), in_list(col(0), {lit_int(1), lit_null(ValueType::Int64)}))), ctx2);
  CHECK(r2->size() == 1);

  // integer division by zero yields null, which the filter drops
  auto ctx3 = fx.ctx();
  auto r3 = evaluate(
      fx.bound(filter(scan("t"), binary(BinOp::Gt, binary(BinOp::Div, col(0), lit_int(0)), lit_int(0)))),
      ctx3);
  CHECK(r3->size() == 0);
}

TEST_CASE("normalization preserves semantics on random data") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 30; ++trial) {
    Fixture fx;
    fx.store.create_table("t", Schema({{"k", ValueType::Int64, false},
                                       {"v", ValueType::Float64, true},
                                       {"s", ValueType::String, false}}));
    std::vector<Row> rows;
    for (size_t i = 0; i < rng() % 30; ++i)
      rows.push_back(row({I(static_cast<int64_t>(rng() % 6)),
                          rng() % 4 == 0 ? Value::null()
                                         : F(static_cast<double>(static_cast<int64_t>(rng() % 100)) / 4.0),
                          S(rng() % 2 ? "x" : "y")}));
    fx.store.table("t").commit(rows, nullptr, {});

    ExprPtr p1 = binary(BinOp::Gt, col(1), lit_float(5.0));
    ExprPtr p2 = binary(BinOp::Lt, col(0), lit_int(4));
    PlanPtr messy = project(
        filter(filter(with_cte("c", scan("t"),
                               project(cte_ref("c"), {col(0), col(1), col(2)}, {"k", "v", "s"})),
                      p1),
               p2),
        {col(0), binary(BinOp::Add, col(1), binary(BinOp::Mul, lit_float(2.0), lit_float(3.0)))},
        {"k", "vshift"});

    Catalog cat = fx.catalog();
    NormalizedPlan np = normalize(messy, cat);
    auto c1 = fx.ctx();
    auto c2 = fx.ctx();
    auto before = evaluate(fx.bound(messy), c1);
    auto after = evaluate(fx.bound(np.plan), c2);
    CHECK(bag_equal(before->rows, after->rows));
  }
}

TEST_CASE("push_restriction preserves semantics") {
  std::mt19937_64 rng(31);
  Fixture fx;
  fx.store.create_table("a", Schema({{"k", ValueType::Int64, false}, {"v", ValueType::Int64, false}}));
  fx.store.create_table("b", Schema({{"k", ValueType::Int64, false}, {"w", ValueType::Int64, false}}));
  std::vector<Row> arows, brows;
  for (int i = 0; i < 40; ++i)
    arows.push_back(row({I(static_cast<int64_t>(rng() % 8)), I(static_cast<int64_t>(rng() % 50))}));
  for (int i = 0; i < 40; ++i)
    brows.push_back(row({I(static_cast<int64_t>(rng() % 8)), I(static_cast<int64_t>(rng() % 50))}));
  fx.store.table("a").commit(arows, nullptr, {});
  fx.store.table("b").commit(brows, nullptr, {});

  PlanPtr p = aggregate(join(JoinKind::Inner, scan("a"), scan("b"), binary(BinOp::Eq, col(0), col(2))),
                        {col(0)}, {"k"}, {{AggKind::Sum, col(3), nullptr, false, "s"}});
  PlanPtr bound = fx.bound(p);

  auto keys = std::make_shared<std::unordered_set<std::string>>();
  for (int64_t k : {1, 3, 5}) {
    std::string enc;
    encode_value(enc, I(k));
    keys->insert(enc);
  }
  ExprPtr probe = key_probe({col(0)}, keys);

  auto c1 = fx.ctx();
  auto restricted = evaluate(push_restriction(bound, probe), c1);
  // Oracle: filter the full result by the key set.
  auto c2 = fx.ctx();
  auto full = evaluate(bound, c2);
  std::vector<Row> expect;
  for (const Row& r : full->rows)
    if (!r[0].is_null() && (r[0] == I(1) || r[0] == I(3) || r[0] == I(5))) expect.push_back(r);
  CHECK(bag_equal(restricted->rows, expect));

  // The probe must have been pushed below the aggregate (onto scans or join).
  bool pushed_below_agg = false;
  walk_plan(push_restriction(bound, probe), [&](const PlanPtr& n) {
    if (n->kind == PlanKind::Filter && n->predicate->kind == ExprKind::KeyProbe &&
        n->children[0]->kind == PlanKind::Scan)
      pushed_below_agg = true;
  });
  CHECK(pushed_below_agg);
}

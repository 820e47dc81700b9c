#include <doctest.h>

#include <random>

#include "enzyme/changeset.hpp"
#include "enzyme/schema.hpp"
#include "enzyme/storage.hpp"
#include "enzyme/value.hpp"
#include "test_util.hpp"

using namespace enzyme;
using testutil::row;

TEST_CASE("value encoding preserves order and round-trips") {
  std::mt19937_64 rng(7);
  auto check_pair = [&](const Value& a, const Value& b, ValueType t) {
    std::string ea, eb;
    encode_value(ea, a);
    encode_value(eb, b);
    int enc_cmp = ea.compare(eb) < 0 ? -1 : (ea == eb ? 0 : 1);
    CHECK(enc_cmp == compare_values(a, b));
    size_t pos = 0;
    Value back = decode_value(ea, pos, t);
    CHECK(back == a);
    CHECK(pos == ea.size());
  };
  for (int i = 0; i < 500; ++i) {
    int64_t x = static_cast<int64_t>(rng()) >> (rng() % 40);
    int64_t y = static_cast<int64_t>(rng()) >> (rng() % 40);
    check_pair(Value(x), Value(y), ValueType::Int64);
    CHECK((compare_values(Value(x), Value(y)) < 0) == (x < y));
    double fx = static_cast<double>(static_cast<int64_t>(rng() % 800001) - 400000) / 4.0;
    double fy = static_cast<double>(static_cast<int64_t>(rng() % 800001) - 400000) / 4.0;
    check_pair(Value(fx), Value(fy), ValueType::Float64);
    CHECK((compare_values(Value(fx), Value(fy)) < 0) == (fx < fy));
  }
  check_pair(Value(std::string("a\x00z", 3)), Value("a"), ValueType::String);
  check_pair(Value(""), Value("b"), ValueType::String);
  CHECK(compare_values(Value::null(), Value(int64_t{-99999})) < 0);
  CHECK(Value(0.0) == Value(-0.0));
  std::string z1, z2;
  encode_value(z1, Value(0.0));
  encode_value(z2, Value(-0.0));
  CHECK(z1 == z2);
}

TEST_CASE("date and timestamp formatting round-trips") {
  CHECK(format_date(parse_date("2024-02-29")) == "2024-02-29");
  CHECK(format_date(Date{0}) == "1970-01-01");
  CHECK(parse_date("1969-12-31").days == -1);
  Timestamp ts = parse_timestamp("2025-06-01T12:30:45.250000Z");
  CHECK(format_timestamp(ts) == "2025-06-01T12:30:45.250000Z");
  CHECK(parse_timestamp("1970-01-01T00:00:00Z").micros == 0);
}

TEST_CASE("effectivize cancels, keeps net multiplicity, and is idempotent") {
  Schema s({{"a", ValueType::Int64, false}});
  Changeset cs;
  cs.schema = s;

  SUBCASE("insert then delete cancels") {
    cs.add(row({Value(int64_t{1})}), +1);
    cs.add(row({Value(int64_t{1})}), -1);
    CHECK(effectivize(cs).empty());
  }
  SUBCASE("bag semantics keep net +2 as two entries") {
    cs.add(row({Value(int64_t{1})}), +1);
    cs.add(row({Value(int64_t{1})}), +1);
    Changeset e = effectivize(cs);
    REQUIRE(e.size() == 2);
    CHECK(e.entries[0].weight == 1);
    CHECK(e.entries[1].weight == 1);
  }
  SUBCASE("update stays a delete plus an insert") {
    cs.add(row({Value(int64_t{1})}), -1);
    cs.add(row({Value(int64_t{2})}), +1);
    Changeset e = effectivize(cs);
    CHECK(e.size() == 2);
  }
  SUBCASE("distinct row ids do not cancel, keeping deletions addressable") {
    cs.add(row({Value(int64_t{1})}), -1, "X");
    cs.add(row({Value(int64_t{1})}), +1, "Y");
    Changeset e = effectivize(cs);
    CHECK(e.size() == 2);
    // Net application to a bag is unchanged either way.
    std::vector<Row> bag = {row({Value(int64_t{1})})};
    CHECK(apply_changeset(bag, e));
    CHECK(bag.size() == 1);
  }
}

TEST_CASE("effectivize laws on random changesets") {
  std::mt19937_64 rng(42);
  Schema s({{"a", ValueType::Int64, false}, {"b", ValueType::String, true}});
  for (int trial = 0; trial < 300; ++trial) {
    Changeset cs;
    cs.schema = s;
    std::vector<Row> base;
    size_t n = rng() % 20;
    for (size_t i = 0; i < n; ++i) {
      Row r = row({Value(static_cast<int64_t>(rng() % 4)),
                   (rng() % 4 == 0) ? Value::null() : Value(std::string(1, 'a' + rng() % 3))});
      base.push_back(r);
    }
    // Changes: deletions drawn from the base so application stays legal.
    std::vector<Row> current = base;
    size_t m = rng() % 12;
    for (size_t i = 0; i < m; ++i) {
      if (!current.empty() && rng() % 2 == 0) {
        size_t at = rng() % current.size();
        cs.add(current[at], -1);
        current.erase(current.begin() + at);
      } else {
        Row r = row({Value(static_cast<int64_t>(rng() % 4)),
                     (rng() % 4 == 0) ? Value::null() : Value(std::string(1, 'a' + rng() % 3))});
        cs.add(r, +1);
        current.push_back(r);
      }
    }
    Changeset eff = effectivize(cs);
    // Idempotent.
    Changeset eff2 = effectivize(eff);
    CHECK(eff2.size() == eff.size());
    // Application-equivalent.
    std::vector<Row> via_raw = base, via_eff = base;
    REQUIRE(apply_changeset(via_raw, cs));
    REQUIRE(apply_changeset(via_eff, eff));
    CHECK(bag_equal(via_raw, via_eff));
    // No cancellable pairs remain.
    std::map<std::string, long> nets;
    for (const auto& e : eff.entries) nets[encode_values(e.row) + "\x01" + e.row_id] += e.weight;
    for (const auto& [k, netc] : nets) CHECK(netc != 0);
  }
}

TEST_CASE("table store create, commit, snapshot") {
  testutil::TempDir dir("store");
  TableStore store(dir.path());
  Schema orders({{"customer_id", ValueType::Int64, false},
                 {"amount", ValueType::Float64, true},
                 {"date", ValueType::Date, false}});

  Table& t = store.create_table("orders", orders, {});
  CHECK(t.current_version() == 0);
  CHECK(t.snapshot(0)->size() == 0);

  CHECK_THROWS_AS(store.create_table("orders", orders, {}), Error);
  CHECK_THROWS_AS(store.create_table("bad", orders, {"nonexistent"}), Error);

  SUBCASE("empty commit still advances the version") {
    auto c = t.commit({}, nullptr, {});
    CHECK(c.version == 1);
    CHECK(t.current_version() == 1);
    CHECK(t.snapshot(1)->size() == 0);
  }

  SUBCASE("inserts get fresh row ids; snapshots are stable under later commits") {
    Row a = row({Value(int64_t{1}), Value(100.0), Value(parse_date("2025-01-02"))});
    Row b = row({Value(int64_t{2}), Value(50.0), Value(parse_date("2025-01-03"))});
    auto c1 = t.commit({a, b}, nullptr, {});
    CHECK(c1.inserted.size() == 2);
    CHECK(c1.inserted[0].first != c1.inserted[1].first);
    auto snap1 = t.snapshot(1);
    CHECK(snap1->size() == 2);

    //

    auto c2 = t.commit({}, [&](const Row& r) { return r[0].as_int() == 1; }, {});
    CHECK(c2.deleted.size() == 1);
    CHECK(t.snapshot(2)->size() == 1);
    CHECK(t.snapshot(1)->size() == 2);  // time travel unaffected

    SUBCASE("change feed concatenates commits without effectivizing") {
      Changeset feed = t.change_feed(0, 2);
      CHECK(feed.size() == 3);  // 2 inserts + 1 delete
      CHECK(t.change_feed(1, 1).empty());
      CHECK_THROWS_AS(t.change_feed(0, 99), Error);

      // CDF soundness: snapshot(0) + feed == snapshot(2).
      std::vector<Row> bag = t.snapshot(0)->rows;
      REQUIRE(apply_changeset(bag, feed));
      CHECK(bag_equal(bag, t.snapshot(2)->rows));
    }

    SUBCASE("insert then delete of the same row appears twice in the feed") {
      Row c = row({Value(int64_t{3}), Value(9.0), Value(parse_date("2025-01-04"))});
      t.commit({c}, nullptr, {});
      t.commit({}, [&](const Row& r) { return r[0].as_int() == 3; }, {});
      Changeset feed = t.change_feed(2, 4);
      CHECK(feed.size() == 2);
      CHECK(effectivize(feed).empty());
    }

    SUBCASE("update_where keeps row ids stable") {
      auto c3 = t.update_where([&](const Row& r) { return r[0].as_int() == 2; },
                               [](const Row& r) {
                                 Row u = r;
                                 u[1] = Value(999.0);
                                 return u;
                               });
      REQUIRE(c3.inserted.size() == 1);
      REQUIRE(c3.deleted.size() == 1);
      CHECK(c3.inserted[0].first == c3.deleted[0].first);
    }

    SUBCASE("store reopens from disk with identical state") {
      TableStore reopened(dir.path());
      Table& t2 = reopened.table("orders");
      CHECK(t2.current_version() == 2);
      CHECK(bag_equal(t2.snapshot(2)->rows, t.snapshot(2)->rows));
      CHECK(t2.change_feed(0, 2).size() == 3);
      // The row id counter continues rather than restarting.
      auto c = t2.commit({a}, nullptr, {});
      CHECK(c.inserted[0].first > 2);
    }
  }

  SUBCASE("schema mismatch rejected") {
    CHECK_THROWS_AS(t.commit({row({Value(int64_t{1})})}, nullptr, {}), Error);
    CHECK_THROWS_AS(
        t.commit({row({Value(1.5), Value(1.0), Value(parse_date("2025-01-01"))})}, nullptr, {}), Error);
  }
}

TEST_CASE("replay property on random histories") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    testutil::TempDir dir("replay");
    TableStore store(dir.path());
    Schema s({{"k", ValueType::Int64, false}, {"v", ValueType::Int64, true}});
    Table& t = store.create_table("t", s, {});

    // Reference fold of the commit log.
    std::vector<std::pair<int64_t, Row>> live;
    std::vector<std::vector<Row>> states = {{}};
    for (int step = 0; step < 8; ++step) {
      std::vector<Row> ins;
      for (size_t i = 0; i < rng() % 4; ++i)
        ins.push_back(row({Value(static_cast<int64_t>(rng() % 5)), Value(static_cast<int64_t>(rng() % 100))}));
      int64_t del_key = static_cast<int64_t>(rng() % 5);
      bool do_delete = rng() % 2 == 0;
      auto c = t.commit(
          ins, do_delete ? std::function<bool(const Row&)>([&](const Row& r) { return r[0].as_int() == del_key; })
                         : std::function<bool(const Row&)>(nullptr),
          {});
      for (const auto& [id, r] : c.deleted)
        for (auto it = live.begin(); it != live.end(); ++it)
          if (it->first == id) {
            live.erase(it);
            break;
          }
      for (const auto& [id, r] : c.inserted) live.emplace_back(id, r);
      std::vector<Row> state;
      for (auto& [id, r] : live) state.push_back(r);
      states.push_back(state);
    }
    for (Version v = 0; v <= t.current_version(); ++v) CHECK(bag_equal(t.snapshot(v)->rows, states[v]));

    // CDF soundness on random (a, b).
    Version a = rng() % (t.current_version() + 1);
    Version b = a + rng() % (t.current_version() - a + 1);
    std::vector<Row> bag = t.snapshot(a)->rows;
    REQUIRE(apply_changeset(bag, t.change_feed(a, b)));
    CHECK(bag_equal(bag, t.snapshot(b)->rows));
  }
}

TEST_CASE("row id uniqueness across history") {
  testutil::TempDir dir("ids");
  TableStore store(dir.path());
  Schema s({{"k", ValueType::Int64, false}});
  Table& t = store.create_table("t", s, {});
  std::set<int64_t> seen;
  for (int i = 0; i < 5; ++i) {
    auto c = t.commit({row({Value(int64_t{i})}), row({Value(int64_t{i + 10})})}, nullptr, {});
    for (const auto& [id, r] : c.inserted) CHECK(seen.insert(id).second);
  }
}

TEST_CASE("crash between commit file and meta write leaves prior version visible") {
  testutil::TempDir dir("crash");
  Schema s({{"k", ValueType::Int64, false}});
  {
    TableStore store(dir.path());
    Table& t = store.create_table("t", s, {});
    t.commit({row({Value(int64_t{1})})}, nullptr, {});
    ScopedFault fault("storage.before_meta_write");
    CHECK_THROWS_AS(t.commit({row({Value(int64_t{2})})}, nullptr, {}), Error);
  }
  TableStore reopened(dir.path());
  Table& t = reopened.table("t");
  CHECK(t.current_version() == 1);
  CHECK(t.snapshot(1)->size() == 1);
  // Recovery: the next commit overwrites the orphan file.
  t.commit({row({Value(int64_t{3})})}, nullptr, {});
  CHECK(t.current_version() == 2);
  CHECK(t.snapshot(2)->size() == 2);
}

#include <doctest.h>

#include "enzyme/builtins.hpp"
#include "enzyme/fingerprint.hpp"
#include "enzyme/normalize.hpp"
#include "enzyme/plan.hpp"
#include "test_util.hpp"

using namespace enzyme;

namespace {

Catalog demo_catalog() {
  Catalog cat;
  cat.emplace("customers", Schema({{"customer_id", ValueType::Int64, false},
                                   {"region", ValueType::String, false}}));
  cat.emplace("orders", Schema({{"customer_id", ValueType::Int64, false},
                                {"amount", ValueType::Float64, true},
                                {"date", ValueType::Date, false}}));
  return cat;
}

// select region, avg(amount) from customers join orders using(customer_id)
// group by region having region in (...)
PlanPtr regional_avg_plan() {
  PlanPtr j = join(JoinKind::Inner, scan("customers"), scan("orders"),
                   binary(BinOp::Eq, col(0), col(2)));
  PlanPtr agg = aggregate(j, {col(1)}, {"region"},
                          {{AggKind::Avg, col(3), nullptr, false, "avg_order_amount"}});
  return filter(agg, in_list(col(0), {lit_string("us-east"), lit_string("us-west"), lit_string("asia")}));
}

}  // namespace

TEST_CASE("schema inference") {
  Catalog cat = demo_catalog();

  SUBCASE("scan yields the table schema") {
    PlanPtr p = infer_schema(scan("orders"), cat);
    CHECK(p->out_schema().size() == 3);
    CHECK(p->out_schema().at(1).name == "amount");
  }
  SUBCASE("projection types arithmetic") {
    PlanPtr p = infer_schema(project(scan("orders"), {binary(BinOp::Mul, col(1), lit_int(2))}, {"double_amount"}),
                             cat);
    CHECK(p->out_schema().at(0).type == ValueType::Float64);
  }
  SUBCASE("type errors are rejected") {
    CHECK_THROWS_AS(infer_schema(filter(scan("customers"), binary(BinOp::Eq, col(1), lit_int(3))), cat),
                    Error);
    CHECK_THROWS_AS(infer_schema(scan("missing"), cat), Error);
    CHECK_THROWS_AS(infer_schema(project(scan("orders"), {col(9)}, {"x"}), cat), Error);
  }
  SUBCASE("join dedupes column names and marks outer sides nullable") {
    PlanPtr p = infer_schema(join(JoinKind::LeftOuter, scan("customers"), scan("orders"),
                                  binary(BinOp::Eq, col(0), col(2))),
                             cat);
    CHECK(p->out_schema().size() == 5);
    CHECK(p->out_schema().at(0).name != p->out_schema().at(2).name);
    CHECK(p->out_schema().at(2).nullable);  // right side of a left join
  }
  SUBCASE("inference is deterministic and structural") {
    PlanPtr a = infer_schema(regional_avg_plan(), cat);
    PlanPtr b = infer_schema(regional_avg_plan(), cat);
    CHECK(plan_serialize(a) == plan_serialize(b));
  }
}

TEST_CASE("plan JSON round-trips") {
  Catalog cat = demo_catalog();
  PlanPtr p = infer_schema(regional_avg_plan(), cat);
  std::string s = plan_serialize(p);
  PlanPtr back = plan_from_json(nlohmann::json::parse(s));
  CHECK(plan_serialize(infer_schema(back, cat)) == s);

  PlanPtr w = window(scan("orders"), {col(0)}, {{col(1), false}},
                     {{WindowFnKind::RowNumber, nullptr, "rn"}, {WindowFnKind::Sum, col(1), "total"}});
  std::string ws = plan_serialize(w);
  CHECK(plan_serialize(plan_from_json(nlohmann::json::parse(ws))) == ws);
}

TEST_CASE("determinism classification") {
  Catalog cat = demo_catalog();

  SUBCASE("plain relational plan is deterministic everywhere") {
    DeterminismReport r = classify_determinism(infer_schema(regional_avg_plan(), cat));
    CHECK(!r.full_recompute_only);
    CHECK(!r.has_time_dependent);
  }
  SUBCASE("rand() makes the plan opaque") {
    PlanPtr p = infer_schema(filter(scan("orders"), binary(BinOp::Gt, func("rand", {}), lit_float(0.5))), cat);
    DeterminismReport r = classify_determinism(p);
    CHECK(r.full_recompute_only);
  }
  SUBCASE("current_date in a filter is temporal-filter eligible") {
    ExprPtr pred = binary(BinOp::Ge, col(2),
                          binary(BinOp::Sub, current_date_expr(), interval_days_expr(30)));
    DeterminismReport r = classify_determinism(infer_schema(filter(scan("orders"), pred), cat));
    CHECK(r.has_time_dependent);
    CHECK(!r.full_recompute_only);
  }
  SUBCASE("current_date outside a filter forces full recompute") {
    PlanPtr p = infer_schema(project(scan("orders"), {current_date_expr()}, {"as_of"}), cat);
    CHECK(classify_determinism(p).full_recompute_only);
  }
  SUBCASE("collect_set is rewritable, not opaque") {
    PlanPtr p = infer_schema(
        aggregate(scan("orders"), {}, {}, {{AggKind::CollectSet, col(0), nullptr, false, "ids"}}), cat);
    DeterminismReport r = classify_determinism(p);
    CHECK(!r.full_recompute_only);
    CHECK(r.has_rewritable);
  }
}

TEST_CASE("normalizer rules") {
  Catalog cat = demo_catalog();

  SUBCASE("adjacent filters merge into one conjunction") {
    PlanPtr p = filter(filter(scan("orders"), binary(BinOp::Lt, col(0), lit_int(2))),
                       binary(BinOp::Gt, col(1), lit_float(1.0)));
    NormalizedPlan np = normalize(p, cat);
    CHECK(np.plan->kind == PlanKind::Filter);
    CHECK(np.plan->children[0]->kind == PlanKind::Scan);
    CHECK(np.plan->predicate->op == BinOp::And);
  }
  SUBCASE("stacked projections collapse") {
    PlanPtr inner = project(scan("orders"), {col(0), col(1)}, {"c", "a"});
    PlanPtr outer = project(inner, {col(0)}, {"c"});
    NormalizedPlan np = normalize(outer, cat);
    CHECK(np.plan->kind == PlanKind::Project);
    CHECK(np.plan->children[0]->kind == PlanKind::Scan);
  }
  SUBCASE("identity projection is removed") {
    PlanPtr p = project(scan("orders"), {col(0), col(1), col(2)}, {"customer_id", "amount", "date"});
    NormalizedPlan np = normalize(p, cat);
    CHECK(np.plan->kind == PlanKind::Scan);
  }
  SUBCASE("literal-only subexpressions fold, except time functions") {
    PlanPtr p = filter(scan("orders"),
                       binary(BinOp::Gt, col(1),
                              binary(BinOp::Add, lit_float(1.0), lit_float(2.0))));
    NormalizedPlan np = normalize(p, cat);
    CHECK(np.plan->predicate->children[1]->kind == ExprKind::Literal);
    CHECK(np.plan->predicate->children[1]->literal.as_float() == 3.0);

    ExprPtr temporal = binary(BinOp::Ge, col(2),
                              binary(BinOp::Sub, current_date_expr(), interval_days_expr(30)));
    NormalizedPlan nt = normalize(filter(scan("orders"), temporal), cat);
    bool still_time_dependent = expr_time_dependent(nt.plan->predicate);
    CHECK(still_time_dependent);
  }
  SUBCASE("division by zero folds to null, not an error") {
    PlanPtr p = project(scan("orders"), {binary(BinOp::Div, lit_int(1), lit_int(0))}, {"x"});
    NormalizedPlan np = normalize(p, cat);
    CHECK(np.plan->exprs[0]->kind == ExprKind::Literal);
    CHECK(np.plan->exprs[0]->literal.is_null());
  }
  SUBCASE("nested unions flatten") {
    PlanPtr u = union_all({union_all({scan("orders"), scan("orders")}), scan("orders")});
    NormalizedPlan np = normalize(u, cat);
    CHECK(np.plan->children.size() == 3);
  }
  SUBCASE("CTEs inline") {
    PlanPtr body = filter(cte_ref("t"), binary(BinOp::Gt, col(1), lit_float(0.0)));
    PlanPtr p = with_cte("t", scan("orders"), body);
    NormalizedPlan np = normalize(p, cat);
    bool has_cte = false;
    walk_plan(np.plan, [&](const PlanPtr& n) {
      if (n->kind == PlanKind::With || n->kind == PlanKind::CteRef) has_cte = true;
    });
    CHECK(!has_cte);
  }
  SUBCASE("idempotent and byte-stable") {
    PlanPtr p = regional_avg_plan();
    NormalizedPlan once = normalize(p, cat);
    NormalizedPlan twice = normalize(once.plan, cat);
    CHECK(plan_serialize(once.plan) == plan_serialize(twice.plan));
    NormalizedPlan again = normalize(p, cat);
    CHECK(plan_serialize(once.plan) == plan_serialize(again.plan));
  }
}

TEST_CASE("fingerprints") {
  Catalog cat = demo_catalog();
  auto sigs = FunctionRegistry::builtins().signature_digests();
  auto fp = [&](const PlanPtr& p, int version = kFingerprintVersion) {
    return fingerprint(normalize(p, cat), sigs, version);
  };

  SUBCASE("deterministic across parses") {
    CHECK(fp(regional_avg_plan()).digest == fp(regional_avg_plan()).digest);
    CHECK(fp(regional_avg_plan()).digest.size() == 64);
  }
  SUBCASE("conjunct order and filter stacking are cosmetic") {
    ExprPtr a = binary(BinOp::Gt, col(1), lit_float(1.0));
    ExprPtr b = binary(BinOp::Lt, col(0), lit_int(5));
    PlanPtr p1 = filter(scan("orders"), binary(BinOp::And, a, b));
    PlanPtr p2 = filter(scan("orders"), binary(BinOp::And, b, a));
    PlanPtr p3 = filter(filter(scan("orders"), b), a);
    CHECK(fp(p1).digest == fp(p2).digest);
    CHECK(fp(p1).digest == fp(p3).digest);
  }
  SUBCASE("commutative join reordering is cosmetic; outer joins are not commutative") {
    ExprPtr cond1 = binary(BinOp::Eq, col(0), col(2));   // customers x orders
    ExprPtr cond2 = binary(BinOp::Eq, col(3), col(0));   // orders x customers
    PlanPtr j1 = project(join(JoinKind::Inner, scan("customers"), scan("orders"), cond1),
                         {col(1), col(3)}, {"region", "amount"});
    PlanPtr j2 = project(join(JoinKind::Inner, scan("orders"), scan("customers"), cond2),
                         {col(4), col(1)}, {"region", "amount"});
    CHECK(fp(j1).digest == fp(j2).digest);

    PlanPtr l1 = join(JoinKind::LeftOuter, scan("customers"), scan("orders"), cond1);
    PlanPtr l2 = join(JoinKind::LeftOuter, scan("orders"), scan("customers"), cond2);
    CHECK(fp(l1).digest != fp(l2).digest);
  }
  SUBCASE("operand order of commutative expressions is cosmetic") {
    PlanPtr p1 = project(scan("orders"), {binary(BinOp::Add, col(0), col(1))}, {"x"});
    PlanPtr p2 = project(scan("orders"), {binary(BinOp::Add, col(1), col(0))}, {"x"});
    CHECK(fp(p1).digest == fp(p2).digest);
  }
  SUBCASE("CTE refactors and redundant projections are cosmetic") {
    PlanPtr direct = filter(scan("orders"), binary(BinOp::Gt, col(1), lit_float(0.0)));
    PlanPtr via_cte = with_cte("t", scan("orders"),
                               filter(cte_ref("t"), binary(BinOp::Gt, col(1), lit_float(0.0))));
    PlanPtr via_proj = filter(project(scan("orders"), {col(0), col(1), col(2)},
                                      {"customer_id", "amount", "date"}),
                              binary(BinOp::Gt, col(1), lit_float(0.0)));
    CHECK(fp(direct).digest == fp(via_cte).digest);
    CHECK(fp(direct).digest == fp(via_proj).digest);
  }
  SUBCASE("semantic edits change the fingerprint") {
    PlanPtr base = filter(scan("orders"), binary(BinOp::Gt, col(1), lit_float(1.0)));
    PlanPtr edit_literal = filter(scan("orders"), binary(BinOp::Gt, col(1), lit_float(2.0)));
    PlanPtr edit_op = filter(scan("orders"), binary(BinOp::Ge, col(1), lit_float(1.0)));
    PlanPtr edit_col = filter(scan("orders"), binary(BinOp::Gt, binary(BinOp::Mul, col(1), lit_float(1.0)),
                                                     lit_float(1.0)));
    CHECK(fp(base).digest != fp(edit_literal).digest);
    CHECK(fp(base).digest != fp(edit_op).digest);
    CHECK(fp(base).digest != fp(edit_col).digest);
  }
  SUBCASE("self-join sides remain distinguishable") {
    ExprPtr cond = binary(BinOp::Lt, col(0), col(2));
    PlanPtr left_filter =
        filter(join(JoinKind::Inner, scan("customers"), scan("customers"), cond),
               binary(BinOp::Eq, col(1), lit_string("x")));
    PlanPtr right_filter =
        filter(join(JoinKind::Inner, scan("customers"), scan("customers"), cond),
               binary(BinOp::Eq, col(3), lit_string("x")));
    CHECK(fp(left_filter).digest != fp(right_filter).digest);
  }
  SUBCASE("UDF signature changes flip the fingerprint") {
    PlanPtr p = project(scan("orders"), {func("abs", {col(1)})}, {"a"});
    auto sigs2 = sigs;
    sigs2["abs"] = "builtin:abs:2";
    CHECK(fingerprint(normalize(p, cat), sigs).digest != fingerprint(normalize(p, cat), sigs2).digest);
    auto missing = sigs;
    missing.erase("abs");
    CHECK_THROWS_AS(fingerprint(normalize(p, cat), missing), Error);
  }
  SUBCASE("multi-version history upgrade without recompute") {
    NormalizedPlan np = normalize(regional_avg_plan(), cat);
    // An engine that only supported v101 recorded its digest.
    FingerprintHistory h;
    h.entries.push_back(fingerprint(np, sigs, 101));
    // The upgraded engine supports {102, 101} and must match without change.
    UnchangedCheck chk = check_unchanged(h, np, sigs, {102, 101});
    CHECK(chk.unchanged);
    CHECK(chk.matched_version == 101);
    REQUIRE(chk.updated.find(102) != nullptr);
    // Later builds that dropped v101 still match via the recorded v102.
    UnchangedCheck chk2 = check_unchanged(chk.updated, np, sigs, {102});
    CHECK(chk2.unchanged);
    // Distinct versions produce distinct digests.
    CHECK(fingerprint(np, sigs, 101).digest != fingerprint(np, sigs, 102).digest);
  }
  SUBCASE("empty history means changed") {
    NormalizedPlan np = normalize(regional_avg_plan(), cat);
    CHECK(!check_unchanged(FingerprintHistory{}, np, sigs).unchanged);
  }
}

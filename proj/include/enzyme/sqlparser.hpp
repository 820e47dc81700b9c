#pragma once

#include <cctype>
#include <cstring>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "enzyme/builtins.hpp"
#include "enzyme/plan.hpp"

namespace enzyme {

// A small SQL-like front end covering exactly the supported plan grammar:
// SELECT [DISTINCT] items FROM t [JOIN u ON cond]... [WHERE p]
// [GROUP BY keys [HAVING h]] [UNION ALL select]..., WITH ctes, window
// functions via OVER (PARTITION BY ... ORDER BY ...). Plan JSON is the
// escape hatch for anything else.

namespace sqldetail {

struct Token {
  enum class Kind { Ident, Number, String, Op, End } kind = Kind::End;
  std::string text;
  size_t pos = 0;
};

class Lexer {
public:
  explicit Lexer(std::string input) : in_(std::move(input)) { advance(); }

  const Token& peek() const { return tok_; }

  Token next() {
    Token t = tok_;
    advance();
    return t;
  }

  bool accept(const std::string& word) {
    if (is(word)) {
      advance();
      return true;
    }
    return false;
  }

  void expect(const std::string& word) {
    if (!accept(word))
      raise(ErrorCode::ParseError,
            "expected '" + word + "' near '" + tok_.text + "' at offset " + std::to_string(tok_.pos));
  }

  bool is(const std::string& word) const {
    if (tok_.kind == Token::Kind::Op) return tok_.text == word;
    if (tok_.kind != Token::Kind::Ident) return false;
    return upper(tok_.text) == upper(word);
  }

  static std::string upper(std::string s) {
    for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
  }

private:
  void advance() {
    while (i_ < in_.size() && std::isspace(static_cast<unsigned char>(in_[i_]))) ++i_;
    tok_ = Token{};
    tok_.pos = i_;
    if (i_ >= in_.size()) return;
    char c = in_[i_];
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      size_t s = i_;
      while (i_ < in_.size() && (std::isalnum(static_cast<unsigned char>(in_[i_])) || in_[i_] == '_')) ++i_;
      tok_ = {Token::Kind::Ident, in_.substr(s, i_ - s), s};
      return;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) ||
        (c == '.' && i_ + 1 < in_.size() && std::isdigit(static_cast<unsigned char>(in_[i_ + 1])))) {
      size_t s = i_;
      while (i_ < in_.size() && (std::isdigit(static_cast<unsigned char>(in_[i_])) || in_[i_] == '.')) ++i_;
      tok_ = {Token::Kind::Number, in_.substr(s, i_ - s), s};
      return;
    }
    if (c == '\'') {
      std::string out;
      ++i_;
      while (i_ < in_.size() && in_[i_] != '\'') out.push_back(in_[i_++]);
      if (i_ >= in_.size()) raise(ErrorCode::ParseError, "unterminated string literal");
      ++i_;
      tok_ = {Token::Kind::String, out, tok_.pos};
      return;
    }
    static const char* multi[] = {"<=>", "<=", ">=", "!=", "<>"};
    for (const char* m : multi) {
      size_t len = std::strlen(m);
      if (in_.compare(i_, len, m) == 0) {
        tok_ = {Token::Kind::Op, m, i_};
        i_ += len;
        return;
      }
    }
    tok_ = {Token::Kind::Op, std::string(1, c), i_};
    ++i_;
  }

  std::string in_;
  size_t i_ = 0;
  Token tok_;
};

/// Column scope: qualified and bare names to ordinals in the current row.
struct Scope {
  std::vector<std::pair<std::string, std::string>> columns;  // (qualifier, name)

  std::optional<size_t> resolve(const std::string& qual, const std::string& name) const {
    std::optional<size_t> found;
    for (size_t i = 0; i < columns.size(); ++i) {
      if (!qual.empty() && Lexer::upper(columns[i].first) != Lexer::upper(qual)) continue;
      if (Lexer::upper(columns[i].second) != Lexer::upper(name)) continue;
      if (found) raise(ErrorCode::ParseError, "ambiguous column '" + name + "'");
      found = i;
    }
    return found;
  }
};

struct AggCall {
  AggregateSpec spec;
  size_t placeholder = 0;  // ordinal the rewritten expression refers to
};

struct WindowCall {
  WindowFnSpec spec;
  std::vector<ExprPtr> partition;
  std::vector<SortKey> order;
};

class Parser {
public:
  Parser(const std::string& text, const Catalog& catalog, const FunctionRegistry& registry)
      : lex_(text), catalog_(catalog), registry_(registry) {}

  PlanPtr parse() {
    PlanPtr p = parse_query();
    if (lex_.peek().kind != Token::Kind::End)
      raise(ErrorCode::ParseError, "trailing input near '" + lex_.peek().text + "'");
    return p;
  }

private:
  PlanPtr parse_query() {
    std::vector<std::pair<std::string, PlanPtr>> ctes;
    if (lex_.accept("WITH")) {
      do {
        std::string name = ident("CTE name");
        lex_.expect("AS");
        lex_.expect("(");
        PlanPtr def = parse_query();
        lex_.expect(")");
        cte_schemas_[name] = infer_for(def);
        ctes.emplace_back(name, def);
      } while (lex_.accept(","));
    }
    PlanPtr p = parse_select();
    while (lex_.is("UNION")) {
      lex_.expect("UNION");
      lex_.expect("ALL");
      PlanPtr rhs = parse_select();
      p = p->kind == PlanKind::UnionAll ? union_all([&] {
        auto kids = p->children;
        kids.push_back(rhs);
        return kids;
      }())
                                        : union_all({p, rhs});
    }
    for (auto it = ctes.rbegin(); it != ctes.rend(); ++it) p = with_cte(it->first, it->second, p);
    return p;
  }

  PlanPtr parse_select() {
    lex_.expect("SELECT");
    bool is_distinct = lex_.accept("DISTINCT");

    // Select items are parsed after FROM resolves the scope; remember the
    // token stream position by re-lexing is avoided by collecting raw items.
    std::vector<std::pair<std::string, std::string>> raw_items;  // (text, alias)
    std::vector<std::string> item_texts = collect_select_items();

    lex_.expect("FROM");
    Scope scope;
    PlanPtr source = parse_table_ref(scope);
    while (true) {
      JoinKind kind;
      if (lex_.accept("JOIN")) {
        kind = JoinKind::Inner;
      } else if (lex_.is("INNER")) {
        lex_.expect("INNER");
        lex_.expect("JOIN");
        kind = JoinKind::Inner;
      } else if (lex_.is("LEFT")) {
        lex_.expect("LEFT");
        lex_.accept("OUTER");
        lex_.expect("JOIN");
        kind = JoinKind::LeftOuter;
      } else if (lex_.is("RIGHT")) {
        lex_.expect("RIGHT");
        lex_.accept("OUTER");
        lex_.expect("JOIN");
        kind = JoinKind::RightOuter;
      } else if (lex_.is("FULL")) {
        lex_.expect("FULL");
        lex_.accept("OUTER");
        lex_.expect("JOIN");
        kind = JoinKind::FullOuter;
      } else {
        break;
      }
      Scope right_scope;
      PlanPtr right = parse_table_ref(right_scope);
      size_t offset = scope.columns.size();
      for (auto& c : right_scope.columns) scope.columns.push_back(c);
      lex_.expect("ON");
      ExprPtr cond = parse_expr(scope, nullptr, nullptr);
      (void)offset;
      source = join(kind, source, right, cond);
    }

    scope_width_ = scope.columns.size();

    ExprPtr where;
    if (lex_.accept("WHERE")) where = parse_expr(scope, nullptr, nullptr);

    std::vector<ExprPtr> group_keys;
    std::vector<std::string> group_texts;
    ExprPtr having_raw;
    bool has_group = false;
    if (lex_.accept("GROUP")) {
      lex_.expect("BY");
      has_group = true;
      do {
        size_t start = 0;
        group_keys.push_back(parse_expr(scope, nullptr, nullptr, &start));
      } while (lex_.accept(","));
    }

    // Parse the deferred select items against the resolved scope.
    std::vector<AggCall> agg_calls;
    std::vector<WindowCall> window_calls;
    std::vector<ExprPtr> items;
    std::vector<std::string> names;
    for (const std::string& text : item_texts) {
      Lexer saved = lex_;
      lex_ = Lexer(text);
      std::string alias;
      ExprPtr e = parse_expr(scope, &agg_calls, &window_calls);
      if (lex_.accept("AS")) alias = ident("alias");
      if (lex_.peek().kind != Token::Kind::End)
        raise(ErrorCode::ParseError, "unexpected input in select item '" + text + "'");
      lex_ = saved;
      if (alias.empty()) alias = default_name(text, names.size());
      items.push_back(e);
      names.push_back(alias);
    }

    if (lex_.accept("HAVING")) {
      if (!has_group) raise(ErrorCode::ParseError, "HAVING without GROUP BY");
      having_raw = parse_expr(scope, &agg_calls, &window_calls);
    }

    PlanPtr p = source;
    if (where) p = filter(p, where);

    bool has_aggs = !agg_calls.empty();
    if (has_group || has_aggs) {
      if (!window_calls.empty())
        raise(ErrorCode::ParseError, "window functions cannot be combined with GROUP BY");
      // Build the aggregate node: keys then aggregate columns; select items
      // are rewritten over its output.
      std::vector<std::string> key_names;
      for (size_t i = 0; i < group_keys.size(); ++i) key_names.push_back("__key_" + std::to_string(i));
      std::vector<AggregateSpec> specs;
      for (auto& a : agg_calls) specs.push_back(a.spec);
      PlanPtr agg = aggregate(p, group_keys, key_names, specs);

      auto rewrite = [&](const ExprPtr& e) {
        return rewrite_over_aggregate(e, group_keys, agg_calls, group_keys.size());
      };
      std::vector<ExprPtr> out_items;
      for (auto& e : items) out_items.push_back(rewrite(e));
      p = agg;
      if (having_raw) p = filter(p, rewrite(having_raw));
      p = project(p, out_items, names);
    } else {
      if (!window_calls.empty()) {
        // All OVER clauses in one select must agree.
        for (size_t i = 1; i < window_calls.size(); ++i) {
          if (!same_window(window_calls[0], window_calls[i]))
            raise(ErrorCode::ParseError, "all OVER clauses in a select must match");
        }
        std::vector<WindowFnSpec> fns;
        for (auto& w : window_calls) fns.push_back(w.spec);
        p = window(p, window_calls[0].partition, window_calls[0].order, fns);
      }
      p = project(p, items, names);
    }
    if (is_distinct) p = distinct(p);
    return p;
  }

  /// Select items are textual until FROM resolves the scope; splits on
  /// top-level commas.
  std::vector<std::string> collect_select_items() {
    std::vector<std::string> out;
    std::string current;
    int depth = 0;
    while (true) {
      const Token& t = lex_.peek();
      if (t.kind == Token::Kind::End) raise(ErrorCode::ParseError, "unterminated select list");
      if (depth == 0 && t.kind == Token::Kind::Ident && Lexer::upper(t.text) == "FROM") break;
      if (t.kind == Token::Kind::Op && t.text == "(") ++depth;
      if (t.kind == Token::Kind::Op && t.text == ")") --depth;
      if (depth == 0 && t.kind == Token::Kind::Op && t.text == ",") {
        out.push_back(current);
        current.clear();
        lex_.next();
        continue;
      }
      Token tok = lex_.next();
      if (!current.empty()) current += " ";
      current += tok.kind == Token::Kind::String ? "'" + tok.text + "'" : tok.text;
    }
    if (current.empty()) raise(ErrorCode::ParseError, "empty select list");
    out.push_back(current);
    return out;
  }

  PlanPtr parse_table_ref(Scope& scope) {
    std::string name = ident("table name");
    std::string alias = name;
    if (lex_.peek().kind == Token::Kind::Ident && !reserved(lex_.peek().text)) alias = ident("alias");
    const Schema* schema = nullptr;
    auto cit = cte_schemas_.find(name);
    if (cit != cte_schemas_.end()) {
      schema = &cit->second;
    } else {
      auto it = catalog_.find(name);
      if (it == catalog_.end()) raise(ErrorCode::UnknownTable, "'" + name + "'");
      schema = &it->second;
    }
    for (const Column& c : schema->columns()) scope.columns.emplace_back(alias, c.name);
    return cit != cte_schemas_.end() ? cte_ref(name) : scan(name);
  }

  // -- expressions ------------------------------------------------------------

  ExprPtr parse_expr(const Scope& scope, std::vector<AggCall>* aggs, std::vector<WindowCall>* windows,
                     size_t* start = nullptr) {
    (void)start;
    return parse_or(scope, aggs, windows);
  }

  ExprPtr parse_or(const Scope& s, std::vector<AggCall>* a, std::vector<WindowCall>* w) {
    ExprPtr e = parse_and(s, a, w);
    while (lex_.accept("OR")) e = binary(BinOp::Or, e, parse_and(s, a, w));
    return e;
  }

  ExprPtr parse_and(const Scope& s, std::vector<AggCall>* a, std::vector<WindowCall>* w) {
    ExprPtr e = parse_not(s, a, w);
    while (lex_.accept("AND")) e = binary(BinOp::And, e, parse_not(s, a, w));
    return e;
  }

  ExprPtr parse_not(const Scope& s, std::vector<AggCall>* a, std::vector<WindowCall>* w) {
    if (lex_.accept("NOT")) return not_expr(parse_not(s, a, w));
    return parse_comparison(s, a, w);
  }

  ExprPtr parse_comparison(const Scope& s, std::vector<AggCall>* a, std::vector<WindowCall>* w) {
    ExprPtr e = parse_additive(s, a, w);
    if (lex_.is("IS")) {
      lex_.expect("IS");
      bool negated = lex_.accept("NOT");
      lex_.expect("NULL");
      ExprPtr isn = is_null_expr(e);
      return negated ? not_expr(isn) : isn;
    }
    if (lex_.is("NOT")) {
      lex_.expect("NOT");
      lex_.expect("IN");
      return not_expr(parse_in_list(e, s, a, w));
    }
    if (lex_.is("IN")) {
      lex_.expect("IN");
      return parse_in_list(e, s, a, w);
    }
    static const std::pair<const char*, BinOp> ops[] = {
        {"<=>", BinOp::NullSafeEq}, {"<=", BinOp::Le}, {">=", BinOp::Ge}, {"!=", BinOp::Ne},
        {"<>", BinOp::Ne},          {"=", BinOp::Eq},  {"<", BinOp::Lt},  {">", BinOp::Gt}};
    for (const auto& [text, op] : ops) {
      if (lex_.is(text)) {
        lex_.expect(text);
        return binary(op, e, parse_additive(s, a, w));
      }
    }
    return e;
  }

  ExprPtr parse_in_list(ExprPtr needle, const Scope& s, std::vector<AggCall>* a, std::vector<WindowCall>* w) {
    lex_.expect("(");
    std::vector<ExprPtr> items;
    do {
      items.push_back(parse_expr(s, a, w));
    } while (lex_.accept(","));
    lex_.expect(")");
    return in_list(std::move(needle), std::move(items));
  }

  ExprPtr parse_additive(const Scope& s, std::vector<AggCall>* a, std::vector<WindowCall>* w) {
    ExprPtr e = parse_multiplicative(s, a, w);
    while (true) {
      if (lex_.is("+")) {
        lex_.expect("+");
        e = binary(BinOp::Add, e, parse_interval_or_mul(s, a, w));
      } else if (lex_.is("-")) {
        lex_.expect("-");
        e = binary(BinOp::Sub, e, parse_interval_or_mul(s, a, w));
      } else {
        break;
      }
    }
    return e;
  }

  ExprPtr parse_interval_or_mul(const Scope& s, std::vector<AggCall>* a, std::vector<WindowCall>* w) {
    if (lex_.is("INTERVAL")) {
      lex_.expect("INTERVAL");
      Token n = lex_.next();
      if (n.kind != Token::Kind::Number) raise(ErrorCode::ParseError, "INTERVAL expects a number");
      int64_t days = std::stoll(n.text);
      if (lex_.accept("DAYS") || lex_.accept("DAY")) return interval_days_expr(days);
      raise(ErrorCode::ParseError, "only day intervals are supported");
    }
    return parse_multiplicative(s, a, w);
  }

  ExprPtr parse_multiplicative(const Scope& s, std::vector<AggCall>* a, std::vector<WindowCall>* w) {
    ExprPtr e = parse_unary(s, a, w);
    while (true) {
      if (lex_.is("*")) {
        lex_.expect("*");
        e = binary(BinOp::Mul, e, parse_unary(s, a, w));
      } else if (lex_.is("/")) {
        lex_.expect("/");
        e = binary(BinOp::Div, e, parse_unary(s, a, w));
      } else {
        break;
      }
    }
    return e;
  }

  ExprPtr parse_unary(const Scope& s, std::vector<AggCall>* a, std::vector<WindowCall>* w) {
    if (lex_.is("-")) {
      lex_.expect("-");
      ExprPtr e = parse_unary(s, a, w);
      if (e->kind == ExprKind::Literal && e->literal.is_int()) return lit_int(-e->literal.as_int());
      if (e->kind == ExprKind::Literal && e->literal.is_float()) return lit_float(-e->literal.as_float());
      return binary(BinOp::Sub, lit_int(0), e);
    }
    return parse_primary(s, a, w);
  }

  ExprPtr parse_primary(const Scope& s, std::vector<AggCall>* a, std::vector<WindowCall>* w) {
    const Token t = lex_.peek();
    if (t.kind == Token::Kind::Op && t.text == "(") {
      lex_.expect("(");
      ExprPtr e = parse_expr(s, a, w);
      lex_.expect(")");
      return e;
    }
    if (t.kind == Token::Kind::Number) {
      lex_.next();
      if (t.text.find('.') != std::string::npos) return lit_float(std::stod(t.text));
      return lit_int(std::stoll(t.text));
    }
    if (t.kind == Token::Kind::String) {
      lex_.next();
      return lit_string(t.text);
    }
    if (t.kind != Token::Kind::Ident) raise(ErrorCode::ParseError, "unexpected '" + t.text + "'");

    std::string word = Lexer::upper(t.text);
    if (word == "TRUE") {
      lex_.next();
      return lit_bool(true);
    }
    if (word == "FALSE") {
      lex_.next();
      return lit_bool(false);
    }
    if (word == "NULL") {
      lex_.next();
      return lit(Value::null(), ValueType::Int64);
    }
    if (word == "CURRENT_DATE") {
      lex_.next();
      if (lex_.accept("(")) lex_.expect(")");
      return current_date_expr();
    }
    if (word == "CURRENT_TIMESTAMP") {
      lex_.next();
      if (lex_.accept("(")) lex_.expect(")");
      return current_timestamp_expr();
    }
    if (word == "DATE") {
      lex_.next();
      Token litTok = lex_.next();
      if (litTok.kind != Token::Kind::String) raise(ErrorCode::ParseError, "DATE expects a string literal");
      return lit_date(parse_date(litTok.text));
    }
    if (word == "TIMESTAMP") {
      lex_.next();
      Token litTok = lex_.next();
      if (litTok.kind != Token::Kind::String)
        raise(ErrorCode::ParseError, "TIMESTAMP expects a string literal");
      return lit(Value(parse_timestamp(litTok.text)), ValueType::Timestamp);
    }
    if (word == "CASE") {
      lex_.next();
      std::vector<ExprPtr> children;
      bool has_else = false;
      while (lex_.accept("WHEN")) {
        children.push_back(parse_expr(s, a, w));
        lex_.expect("THEN");
        children.push_back(parse_expr(s, a, w));
      }
      if (lex_.accept("ELSE")) {
        children.push_back(parse_expr(s, a, w));
        has_else = true;
      }
      lex_.expect("END");
      return case_expr(std::move(children), has_else);
    }

    lex_.next();
    // function call?
    if (lex_.is("(")) {
      return parse_call(t.text, s, a, w);
    }
    // qualified or bare column
    std::string qual, name = t.text;
    if (lex_.is(".")) {
      lex_.expect(".");
      qual = t.text;
      name = ident("column name");
    }
    auto ord = s.resolve(qual, name);
    if (!ord) raise(ErrorCode::UnresolvedColumn, "'" + (qual.empty() ? name : qual + "." + name) + "'");
    return col(*ord);
  }

  ExprPtr parse_call(const std::string& fn_name, const Scope& s, std::vector<AggCall>* a,
                     std::vector<WindowCall>* w) {
    std::string upper = Lexer::upper(fn_name);
    lex_.expect("(");

    static const std::map<std::string, AggKind> agg_names = {
        {"SUM", AggKind::Sum},       {"COUNT", AggKind::Count},
        {"MIN", AggKind::Min},       {"MAX", AggKind::Max},
        {"AVG", AggKind::Avg},       {"FIRST", AggKind::First},
        {"COLLECT_LIST", AggKind::CollectList}, {"COLLECT_SET", AggKind::CollectSet},
        {"STDDEV", AggKind::Stddev}};
    static const std::map<std::string, WindowFnKind> window_names = {
        {"ROW_NUMBER", WindowFnKind::RowNumber}, {"RANK", WindowFnKind::Rank},
        {"DENSE_RANK", WindowFnKind::DenseRank}, {"SUM", WindowFnKind::Sum},
        {"COUNT", WindowFnKind::Count},          {"MIN", WindowFnKind::Min},
        {"MAX", WindowFnKind::Max}};

    auto agg_it = agg_names.find(upper);
    bool count_star = false;
    std::vector<ExprPtr> args;
    if (upper == "COUNT" && lex_.is("*")) {
      lex_.expect("*");
      count_star = true;
    } else if (!lex_.is(")")) {
      do {
        args.push_back(parse_expr(s, a, w));
      } while (lex_.accept(","));
    }
    lex_.expect(")");

    if (lex_.is("OVER")) {
      lex_.expect("OVER");
      lex_.expect("(");
      WindowCall call;
      auto wit = window_names.find(upper);
      if (upper == "ROW_NUMBER" || upper == "RANK" || upper == "DENSE_RANK") {
        call.spec.kind = wit->second;
      } else if (wit != window_names.end()) {
        call.spec.kind = wit->second;
        if (count_star) {
          call.spec.arg = nullptr;
        } else {
          if (args.size() != 1) raise(ErrorCode::ParseError, upper + " window expects one argument");
          call.spec.arg = args[0];
        }
      } else {
        raise(ErrorCode::ParseError, "'" + fn_name + "' is not a window function");
      }
      if (lex_.accept("PARTITION")) {
        lex_.expect("BY");
        do {
          call.partition.push_back(parse_expr(s, nullptr, nullptr));
        } while (lex_.accept(","));
      }
      if (lex_.accept("ORDER")) {
        lex_.expect("BY");
        do {
          ExprPtr e = parse_expr(s, nullptr, nullptr);
          bool asc = true;
          if (lex_.accept("DESC"))
            asc = false;
          else
            lex_.accept("ASC");
          call.order.push_back({e, asc});
        } while (lex_.accept(","));
      }
      lex_.expect(")");
      if (!w) raise(ErrorCode::ParseError, "window function not allowed here");
      call.spec.name = "__win_" + std::to_string(w->size());
      w->push_back(call);
      // Placeholder resolved when the window node is planned: input width +
      // function index. Input width is the scope width.
      return col(scope_width_marker(call, *w));
    }

    if (agg_it != agg_names.end() || count_star) {
      if (!a) raise(ErrorCode::ParseError, "aggregate not allowed here");
      AggCall call;
      if (count_star) {
        call.spec.kind = AggKind::CountStar;
      } else {
        call.spec.kind = agg_it->second;
        if (call.spec.kind == AggKind::First) {
          if (args.size() != 2) raise(ErrorCode::ParseError, "first(value, ordering) expects two arguments");
          call.spec.arg = args[0];
          call.spec.order_by = args[1];
        } else {
          if (args.size() != 1) raise(ErrorCode::ParseError, upper + " expects one argument");
          call.spec.arg = args[0];
        }
      }
      call.spec.name = "__agg_" + std::to_string(a->size());
      call.placeholder = a->size();
      a->push_back(call);
      // Marker expression: a function carrying the aggregate index, replaced
      // during aggregate planning.
      auto marker = std::make_shared<Expression>();
      marker->kind = ExprKind::Func;
      marker->fn_name = "__agg_marker";
      marker->children = {lit_int(static_cast<int64_t>(call.placeholder))};
      return marker;
    }

    if (!registry_.has(fn_name))
      raise(ErrorCode::ParseError, "unknown function '" + fn_name + "'");
    return func(fn_name, args);
  }

  size_t scope_width_marker(const WindowCall& call, const std::vector<WindowCall>& all) {
    // Window outputs append after the input columns; the scope width at
    // planning time equals the source width.
    (void)call;
    return scope_width_ + (all.size() - 1);
  }

  ExprPtr rewrite_over_aggregate(const ExprPtr& e, const std::vector<ExprPtr>& keys,
                                 const std::vector<AggCall>& aggs, size_t nkeys) {
    // aggregate markers become references to aggregate output columns
    if (e->kind == ExprKind::Func && e->fn_name == "__agg_marker") {
      size_t idx = static_cast<size_t>(e->children[0]->literal.as_int());
      return col(nkeys + idx);
    }
    // expressions structurally equal to a group key become key references
    std::string mine = expr_to_json(e).dump();
    for (size_t i = 0; i < keys.size(); ++i) {
      if (expr_to_json(keys[i]).dump() == mine) return col(i);
    }
    if (e->kind == ExprKind::ColumnRef)
      raise(ErrorCode::ParseError, "column is neither grouped nor aggregated");
    auto copy = std::make_shared<Expression>(*e);
    for (auto& c : copy->children) c = rewrite_over_aggregate(c, keys, aggs, nkeys);
    return copy;
  }

  static bool same_window(const WindowCall& a, const WindowCall& b) {
    auto dump = [](const WindowCall& w) {
      nlohmann::json j;
      nlohmann::json p = nlohmann::json::array();
      for (const auto& e : w.partition) p.push_back(expr_to_json(e));
      nlohmann::json o = nlohmann::json::array();
      for (const auto& k : w.order) o.push_back({{"a", k.ascending}, {"e", expr_to_json(k.expr)}});
      j["p"] = p;
      j["o"] = o;
      return j.dump();
    };
    return dump(a) == dump(b);
  }

  std::string ident(const char* what) {
    Token t = lex_.next();
    if (t.kind != Token::Kind::Ident) raise(ErrorCode::ParseError, std::string("expected ") + what);
    return t.text;
  }

  static bool reserved(const std::string& word) {
    static const std::set<std::string> kw = {"JOIN",  "INNER", "LEFT",  "RIGHT", "FULL",  "ON",
                                             "WHERE", "GROUP", "UNION", "HAVING", "AS",   "OUTER"};
    return kw.count(Lexer::upper(word)) > 0;
  }

  Schema infer_for(const PlanPtr& p) {
    PlanPtr inferred = infer_schema(p, catalog_, registry_, &cte_schemas_);
    return inferred->out_schema();
  }

  static std::string default_name(const std::string& text, size_t index) {
    std::string trimmed;
    for (char c : text) {
      if (std::isalnum(static_cast<unsigned char>(c)) || c == '_') trimmed.push_back(c);
      if (trimmed.size() > 24) break;
    }
    if (trimmed.empty()) trimmed = "col" + std::to_string(index);
    return trimmed;
  }

  Lexer lex_;
  const Catalog& catalog_;
  const FunctionRegistry& registry_;
  std::map<std::string, Schema> cte_schemas_;
  size_t scope_width_ = 0;
};

}  // namespace sqldetail

/// Parses the SQL-like text form into an unbound logical plan.
inline PlanPtr parse_sql(const std::string& text, const Catalog& catalog,
                         const FunctionRegistry& registry = FunctionRegistry::builtins()) {
  sqldetail::Parser parser(text, catalog, registry);
  return parser.parse();
}

}  // namespace enzyme

#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "enzyme/detail/sha256.hpp"
#include "enzyme/normalize.hpp"
#include "enzyme/plan.hpp"

namespace enzyme {

inline constexpr int kCanonicalizeVersion = 1;
/// Fingerprint version packs (normalization version, canonicalization version).
inline int make_fingerprint_version(int norm, int canon) { return norm * 100 + canon; }
inline constexpr int kFingerprintVersion = 101;

/// Versions this engine build can compute. Newer versions first.
inline std::vector<int> supported_fingerprint_versions() { return {102, 101}; }

struct Fingerprint {
  int version = kFingerprintVersion;
  std::string digest;  // 64 hex chars

  friend bool operator==(const Fingerprint& a, const Fingerprint& b) {
    return a.version == b.version && a.digest == b.digest;
  }
};

struct FingerprintHistory {
  std::vector<Fingerprint> entries;  // newest version first

  const Fingerprint* find(int version) const {
    for (const auto& e : entries)
      if (e.version == version) return &e;
    return nullptr;
  }
};

// ---------------------------------------------------------------------------
// Canonical form. Column references are rewritten to order-independent
// coordinates (anchored to child subtree digests at joins), operands of
// commutative expressions and children of commutative operators are sorted,
// so cosmetically different but equivalent definitions serialize identically.

namespace detail {

using CanonJson = nlohmann::json;

inline bool commutative_op(BinOp op) {
  return op == BinOp::Add || op == BinOp::Mul || op == BinOp::Eq || op == BinOp::Ne ||
         op == BinOp::NullSafeEq || op == BinOp::And || op == BinOp::Or;
}

/// Maps a node-output ordinal to a canonical coordinate.
using CoordFn = std::function<CanonJson(size_t)>;

inline CanonJson canon_expr(const ExprPtr& e, const CoordFn& coord) {
  CanonJson j;
  switch (e->kind) {
    case ExprKind::ColumnRef:
      j["r"] = coord(e->column);
      return j;
    case ExprKind::Literal:
      j["l"] = value_to_json(e->literal);
      j["t"] = type_name(e->literal_type);
      return j;
    case ExprKind::Interval:
      j["iv"] = {e->interval_days, e->interval_micros};
      return j;
    case ExprKind::Binary: {
      if (e->op == BinOp::And || e->op == BinOp::Or) {
        // Three-valued conjunction and disjunction are associative, so
        // chains flatten to one sorted operand list; filter merging and
        // splitting then cannot shift the digest. (Arithmetic stays binary:
        // float addition is not associative.)
        std::vector<CanonJson> operands;
        std::function<void(const ExprPtr&)> flatten = [&](const ExprPtr& x) {
          if (x->kind == ExprKind::Binary && x->op == e->op) {
            flatten(x->children[0]);
            flatten(x->children[1]);
          } else {
            operands.push_back(canon_expr(x, coord));
          }
        };
        flatten(e);
        std::sort(operands.begin(), operands.end(),
                  [](const CanonJson& x, const CanonJson& y) { return x.dump() < y.dump(); });
        j["o"] = std::string(binop_name(e->op)) + "*";
        j["a"] = operands;
        return j;
      }
      j["o"] = binop_name(e->op);
      CanonJson a = canon_expr(e->children[0], coord);
      CanonJson b = canon_expr(e->children[1], coord);
      if (commutative_op(e->op) && b.dump() < a.dump()) std::swap(a, b);
      j["a"] = {a, b};
      return j;
    }
    case ExprKind::Not:
      j["o"] = "not";
      j["a"] = {canon_expr(e->children[0], coord)};
      return j;
    case ExprKind::IsNull:
      j["o"] = "isnull";
      j["a"] = {canon_expr(e->children[0], coord)};
      return j;
    case ExprKind::InList: {
      j["o"] = "in";
      std::vector<CanonJson> items;
      for (size_t i = 1; i < e->children.size(); ++i) items.push_back(canon_expr(e->children[i], coord));
      std::sort(items.begin(), items.end(),
                [](const CanonJson& x, const CanonJson& y) { return x.dump() < y.dump(); });
      j["n"] = canon_expr(e->children[0], coord);
      j["a"] = items;
      return j;
    }
    case ExprKind::Case: {
      j["o"] = "case";
      j["he"] = e->case_has_else;
      CanonJson args = CanonJson::array();
      for (const auto& c : e->children) args.push_back(canon_expr(c, coord));
      j["a"] = args;
      return j;
    }
    case ExprKind::Func: {
      j["o"] = "fn";
      j["f"] = e->fn_name;
      CanonJson args = CanonJson::array();
      for (const auto& c : e->children) args.push_back(canon_expr(c, coord));
      j["a"] = args;
      return j;
    }
    case ExprKind::CurrentDate:
      j["o"] = "current_date";
      return j;
    case ExprKind::CurrentTimestamp:
      j["o"] = "current_timestamp";
      return j;
    case ExprKind::KeyProbe:
      raise(ErrorCode::Internal, "key probe in a definition plan");
  }
  raise(ErrorCode::Internal, "unreachable");
}

struct CanonResult {
  CanonJson json;
  CoordFn coord;  // maps the node's output ordinals to order-independent coordinates
};

/// Canonical form with order-independent column coordinates. A node's own
/// expressions reference child output through the child coordinate function;
/// joins anchor coordinates to the child subtree digest, so swapping
/// commutative children leaves every reference (including those in ancestor
/// nodes) unchanged.
inline CanonResult canonical_plan(const PlanPtr& p,
                                  std::unordered_map<const PlanNode*, CanonResult>& memo) {
  auto it = memo.find(p.get());
  if (it != memo.end()) return it->second;

  std::vector<CanonResult> kids;
  for (const auto& c : p->children) kids.push_back(canonical_plan(c, memo));

  CoordFn ordinal = [](size_t c) { return CanonJson(c); };
  CanonJson j;
  CoordFn out_coord = ordinal;  // layout-stable nodes use plain ordinals
  switch (p->kind) {
    case PlanKind::Scan:
      j["k"] = "scan";
      j["t"] = p->table;
      break;
    case PlanKind::Project: {
      j["k"] = "project";
      CanonJson es = CanonJson::array();
      for (const auto& e : p->exprs) es.push_back(canon_expr(e, kids[0].coord));
      j["e"] = es;
      j["n"] = p->names;
      j["c"] = {kids[0].json};
      break;
    }
    case PlanKind::Filter:
      j["k"] = "filter";
      j["p"] = canon_expr(p->predicate, kids[0].coord);
      j["c"] = {kids[0].json};
      out_coord = kids[0].coord;  // output layout passes through
      break;
    case PlanKind::Aggregate: {
      j["k"] = "aggregate";
      CanonJson ks = CanonJson::array();
      for (const auto& k : p->group_keys) ks.push_back(canon_expr(k, kids[0].coord));
      j["g"] = ks;
      j["gn"] = p->key_names;
      CanonJson as = CanonJson::array();
      for (const auto& a : p->aggregates) {
        CanonJson aj;
        aj["f"] = agg_kind_name(a.kind);
        aj["n"] = a.name;
        if (a.arg) aj["x"] = canon_expr(a.arg, kids[0].coord);
        if (a.order_by) aj["ob"] = canon_expr(a.order_by, kids[0].coord);
        as.push_back(aj);
      }
      j["a"] = as;
      j["c"] = {kids[0].json};
      break;
    }
    case PlanKind::Window: {
      j["k"] = "window";
      CanonJson ps = CanonJson::array();
      for (const auto& k : p->partition_keys) ps.push_back(canon_expr(k, kids[0].coord));
      j["pk"] = ps;
      CanonJson os = CanonJson::array();
      for (const auto& k : p->order_keys)
        os.push_back({{"a", k.ascending}, {"e", canon_expr(k.expr, kids[0].coord)}});
      j["ok"] = os;
      CanonJson fs = CanonJson::array();
      for (const auto& f : p->window_fns) {
        CanonJson fj;
        fj["f"] = window_fn_name(f.kind);
        fj["n"] = f.name;
        if (f.arg) fj["x"] = canon_expr(f.arg, kids[0].coord);
        fs.push_back(fj);
      }
      j["w"] = fs;
      j["c"] = {kids[0].json};
      const size_t in_width = p->children[0]->out_schema().size();
      CoordFn child = kids[0].coord;
      out_coord = [child, in_width](size_t c) -> CanonJson {
        if (c < in_width) return child(c);
        return CanonJson::array({"wfn", c - in_width});
      };
      break;
    }
    case PlanKind::Join: {
      j["k"] = "join";
      j["j"] = join_kind_name(p->join_kind);
      const size_t lw = p->children[0]->out_schema().size();
      std::string dl = kids[0].json.dump(), dr = kids[1].json.dump();
      std::string hl = sha256_hex(dl), hr = sha256_hex(dr);
      // Identical subtrees fall back to positional side tags; swapping
      // identical subtrees is a no-op anyway.
      bool same = hl == hr;
      std::string al = same ? "side0" : hl.substr(0, 16);
      std::string ar = same ? "side1" : hr.substr(0, 16);
      CoordFn cl = kids[0].coord, cr = kids[1].coord;
      out_coord = [al, ar, cl, cr, lw](size_t c) -> CanonJson {
        if (c < lw) return CanonJson::array({al, cl(c)});
        return CanonJson::array({ar, cr(c - lw)});
      };
      j["p"] = canon_expr(p->condition, out_coord);
      CanonJson left = kids[0].json, right = kids[1].json;
      if (p->join_kind == JoinKind::Inner && dr < dl) std::swap(left, right);
      j["c"] = {left, right};
      break;
    }
    case PlanKind::UnionAll: {
      j["k"] = "union_all";
      std::vector<CanonJson> cj;
      for (const auto& k : kids) cj.push_back(k.json);
      std::sort(cj.begin(), cj.end(),
                [](const CanonJson& x, const CanonJson& y) { return x.dump() < y.dump(); });
      j["c"] = cj;
      break;
    }
    case PlanKind::Distinct:
      j["k"] = "distinct";
      j["c"] = {kids[0].json};
      out_coord = kids[0].coord;
      break;
    case PlanKind::With:
    case PlanKind::CteRef:
      raise(ErrorCode::Internal, "canonicalize requires a normalized (CTE-free) plan");
    case PlanKind::AntiLeft:
    case PlanKind::AntiRight:
      raise(ErrorCode::Internal, "internal node in a definition plan");
  }
  CanonResult result{j, out_coord};
  memo[p.get()] = result;
  return result;
}

}  // namespace detail

/// Canonical serialization of a normalized plan; equal for cosmetically
/// different but structurally equivalent definitions.
inline std::string canonicalize(const NormalizedPlan& np, int canon_version = kCanonicalizeVersion) {
  std::unordered_map<const PlanNode*, detail::CanonResult> memo;
  nlohmann::json root;
  root["canon"] = detail::canonical_plan(np.plan, memo).json;
  root["cv"] = canon_version;
  root["nv"] = np.version;
  return root.dump();
}

/// Digest of the canonical definition plus the signature digests of every
/// scalar function it uses.
inline Fingerprint fingerprint(const NormalizedPlan& np,
                               const std::map<std::string, std::string>& udf_signatures,
                               int version = kFingerprintVersion) {
  int canon_version = version % 100;
  int norm_version = version / 100;
  if (norm_version != np.version)
    raise(ErrorCode::Internal, "fingerprint version expects normalization v" + std::to_string(norm_version));
  std::string canon = canonicalize(np, canon_version);

  std::unordered_set<std::string> fns;
  walk_plan(np.plan, [&](const PlanPtr& n) {
    walk_node_exprs(*n, [&](const ExprPtr& e) { collect_fn_names(e, fns); });
  });
  std::vector<std::string> sorted_fns(fns.begin(), fns.end());
  std::sort(sorted_fns.begin(), sorted_fns.end());
  std::string payload = canon;
  for (const std::string& f : sorted_fns) {
    auto it = udf_signatures.find(f);
    if (it == udf_signatures.end()) raise(ErrorCode::MissingUdfSignature, "'" + f + "'");
    payload += "|fn:" + f + "=" + it->second;
  }
  // Canonicalization algorithm changes bump the version; the digest keys on it.
  payload += "|v:" + std::to_string(version);
  return Fingerprint{version, detail::sha256_hex(payload)};
}

struct UnchangedCheck {
  bool unchanged = false;
  int matched_version = 0;
  FingerprintHistory updated;  // versions recorded after the check
};

/// An MV is unchanged if any engine-supported fingerprint version matches the
/// digest recorded for that same version. On a match, digests for newly
/// supported versions are recorded so upgrades never trigger recomputation.
inline UnchangedCheck check_unchanged(const FingerprintHistory& history, const NormalizedPlan& np,
                                      const std::map<std::string, std::string>& udf_signatures,
                                      const std::vector<int>& versions = supported_fingerprint_versions()) {
  UnchangedCheck out;
  out.updated = history;
  std::map<int, Fingerprint> computed;
  for (int v : versions) computed[v] = fingerprint(np, udf_signatures, v);
  for (int v : versions) {
    const Fingerprint* rec = history.find(v);
    if (rec && rec->digest == computed[v].digest) {
      out.unchanged = true;
      out.matched_version = v;
      break;
    }
  }
  if (out.unchanged) {
    for (int v : versions) {
      if (!out.updated.find(v))
        out.updated.entries.insert(out.updated.entries.begin(), computed[v]);
    }
    std::sort(out.updated.entries.begin(), out.updated.entries.end(),
              [](const Fingerprint& a, const Fingerprint& b) { return a.version > b.version; });
  }
  return out;
}

/// Fresh history for a (re)computed definition.
inline FingerprintHistory record_fingerprints(const NormalizedPlan& np,
                                              const std::map<std::string, std::string>& udf_signatures,
                                              const std::vector<int>& versions = supported_fingerprint_versions()) {
  FingerprintHistory h;
  for (int v : versions) h.entries.push_back(fingerprint(np, udf_signatures, v));
  std::sort(h.entries.begin(), h.entries.end(),
            [](const Fingerprint& a, const Fingerprint& b) { return a.version > b.version; });
  return h;
}

inline nlohmann::json fingerprint_history_to_json(const FingerprintHistory& h) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : h.entries) arr.push_back({{"v", e.version}, {"d", e.digest}});
  return arr;
}

inline FingerprintHistory fingerprint_history_from_json(const nlohmann::json& j) {
  FingerprintHistory h;
  for (const auto& e : j) h.entries.push_back({e.at("v").get<int>(), e.at("d").get<std::string>()});
  return h;
}

}  // namespace enzyme

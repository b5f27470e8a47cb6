#pragma once
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cocycle.hpp"
#include "gibbs.hpp"

namespace clab {

using Json = nlohmann::json;

// Reads one JSON object, remembering the keys it consumed so that leftovers can be
// reported as unknown. Every error names the dotted path of the field.
class Fields {
 public:
  Fields(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  const std::string& path() const { return path_; }
  std::string at(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }
  bool has(const std::string& k) const { return j_.contains(k); }

  const Json& req(const std::string& k) {
    used_.insert(k);
    if (!j_.contains(k)) throw ConfigError(at(k) + ": required field missing");
    return j_.at(k);
  }
  const Json* opt(const std::string& k) {
    used_.insert(k);
    return j_.contains(k) ? &j_.at(k) : nullptr;
  }

  double num(const std::string& k) { return as_num(req(k), at(k)); }
  double num(const std::string& k, double def) {
    auto* v = opt(k);
    return v ? as_num(*v, at(k)) : def;
  }
  long integer(const std::string& k) { return as_int(req(k), at(k)); }
  long integer(const std::string& k, long def) {
    auto* v = opt(k);
    return v ? as_int(*v, at(k)) : def;
  }
  std::uint64_t u64(const std::string& k, std::uint64_t def) {
    auto* v = opt(k);
    if (!v) return def;
    if (!v->is_number_integer() || (v->is_number_integer() && !v->is_number_unsigned() && v->get<long long>() < 0))
      throw ConfigError(at(k) + ": expected a non-negative integer");
    return v->get<std::uint64_t>();
  }
  bool boolean(const std::string& k, bool def) {
    auto* v = opt(k);
    if (!v) return def;
    if (!v->is_boolean()) throw ConfigError(at(k) + ": expected true or false");
    return v->get<bool>();
  }
  std::string str(const std::string& k) { return as_str(req(k), at(k)); }
  std::string str(const std::string& k, const std::string& def) {
    auto* v = opt(k);
    return v ? as_str(*v, at(k)) : def;
  }
  std::string choice(const std::string& k, const std::vector<std::string>& allowed, const std::string& def) {
    std::string v = str(k, def);
    check_choice(v, allowed, k);
    return v;
  }
  std::string choice(const std::string& k, const std::vector<std::string>& allowed) {
    std::string v = str(k);
    check_choice(v, allowed, k);
    return v;
  }
  std::vector<double> nums(const std::string& k) {
    const Json& v = req(k);
    if (!v.is_array()) throw ConfigError(at(k) + ": expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_num(v[i], at(k) + "[" + std::to_string(i) + "]"));
    return out;
  }
  std::vector<long> ints(const std::string& k) {
    const Json& v = req(k);
    if (!v.is_array()) throw ConfigError(at(k) + ": expected an array of integers");
    std::vector<long> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_int(v[i], at(k) + "[" + std::to_string(i) + "]"));
    return out;
  }
  Fields sub(const std::string& k) { return Fields(req(k), at(k)); }

  // range checks, reported against the field
  double positive(const std::string& k, double v) const {
    if (!(v > 0)) throw ConfigError(at(k) + ": must be > 0");
    return v;
  }
  long at_least(const std::string& k, long v, long lo) const {
    if (v < lo) throw ConfigError(at(k) + ": must be >= " + std::to_string(lo));
    return v;
  }
  double in_unit(const std::string& k, double v) const {
    if (!(v > 0 && v < 1)) throw ConfigError(at(k) + ": must be in (0,1)");
    return v;
  }

  void done() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) throw ConfigError(at(it.key()) + ": unknown key");
  }

  static double as_num(const Json& v, const std::string& where) {
    if (!v.is_number()) throw ConfigError(where + ": expected a number");
    double x = v.get<double>();
    if (!std::isfinite(x)) throw ConfigError(where + ": must be finite");
    return x;
  }
  static long as_int(const Json& v, const std::string& where) {
    if (!v.is_number_integer()) throw ConfigError(where + ": expected an integer");
    if (v.is_number_unsigned() && v.get<std::uint64_t>() > std::uint64_t(1) << 62)
      throw ConfigError(where + ": integer out of range");
    return long(v.get<long long>());
  }
  static std::string as_str(const Json& v, const std::string& where) {
    if (!v.is_string()) throw ConfigError(where + ": expected a string");
    return v.get<std::string>();
  }

 private:
  void check_choice(const std::string& v, const std::vector<std::string>& allowed, const std::string& k) const {
    for (auto& a : allowed)
      if (a == v) return;
    std::string list;
    for (auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
    throw ConfigError(at(k) + ": \"" + v + "\" is not one of " + list);
  }

  const Json& j_;
  std::string path_;
  std::set<std::string> used_;
};

inline const std::vector<std::string>& experiment_kinds() {
  static const std::vector<std::string> k{"lyapunov", "flags",   "pesin", "deviations", "returns",
                                          "holonomy", "pinching", "tower", "counterexample-subadditive",
                                          "counterexample-sl2"};
  return k;
}

inline const std::vector<std::string>& cocycle_kinds() {
  static const std::vector<std::string> k{"identity", "constant", "diag_symbol", "m0",
                                          "remark39", "upper_block", "random", "table"};
  return k;
}

struct ExperimentConfig {
  Json raw;  // the parsed document, echoed into the manifest
  SubshiftSpec subshift;
  PotentialTable potential;
  CocycleTable cocycle;
  std::string kind;
  Json params;  // validated by the runner before anything runs
  std::uint64_t rng_seed = 0;
  std::string output_dir;
};

inline SubshiftSpec parse_subshift(Fields f) {
  const long a = f.integer("alphabet_size");
  if (a < 1 || a > 36) throw ConfigError("subshift.alphabet_size must be in [1,36]");
  const Json& t = f.req("transitions");
  if (!t.is_array() || long(t.size()) != a) throw ConfigError("subshift.transitions must be an A x A table");
  std::vector<std::uint8_t> table;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!t[i].is_array() || long(t[i].size()) != a) throw ConfigError("subshift.transitions must be an A x A table");
    for (std::size_t j = 0; j < t[i].size(); ++j) {
      const std::string where = "subshift.transitions[" + std::to_string(i) + "][" + std::to_string(j) + "]";
      long v = Fields::as_int(t[i][j], where);
      if (v != 0 && v != 1) throw ConfigError(where + ": entries must be 0 or 1");
      table.push_back(std::uint8_t(v));
    }
  }
  f.done();
  return SubshiftSpec(int(a), std::move(table));
}

// {"range": r, "values": {"word": phi}} or {"bernoulli": [p_0, ...]}
inline PotentialTable parse_potential(Fields f, const SubshiftSpec& s) {
  if (f.has("bernoulli")) {
    if (f.has("values") || f.has("range")) throw ConfigError("potential: give either bernoulli or range/values");
    auto p = f.nums("bernoulli");
    if (int(p.size()) != s.alphabet_size) throw ConfigError("potential.bernoulli: one probability per symbol required");
    for (double q : p)
      if (!(q > 0)) throw ConfigError("potential.bernoulli: probabilities must be > 0");
    f.done();
    return PotentialTable::bernoulli(s, p);
  }
  const long r = f.integer("range");
  const Json& v = f.req("values");
  if (!v.is_object()) throw ConfigError("potential.values: expected an object mapping words to numbers");
  std::map<std::string, double> m;
  for (auto it = v.begin(); it != v.end(); ++it) m[it.key()] = Fields::as_num(it.value(), "potential.values." + it.key());
  f.done();
  return PotentialTable::from_map(s, int(r), m);
}

inline Mat parse_matrix(const Json& v, int d, const std::string& where) {
  if (!v.is_array() || v.empty()) throw ConfigError(where + ": expected a square matrix as an array of rows");
  const int n = d > 0 ? d : int(v.size());
  if (int(v.size()) != n) throw ConfigError(where + ": expected " + std::to_string(n) + " rows");
  Mat m(n, n);
  for (int i = 0; i < n; ++i) {
    if (!v[i].is_array() || int(v[i].size()) != n) throw ConfigError(where + ": every row needs " + std::to_string(n) + " entries");
    for (int j = 0; j < n; ++j)
      m(i, j) = Fields::as_num(v[i][j], where + "[" + std::to_string(i) + "][" + std::to_string(j) + "]");
  }
  return m;
}

inline Json matrix_json(const Mat& m) {
  Json rows = Json::array();
  for (int i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

inline CocycleTable parse_cocycle(Fields f, const SubshiftSpec& s) {
  const std::string kind = f.choice("kind", cocycle_kinds());
  const long d_in = f.integer("dimension", 0);
  CocycleTable c;
  auto need_binary = [&] {
    if (s.alphabet_size != 2) throw ConfigError(f.at("kind") + ": " + kind + " needs a 2-symbol alphabet");
  };
  if (kind == "identity") {
    c = identity_cocycle(s, int(f.at_least("dimension", d_in, 1)));
  } else if (kind == "constant") {
    c = constant_cocycle(s, parse_matrix(f.req("matrix"), int(d_in), f.at("matrix")));
  } else if (kind == "diag_symbol") {
    const Json& v = f.req("diagonals");
    if (!v.is_array()) throw ConfigError(f.at("diagonals") + ": expected one array per symbol");
    std::vector<std::vector<double>> e;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const std::string where = f.at("diagonals") + "[" + std::to_string(i) + "]";
      if (!v[i].is_array() || v[i].empty()) throw ConfigError(where + ": expected a non-empty array");
      std::vector<double> row;
      for (auto& x : v[i]) row.push_back(Fields::as_num(x, where));
      e.push_back(row);
    }
    c = diag_symbol_cocycle(s, e);
  } else if (kind == "m0") {
    need_binary();
    c = diag_symbol_cocycle(s, {{2.0, 0.5}, {1.0, 1.0}});
    c.kind = "m0";
  } else if (kind == "remark39") {
    c = remark39_cocycle(s);
  } else if (kind == "random") {
    const long l = f.integer("l", 0), r = f.integer("r", 0);
    f.at_least("l", l, 0);
    f.at_least("r", r, 0);
    c = random_cocycle(s, int(f.at_least("dimension", d_in, 1)), int(l), int(r), f.u64("seed", 0), f.boolean("sl", false));
  } else if (kind == "upper_block") {
    auto b1 = parse_cocycle(f.sub("block1"), s);
    auto b2 = parse_cocycle(f.sub("block2"), s);
    if (!b1.rules.empty() || !b2.rules.empty()) throw ConfigError(f.at("block1") + ": blocks cannot carry run-pair rules");
    c = upper_block_cocycle(s, b1, b2, f.u64("seed", 0));
  } else {  // table
    const long l = f.integer("l", 0), r = f.integer("r", 0);
    f.at_least("l", l, 0);
    f.at_least("r", r, 0);
    const int d = int(f.at_least("dimension", d_in, 1));
    const Json& ws = f.req("windows");
    if (!ws.is_array()) throw ConfigError(f.at("windows") + ": expected an array");
    std::map<Word, Mat> m;
    for (std::size_t i = 0; i < ws.size(); ++i) {
      Fields w(ws[i], f.at("windows") + "[" + std::to_string(i) + "]");
      Word word = parse_word(w.str("word"));
      if (long(word.size()) != l + r + 1) throw ConfigError(w.at("word") + ": length must be l + r + 1");
      if (!s.admissible(word)) throw ConfigError(w.at("word") + ": inadmissible word");
      m[word] = parse_matrix(w.req("matrix"), d, w.at("matrix"));
      w.done();
    }
    c = table_from_function(
        s, d, int(l), int(r),
        [&](const Word& w) {
          auto it = m.find(w);
          if (it == m.end()) throw ConfigError(f.at("windows") + ": no matrix for window \"" + word_str(w) + "\"");
          return it->second;
        },
        "table");
    if (auto* rs = f.opt("rules")) {
      if (!rs->is_array()) throw ConfigError(f.at("rules") + ": expected an array");
      for (std::size_t i = 0; i < rs->size(); ++i) {
        const std::string where = f.at("rules") + "[" + std::to_string(i) + "]";
        Fields q((*rs)[i], where);
        RunPairRule rule;
        const long quiet = q.integer("quiet");
        if (quiet < 0 || quiet >= s.alphabet_size) throw ConfigError(q.at("quiet") + ": not a symbol");
        rule.quiet = Symbol(quiet);
        rule.gap = q.at_least("gap", q.integer("gap"), 1);
        auto steps = [&](const std::string& k) {
          const Json& a = q.req(k);
          if (!a.is_array() || a.empty()) throw ConfigError(q.at(k) + ": expected a non-empty array of matrices");
          std::vector<Mat> out;
          for (std::size_t j = 0; j < a.size(); ++j) out.push_back(parse_matrix(a[j], d, q.at(k) + "[" + std::to_string(j) + "]"));
          return out;
        };
        rule.opener_steps = steps("opener_steps");
        rule.closer_steps = steps("closer_steps");
        rule.opener_len = int(rule.opener_steps.size());
        rule.closer_len = int(rule.closer_steps.size());
        if (rule.gap < rule.opener_len) throw ConfigError(q.at("gap") + ": must be >= the opener length");
        if (auto* p = q.opt("opener_product")) rule.opener_product = parse_matrix(*p, d, q.at("opener_product"));
        if (auto* p = q.opt("closer_product")) rule.closer_product = parse_matrix(*p, d, q.at("closer_product"));
        q.done();
        c.rules.push_back(std::move(rule));
      }
    }
  }
  if (d_in != 0 && c.d != d_in) throw ConfigError(f.at("dimension") + ": does not match the cocycle (" + std::to_string(c.d) + ")");
  f.done();
  return c;
}

// The table form of any cocycle, parseable by parse_cocycle.
inline Json cocycle_json(const CocycleTable& c) {
  Json j;
  j["kind"] = "table";
  j["dimension"] = c.d;
  j["l"] = c.l;
  j["r"] = c.r;
  Json ws = Json::array();
  for_each_word(c.spec, c.span(), [&](const Word& w) {
    ws.push_back({{"word", word_str(w)}, {"matrix", matrix_json(c.gen[c.code(w.data())])}});
  });
  j["windows"] = ws;
  if (!c.rules.empty()) {
    Json rs = Json::array();
    for (auto& q : c.rules) {
      Json r;
      r["quiet"] = int(q.quiet);
      r["gap"] = q.gap;
      Json o = Json::array(), cl = Json::array();
      for (auto& m : q.opener_steps) o.push_back(matrix_json(m));
      for (auto& m : q.closer_steps) cl.push_back(matrix_json(m));
      r["opener_steps"] = o;
      r["closer_steps"] = cl;
      if (q.opener_product.size()) r["opener_product"] = matrix_json(q.opener_product);
      if (q.closer_product.size()) r["closer_product"] = matrix_json(q.closer_product);
      rs.push_back(r);
    }
    j["rules"] = rs;
  }
  return j;
}

inline ExperimentConfig parse_config(const Json& doc) {
  ExperimentConfig cfg;
  cfg.raw = doc;
  Fields top(doc, "");
  cfg.subshift = parse_subshift(top.sub("subshift"));
  cfg.potential = parse_potential(top.sub("potential"), cfg.subshift);
  cfg.cocycle = parse_cocycle(top.sub("cocycle"), cfg.subshift);
  Fields ex = top.sub("experiment");
  cfg.kind = ex.choice("kind", experiment_kinds());
  if (auto* p = ex.opt("params")) {
    if (!p->is_object()) throw ConfigError("experiment.params: expected an object");
    cfg.params = *p;
  } else {
    cfg.params = Json::object();
  }
  ex.done();
  cfg.rng_seed = top.u64("rng_seed", 0);
  cfg.output_dir = top.str("output_dir");
  if (cfg.output_dir.empty()) throw ConfigError("output_dir: must not be empty");
  top.done();
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  Json doc;
  try {
    doc = Json::parse(ss.str());
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(doc);
}

}  // namespace clab

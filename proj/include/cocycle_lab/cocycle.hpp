#pragma once
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <tuple>
#include <vector>

#include "errors.hpp"
#include "gibbs.hpp"
#include "linalg.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "symbolic.hpp"

namespace clab {

// Local modification keyed on pairs of quiet runs: a maximal run of exactly
// opener_len quiet symbols whose partner (a maximal run of exactly closer_len
// quiet symbols starting `gap` places later) exists has its matrices replaced
// by opener_steps; the partner run gets closer_steps. Unpaired runs are untouched.
struct RunPairRule {
  Symbol quiet = 1;
  int opener_len = 0;
  int closer_len = 0;
  long gap = 0;
  std::vector<Mat> opener_steps, closer_steps;
  // exact value of each full run's product; empty = multiply the steps
  Mat opener_product, closer_product;

  long reach() const { return gap + closer_len + 1; }
};

struct CocycleTable {
  int d = 1;
  int l = 0, r = 0;  // M(x) reads x_{-l}..x_{r} (base table)
  int alphabet = 2;
  SubshiftSpec spec;
  std::string det_class = "general";
  std::string kind = "table";
  std::vector<Mat> gen;  // by base-A code of the window; empty = inadmissible
  std::vector<RunPairRule> rules;

  int span() const { return l + r + 1; }
  std::size_t code(const Symbol* w) const {
    std::size_t c = 0;
    for (int i = 0; i < span(); ++i) c = c * alphabet + w[i];
    return c;
  }
  long reach_left() const {
    long m = l;
    for (auto& q : rules) m = std::max(m, q.reach());
    return m;
  }
  long reach_right() const {
    long m = r;
    for (auto& q : rules) m = std::max(m, q.reach());
    return m;
  }
};

// Flat list of every matrix a cocycle can take: base generators by code, then rule steps.
struct MatrixBank {
  std::vector<const Mat*> mats;
  std::vector<char> identity;
  std::vector<std::size_t> rule_offset;  // first id of rule q's opener steps; closer follow
  // run_start[id] = {run length, id of the run's exact product} when id opens a run
  std::vector<std::pair<int, int>> run_start;

  explicit MatrixBank(const CocycleTable& c) {
    for (auto& m : c.gen) add(&m, c.d);
    for (auto& q : c.rules) {
      rule_offset.push_back(mats.size());
      for (auto& m : q.opener_steps) add(&m, c.d);
      for (auto& m : q.closer_steps) add(&m, c.d);
    }
    run_start.assign(mats.size(), {0, -1});
    for (std::size_t k = 0; k < c.rules.size(); ++k) {
      auto& q = c.rules[k];
      if (q.opener_product.size() > 0) {
        run_start[rule_offset[k]] = {q.opener_len, int(mats.size())};
        add(&q.opener_product, c.d);
      }
      if (q.closer_product.size() > 0) {
        run_start[rule_offset[k] + std::size_t(q.opener_len)] = {q.closer_len, int(mats.size())};
        add(&q.closer_product, c.d);
      }
    }
    run_start.resize(mats.size(), {0, -1});
  }

 private:
  void add(const Mat* m, int d) {
    mats.push_back(m);
    identity.push_back(m->size() > 0 && m->isApprox(Mat::Identity(d, d), 0.0) ? 1 : 0);
  }
};

inline void require_cover(const PointWindow& w, long a, long b, const char* op) {
  if (!w.covers(a, b))
    throw NumericRefusal(op, "window too small: need coordinates [" + std::to_string(a) + ", " + std::to_string(b) +
                                 "], have [" + std::to_string(w.first()) + ", " + std::to_string(w.last()) + "]");
}

// Matrix ids for M(T^j x), j in [from, to).
inline std::vector<int> matrix_ids(const CocycleTable& c, const MatrixBank& bank, const PointWindow& w, long from,
                                   long to, const char* op = "product") {
  std::vector<int> ids(std::size_t(std::max(0L, to - from)), -1);
  if (to <= from) return ids;
  const long rl = c.reach_left(), rr = c.reach_right();
  require_cover(w, from - rl, to - 1 + rr, op);
  for (std::size_t q = 0; q < c.rules.size(); ++q) {
    const auto& rule = c.rules[q];
    const long lo = from - rule.reach(), hi = to - 1 + rule.reach();
    // marker 1: run of opener_len starts here; 2: closer_len
    std::vector<std::uint8_t> mark(std::size_t(hi - lo + 1), 0);
    long j = lo;
    while (j <= hi) {
      if (w.at(j) != rule.quiet) {
        ++j;
        continue;
      }
      long e = j;
      while (e + 1 <= hi && w.at(e + 1) == rule.quiet) ++e;
      bool bordered = j > lo && e < hi;
      long len = e - j + 1;
      if (bordered) {
        if (len == rule.opener_len) mark[std::size_t(j - lo)] = 1;
        else if (len == rule.closer_len) mark[std::size_t(j - lo)] = 2;
      }
      j = e + 1;
    }
    const std::size_t base = bank.rule_offset[q];
    for (long p = lo; p <= hi; ++p) {
      std::uint8_t m = mark[std::size_t(p - lo)];
      if (m == 1 && p + rule.gap <= hi && mark[std::size_t(p + rule.gap - lo)] == 2) {
        for (int k = 0; k < rule.opener_len; ++k)
          if (p + k >= from && p + k < to && ids[std::size_t(p + k - from)] < 0)
            ids[std::size_t(p + k - from)] = int(base + k);
      } else if (m == 2 && p - rule.gap >= lo && mark[std::size_t(p - rule.gap - lo)] == 1) {
        for (int k = 0; k < rule.closer_len; ++k)
          if (p + k >= from && p + k < to && ids[std::size_t(p + k - from)] < 0)
            ids[std::size_t(p + k - from)] = int(base + rule.opener_len + k);
      }
    }
  }
  for (long j = from; j < to; ++j) {
    int& id = ids[std::size_t(j - from)];
    if (id >= 0) continue;
    std::size_t cd = c.code(w.ptr(j - c.l));
    if (c.gen[cd].size() == 0) throw NumericRefusal(op, "inadmissible window at coordinate " + std::to_string(j));
    id = int(cd);
  }
  return ids;
}

inline Mat generator_at(const CocycleTable& c, const PointWindow& w, long j) {
  MatrixBank bank(c);
  return *bank.mats[matrix_ids(c, bank, w, j, j + 1)[0]];
}

namespace detail {

// acc <- m * acc with Frobenius rescaling
inline void left_mul(Mat& acc, double& log_scale, const Mat& m, Mat& tmp) {
  tmp.noalias() = m * acc;
  acc.swap(tmp);
  double f = acc.norm();
  if (f > 4.0 || f < 0.25) {
    acc /= f;
    log_scale += std::log(f);
  }
}
inline void right_mul(Mat& acc, double& log_scale, const Mat& m, Mat& tmp) {
  tmp.noalias() = acc * m;
  acc.swap(tmp);
  double f = acc.norm();
  if (f > 4.0 || f < 0.25) {
    acc /= f;
    log_scale += std::log(f);
  }
}

}  // namespace detail

// Replaces every complete fired run by its exact product id.
inline std::vector<int> collapse_runs(const MatrixBank& bank, const std::vector<int>& ids) {
  std::vector<int> out;
  out.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size();) {
    auto [len, prod] = bank.run_start[std::size_t(ids[i])];
    bool full = prod >= 0 && i + std::size_t(len) <= ids.size();
    for (int k = 1; full && k < len; ++k) full = ids[i + std::size_t(k)] == ids[i] + k;
    if (full) {
      out.push_back(prod);
      i += std::size_t(len);
    } else {
      out.push_back(ids[i++]);
    }
  }
  return out;
}

// M^n(x) for n >= 0 over the positions [from, from+n) given ids.
inline ScaledMatrix product_of_ids(const MatrixBank& bank, const std::vector<int>& ids, int d) {
  ScaledMatrix out = ScaledMatrix::identity(d);
  Mat tmp(d, d);
  for (int id : collapse_runs(bank, ids))
    if (!bank.identity[id]) detail::left_mul(out.unit, out.log_scale, *bank.mats[id], tmp);
  out.renormalize();
  return out;
}

inline ScaledMatrix product(const CocycleTable& c, const PointWindow& w, long n) {
  MatrixBank bank(c);
  if (n >= 0) return product_of_ids(bank, matrix_ids(c, bank, w, 0, n), c.d);
  // M^{n}(x) = M^{|n|}(T^{n} x)^{-1}
  return product_of_ids(bank, matrix_ids(c, bank, w, n, 0), c.d).inverse();
}

// Exterior powers of every bank matrix (i = 1..d) and log|det|.
struct ExteriorBank {
  int d;
  std::vector<std::vector<Mat>> ext;  // ext[i][id], i in 1..d-1
  std::vector<double> logdet;

  ExteriorBank(const MatrixBank& bank, int dim) : d(dim), ext(dim) {
    for (int i = 2; i < d; ++i) {
      ext[i].resize(bank.mats.size());
      for (std::size_t id = 0; id < bank.mats.size(); ++id)
        if (bank.mats[id]->size()) ext[i][id] = exterior_power(*bank.mats[id], i);
    }
    logdet.resize(bank.mats.size(), 0.0);
    for (std::size_t id = 0; id < bank.mats.size(); ++id)
      if (bank.mats[id]->size()) logdet[id] = std::log(std::abs(bank.mats[id]->determinant()));
  }
};

// Running products of Lambda^i of a cocycle along consecutive positions, extended
// by left multiplication (forward time) or right multiplication (pullback).
class ExteriorAccumulator {
 public:
  ExteriorAccumulator(const MatrixBank& bank, const ExteriorBank& ext, int d)
      : bank_(bank), ext_(ext), d_(d), acc_(d), scale_(d, 0.0), tmp_(d) {
    for (int i = 1; i < d; ++i) {
      int m = int(subsets(d, i).size());
      acc_[i] = Mat::Identity(m, m);
      tmp_[i] = Mat(m, m);
    }
  }

  void push(int id, bool left) {
    logdet_ += ext_.logdet[id];
    if (bank_.identity[id]) return;
    for (int i = 1; i < d_; ++i) {
      const Mat& m = (i == 1) ? *bank_.mats[id] : ext_.ext[i][id];
      if (left) detail::left_mul(acc_[i], scale_[i], m, tmp_[i]);
      else detail::right_mul(acc_[i], scale_[i], m, tmp_[i]);
    }
  }

  // log ||Lambda^i P||, i = 0..d
  double log_norm(int i) const {
    if (i == 0) return 0.0;
    if (i == d_) return logdet_;
    return scale_[i] + std::log(op_norm(acc_[i]));
  }
  std::vector<double> log_norms() const {
    std::vector<double> v(d_ + 1);
    for (int i = 0; i <= d_; ++i) v[i] = log_norm(i);
    return v;
  }
  // top-k right (or left) singular subspace of P from Lambda^k P
  Subspace top_subspace(int k, bool right) const {
    if (k == 0) return {Mat(d_, 0)};
    if (k == d_) return {Mat::Identity(d_, d_)};
    Eigen::JacobiSVD<Mat> s(acc_[k], right ? Eigen::ComputeFullV : Eigen::ComputeFullU);
    Vec w = right ? Vec(s.matrixV().col(0)) : Vec(s.matrixU().col(0));
    return subspace_from_kvector(w, d_, k);
  }
  double logdet() const { return logdet_; }

 private:
  const MatrixBank& bank_;
  const ExteriorBank& ext_;
  int d_;
  std::vector<Mat> acc_;
  std::vector<double> scale_;
  std::vector<Mat> tmp_;
  double logdet_ = 0.0;
};

// log||Lambda^i M^n(x)||, i = 0..d, for signed n.
inline std::vector<double> log_exterior_norms(const CocycleTable& c, const PointWindow& w, long n) {
  MatrixBank bank(c);
  ExteriorBank ext(bank, c.d);
  ExteriorAccumulator acc(bank, ext, c.d);
  if (n >= 0) {
    for (int id : matrix_ids(c, bank, w, 0, n)) acc.push(id, true);
    return acc.log_norms();
  }
  for (int id : matrix_ids(c, bank, w, n, 0)) acc.push(id, true);
  auto a = acc.log_norms();
  std::vector<double> out(c.d + 1);
  for (int i = 0; i <= c.d; ++i) out[i] = a[c.d - i] - a[c.d];
  return out;
}

struct FlagBlock {
  std::vector<int> indices;  // 0-based exponent indices
  Subspace space;
};

struct FlagData {
  long n = 0;
  std::vector<double> exponents;  // descending
  std::vector<FlagBlock> blocks;
  double grouped_by = 0.0;

  // span of blocks [b0, b1)
  Subspace span_blocks(int b0, int b1) const {
    int d = int(exponents.size());
    std::vector<Vec> cols;
    for (int b = b0; b < b1; ++b)
      for (int k = 0; k < blocks[b].space.dim(); ++k) cols.push_back(blocks[b].space.basis.col(k));
    Mat m(d, int(cols.size()));
    for (int k = 0; k < int(cols.size()); ++k) m.col(k) = cols[k];
    return {m};
  }
};

// Group descending exponents into blocks separated by gaps >= gap_tol.
inline std::vector<std::vector<int>> group_exponents(const std::vector<double>& ex, double gap_tol) {
  std::vector<std::vector<int>> g{{0}};
  for (int i = 1; i < int(ex.size()); ++i) {
    if (ex[i - 1] - ex[i] < gap_tol) g.back().push_back(i);
    else g.push_back({i});
  }
  return g;
}

// Blocks from nested top subspaces: top[k] = top-k singular subspace (k = 0..d).
inline FlagData flags_from_tops(long n, const std::vector<double>& ex, const std::vector<Subspace>& top,
                                double gap_tol) {
  FlagData f{n, ex, {}, gap_tol};
  for (auto& idx : group_exponents(ex, gap_tol)) {
    int k0 = idx.front(), k1 = idx.back() + 1;
    const Subspace& hi = top[k1];
    const Subspace& lo = top[k0];
    Mat p = hi.basis - lo.basis * (lo.basis.transpose() * hi.basis);
    Eigen::JacobiSVD<Mat> s(p, Eigen::ComputeFullU);
    f.blocks.push_back({idx, {s.matrixU().leftCols(k1 - k0)}});
  }
  return f;
}

inline FlagData singular_flags(const CocycleTable& c, const PointWindow& w, long n, double gap_tol) {
  if (n == 0) throw ConfigError("singular_flags: |n| >= 1 required");
  MatrixBank bank(c);
  ExteriorBank ext(bank, c.d);
  ExteriorAccumulator acc(bank, ext, c.d);
  const long a = std::abs(n);
  // forward: P = M^n(x); backward: P = M^{|n|}(T^{-|n|}x) and M^{-|n|}(x) = P^{-1}
  for (int id : (n > 0 ? matrix_ids(c, bank, w, 0, n, "singular_flags") : matrix_ids(c, bank, w, n, 0, "singular_flags")))
    acc.push(id, true);
  // n < 0: exponent j is log s_j(P)/|n| and block j lives in the left singular vectors of P
  auto ln = acc.log_norms();
  std::vector<double> ex(c.d);
  std::vector<Subspace> top(c.d + 1);
  for (int k = 0; k <= c.d; ++k) top[k] = acc.top_subspace(k, n > 0);
  for (int i = 0; i < c.d; ++i) ex[i] = (ln[i + 1] - ln[i]) / double(a);
  return flags_from_tops(n, ex, top, gap_tol);
}

struct LyapunovEstimate {
  std::vector<double> exponents, partial_sums, stderr_;
  std::vector<double> partial_stderr;
  long n = 0;
  long samples = 0;
};

inline LyapunovEstimate lyapunov_estimate(const CocycleTable& c, const GibbsModel& g, long n, long samples,
                                          std::uint64_t seed, int workers = 0) {
  if (n < 1 || samples < 2) throw ConfigError("lyapunov_estimate: need n >= 1 and samples >= 2");
  MatrixBank bank(c);
  ExteriorBank ext(bank, c.d);
  std::vector<std::vector<double>> per(samples);
  parallel_for(std::size_t(samples), workers, [&](std::size_t s) {
    Stream rng = derive_stream(seed, s);
    PointWindow w = sample_two_sided(g, rng, c.reach_left(), n - 1 + c.reach_right());
    ExteriorAccumulator acc(bank, ext, c.d);
    for (int id : matrix_ids(c, bank, w, 0, n, "lyapunov_estimate")) acc.push(id, true);
    auto ln = acc.log_norms();
    per[s].resize(c.d);
    for (int i = 0; i < c.d; ++i) per[s][i] = ln[i + 1] / double(n);
  });
  LyapunovEstimate e;
  e.n = n;
  e.samples = samples;
  e.partial_sums.assign(c.d, 0.0);
  e.partial_stderr.assign(c.d, 0.0);
  e.exponents.assign(c.d, 0.0);
  e.stderr_.assign(c.d, 0.0);
  // shifted by the first sample so identical samples give exactly zero spread
  auto mean_se = [&](auto value) {
    const double x0 = value(0);
    double m = 0, v = 0;
    for (long s = 0; s < samples; ++s) m += value(s) - x0;
    m /= double(samples);
    for (long s = 0; s < samples; ++s) v += (value(s) - x0 - m) * (value(s) - x0 - m);
    return std::pair{x0 + m, std::sqrt(v / double(samples - 1) / double(samples))};
  };
  for (int i = 0; i < c.d; ++i) {
    std::tie(e.partial_sums[i], e.partial_stderr[i]) = mean_se([&](long s) { return per[s][i]; });
    std::tie(e.exponents[i], e.stderr_[i]) =
        mean_se([&](long s) { return per[s][i] - (i ? per[s][i - 1] : 0.0); });
  }
  return e;
}

inline double projective_average(const CocycleTable& c, const GibbsModel& g, const Vec& v0, long n,
                                 std::uint64_t seed) {
  if (n < 1) throw ConfigError("projective_average: n >= 1 required");
  MatrixBank bank(c);
  Stream rng = derive_stream(seed, 0);
  PointWindow w = sample_two_sided(g, rng, c.reach_left(), n - 1 + c.reach_right());
  Vec v = v0.normalized();
  double acc = 0;
  for (int id : matrix_ids(c, bank, w, 0, n, "projective_average")) {
    Vec u = *bank.mats[id] * v;
    double nu = u.norm();
    acc += std::log(nu);
    v = u / nu;
  }
  return acc / double(n);
}

// ---- builtin constructors ----

inline void validate_cocycle(const CocycleTable& c) {
  if (c.d < 1 || c.d > kMaxDim) throw ConfigError("cocycle.dimension must be in [1,8]");
  for (auto& m : c.gen) {
    if (m.size() == 0) continue;
    if (m.rows() != c.d || m.cols() != c.d) throw ConfigError("cocycle: generator of wrong shape");
    if (!m.allFinite()) throw ConfigError("cocycle: non-finite generator entry");
    if (singular_values(m).minCoeff() <= 1e-12) throw ConfigError("cocycle: generator not invertible");
    if (c.det_class == "sl2" && std::abs(m.determinant() - 1.0) > 1e-10)
      throw ConfigError("cocycle: det_class sl2 but a generator has det != 1");
  }
}

inline CocycleTable table_from_function(const SubshiftSpec& s, int d, int l, int r,
                                        const std::function<Mat(const Word&)>& f, std::string kind,
                                        std::string det_class = "general") {
  CocycleTable c;
  c.d = d;
  c.l = l;
  c.r = r;
  c.alphabet = s.alphabet_size;
  c.spec = s;
  c.kind = std::move(kind);
  c.det_class = std::move(det_class);
  std::size_t n = 1;
  for (int i = 0; i < c.span(); ++i) {
    n *= s.alphabet_size;
    if (n > size_cap()) throw SizeCapExceeded("cocycle table", n, size_cap());
  }
  c.gen.assign(n, Mat());
  for_each_word(s, c.span(), [&](const Word& w) { c.gen[c.code(w.data())] = f(w); });
  validate_cocycle(c);
  return c;
}

inline CocycleTable identity_cocycle(const SubshiftSpec& s, int d) {
  return table_from_function(s, d, 0, 0, [d](const Word&) { return Mat(Mat::Identity(d, d)); }, "identity");
}

inline CocycleTable constant_cocycle(const SubshiftSpec& s, const Mat& m) {
  bool sl2 = m.rows() == 2 && std::abs(m.determinant() - 1.0) <= 1e-10;
  return table_from_function(s, int(m.rows()), 0, 0, [m](const Word&) { return m; }, "constant",
                             sl2 ? "sl2" : "general");
}

// diag(entries[a]) when x_0 = a
inline CocycleTable diag_symbol_cocycle(const SubshiftSpec& s, const std::vector<std::vector<double>>& entries) {
  if (int(entries.size()) != s.alphabet_size) throw ConfigError("diag_symbol: one diagonal per symbol required");
  int d = int(entries[0].size());
  bool sl2 = d == 2;
  for (auto& e : entries) {
    if (int(e.size()) != d) throw ConfigError("diag_symbol: diagonals of unequal length");
    if (d == 2 && std::abs(e[0] * e[1] - 1.0) > 1e-10) sl2 = false;
  }
  return table_from_function(
      s, d, 0, 0,
      [&](const Word& w) {
        Vec v = Eigen::Map<const Vec>(entries[w[0]].data(), d);
        return Mat(v.asDiagonal());
      },
      "diag_symbol", sl2 ? "sl2" : "general");
}

// diag(2, 1/2) if x_0 = 0, identity if x_0 = 1
inline CocycleTable m0_cocycle() {
  auto c = diag_symbol_cocycle(SubshiftSpec::full(2), {{2.0, 0.5}, {1.0, 1.0}});
  c.kind = "m0";
  return c;
}

inline CocycleTable remark39_cocycle(const SubshiftSpec& s = SubshiftSpec::full(2)) {
  Mat m = Mat::Zero(3, 3);
  m.diagonal() << 3, 2, 1;
  auto c = table_from_function(s, 3, 0, 0, [m](const Word&) { return m; }, "remark39");
  return c;
}

inline Mat random_invertible(Stream& rng, int d, bool sl) {
  while (true) {
    Mat m(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) m(i, j) = rng.normal();
    double det = m.determinant();
    if (singular_values(m).minCoeff() < 1e-3) continue;
    if (sl) {
      if (det < 0) m.row(0) *= -1.0;
      m /= std::pow(std::abs(det), 1.0 / d);
    }
    return m;
  }
}

inline CocycleTable random_cocycle(const SubshiftSpec& s, int d, int l, int r, std::uint64_t seed, bool sl = false) {
  Stream rng = derive_stream(seed, 0x5EED);
  auto c = table_from_function(
      s, d, l, r, [&](const Word&) { return random_invertible(rng, d, sl); }, "random", sl && d == 2 ? "sl2" : "general");
  return c;
}

// [[B1, C],[0, B2]] with C drawn per window
inline CocycleTable upper_block_cocycle(const SubshiftSpec& s, const CocycleTable& b1, const CocycleTable& b2,
                                        std::uint64_t seed) {
  const int l = std::max(b1.l, b2.l), r = std::max(b1.r, b2.r), d = b1.d + b2.d;
  Stream rng = derive_stream(seed, 0xB10C);
  auto c = table_from_function(
      s, d, l, r,
      [&](const Word& w) {
        Mat m = Mat::Zero(d, d);
        m.topLeftCorner(b1.d, b1.d) = b1.gen[b1.code(w.data() + (l - b1.l))];
        m.bottomRightCorner(b2.d, b2.d) = b2.gen[b2.code(w.data() + (l - b2.l))];
        for (int i = 0; i < b1.d; ++i)
          for (int j = 0; j < b2.d; ++j) m(i, b1.d + j) = rng.normal();
        return m;
      },
      "upper_block");
  return c;
}

}  // namespace clab

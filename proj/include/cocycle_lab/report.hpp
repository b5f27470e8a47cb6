#pragma once
#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "config.hpp"

namespace clab {

inline std::string fmt17(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// RFC 4180: CRLF records, fields quoted when they hold a comma, quote or line break.
class Csv {
 public:
  using Cell = std::variant<double, long, std::string>;

  explicit Csv(std::vector<std::string> header) : cols_(header.size()) { line(header); }

  void row(const std::vector<Cell>& cells) {
    if (cells.size() != cols_) throw std::logic_error("csv row width mismatch");
    std::vector<std::string> s;
    for (auto& c : cells) {
      if (auto* d = std::get_if<double>(&c)) s.push_back(fmt17(*d));
      else if (auto* l = std::get_if<long>(&c)) s.push_back(std::to_string(*l));
      else s.push_back(std::get<std::string>(c));
    }
    line(s);
  }
  const std::string& str() const { return out_; }

  static std::string field(const std::string& v) {
    if (v.find_first_of(",\"\r\n") == std::string::npos) return v;
    std::string q = "\"";
    for (char ch : v) {
      if (ch == '"') q += '"';
      q += ch;
    }
    return q + "\"";
  }

 private:
  void line(const std::vector<std::string>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) out_ += (i ? "," : "") + field(v[i]);
    out_ += "\r\n";
  }
  std::size_t cols_;
  std::string out_;
};

inline std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string s;
  for (unsigned int i = 0; i < len; ++i) {
    s += hex[md[i] >> 4];
    s += hex[md[i] & 15];
  }
  return s;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Write to a sibling temp file, then rename over the target.
inline void write_atomic(const std::filesystem::path& p, const std::string& content) {
  namespace fs = std::filesystem;
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  fs::path tmp = p;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(content.data(), std::streamsize(content.size()));
    out.flush();
    if (!out) {
      out.close();
      fs::remove(tmp);
      throw std::runtime_error("write failed for " + p.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, p, ec);
  if (ec) {
    fs::remove(tmp);
    throw std::runtime_error("rename failed for " + p.string() + ": " + ec.message());
  }
}

struct PlotSeries {
  std::vector<double> x, y;
  std::string label;
};

struct Svg {
  std::string text;
  std::vector<std::string> notes;  // e.g. points dropped under semilogy
};

namespace detail {

inline std::string px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string tick_label(double v) {
  if (std::abs(v) < 1e-12) v = 0;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::string xml_escape(const std::string& s) {
  std::string o;
  for (char ch : s) {
    if (ch == '<') o += "&lt;";
    else if (ch == '>') o += "&gt;";
    else if (ch == '&') o += "&amp;";
    else if (ch == '"') o += "&quot;";
    else o += ch;
  }
  return o;
}

// 1-2-5 steps covering [lo, hi]
inline std::vector<double> linear_ticks(double& lo, double& hi) {
  double span = hi - lo;
  double raw = span / 5, mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  lo = std::floor(lo / step) * step;
  hi = std::ceil(hi / step) * step;
  std::vector<double> t;
  for (double v = lo; v <= hi + step * 1e-9; v += step) t.push_back(v);
  return t;
}

inline void pad_range(double& lo, double& hi) {
  if (hi > lo) return;
  double w = std::max(1.0, std::abs(lo)) * 0.5;
  lo -= w;
  hi += w;
}

}  // namespace detail

// 800x600 SVG with axes, ticks, one polyline and marker set per series and a legend.
// Identical input gives identical bytes.
inline Svg render_plot(const std::vector<PlotSeries>& series, const std::string& kind, const std::string& title,
                       const std::string& xlabel, const std::string& ylabel) {
  if (kind != "semilogy" && kind != "linear") throw ConfigError("emit_plot: kind must be semilogy or linear");
  const bool logy = kind == "semilogy";
  Svg out;
  std::vector<PlotSeries> kept;
  std::size_t total = 0;
  for (auto& s : series) {
    if (s.x.size() != s.y.size()) throw std::logic_error("emit_plot: x and y differ in length");
    PlotSeries k{{}, {}, s.label};
    long dropped = 0;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]))
        throw NumericRefusal("emit_plot", "non-finite data in series \"" + s.label + "\"");
      if (logy && !(s.y[i] > 0)) {
        ++dropped;
        continue;
      }
      k.x.push_back(s.x[i]);
      k.y.push_back(logy ? std::log10(s.y[i]) : s.y[i]);
    }
    if (dropped)
      out.notes.push_back(title + ": " + std::to_string(dropped) + " non-positive point(s) of series \"" + s.label +
                          "\" dropped under semilogy");
    total += k.x.size();
    kept.push_back(std::move(k));
  }
  if (total == 0) throw NumericRefusal("emit_plot", "empty series");

  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (auto& s : kept)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  detail::pad_range(x0, x1);
  std::vector<double> xt = detail::linear_ticks(x0, x1), yt;
  if (logy) {
    y0 = std::floor(y0);
    y1 = std::ceil(y1);
    if (y1 <= y0) y1 = y0 + 1;
    const double every = std::max(1.0, std::ceil((y1 - y0) / 8));
    for (double v = y0; v <= y1; v += every) yt.push_back(v);
  } else {
    detail::pad_range(y0, y1);
    yt = detail::linear_ticks(y0, y1);
  }

  const double L = 90, R = 770, T = 50, B = 530;
  auto sx = [&](double x) { return L + (x - x0) / (x1 - x0) * (R - L); };
  auto sy = [&](double y) { return B - (y - y0) / (y1 - y0) * (B - T); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"600\" viewBox=\"0 0 800 600\" "
       "font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect x=\"0\" y=\"0\" width=\"800\" height=\"600\" fill=\"white\"/>\n";
  o << "<text x=\"400\" y=\"28\" text-anchor=\"middle\" font-size=\"16\">" << detail::xml_escape(title) << "</text>\n";
  o << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << R - L << "\" height=\"" << B - T
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (double v : xt) {
    o << "<line x1=\"" << detail::px(sx(v)) << "\" y1=\"" << B << "\" x2=\"" << detail::px(sx(v)) << "\" y2=\"" << B + 5
      << "\" stroke=\"black\"/>";
    o << "<text x=\"" << detail::px(sx(v)) << "\" y=\"" << B + 20 << "\" text-anchor=\"middle\">"
      << detail::tick_label(v) << "</text>\n";
  }
  for (double v : yt) {
    o << "<line x1=\"" << L - 5 << "\" y1=\"" << detail::px(sy(v)) << "\" x2=\"" << R << "\" y2=\"" << detail::px(sy(v))
      << "\" stroke=\"#dddddd\"/>";
    o << "<text x=\"" << L - 8 << "\" y=\"" << detail::px(sy(v) + 4) << "\" text-anchor=\"end\">"
      << (logy ? "1e" + detail::tick_label(v) : detail::tick_label(v)) << "</text>\n";
  }
  o << "<text x=\"" << (L + R) / 2 << "\" y=\"" << B + 45 << "\" text-anchor=\"middle\">" << detail::xml_escape(xlabel)
    << "</text>\n";
  o << "<text x=\"20\" y=\"" << (T + B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 20 " << (T + B) / 2
    << ")\">" << detail::xml_escape(ylabel) << "</text>\n";
  for (std::size_t k = 0; k < kept.size(); ++k) {
    auto& s = kept[k];
    const char* col = colors[k % 6];
    if (s.x.size() > 1) {
      o << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t i = 0; i < s.x.size(); ++i) o << (i ? " " : "") << detail::px(sx(s.x[i])) << "," << detail::px(sy(s.y[i]));
      o << "\"/>\n";
    }
    for (std::size_t i = 0; i < s.x.size(); ++i)
      o << "<circle cx=\"" << detail::px(sx(s.x[i])) << "\" cy=\"" << detail::px(sy(s.y[i])) << "\" r=\"3\" fill=\"" << col
        << "\"/>\n";
    const double ly = T + 18 + 18 * double(k);
    o << "<line x1=\"" << R - 150 << "\" y1=\"" << ly - 4 << "\" x2=\"" << R - 130 << "\" y2=\"" << ly - 4 << "\" stroke=\""
      << col << "\" stroke-width=\"2\"/>";
    o << "<text x=\"" << R - 125 << "\" y=\"" << ly << "\">" << detail::xml_escape(s.label) << "</text>\n";
  }
  o << "</svg>\n";
  out.text = o.str();
  return out;
}

inline std::vector<std::string> emit_plot(const std::vector<PlotSeries>& series, const std::string& kind,
                                          const std::filesystem::path& path, const std::string& title = "",
                                          const std::string& xlabel = "x", const std::string& ylabel = "y") {
  auto svg = render_plot(series, kind, title, xlabel, ylabel);
  write_atomic(path, svg.text);
  return svg.notes;
}

// Everything a run produces, held in memory until the computation has finished.
struct RunOutput {
  std::map<std::string, std::string> files;  // name -> content
  std::vector<std::string> notes;
  Json summary = Json::object();

  void add(const std::string& name, const std::string& content) { files[name] = content; }
  void plot(const std::string& name, const std::vector<PlotSeries>& s, const std::string& kind, const std::string& title,
            const std::string& xl, const std::string& yl) {
    auto svg = render_plot(s, kind, title, xl, yl);
    files[name] = svg.text;
    for (auto& n : svg.notes) notes.push_back(n);
  }
};

inline Json build_manifest(const ExperimentConfig& cfg, const RunOutput& out) {
  Json m;
  m["config"] = cfg.raw;
  m["experiment"] = cfg.kind;
  m["rng_seed"] = cfg.rng_seed;
  Json files = Json::array();
  for (auto& [name, content] : out.files)
    files.push_back({{"name", name}, {"sha256", sha256_hex(content)}, {"bytes", content.size()}});
  m["files"] = files;
  m["notes"] = out.notes;
  m["summary"] = out.summary;
  return m;
}

// Re-reads every file listed in dir/manifest.json and compares its checksum.
inline std::vector<std::string> verify_manifest(const std::filesystem::path& dir) {
  std::vector<std::string> bad;
  Json m = Json::parse(read_file(dir / "manifest.json"));
  for (auto& f : m.at("files")) {
    const std::string name = f.at("name");
    std::string content;
    try {
      content = read_file(dir / name);
    } catch (const std::exception&) {
      bad.push_back(name + ": missing");
      continue;
    }
    if (sha256_hex(content) != f.at("sha256").get<std::string>() || content.size() != f.at("bytes").get<std::size_t>())
      bad.push_back(name + ": checksum mismatch");
  }
  return bad;
}

// Files first, manifest last, then a checksum re-validation pass.
inline void commit_output(const ExperimentConfig& cfg, const RunOutput& out) {
  const std::filesystem::path dir(cfg.output_dir);
  for (auto& [name, content] : out.files) write_atomic(dir / name, content);
  write_atomic(dir / "manifest.json", build_manifest(cfg, out).dump(2) + "\n");
  auto bad = verify_manifest(dir);
  if (!bad.empty()) throw std::runtime_error("manifest re-validation failed: " + bad.front());
}

}  // namespace clab

#include "reefclust/plot.hpp"

#include "text.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace reefclust::plot {

namespace fs = std::filesystem;

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

const char* colour(int label) {
  if (label < 0) return "#000000";
  return kPalette[label % 8];
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

fs::path with_ext(const fs::path& base, const char* ext) {
  fs::path p = base;
  p += ext;
  return p;
}

void save(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finish() {
    if (!std::isfinite(lo)) lo = 0.0, hi = 1.0;
    if (hi - lo < 1e-12) lo -= 0.5, hi += 0.5;
  }
};

/// Plot area mapping data coordinates to an SVG panel.
struct Panel {
  double left, top, width, height;
  Range xr, yr;

  double px(double x) const { return left + (x - xr.lo) / (xr.hi - xr.lo) * width; }
  double py(double y) const { return top + height - (y - yr.lo) / (yr.hi - yr.lo) * height; }
};

class Svg {
public:
  Svg(int w, int h) : w_(w), h_(h) {}

  void text(double x, double y, const std::string& s, int size = 12, const char* anchor = "middle") {
    body_ << "<text x=\"" << num(x) << "\" y=\"" << num(y) << "\" font-size=\"" << size << "\" text-anchor=\"" << anchor
          << "\">" << escape(s) << "</text>\n";
  }

  void axes(const Panel& p, const std::string& xl, const std::string& yl) {
    body_ << "<rect x=\"" << num(p.left) << "\" y=\"" << num(p.top) << "\" width=\"" << num(p.width) << "\" height=\""
          << num(p.height) << "\" fill=\"none\" stroke=\"#000\"/>\n";
    for (int i = 0; i <= 4; ++i) {
      const double fx = p.xr.lo + (p.xr.hi - p.xr.lo) * i / 4.0;
      const double fy = p.yr.lo + (p.yr.hi - p.yr.lo) * i / 4.0;
      text(p.px(fx), p.top + p.height + 14, tick(fx), 10);
      text(p.left - 4, p.py(fy) + 3, tick(fy), 10, "end");
    }
    text(p.left + p.width / 2, p.top + p.height + 30, xl);
    body_ << "<text transform=\"translate(" << num(p.left - 44) << "," << num(p.top + p.height / 2)
          << ") rotate(-90)\" font-size=\"12\" text-anchor=\"middle\">" << escape(yl) << "</text>\n";
  }

  void polyline(const Panel& p, const std::vector<double>& x, const std::vector<double>& y, const char* stroke) {
    body_ << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\"1\" points=\"";
    bool first = true;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!std::isfinite(x[i]) || !std::isfinite(y[i])) continue;
      body_ << (first ? "" : " ") << num(p.px(x[i])) << ',' << num(p.py(y[i]));
      first = false;
    }
    body_ << "\"/>\n";
  }

  void circle(double x, double y, double r, const char* fill) {
    body_ << "<circle cx=\"" << num(x) << "\" cy=\"" << num(y) << "\" r=\"" << num(r) << "\" fill=\"" << fill << "\"/>\n";
  }

  void rect(double x, double y, double w, double h, const std::string& fill, double opacity = 1.0) {
    body_ << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(w) << "\" height=\"" << num(h)
          << "\" fill=\"" << fill << "\"";
    if (opacity < 1.0) body_ << " fill-opacity=\"" << num(opacity) << "\"";
    body_ << "/>\n";
  }

  std::string str() const {
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w_ << "\" height=\"" << h_ << "\" viewBox=\"0 0 " << w_
       << ' ' << h_ << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"#fff\"/>\n"
       << body_.str() << "</svg>\n";
    return os.str();
  }

private:
  static std::string tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
  }

  int w_, h_;
  std::ostringstream body_;
};

std::string grey(double t) {
  const int v = static_cast<int>(std::lround(255.0 * (1.0 - std::clamp(t, 0.0, 1.0))));
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", v, v, v);
  return buf;
}

}  // namespace

void scatter2d(const fs::path& base, const std::vector<double>& x, const std::vector<double>& y,
               const std::vector<int>& labels, const std::string& title, const std::optional<RegionMap>& regions) {
  if (x.empty() || x.size() != y.size()) throw DataError("scatter2d: need matching, non-empty x and y");
  if (!labels.empty() && labels.size() != x.size()) throw DataError("scatter2d: label count mismatch");
  Panel p{70, 40, 480, 480, {}, {}};
  for (double v : x) p.xr.add(v);
  for (double v : y) p.yr.add(v);
  if (regions) {
    p.xr.add(regions->x_min), p.xr.add(regions->x_max);
    p.yr.add(regions->y_min), p.yr.add(regions->y_max);
  }
  p.xr.finish();
  p.yr.finish();
  Svg svg(600, 580);
  svg.text(310, 24, title, 14);
  if (regions) {
    const auto& g = regions->labels;
    const double cw = (regions->x_max - regions->x_min) / static_cast<double>(g.cols());
    const double ch = (regions->y_max - regions->y_min) / static_cast<double>(g.rows());
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) {
        const double x0 = regions->x_min + cw * static_cast<double>(c), y1 = regions->y_min + ch * static_cast<double>(r + 1);
        svg.rect(p.px(x0), p.py(y1), p.px(x0 + cw) - p.px(x0), p.py(y1 - ch) - p.py(y1), colour(g(r, c)), 0.15);
      }
  }
  svg.axes(p, "x", "y");
  for (std::size_t i = 0; i < x.size(); ++i) svg.circle(p.px(x[i]), p.py(y[i]), 2.0, colour(labels.empty() ? 0 : labels[i]));
  save(with_ext(base, ".svg"), svg.str());

  std::ostringstream csv;
  csv << "x,y,label\n";
  for (std::size_t i = 0; i < x.size(); ++i)
    csv << detail::fmt_double(x[i]) << ',' << detail::fmt_double(y[i]) << ',' << (labels.empty() ? 0 : labels[i]) << '\n';
  save(with_ext(base, ".csv"), csv.str());
}

void spectrogram(const fs::path& base, const Grid<double>& db, double df, double dt, double t_start,
                 const std::string& title, double f_min) {
  if (db.empty()) throw DataError("spectrogram: empty data");
  Range vr;
  for (double v : db.data()) vr.add(v);
  vr.finish();
  Panel p{70, 40, 600, 300, {t_start, t_start + dt * static_cast<double>(db.cols())},
          {f_min, f_min + df * static_cast<double>(db.rows())}};
  Svg svg(700, 390);
  svg.text(370, 24, title, 14);
  const double cw = p.width / static_cast<double>(db.cols()), ch = p.height / static_cast<double>(db.rows());
  for (std::size_t r = 0; r < db.rows(); ++r)
    for (std::size_t c = 0; c < db.cols(); ++c)
      svg.rect(p.left + cw * static_cast<double>(c), p.top + p.height - ch * static_cast<double>(r + 1), cw + 0.01, ch + 0.01,
               grey((db(r, c) - vr.lo) / (vr.hi - vr.lo)));
  svg.axes(p, "time (s)", "frequency (Hz)");
  save(with_ext(base, ".svg"), svg.str());

  std::ostringstream csv;
  csv << "frequency_hz";
  for (std::size_t c = 0; c < db.cols(); ++c) csv << ',' << detail::fmt_double(t_start + dt * static_cast<double>(c));
  csv << '\n';
  for (std::size_t r = 0; r < db.rows(); ++r) {
    csv << detail::fmt_double(f_min + df * static_cast<double>(r));
    for (std::size_t c = 0; c < db.cols(); ++c) csv << ',' << detail::fmt_double(db(r, c));
    csv << '\n';
  }
  save(with_ext(base, ".csv"), csv.str());
}

void timeseries(const fs::path& base, const std::vector<Line>& lines, const std::string& title, const std::string& x_label) {
  if (lines.empty()) throw DataError("timeseries: no lines");
  Panel p{70, 40, 600, 300, {}, {}};
  for (const auto& l : lines) {
    if (l.x.size() != l.y.size() || l.x.empty()) throw DataError("timeseries: line '" + l.name + "' is empty or ragged");
    for (double v : l.x) p.xr.add(v);
    for (double v : l.y) p.yr.add(v);
  }
  p.xr.finish();
  p.yr.finish();
  Svg svg(700, 390);
  svg.text(370, 24, title, 14);
  svg.axes(p, x_label, "value");
  for (std::size_t i = 0; i < lines.size(); ++i) {
    svg.polyline(p, lines[i].x, lines[i].y, colour(static_cast<int>(i)));
    svg.text(p.left + p.width - 4, p.top + 14 + 14 * static_cast<double>(i), lines[i].name, 11, "end");
  }
  save(with_ext(base, ".svg"), svg.str());

  std::ostringstream csv;
  csv << "series,x,y\n";
  for (const auto& l : lines)
    for (std::size_t i = 0; i < l.x.size(); ++i)
      csv << l.name << ',' << detail::fmt_double(l.x[i]) << ',' << detail::fmt_double(l.y[i]) << '\n';
  save(with_ext(base, ".csv"), csv.str());
}

void loss_curve(const fs::path& base, const std::vector<double>& loss, const std::string& title) {
  if (loss.empty()) throw DataError("loss_curve: empty loss history");
  Line l{"loss", {}, loss};
  for (std::size_t i = 0; i < loss.size(); ++i) l.x.push_back(static_cast<double>(i));
  timeseries(base, {l}, title, "epoch");
}

std::vector<LevelBin> percentile_levels(const std::vector<double>& times, const std::vector<double>& values, double bin_seconds) {
  if (times.size() != values.size()) throw DataError("percentile_levels: times and values differ in length");
  if (!(bin_seconds > 0.0)) throw ConfigError("percentile_levels: bin width must be positive");
  std::vector<std::pair<long, double>> keyed;
  for (std::size_t i = 0; i < times.size(); ++i)
    if (std::isfinite(values[i])) keyed.emplace_back(static_cast<long>(std::floor(times[i] / bin_seconds)), values[i]);
  std::stable_sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  // Linear interpolation between order statistics.
  auto pct = [](const std::vector<double>& v, double q) {
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  std::vector<LevelBin> out;
  for (std::size_t i = 0; i < keyed.size();) {
    std::size_t j = i;
    std::vector<double> v;
    while (j < keyed.size() && keyed[j].first == keyed[i].first) v.push_back(keyed[j++].second);
    std::sort(v.begin(), v.end());
    out.push_back({static_cast<double>(keyed[i].first) * bin_seconds, v.size(), pct(v, 0.1), pct(v, 0.5), pct(v, 0.9)});
    i = j;
  }
  return out;
}

void feature_levels(const fs::path& base, const std::vector<std::string>& names, const std::vector<double>& times,
                    const std::vector<std::vector<double>>& columns, double bin_seconds) {
  if (names.empty() || names.size() != columns.size()) throw DataError("feature_levels: names and columns differ");
  const double panel_h = 140;
  Svg svg(700, static_cast<int>(60 + panel_h * static_cast<double>(names.size()) + 40));
  svg.text(370, 24, "feature levels (10/50/90%)", 14);
  std::ostringstream csv;
  csv << "feature,bin_start_s,count,p10,p50,p90\n";
  for (std::size_t f = 0; f < names.size(); ++f) {
    const auto bins = percentile_levels(times, columns[f], bin_seconds);
    Panel p{80, 40 + panel_h * static_cast<double>(f), 580, panel_h - 45, {}, {}};
    std::vector<double> x, p10, p50, p90;
    for (const auto& b : bins) {
      x.push_back(b.t_start / 3600.0);
      p10.push_back(b.p10), p50.push_back(b.p50), p90.push_back(b.p90);
      p.xr.add(x.back());
      p.yr.add(b.p10), p.yr.add(b.p90);
      csv << names[f] << ',' << detail::fmt_double(b.t_start) << ',' << b.count << ',' << detail::fmt_double(b.p10) << ','
          << detail::fmt_double(b.p50) << ',' << detail::fmt_double(b.p90) << '\n';
    }
    p.xr.finish();
    p.yr.finish();
    svg.axes(p, f + 1 == names.size() ? "time (h)" : "", names[f]);
    svg.polyline(p, x, p10, "#7f7f7f");
    svg.polyline(p, x, p50, "#000000");
    svg.polyline(p, x, p90, "#7f7f7f");
  }
  save(with_ext(base, ".svg"), svg.str());
  save(with_ext(base, ".csv"), csv.str());
}

}  // namespace reefclust::plot

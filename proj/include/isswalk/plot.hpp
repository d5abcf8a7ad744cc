#pragma once

// Self-contained SVG line, scatter and bar plots from the CSV schemas the
// driver writes. Output bytes depend only on the input table.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "isswalk/io.hpp"

namespace isswalk {

enum class PlotKind { kTrace, kGainCurve, kPhasePortrait, kHistogram };

inline PlotKind plot_kind_from_string(const std::string& s) {
  if (s == "trace") return PlotKind::kTrace;
  if (s == "gain_curve") return PlotKind::kGainCurve;
  if (s == "phase_portrait") return PlotKind::kPhasePortrait;
  if (s == "histogram") return PlotKind::kHistogram;
  throw ConfigError("unknown plot kind '" + s + "'");
}

namespace plot_detail {

inline std::string f2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string tick_label(double v) {
  if (std::abs(v) < 1e-12) return "0";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

/// Ticks on a 1-2-5 ladder covering [lo, hi].
inline std::vector<double> nice_ticks(double& lo, double& hi, int target = 5) {
  if (!(hi > lo)) {
    const double pad = std::abs(lo) > 0 ? 0.5 * std::abs(lo) : 1.0;
    lo -= pad;
    hi += pad;
  }
  const double raw = (hi - lo) / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    step = m * mag;
    if (step >= raw) break;
  }
  lo = std::floor(lo / step) * step;
  hi = std::ceil(hi / step) * step;
  std::vector<double> t;
  for (double v = lo; v <= hi + 0.5 * step; v += step) t.push_back(v);
  return t;
}

struct Series {
  std::string label;
  std::vector<double> x, y;
  bool lines = true;
  std::vector<double> y_lo, y_hi;  // optional error bars
};

struct Bar {
  double x0, x1, h;
};

inline const char* color(size_t i) {
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                  "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};
  return kColors[i % 8];
}

inline std::string render(const std::string& title, const std::string& xlabel,
                          const std::string& ylabel, const std::vector<Series>& series,
                          const std::vector<Bar>& bars = {}) {
  const double W = 640, H = 420, L = 70, R = 20, T = 40, B = 55;
  double xlo = INFINITY, xhi = -INFINITY, ylo = INFINITY, yhi = -INFINITY;
  auto take = [&](double x, double y) {
    if (!std::isfinite(x) || !std::isfinite(y)) return;
    xlo = std::min(xlo, x);
    xhi = std::max(xhi, x);
    ylo = std::min(ylo, y);
    yhi = std::max(yhi, y);
  };
  for (const auto& s : series)
    for (size_t i = 0; i < s.x.size(); ++i) {
      take(s.x[i], s.y[i]);
      if (!s.y_lo.empty()) take(s.x[i], s.y_lo[i]);
      if (!s.y_hi.empty()) take(s.x[i], s.y_hi[i]);
    }
  for (const auto& b : bars) {
    take(b.x0, 0.0);
    take(b.x1, b.h);
  }
  if (!std::isfinite(xlo)) xlo = 0, xhi = 1, ylo = 0, yhi = 1;
  const std::vector<double> xt = nice_ticks(xlo, xhi), yt = nice_ticks(ylo, yhi);
  auto px = [&](double x) { return L + (x - xlo) / (xhi - xlo) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - ylo) / (yhi - ylo) * (H - T - B); };

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"420\" "
       "viewBox=\"0 0 640 420\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"640\" height=\"420\" fill=\"white\"/>\n";
  s += "<text x=\"320\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" + title + "</text>\n";
  for (double v : xt) {
    const std::string x = f2(px(v));
    s += "<line x1=\"" + x + "\" y1=\"" + f2(T) + "\" x2=\"" + x + "\" y2=\"" + f2(H - B) +
         "\" stroke=\"#eee\"/>\n";
    s += "<text x=\"" + x + "\" y=\"" + f2(H - B + 16) + "\" text-anchor=\"middle\">" +
         tick_label(v) + "</text>\n";
  }
  for (double v : yt) {
    const std::string y = f2(py(v));
    s += "<line x1=\"" + f2(L) + "\" y1=\"" + y + "\" x2=\"" + f2(W - R) + "\" y2=\"" + y +
         "\" stroke=\"#eee\"/>\n";
    s += "<text x=\"" + f2(L - 6) + "\" y=\"" + f2(py(v) + 4) + "\" text-anchor=\"end\">" +
         tick_label(v) + "</text>\n";
  }
  s += "<rect x=\"" + f2(L) + "\" y=\"" + f2(T) + "\" width=\"" + f2(W - L - R) + "\" height=\"" +
       f2(H - T - B) + "\" fill=\"none\" stroke=\"black\"/>\n";
  s += "<text x=\"" + f2(L + (W - L - R) / 2) + "\" y=\"" + f2(H - 14) +
       "\" text-anchor=\"middle\">" + xlabel + "</text>\n";
  s += "<text x=\"16\" y=\"" + f2(T + (H - T - B) / 2) +
       "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " + f2(T + (H - T - B) / 2) + ")\">" +
       ylabel + "</text>\n";

  for (const auto& b : bars)
    s += "<rect x=\"" + f2(px(b.x0)) + "\" y=\"" + f2(py(b.h)) + "\" width=\"" +
         f2(px(b.x1) - px(b.x0)) + "\" height=\"" + f2(py(0) - py(b.h)) +
         "\" fill=\"#1f77b4\" stroke=\"white\"/>\n";

  for (size_t k = 0; k < series.size(); ++k) {
    const Series& sr = series[k];
    if (sr.lines) {
      std::string pts;
      for (size_t i = 0; i < sr.x.size(); ++i) {
        if (!std::isfinite(sr.x[i]) || !std::isfinite(sr.y[i])) continue;
        pts += f2(px(sr.x[i])) + "," + f2(py(sr.y[i])) + " ";
      }
      if (!pts.empty()) pts.pop_back();
      s += "<polyline fill=\"none\" stroke=\"" + std::string(color(k)) +
           "\" stroke-width=\"1.2\" points=\"" + pts + "\"/>\n";
    }
    for (size_t i = 0; i < sr.x.size(); ++i) {
      if (!sr.y_lo.empty())
        s += "<line x1=\"" + f2(px(sr.x[i])) + "\" y1=\"" + f2(py(sr.y_lo[i])) + "\" x2=\"" +
             f2(px(sr.x[i])) + "\" y2=\"" + f2(py(sr.y_hi[i])) + "\" stroke=\"" + color(k) +
             "\"/>\n";
      if (!sr.lines || !sr.y_lo.empty())
        s += "<circle cx=\"" + f2(px(sr.x[i])) + "\" cy=\"" + f2(py(sr.y[i])) +
             "\" r=\"2.5\" fill=\"" + color(k) + "\"/>\n";
    }
    if (!sr.label.empty())
      s += "<text x=\"" + f2(W - R - 6) + "\" y=\"" + f2(T + 16 + 14 * k) +
           "\" text-anchor=\"end\" fill=\"" + color(k) + "\">" + sr.label + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

inline std::vector<std::string> numbered(const Csv& csv, const std::string& prefix) {
  std::vector<std::string> out;
  for (int i = 0;; ++i) {
    if (!csv.has(prefix + std::to_string(i))) break;
    out.push_back(prefix + std::to_string(i));
  }
  return out;
}

inline void require(const Csv& csv, const std::vector<std::string>& cols, const std::string& kind) {
  if (csv.header.empty()) return;  // empty file: axes only
  for (const auto& c : cols)
    if (!csv.has(c)) throw SchemaMismatch(kind + " plot needs column " + c);
}

}  // namespace plot_detail

/// Renders one of the four plot kinds. An empty table yields empty axes.
inline std::string render_plot(const Csv& csv, PlotKind kind, int bins = 30) {
  using namespace plot_detail;
  std::vector<Series> series;
  switch (kind) {
    case PlotKind::kTrace: {
      require(csv, {"t", "q0"}, "trace");
      // The last six coordinates are the joints; base translation would flatten the scale.
      std::vector<std::string> qs = numbered(csv, "q");
      if (qs.size() > 6) qs.erase(qs.begin(), qs.end() - 6);
      for (const auto& c : qs) series.push_back(Series{c, csv.column("t"), csv.column(c)});
      return render("Joint trajectories", "time t (s)", "joint angle q (rad)", series);
    }
    case PlotKind::kPhasePortrait: {
      require(csv, {"q0", "qd0"}, "phase_portrait");
      std::vector<std::string> qs = numbered(csv, "q");
      if (qs.size() > 6) qs.erase(qs.begin(), qs.end() - 6);
      for (const auto& c : qs)
        series.push_back(Series{c, csv.column(c), csv.column("qd" + c.substr(1)), false});
      return render("Phase portrait", "joint angle q (rad)", "joint rate dq/dt (rad/s)", series);
    }
    case PlotKind::kGainCurve: {
      require(csv, {"magnitude", "mean", "ci_lo", "ci_hi", "iota"}, "gain_curve");
      if (!csv.header.empty()) {
        Series m{"mean ultimate bound", csv.column("magnitude"), csv.column("mean")};
        m.y_lo = csv.column("ci_lo");
        m.y_hi = csv.column("ci_hi");
        series.push_back(std::move(m));
        series.push_back(Series{"max over seeds", csv.column("magnitude"), csv.column("iota")});
      }
      return render("Disturbance gain curve", "disturbance bound delta (N m)",
                    "ultimate section error |x - x*|", series);
    }
    case PlotKind::kHistogram: {
      require(csv, {"d_inf"}, "histogram");
      std::vector<Bar> bars;
      if (!csv.rows.empty()) {
        std::vector<double> d = csv.column("d_inf");
        d.erase(std::remove_if(d.begin(), d.end(), [](double v) { return !std::isfinite(v); }),
                d.end());
        const double hi = d.empty() ? 1.0 : *std::max_element(d.begin(), d.end());
        const double w = hi > 0 ? hi / bins : 1.0 / bins;
        std::vector<double> count(bins, 0.0);
        for (double v : d) count[std::min(bins - 1, static_cast<int>(v / w))] += 1;
        for (int b = 0; b < bins; ++b) bars.push_back(Bar{b * w, (b + 1) * w, count[b]});
      }
      return render("Deviation histogram", "deviation |d| (N m)", "samples", {}, bars);
    }
  }
  return {};
}

}  // namespace isswalk

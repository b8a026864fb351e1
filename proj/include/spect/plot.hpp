#ifndef SPECT_PLOT_HPP
#define SPECT_PLOT_HPP

#include <algorithm>
#include <cstdio>
#include <string>
#include <vector>

#include "spect/common.hpp"

namespace spect {

struct PlotSeries {
  std::string name;
  std::vector<double> x, y;
};

namespace detail {

inline std::string num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

inline const char* plot_color(std::size_t i) {
  static const char* palette[] = {"#1f6fb2", "#d1495b", "#3a7d44", "#8957a1", "#c8772b", "#4d4d4d"};
  return palette[i % 6];
}

}  // namespace detail

/// Self-contained line chart; series are polylines over a shared axis box.
inline std::string svg_line_chart(const std::string& title, const std::string& x_label,
                                  const std::string& y_label, const std::vector<PlotSeries>& series) {
  if (series.empty()) throw ValidationError("line chart needs at least one series");
  constexpr double w = 640, h = 400, ml = 64, mr = 16, mt = 36, mb = 48;
  double x_min = 0, x_max = 1, y_min = 0, y_max = 1;
  bool first = true;
  for (const PlotSeries& s : series) {
    if (s.x.size() != s.y.size()) throw ValidationError("series x/y length mismatch");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (first) {
        x_min = x_max = s.x[i];
        y_min = y_max = s.y[i];
        first = false;
      }
      x_min = std::min(x_min, s.x[i]);
      x_max = std::max(x_max, s.x[i]);
      y_min = std::min(y_min, s.y[i]);
      y_max = std::max(y_max, s.y[i]);
    }
  }
  if (first) throw ValidationError("line chart needs at least one point");
  if (x_max == x_min) x_max = x_min + 1;
  if (y_max == y_min) y_max = y_min + 1;
  auto px = [&](double x) { return ml + (x - x_min) / (x_max - x_min) * (w - ml - mr); };
  auto py = [&](double y) { return h - mb - (y - y_min) / (y_max - y_min) * (h - mt - mb); };

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" "
                    "viewBox=\"0 0 640 400\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg += "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
  svg += "<text x=\"320\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" + title + "</text>\n";
  for (int t = 0; t <= 4; ++t) {
    double fx = x_min + (x_max - x_min) * t / 4.0;
    double fy = y_min + (y_max - y_min) * t / 4.0;
    svg += "<line x1=\"" + detail::num(px(fx)) + "\" y1=\"" + detail::num(h - mb) + "\" x2=\"" +
           detail::num(px(fx)) + "\" y2=\"" + detail::num(mt) + "\" stroke=\"#e0e0e0\"/>\n";
    svg += "<line x1=\"" + detail::num(ml) + "\" y1=\"" + detail::num(py(fy)) + "\" x2=\"" +
           detail::num(w - mr) + "\" y2=\"" + detail::num(py(fy)) + "\" stroke=\"#e0e0e0\"/>\n";
    svg += "<text x=\"" + detail::num(px(fx)) + "\" y=\"" + detail::num(h - mb + 16) +
           "\" text-anchor=\"middle\">" + detail::num(fx) + "</text>\n";
    svg += "<text x=\"" + detail::num(ml - 6) + "\" y=\"" + detail::num(py(fy) + 4) +
           "\" text-anchor=\"end\">" + detail::num(fy) + "</text>\n";
  }
  svg += "<rect x=\"" + detail::num(ml) + "\" y=\"" + detail::num(mt) + "\" width=\"" +
         detail::num(w - ml - mr) + "\" height=\"" + detail::num(h - mt - mb) +
         "\" fill=\"none\" stroke=\"#333\"/>\n";
  svg += "<text x=\"320\" y=\"392\" text-anchor=\"middle\">" + x_label + "</text>\n";
  svg += "<text x=\"14\" y=\"200\" text-anchor=\"middle\" transform=\"rotate(-90 14 200)\">" + y_label +
         "</text>\n";
  for (std::size_t si = 0; si < series.size(); ++si) {
    const PlotSeries& s = series[si];
    std::string pts;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!pts.empty()) pts += " ";
      pts += detail::num(px(s.x[i])) + "," + detail::num(py(s.y[i]));
    }
    svg += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" +
           detail::plot_color(si) + "\" stroke-width=\"1.5\"/>\n";
    svg += "<text x=\"" + detail::num(w - mr - 6) + "\" y=\"" + detail::num(mt + 16 + 16 * double(si)) +
           "\" text-anchor=\"end\" fill=\"" + detail::plot_color(si) + "\">" + s.name + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

/// Bar chart for non-negative per-category values (attention weights).
inline std::string svg_bar_chart(const std::string& title, const std::vector<std::string>& labels,
                                 const std::vector<double>& values) {
  if (values.empty()) throw ValidationError("bar chart needs at least one value");
  if (!labels.empty() && labels.size() != values.size())
    throw ValidationError("bar chart label/value count mismatch");
  constexpr double w = 640, h = 400, ml = 64, mr = 16, mt = 36, mb = 48;
  double v_max = *std::max_element(values.begin(), values.end());
  if (v_max <= 0) v_max = 1;
  double band = (w - ml - mr) / static_cast<double>(values.size());

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" "
                    "viewBox=\"0 0 640 400\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg += "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
  svg += "<text x=\"320\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" + title + "</text>\n";
  for (int t = 0; t <= 4; ++t) {
    double fv = v_max * t / 4.0;
    double y = h - mb - fv / v_max * (h - mt - mb);
    svg += "<line x1=\"" + detail::num(ml) + "\" y1=\"" + detail::num(y) + "\" x2=\"" +
           detail::num(w - mr) + "\" y2=\"" + detail::num(y) + "\" stroke=\"#e0e0e0\"/>\n";
    svg += "<text x=\"" + detail::num(ml - 6) + "\" y=\"" + detail::num(y + 4) +
           "\" text-anchor=\"end\">" + detail::num(fv) + "</text>\n";
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    double v = std::max(0.0, values[i]);
    double bh = v / v_max * (h - mt - mb);
    double x = ml + band * static_cast<double>(i);
    svg += "<rect x=\"" + detail::num(x + band * 0.15) + "\" y=\"" + detail::num(h - mb - bh) +
           "\" width=\"" + detail::num(band * 0.7) + "\" height=\"" + detail::num(bh) +
           "\" fill=\"#1f6fb2\"/>\n";
    if (!labels.empty() && (values.size() <= 16 || i % 4 == 0))
      svg += "<text x=\"" + detail::num(x + band * 0.5) + "\" y=\"" + detail::num(h - mb + 16) +
             "\" text-anchor=\"middle\">" + labels[i] + "</text>\n";
  }
  svg += "<rect x=\"" + detail::num(ml) + "\" y=\"" + detail::num(mt) + "\" width=\"" +
         detail::num(w - ml - mr) + "\" height=\"" + detail::num(h - mt - mb) +
         "\" fill=\"none\" stroke=\"#333\"/>\n";
  svg += "</svg>\n";
  return svg;
}

}  // namespace spect

#endif  // SPECT_PLOT_HPP

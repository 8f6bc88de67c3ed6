// Minimal static SVG line charts with a log-scaled y axis.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

namespace koopquad::bench {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotSpec {
  std::string title;
  std::string x_label = "t [s]";
  std::string y_label = "relative error";
  int width = 640;
  int height = 420;
};

namespace detail {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '&': o += "&amp;"; break;
      default: o += c;
    }
  }
  return o;
}

}  // namespace detail

/// Non-positive and non-finite samples are left out (log axis).
inline void write_log_plot(std::ostream& os, const PlotSpec& spec, const std::vector<Series>& series) {
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  const double ml = 70, mr = 130, mt = 36, mb = 48;
  const double pw = spec.width - ml - mr;
  const double ph = spec.height - mt - mb;

  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!(s.y[i] > 0.0) || !std::isfinite(s.y[i])) continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  }
  if (!std::isfinite(xmin)) {
    xmin = 0; xmax = 1; ymin = 1e-16; ymax = 1;
  }
  if (xmax <= xmin) xmax = xmin + 1.0;
  double lo = std::floor(std::log10(ymin));
  double hi = std::ceil(std::log10(ymax));
  if (hi <= lo) hi = lo + 1.0;
  auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return mt + (hi - std::log10(y)) / (hi - lo) * ph; };

  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << spec.width << "\" height=\""
     << spec.height << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << ml + pw / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
     << detail::escape(spec.title) << "</text>\n";
  os << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  const int decades = static_cast<int>(hi - lo);
  const int step = std::max(1, decades / 8);
  for (int d = 0; d <= decades; d += step) {
    const double y = py(std::pow(10.0, lo + d));
    os << "<line x1=\"" << ml << "\" x2=\"" << ml + pw << "\" y1=\"" << y << "\" y2=\"" << y
       << "\" stroke=\"#ddd\"/>\n";
    os << "<text x=\"" << ml - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">1e"
       << static_cast<int>(lo + d) << "</text>\n";
  }
  for (int i = 0; i <= 5; ++i) {
    const double xv = xmin + (xmax - xmin) * i / 5.0;
    os << "<text x=\"" << px(xv) << "\" y=\"" << mt + ph + 16 << "\" text-anchor=\"middle\">"
       << detail::fmt("%g", xv) << "</text>\n";
  }
  os << "<text x=\"" << ml + pw / 2 << "\" y=\"" << spec.height - 10
     << "\" text-anchor=\"middle\">" << detail::escape(spec.x_label) << "</text>\n";
  os << "<text transform=\"translate(16," << mt + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
     << detail::escape(spec.y_label) << "</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kColors[k % 6];
    // split into runs of plottable samples
    std::string path;
    bool pen = false;
    const std::size_t n = std::min(s.x.size(), s.y.size());
    const std::size_t stride = std::max<std::size_t>(1, n / 2000);
    for (std::size_t i = 0; i < n; i += stride) {
      if (!(s.y[i] > 0.0) || !std::isfinite(s.y[i])) {
        pen = false;
        continue;
      }
      path += (pen ? " L" : " M") + detail::fmt("%.2f", px(s.x[i])) + "," + detail::fmt("%.2f", py(s.y[i]));
      pen = true;
    }
    if (!path.empty()) {
      os << "<path d=\"" << path << "\" fill=\"none\" stroke=\"" << color
         << "\" stroke-width=\"1.5\"/>\n";
    }
    const double ly = mt + 14 + 16.0 * static_cast<double>(k);
    os << "<line x1=\"" << ml + pw + 10 << "\" x2=\"" << ml + pw + 30 << "\" y1=\"" << ly - 4
       << "\" y2=\"" << ly - 4 << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << ml + pw + 34 << "\" y=\"" << ly << "\">" << detail::escape(s.label)
       << "</text>\n";
  }
  os << "</svg>\n";
}

}  // namespace koopquad::bench

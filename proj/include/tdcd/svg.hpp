#pragma once

// Minimal SVG line chart for loss-vs-round curves.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace tdcd {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotOptions {
  std::string title = "Training loss vs communication rounds";
  std::string x_label = "communication round";
  std::string y_label = "training loss";
  bool log_y = true;
  int width = 720;
  int height = 480;
};

namespace detail {

inline std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string fmt(double v, const char* spec = "%.2f") {
  std::array<char, 32> buf{};
  std::snprintf(buf.data(), buf.size(), spec, v);
  return buf.data();
}

}  // namespace detail

inline std::string render_svg(const std::vector<Series>& series, const PlotOptions& opt = {}) {
  static constexpr std::array<const char*, 8> kColors = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                                         "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  const double left = 80, right = 160, top = 40, bottom = 60;
  const double plot_w = opt.width - left - right;
  const double plot_h = opt.height - top - bottom;

  // Non-positive values cannot be drawn on a log axis and are skipped.
  auto ty = [&](double v) { return opt.log_y ? std::log10(v) : v; };
  auto usable = [&](double v) { return std::isfinite(v) && (!opt.log_y || v > 0.0); };

  double x_min = std::numeric_limits<double>::infinity(), x_max = -x_min;
  double y_min = x_min, y_max = -x_min;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!usable(s.y[i])) continue;
      x_min = std::min(x_min, s.x[i]);
      x_max = std::max(x_max, s.x[i]);
      y_min = std::min(y_min, ty(s.y[i]));
      y_max = std::max(y_max, ty(s.y[i]));
    }
  }
  if (!std::isfinite(x_min)) x_min = 0, x_max = 1, y_min = 0, y_max = 1;
  if (x_max == x_min) x_max = x_min + 1;
  if (y_max == y_min) y_max = y_min + 1;

  auto px = [&](double x) { return left + (x - x_min) / (x_max - x_min) * plot_w; };
  auto py = [&](double y) { return top + (1.0 - (y - y_min) / (y_max - y_min)) * plot_h; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << opt.width << "\" height=\"" << opt.height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << opt.width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
      << detail::escape_xml(opt.title) << "</text>\n";
  svg << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << plot_w << "\" height=\"" << plot_h
      << "\" fill=\"none\" stroke=\"black\"/>\n";

  for (int i = 0; i <= 5; ++i) {
    const double xv = x_min + (x_max - x_min) * i / 5.0;
    const double yv = y_min + (y_max - y_min) * i / 5.0;
    svg << "<text x=\"" << detail::fmt(px(xv)) << "\" y=\"" << detail::fmt(top + plot_h + 18)
        << "\" text-anchor=\"middle\">" << detail::fmt(xv, "%g") << "</text>\n";
    svg << "<line x1=\"" << left << "\" x2=\"" << left + plot_w << "\" y1=\"" << detail::fmt(py(yv))
        << "\" y2=\"" << detail::fmt(py(yv)) << "\" stroke=\"#ddd\"/>\n";
    svg << "<text x=\"" << left - 6 << "\" y=\"" << detail::fmt(py(yv) + 4) << "\" text-anchor=\"end\">"
        << detail::fmt(opt.log_y ? std::pow(10.0, yv) : yv, "%.4g") << "</text>\n";
  }
  svg << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << opt.height - 15 << "\" text-anchor=\"middle\">"
      << detail::escape_xml(opt.x_label) << "</text>\n";
  svg << "<text transform=\"translate(18," << top + plot_h / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << detail::escape_xml(opt.y_label + (opt.log_y ? " (log)" : "")) << "</text>\n";

  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kColors[s % kColors.size()];
    svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < series[s].x.size() && i < series[s].y.size(); ++i) {
      if (!usable(series[s].y[i])) continue;
      svg << detail::fmt(px(series[s].x[i])) << ',' << detail::fmt(py(ty(series[s].y[i]))) << ' ';
    }
    svg << "\"/>\n";
    const double ly = top + 14 + 18.0 * static_cast<double>(s);
    svg << "<line x1=\"" << left + plot_w + 12 << "\" x2=\"" << left + plot_w + 36 << "\" y1=\"" << ly
        << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << left + plot_w + 42 << "\" y=\"" << ly + 4 << "\">"
        << detail::escape_xml(series[s].label) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace tdcd

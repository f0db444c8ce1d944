#pragma once

// Minimal SVG emitters: line plots (optionally log-x), bar charts and
// heatmaps with a shared logarithmic color scale.

#include "groklab/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

namespace groklab::svg {

struct Series {
  std::string name;
  std::vector<double> x, y;
  std::string color = "#1f77b4";
};

namespace detail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

// Viridis-like ramp sampled at t in [0, 1].
inline std::string ramp(double t) {
  static constexpr double stops[5][3] = {
      {68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}};
  t = std::clamp(t, 0.0, 1.0) * 4.0;
  const int i = std::min(3, static_cast<int>(t));
  const double f = t - i;
  char buf[16];
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x",
                static_cast<int>(stops[i][0] + f * (stops[i + 1][0] - stops[i][0])),
                static_cast<int>(stops[i][1] + f * (stops[i + 1][1] - stops[i][1])),
                static_cast<int>(stops[i][2] + f * (stops[i + 1][2] - stops[i][2])));
  return buf;
}

}  // namespace detail

/// Line plot. With log_x, non-positive x values are drawn at x = 1.
inline void line_plot(std::ostream& os, const std::string& title, const std::vector<Series>& series,
                      bool log_x, const std::string& x_label, const std::string& y_label,
                      double y_min = std::numeric_limits<double>::quiet_NaN(),
                      double y_max = std::numeric_limits<double>::quiet_NaN()) {
  constexpr double W = 640, H = 400, L = 60, R = 140, T = 40, B = 50;
  auto tx = [log_x](double x) { return log_x ? std::log10(std::max(x, 1.0)) : x; };
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (double x : s.x) {
      x0 = std::min(x0, tx(x));
      x1 = std::max(x1, tx(x));
    }
    for (double y : s.y) {
      if (!std::isfinite(y)) continue;
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1;
  if (!std::isfinite(y0)) y0 = 0, y1 = 1;
  if (std::isfinite(y_min)) y0 = y_min;
  if (std::isfinite(y_max)) y1 = y_max;
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) y1 = y0 + 1;
  auto px = [&](double x) { return L + (tx(x) - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
     << detail::escape(title) << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  // x ticks: decades in log mode, five even ticks otherwise.
  std::vector<double> xticks;
  if (log_x) {
    for (int k = static_cast<int>(std::floor(x0)); k <= static_cast<int>(std::ceil(x1)); ++k) {
      if (k >= x0 - 1e-9 && k <= x1 + 1e-9) xticks.push_back(std::pow(10.0, k));
    }
  } else {
    for (int k = 0; k <= 4; ++k) xticks.push_back(x0 + (x1 - x0) * k / 4.0);
  }
  for (double xt : xticks) {
    os << "<text x=\"" << detail::num(px(xt)) << "\" y=\"" << H - B + 16
       << "\" text-anchor=\"middle\">" << detail::tick_label(xt) << "</text>\n";
  }
  for (int k = 0; k <= 4; ++k) {
    const double yt = y0 + (y1 - y0) * k / 4.0;
    os << "<text x=\"" << L - 6 << "\" y=\"" << detail::num(py(yt) + 4)
       << "\" text-anchor=\"end\">" << detail::tick_label(yt) << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">"
     << detail::escape(x_label) << (log_x ? " (log scale)" : "") << "</text>\n";
  os << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << (T + H - B) / 2 << ")\">" << detail::escape(y_label) << "</text>\n";
  int legend = 0;
  for (const auto& s : series) {
    os << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      os << detail::num(px(s.x[i])) << ',' << detail::num(py(std::clamp(s.y[i], y0, y1))) << ' ';
    }
    os << "\"/>\n";
    const double ly = T + 10 + 18 * legend++;
    os << "<line x1=\"" << W - R + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 30 << "\" y2=\""
       << ly << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << W - R + 36 << "\" y=\"" << ly + 4 << "\">" << detail::escape(s.name)
       << "</text>\n";
  }
  os << "</svg>\n";
}

inline void bar_chart(std::ostream& os, const std::string& title, const std::vector<double>& values,
                      const std::string& x_label, const std::string& y_label) {
  constexpr double W = 640, H = 360, L = 60, R = 20, T = 40, B = 50;
  double vmax = 0.0;
  for (double v : values) vmax = std::max(vmax, v);
  if (vmax <= 0.0) vmax = 1.0;
  const double slot = values.empty() ? 1.0 : (W - L - R) / static_cast<double>(values.size());
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
     << detail::escape(title) << "</text>\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double h = std::max(0.0, values[i]) / vmax * (H - T - B);
    os << "<rect x=\"" << detail::num(L + i * slot + 0.1 * slot) << "\" y=\""
       << detail::num(H - B - h) << "\" width=\"" << detail::num(0.8 * slot) << "\" height=\""
       << detail::num(h) << "\" fill=\"#1f77b4\"/>\n";
  }
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double v = vmax * k / 4.0;
    os << "<text x=\"" << L - 6 << "\" y=\"" << detail::num(H - B - v / vmax * (H - T - B) + 4)
       << "\" text-anchor=\"end\">" << detail::tick_label(v) << "</text>\n";
  }
  const std::size_t step = std::max<std::size_t>(1, values.size() / 10);
  for (std::size_t i = 0; i < values.size(); i += step) {
    os << "<text x=\"" << detail::num(L + (i + 0.5) * slot) << "\" y=\"" << H - B + 16
       << "\" text-anchor=\"middle\">" << i << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">"
     << detail::escape(x_label) << "</text>\n";
  os << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << (T + H - B) / 2 << ")\">" << detail::escape(y_label) << "</text>\n";
  os << "</svg>\n";
}

struct HeatPanel {
  std::string title;
  Mat values;  // nonnegative; exact zeros are drawn white
};

/// Side-by-side heatmaps sharing one log10 color scale. Panels larger than
/// max_cells per side are max-pooled for display.
inline void heatmaps(std::ostream& os, const std::vector<HeatPanel>& panels, int max_cells = 128) {
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (const auto& p : panels) {
    for (Eigen::Index i = 0; i < p.values.size(); ++i) {
      const double v = p.values.data()[i];
      if (v > 0.0) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
  }
  if (!(hi > 0.0)) lo = hi = 1.0;
  const double llo = std::log10(lo), lhi = std::log10(hi);
  constexpr double panel = 300, gap = 40, top = 40;
  const double width = gap + panels.size() * (panel + gap);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
     << top + panel + 40 << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t k = 0; k < panels.size(); ++k) {
    const Mat& m = panels[k].values;
    const double ox = gap + k * (panel + gap);
    os << "<text x=\"" << ox + panel / 2 << "\" y=\"24\" text-anchor=\"middle\">"
       << detail::escape(panels[k].title) << "</text>\n";
    if (m.size() == 0) continue;
    const Eigen::Index rs = std::max<Eigen::Index>(1, (m.rows() + max_cells - 1) / max_cells);
    const Eigen::Index cs = std::max<Eigen::Index>(1, (m.cols() + max_cells - 1) / max_cells);
    const Eigen::Index nr = (m.rows() + rs - 1) / rs, nc = (m.cols() + cs - 1) / cs;
    const double cw = panel / static_cast<double>(nc), ch = panel / static_cast<double>(nr);
    for (Eigen::Index i = 0; i < nr; ++i) {
      for (Eigen::Index j = 0; j < nc; ++j) {
        const double v = m.block(i * rs, j * cs, std::min(rs, m.rows() - i * rs),
                                 std::min(cs, m.cols() - j * cs))
                             .maxCoeff();
        const std::string fill =
            v > 0.0 ? detail::ramp(lhi > llo ? (std::log10(v) - llo) / (lhi - llo) : 1.0)
                    : std::string("#ffffff");
        os << "<rect x=\"" << detail::num(ox + j * cw) << "\" y=\"" << detail::num(top + i * ch)
           << "\" width=\"" << detail::num(cw + 0.05) << "\" height=\"" << detail::num(ch + 0.05)
           << "\" fill=\"" << fill << "\"/>\n";
      }
    }
  }
  os << "<text x=\"" << gap << "\" y=\"" << top + panel + 24 << "\">log10 |grad| from "
     << detail::tick_label(llo) << " to " << detail::tick_label(lhi)
     << " (white = exactly zero)</text>\n";
  os << "</svg>\n";
}

}  // namespace groklab::svg

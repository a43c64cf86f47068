#include "gmetro/plots.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace gmetro {

namespace {

const char* kPalette[] = {"#3b6ea8", "#d9822b", "#5a9e5a", "#b04a4a", "#7a5aa6", "#8c6d46"};

std::string escape(const std::string& s) {
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

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

}  // namespace

std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<BarSeries>& series) {
  const double left = 60, top = 40, plot_h = 260, bottom = 120;
  const double group_w = std::max<double>(30.0, 14.0 * std::max<std::size_t>(1, series.size()) + 10.0);
  const double plot_w = group_w * std::max<std::size_t>(1, labels.size());
  const double width = left + plot_w + 150, height = top + plot_h + bottom;
  double ymax = 1.0;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.values.size(); ++i)
      ymax = std::max(ymax, s.values[i] + (i < s.errors.size() ? s.errors[i] : 0.0));

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\"" << num(height)
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << num(left) << "\" y=\"20\" font-size=\"14\">" << escape(title) << "</text>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = ymax * t / 4.0, y = top + plot_h - plot_h * v / ymax;
    o << "<line x1=\"" << num(left) << "\" x2=\"" << num(left + plot_w) << "\" y1=\"" << num(y) << "\" y2=\""
      << num(y) << "\" stroke=\"#ddd\"/>\n";
    o << "<text x=\"" << num(left - 6) << "\" y=\"" << num(y + 4) << "\" text-anchor=\"end\">" << num(v)
      << "</text>\n";
  }
  const double bar_w = (group_w - 10.0) / std::max<std::size_t>(1, series.size());
  for (std::size_t g = 0; g < labels.size(); ++g) {
    const double gx = left + g * group_w + 5.0;
    for (std::size_t s = 0; s < series.size(); ++s) {
      if (g >= series[s].values.size()) continue;
      const double v = series[s].values[g];
      const double h = plot_h * std::max(0.0, v) / ymax;
      const double x = gx + s * bar_w;
      o << "<rect x=\"" << num(x) << "\" y=\"" << num(top + plot_h - h) << "\" width=\"" << num(bar_w - 1)
        << "\" height=\"" << num(h) << "\" fill=\"" << kPalette[s % 6] << "\"/>\n";
      if (g < series[s].errors.size()) {
        const double e = plot_h * series[s].errors[g] / ymax, cx = x + bar_w / 2;
        o << "<line x1=\"" << num(cx) << "\" x2=\"" << num(cx) << "\" y1=\"" << num(top + plot_h - h - e)
          << "\" y2=\"" << num(top + plot_h - h + e) << "\" stroke=\"black\"/>\n";
      }
    }
    const double lx = gx + group_w / 2 - 5, ly = top + plot_h + 10;
    o << "<text x=\"" << num(lx) << "\" y=\"" << num(ly) << "\" transform=\"rotate(45 " << num(lx) << " "
      << num(ly) << ")\">" << escape(labels[g]) << "</text>\n";
  }
  o << "<line x1=\"" << num(left) << "\" x2=\"" << num(left + plot_w) << "\" y1=\"" << num(top + plot_h)
    << "\" y2=\"" << num(top + plot_h) << "\" stroke=\"black\"/>\n";
  for (std::size_t s = 0; s < series.size(); ++s) {
    const double y = top + 14.0 * s;
    o << "<rect x=\"" << num(left + plot_w + 15) << "\" y=\"" << num(y) << "\" width=\"10\" height=\"10\" fill=\""
      << kPalette[s % 6] << "\"/>\n";
    o << "<text x=\"" << num(left + plot_w + 30) << "\" y=\"" << num(y + 9) << "\">" << escape(series[s].name)
      << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string heatmap_svg(const std::string& title, const Matrix& m, const std::vector<std::string>& row_labels,
                        const std::vector<std::string>& col_labels) {
  const double cell = 48, left = 130, top = 50;
  const double width = left + cell * m.cols() + 20, height = top + cell * m.rows() + 110;
  const double mx = m.size() > 0 ? std::max(1e-12, m.maxCoeff()) : 1.0;
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\"" << num(height)
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"10\" y=\"20\" font-size=\"14\">" << escape(title) << "</text>\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double t = std::clamp(m(i, j) / mx, 0.0, 1.0);
      const int r = static_cast<int>(255 - t * (255 - 20)), g = static_cast<int>(255 - t * (255 - 60)),
                b = static_cast<int>(255 - t * (255 - 140));
      char fill[8];
      std::snprintf(fill, sizeof fill, "#%02x%02x%02x", r, g, b);
      const double x = left + j * cell, y = top + i * cell;
      o << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(cell) << "\" height=\""
        << num(cell) << "\" fill=\"" << fill << "\" stroke=\"white\"/>\n";
      o << "<text x=\"" << num(x + cell / 2) << "\" y=\"" << num(y + cell / 2 + 4) << "\" text-anchor=\"middle\" fill=\""
        << (t > 0.5 ? "white" : "black") << "\">" << num(m(i, j)) << "</text>\n";
    }
    if (static_cast<std::size_t>(i) < row_labels.size())
      o << "<text x=\"" << num(left - 6) << "\" y=\"" << num(top + i * cell + cell / 2 + 4)
        << "\" text-anchor=\"end\">" << escape(row_labels[i]) << "</text>\n";
  }
  for (Eigen::Index j = 0; j < m.cols() && static_cast<std::size_t>(j) < col_labels.size(); ++j) {
    const double lx = left + j * cell + cell / 2, ly = top + m.rows() * cell + 12;
    o << "<text x=\"" << num(lx) << "\" y=\"" << num(ly) << "\" transform=\"rotate(45 " << num(lx) << " " << num(ly)
      << ")\">" << escape(col_labels[j]) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace gmetro

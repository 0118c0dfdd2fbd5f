#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pacecast/common.hpp"

namespace pacecast {

inline constexpr const char* kTableSchema = "# pacecast-table v1";

// ----------------------------- CSV tables -----------------------------

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> row) { rows.push_back(std::move(row)); }
};

inline void write_csv(const std::string& path, const CsvTable& table) {
  std::ofstream out(path);
  if (!out) throw DataError("write_csv: cannot open '" + path + "'");
  out << kTableSchema << "\n";
  for (std::size_t i = 0; i < table.header.size(); ++i)
    out << (i ? "," : "") << table.header[i];
  out << "\n";
  for (const auto& row : table.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
    out << "\n";
  }
  if (!out) throw DataError("write_csv: write failed for '" + path + "'");
}

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("read_csv: cannot open '" + path + "'");
  CsvTable table;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.push_back("");
    if (!have_header) {
      table.header = std::move(cells);
      have_header = true;
    } else {
      table.rows.push_back(std::move(cells));
    }
  }
  if (!have_header) throw DataError("read_csv: no header row in '" + path + "'");
  return table;
}

inline int csv_column(const CsvTable& t, const std::string& name) {
  for (std::size_t i = 0; i < t.header.size(); ++i)
    if (t.header[i] == name) return static_cast<int>(i);
  throw DataError("csv_column: no column '" + name + "'");
}

// ----------------------------- SVG plots -----------------------------

// Static vector graphics with no dependencies; enough for Q-Q curves,
// occupancy bars, decile overlays and attention heatmaps.
class SvgCanvas {
 public:
  SvgCanvas(int width, int height) : w_(width), h_(height) {
    body_ << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w_ << "\" height=\"" << h_
          << "\" viewBox=\"0 0 " << w_ << " " << h_ << "\">\n";
    body_ << "<rect width=\"" << w_ << "\" height=\"" << h_ << "\" fill=\"white\"/>\n";
  }

  void line(double x1, double y1, double x2, double y2, const std::string& color,
            double width = 1.0, const std::string& dash = "") {
    body_ << "<line x1=\"" << fmt(x1) << "\" y1=\"" << fmt(y1) << "\" x2=\"" << fmt(x2)
          << "\" y2=\"" << fmt(y2) << "\" stroke=\"" << color << "\" stroke-width=\"" << fmt(width)
          << "\"";
    if (!dash.empty()) body_ << " stroke-dasharray=\"" << dash << "\"";
    body_ << "/>\n";
  }

  void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& color,
                double width = 1.5) {
    body_ << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"" << fmt(width)
          << "\" points=\"";
    for (const auto& [x, y] : pts) body_ << fmt(x) << "," << fmt(y) << " ";
    body_ << "\"/>\n";
  }

  void rect(double x, double y, double w, double h, const std::string& fill,
            const std::string& stroke = "none") {
    body_ << "<rect x=\"" << fmt(x) << "\" y=\"" << fmt(y) << "\" width=\"" << fmt(w)
          << "\" height=\"" << fmt(h) << "\" fill=\"" << fill << "\" stroke=\"" << stroke
          << "\"/>\n";
  }

  void text(double x, double y, const std::string& s, int size = 12,
            const std::string& anchor = "start", const std::string& color = "#222") {
    body_ << "<text x=\"" << fmt(x) << "\" y=\"" << fmt(y) << "\" font-size=\"" << size
          << "\" font-family=\"sans-serif\" text-anchor=\"" << anchor << "\" fill=\"" << color
          << "\">" << escape(s) << "</text>\n";
  }

  void save(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("SvgCanvas: cannot open '" + path + "'");
    out << body_.str() << "</svg>\n";
    if (!out) throw DataError("SvgCanvas: write failed for '" + path + "'");
  }

  int width() const { return w_; }
  int height() const { return h_; }

 private:
  static std::string fmt(double v) { return fmt_g(v, 6); }
  static std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
      if (c == '&') out += "&amp;";
      else if (c == '<') out += "&lt;";
      else if (c == '>') out += "&gt;";
      else out.push_back(c);
    }
    return out;
  }
  int w_, h_;
  std::ostringstream body_;
};

struct PlotSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

inline const std::vector<std::string>& plot_palette() {
  static const std::vector<std::string> p = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                             "#9467bd", "#8c564b", "#17becf", "#7f7f7f",
                                             "#bcbd22", "#e377c2"};
  return p;
}

// Line chart over [0,1]x[0,1] or data-driven bounds, with an optional unit
// diagonal (for Q-Q plots).
inline void svg_line_chart(const std::string& path, const std::string& title,
                           const std::string& xlabel, const std::string& ylabel,
                           const std::vector<PlotSeries>& series, bool unit_diagonal = false) {
  const int W = 640, H = 480, m = 56;
  SvgCanvas svg(W, H);
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series)
    for (const auto& [x, y] : s.points) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  if (unit_diagonal) {
    xmin = std::min(xmin, 0.0);
    ymin = std::min(ymin, 0.0);
    xmax = std::max(xmax, 1.0);
    ymax = std::max(ymax, 1.0);
  }
  if (!(xmax > xmin)) xmax = xmin + 1;
  if (!(ymax > ymin)) ymax = ymin + 1;
  auto px = [&](double x) { return m + (x - xmin) / (xmax - xmin) * (W - 2 * m); };
  auto py = [&](double y) { return H - m - (y - ymin) / (ymax - ymin) * (H - 2 * m); };

  svg.line(m, H - m, W - m, H - m, "#444");
  svg.line(m, m, m, H - m, "#444");
  for (int t = 0; t <= 4; ++t) {
    const double fx = xmin + (xmax - xmin) * t / 4.0;
    const double fy = ymin + (ymax - ymin) * t / 4.0;
    svg.text(px(fx), H - m + 16, fmt_g(fx, 3), 10, "middle");
    svg.text(m - 6, py(fy) + 4, fmt_g(fy, 3), 10, "end");
  }
  if (unit_diagonal) svg.line(px(0), py(0), px(1), py(1), "#999", 1.0, "4,4");
  for (std::size_t si = 0; si < series.size(); ++si) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& [x, y] : series[si].points) pts.emplace_back(px(x), py(y));
    svg.polyline(pts, plot_palette()[si % plot_palette().size()]);
    svg.text(W - m - 150, m + 16 + 14 * static_cast<int>(si), series[si].name, 11, "start",
             plot_palette()[si % plot_palette().size()]);
  }
  svg.text(W / 2.0, 20, title, 14, "middle");
  svg.text(W / 2.0, H - 12, xlabel, 11, "middle");
  svg.text(14, H / 2.0, ylabel, 11, "middle");
  svg.save(path);
}

inline void svg_bar_chart(const std::string& path, const std::string& title,
                          const std::string& xlabel, const std::vector<std::string>& labels,
                          const std::vector<double>& values) {
  const int W = 640, H = 480, m = 56;
  SvgCanvas svg(W, H);
  double vmax = 0.0;
  for (double v : values) vmax = std::max(vmax, v);
  if (!(vmax > 0)) vmax = 1.0;
  const double bw = static_cast<double>(W - 2 * m) / std::max<std::size_t>(1, values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double bh = values[i] / vmax * (H - 2 * m);
    svg.rect(m + bw * i + 2, H - m - bh, bw - 4, bh, "#1f77b4");
    if (i < labels.size()) svg.text(m + bw * i + bw / 2, H - m + 14, labels[i], 9, "middle");
  }
  svg.line(m, H - m, W - m, H - m, "#444");
  svg.text(W / 2.0, 20, title, 14, "middle");
  svg.text(W / 2.0, H - 12, xlabel, 11, "middle");
  svg.save(path);
}

// Row-major heatmap; values in [0, vmax] map to a white->blue ramp.
inline void svg_heatmap(const std::string& path, const std::string& title, int rows, int cols,
                        const std::vector<double>& values) {
  const int W = 640, H = 640, m = 48;
  SvgCanvas svg(W, H);
  double vmax = 0.0;
  for (double v : values) vmax = std::max(vmax, v);
  if (!(vmax > 0)) vmax = 1.0;
  const double cw = static_cast<double>(W - 2 * m) / cols;
  const double ch = static_cast<double>(H - 2 * m) / rows;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const double v = values[static_cast<std::size_t>(r) * cols + c] / vmax;
      const int blue = 255;
      const int other = static_cast<int>(255.0 * (1.0 - v));
      char color[8];
      std::snprintf(color, sizeof(color), "#%02x%02x%02x", other, other, blue);
      svg.rect(m + c * cw, m + r * ch, cw, ch, color);
    }
  svg.text(W / 2.0, 20, title, 14, "middle");
  svg.save(path);
}

}  // namespace pacecast

#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace echomap::pipeline {

// Report-side readers and plots. Everything here consumes the CSV artifacts
// written by train/eval; the x1e-2 display convention is applied only when
// formatting text, never to stored numbers.

inline std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("report: cannot open " + path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.push_back("");
    rows.push_back(std::move(cells));
  }
  return rows;
}

struct SummaryLine {
  double stft = 0.0;
  double rte = 0.0;
  double drre = 0.0;
  bool found = false;
};

// Pulls the summary row for one split out of a metrics CSV.
inline SummaryLine read_summary(const std::string& metrics_csv, const std::string& split) {
  SummaryLine out;
  for (const auto& row : read_csv(metrics_csv)) {
    if (row.size() < 6 || row[0] != split || row[1] != "summary") continue;
    out.stft = std::strtod(row[3].c_str(), nullptr);
    out.rte = std::strtod(row[4].c_str(), nullptr);
    out.drre = std::strtod(row[5].c_str(), nullptr);
    out.found = true;
  }
  return out;
}

namespace detail {

inline void svg_open(std::ostream& os, int w, int h) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
     << "\" viewBox=\"0 0 " << w << " " << h << "\" font-family=\"monospace\" font-size=\"10\">\n";
}

}  // namespace detail

// Loss trace as a polyline (raw in grey, smoothed on top), linear axes with
// min/max labels.
inline void write_loss_trace_svg(const std::string& trace_csv, const std::string& path) {
  const auto rows = read_csv(trace_csv);
  if (rows.size() < 2) throw std::runtime_error("report: loss trace is empty");
  std::vector<double> raw, smooth;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() < 6) throw std::runtime_error("report: malformed trace row");
    raw.push_back(std::strtod(rows[i][2].c_str(), nullptr));
    smooth.push_back(std::strtod(rows[i][5].c_str(), nullptr));
  }
  double lo = raw[0], hi = raw[0];
  for (double v : raw) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (double v : smooth) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi <= lo) hi = lo + 1.0;
  const int W = 480, H = 280, ml = 50, mb = 30, mt = 10, mr = 10;
  const double pw = W - ml - mr, ph = H - mt - mb;
  auto X = [&](std::size_t i) {
    return ml + pw * (raw.size() > 1 ? static_cast<double>(i) / (raw.size() - 1) : 0.5);
  };
  auto Y = [&](double v) { return mt + ph * (1.0 - (v - lo) / (hi - lo)); };
  std::ofstream f(path);
  if (!f) throw std::runtime_error("report: cannot open " + path + " for writing");
  detail::svg_open(f, W, H);
  f << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", hi);
  f << "<text x=\"2\" y=\"" << mt + 10 << "\">" << buf << "</text>\n";
  std::snprintf(buf, sizeof buf, "%.4g", lo);
  f << "<text x=\"2\" y=\"" << mt + ph << "\">" << buf << "</text>\n";
  f << "<text x=\"" << ml << "\" y=\"" << H - 8 << "\">step 0 .. "
    << raw.size() - 1 << "</text>\n";
  auto polyline = [&](const std::vector<double>& ys, const char* color, int width) {
    f << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"" << width
      << "\" points=\"";
    for (std::size_t i = 0; i < ys.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.2f,%.2f ", X(i), Y(ys[i]));
      f << buf;
    }
    f << "\"/>\n";
  };
  polyline(raw, "#bbbbbb", 1);
  polyline(smooth, "#cc3311", 2);
  f << "</svg>\n";
  if (!f) throw std::runtime_error("report: write failure on " + path);
}

// Mean unseen/seen STFT error per predictor as labeled bars.
inline void write_metric_bars_svg(const std::map<std::string, SummaryLine>& by_method,
                                  const std::string& title, const std::string& path) {
  if (by_method.empty()) throw std::invalid_argument("report: no methods to plot");
  double hi = 0.0;
  for (const auto& [name, s] : by_method) hi = std::max(hi, s.stft);
  if (hi <= 0.0) hi = 1.0;
  const int W = 360, H = 240, mb = 50, mt = 30;
  const double ph = H - mt - mb;
  const double bw = static_cast<double>(W) / static_cast<double>(by_method.size());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("report: cannot open " + path + " for writing");
  detail::svg_open(f, W, H);
  f << "<text x=\"8\" y=\"16\">" << title << " (x1e-2)</text>\n";
  int i = 0;
  char buf[64];
  for (const auto& [name, s] : by_method) {
    const double h = ph * s.stft / hi;
    const double x = i * bw + bw * 0.2;
    f << "<rect x=\"" << x << "\" y=\"" << mt + (ph - h) << "\" width=\"" << bw * 0.6
      << "\" height=\"" << h << "\" fill=\"#4477aa\"/>\n";
    std::snprintf(buf, sizeof buf, "%.2f", s.stft * 100.0);
    f << "<text x=\"" << x << "\" y=\"" << mt + (ph - h) - 4 << "\">" << buf << "</text>\n";
    f << "<text x=\"" << x << "\" y=\"" << H - mb + 14 << "\">" << name << "</text>\n";
    ++i;
  }
  f << "</svg>\n";
  if (!f) throw std::runtime_error("report: write failure on " + path);
}

// Human-readable summary; this is the one place the x1e-2 convention applies.
inline void write_report_txt(const std::map<std::string, std::string>& metrics_csvs,
                             const std::vector<std::string>& splits, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("report: cannot open " + path + " for writing");
  f << "metric means per split (displayed x1e-2; stored CSVs are unscaled)\n";
  char buf[160];
  for (const auto& split : splits) {
    f << "\n[" << split << "]\n";
    std::snprintf(buf, sizeof buf, "%-10s %12s %12s %12s\n", "method", "stft_error", "rte_s",
                  "drre_db");
    f << buf;
    for (const auto& [method, csv] : metrics_csvs) {
      const auto s = read_summary(csv, split);
      if (!s.found) continue;
      std::snprintf(buf, sizeof buf, "%-10s %12.3f %12.3f %12.3f\n", method.c_str(),
                    s.stft * 100.0, s.rte * 100.0, s.drre * 100.0);
      f << buf;
    }
  }
  if (!f) throw std::runtime_error("report: write failure on " + path);
}

}  // namespace echomap::pipeline

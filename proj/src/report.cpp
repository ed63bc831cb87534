#include "femagents/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace femagents {
namespace fs = std::filesystem;

namespace {

std::string fmt(const char* format, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, value);
  return buf;
}

const char* kBarColors[] = {"#4c78a8", "#f58518", "#54a24b", "#e45756", "#72b7b2"};

}  // namespace

void write_results_csv(const std::vector<RateSummary>& summaries, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write results csv: " + path.string());
  out << "combination,scenario,n,successes,rate,wilson_lo,wilson_hi,software_filter\n";
  for (const RateSummary& s : summaries) {
    out << s.combination << ',' << s.scenario << ',' << s.n << ',' << s.successes << ','
        << fmt("%g", s.rate) << ',' << fmt("%.9g", s.wilson_lo) << ','
        << fmt("%.9g", s.wilson_hi) << ',' << s.software_filter << '\n';
  }
}

std::string grouped_bar_svg(const std::vector<RateSummary>& summaries,
                            const std::string& title) {
  // Preserve first-appearance order for combinations and scenarios.
  std::vector<std::string> combos;
  std::vector<std::string> scenarios;
  std::map<std::pair<std::string, std::string>, const RateSummary*> cells;
  for (const RateSummary& s : summaries) {
    if (s.n == 0) continue;
    if (std::find(combos.begin(), combos.end(), s.combination) == combos.end())
      combos.push_back(s.combination);
    if (std::find(scenarios.begin(), scenarios.end(), s.scenario) == scenarios.end())
      scenarios.push_back(s.scenario);
    cells[{s.combination, s.scenario}] = &s;
  }

  const double plot_h = kSvgPlotHeight;
  const double margin_left = 60.0, margin_top = 50.0, margin_bottom = 90.0;
  const double bar_w = 18.0, bar_gap = 4.0, group_gap = 30.0;
  const double group_w =
      scenarios.empty() ? 40.0 : scenarios.size() * (bar_w + bar_gap) - bar_gap;
  const double width = margin_left + combos.size() * (group_w + group_gap) + 180.0;
  const double height = margin_top + plot_h + margin_bottom;

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt("%.0f", width)
      << "\" height=\"" << fmt("%.0f", height) << "\">\n";
  svg << "<text x=\"" << fmt("%.0f", width / 2)
      << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title << "</text>\n";

  // y axis with 0.25 gridlines
  for (int i = 0; i <= 4; ++i) {
    double value = i * 0.25;
    double y = margin_top + plot_h - value * plot_h;
    svg << "<line x1=\"" << fmt("%.1f", margin_left) << "\" y1=\"" << fmt("%.1f", y)
        << "\" x2=\"" << fmt("%.1f", width - 150.0) << "\" y2=\"" << fmt("%.1f", y)
        << "\" stroke=\"#ddd\"/>\n";
    svg << "<text x=\"" << fmt("%.1f", margin_left - 8.0) << "\" y=\"" << fmt("%.1f", y + 4)
        << "\" text-anchor=\"end\" font-size=\"11\">" << fmt("%.2f", value) << "</text>\n";
  }

  for (std::size_t ci = 0; ci < combos.size(); ++ci) {
    double group_x = margin_left + ci * (group_w + group_gap) + group_gap / 2;
    for (std::size_t si = 0; si < scenarios.size(); ++si) {
      auto it = cells.find({combos[ci], scenarios[si]});
      if (it == cells.end()) continue;
      const RateSummary& s = *it->second;
      double bar_h = s.rate * plot_h;
      double x = group_x + si * (bar_w + bar_gap);
      double y = margin_top + plot_h - bar_h;
      svg << "<rect class=\"bar\" data-rate=\"" << fmt("%.6f", s.rate) << "\" x=\""
          << fmt("%.2f", x) << "\" y=\"" << fmt("%.2f", y) << "\" width=\""
          << fmt("%.2f", bar_w) << "\" height=\"" << fmt("%.2f", bar_h) << "\" fill=\""
          << kBarColors[si % 5] << "\"/>\n";
      svg << "<text x=\"" << fmt("%.2f", x + bar_w / 2) << "\" y=\"" << fmt("%.2f", y - 3)
          << "\" text-anchor=\"middle\" font-size=\"9\">" << fmt("%.3f", s.rate)
          << "</text>\n";
    }
    svg << "<text x=\"" << fmt("%.2f", group_x + group_w / 2) << "\" y=\""
        << fmt("%.1f", margin_top + plot_h + 16.0)
        << "\" text-anchor=\"middle\" font-size=\"10\" transform=\"rotate(30 "
        << fmt("%.2f", group_x + group_w / 2) << ' '
        << fmt("%.1f", margin_top + plot_h + 16.0) << ")\">" << combos[ci] << "</text>\n";
  }

  // legend
  for (std::size_t si = 0; si < scenarios.size(); ++si) {
    double lx = width - 140.0, ly = margin_top + si * 18.0;
    svg << "<rect x=\"" << fmt("%.1f", lx) << "\" y=\"" << fmt("%.1f", ly)
        << "\" width=\"12\" height=\"12\" fill=\"" << kBarColors[si % 5] << "\"/>\n";
    svg << "<text x=\"" << fmt("%.1f", lx + 18.0) << "\" y=\"" << fmt("%.1f", ly + 10.0)
        << "\" font-size=\"11\">" << scenarios[si] << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void emit_report(const std::vector<RateSummary>& summaries, const fs::path& out_dir,
                 const std::string& filter_label) {
  fs::create_directories(out_dir / "figures");
  write_results_csv(summaries, out_dir / "results.csv");
  std::string svg =
      grouped_bar_svg(summaries, "Success probability per combination (" + filter_label + ")");
  std::ofstream out(out_dir / "figures" / ("rates_" + filter_label + ".svg"),
                    std::ios::binary);
  if (!out) throw std::runtime_error("cannot write figure");
  out << svg;
}

}  // namespace femagents

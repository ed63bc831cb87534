#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "femagents/harness.hpp"

namespace femagents {

// CSV with header combination,scenario,n,successes,rate,wilson_lo,wilson_hi,
// software_filter; one row per summary, deterministic order.
void write_results_csv(const std::vector<RateSummary>& summaries,
                       const std::filesystem::path& path);

// Grouped bar chart: one group per combination, one bar per scenario,
// y axis 0..1, bar heights proportional to the rate, labels to 3 decimals.
// Summaries with n = 0 are excluded from the chart.
std::string grouped_bar_svg(const std::vector<RateSummary>& summaries,
                            const std::string& title);

// Plot geometry, exposed for tests: bar height = rate * kSvgPlotHeight.
inline constexpr double kSvgPlotHeight = 300.0;

// Writes results.csv plus figures/rates_<filter>.svg under out_dir.
void emit_report(const std::vector<RateSummary>& summaries,
                 const std::filesystem::path& out_dir,
                 const std::string& filter_label = "all");

}  // namespace femagents

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "aquatwin/metrics.hpp"

namespace aquatwin {

/// Metrics of one (method, budget, sigma, seed) cell.
struct CellRecord {
  std::string method;
  std::string network;
  double budget_fraction = 0.0;
  std::size_t budget = 0;
  double sigma = 0.0;
  std::uint64_t seed = 0;
  RunMetrics metrics;
  TimingProfile timing;
};

/// Rows are grouped by (method, network, budget, sigma) in first-appearance
/// order; each row aggregates mean and sample std over seeds.
std::string table_demand_csv(const std::vector<CellRecord>& cells);
std::string table_pressure_csv(const std::vector<CellRecord>& cells);
std::string table_safety_csv(const std::vector<CellRecord>& cells);
/// Per-component mean and p95 step time, averaged over seeds.
std::string table_timing_csv(const std::vector<CellRecord>& cells);
/// One row per variant with per-seed columns for rmse_q and coverage.
std::string table_ablation_csv(const std::vector<CellRecord>& cells);

struct SensitivityRecord {
  double alpha = 0.1;
  int lookback = 24;
  std::uint64_t seed = 0;
  RunMetrics metrics;
};
std::string table_sensitivity_csv(const std::vector<SensitivityRecord>& records);

struct ChartSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;
};

std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<ChartSeries>& series);
std::string bar_chart_svg(const std::string& title, const std::string& y_label,
                          const std::vector<std::pair<std::string, double>>& bars);

}  // namespace aquatwin

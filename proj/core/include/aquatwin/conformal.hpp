#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace aquatwin {

/// Split-conformal quantile of absolute residuals.
struct ConformalQuantile {
  double value = 0.0;
  std::size_t rank = 0;  // k, 1-based order statistic
  std::size_t n = 0;
  /// k exceeded n; value is +infinity.
  bool degenerate = false;
};

/// Smallest residual count for which the corrected quantile can be formed.
std::size_t min_calibration_size(double alpha);

/// k-th smallest residual, k = ceil((1 - alpha)(n + 1)).
///
/// Throws TooFewResiduals when n < ceil(1/alpha) - 1, InvalidConfig for alpha
/// outside (0, 1) or a negative residual.
ConformalQuantile conformal_quantile(std::span<const double> residuals, double alpha);

struct Interval {
  double lo;
  double hi;
  double width() const noexcept { return hi - lo; }
  bool contains(double x) const noexcept { return lo <= x && x <= hi; }
};

/// [prediction - q, prediction + q]. The lower end is not clipped.
Interval prediction_interval(double prediction, double quantile);
/// Same interval clipped at zero demand, for display only.
Interval display_interval(double prediction, double quantile);

struct CalibrationEntry {
  std::string label;
  double quantile = std::numeric_limits<double>::quiet_NaN();
  std::size_t n_cal = 0;
  bool degenerate = false;
  std::vector<double> residuals;  // kept only when archiving is requested

  bool calibrated() const noexcept { return n_cal > 0; }
};

/// Per-junction conformal quantiles at one miscoverage level.
struct CalibrationTable {
  double alpha = 0.1;
  /// Sampling budget (node count) under which the residuals were collected.
  std::size_t budget = 0;
  std::vector<CalibrationEntry> entries;

  std::size_t size() const noexcept { return entries.size(); }
  double quantile(std::size_t node) const;
};

/// Build a table from per-node residual lists.
CalibrationTable make_calibration_table(const std::vector<std::vector<double>>& residuals,
                                        const std::vector<std::string>& labels, double alpha, std::size_t budget,
                                        bool keep_residuals = false);

/// Recompute every quantile at a different alpha from archived residuals.
CalibrationTable recalibrate(const CalibrationTable& table, double alpha);

/// U = 2 * quantile, the interval width. Throws UncalibratedNode.
double uncertainty_score(const CalibrationTable& table, std::size_t node);

std::string calibration_to_json(const CalibrationTable& table);
CalibrationTable calibration_from_json(const std::string& text);

}  // namespace aquatwin

#include "aquatwin/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "aquatwin/error.hpp"

namespace aquatwin {

namespace {

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidConfig("alpha", "must lie in (0, 1)");
}

// ceil() with a guard against (1 - alpha)(n + 1) landing a rounding error
// above an integer.
std::size_t guarded_ceil(double x) { return static_cast<std::size_t>(std::ceil(x - 1e-9)); }

}  // namespace

std::size_t min_calibration_size(double alpha) {
  check_alpha(alpha);
  return guarded_ceil(1.0 / alpha) - 1;
}

ConformalQuantile conformal_quantile(std::span<const double> residuals, double alpha) {
  check_alpha(alpha);
  const std::size_t n = residuals.size();
  const std::size_t need = min_calibration_size(alpha);
  if (n == 0 || n < need) {
    throw TooFewResiduals(std::to_string(n) + " residuals, alpha " + std::to_string(alpha) + " needs at least " +
                          std::to_string(std::max<std::size_t>(need, 1)));
  }
  for (double r : residuals) {
    if (!(r >= 0.0)) throw InvalidConfig("residuals", "must be non-negative");
  }
  ConformalQuantile q;
  q.n = n;
  q.rank = guarded_ceil((1.0 - alpha) * static_cast<double>(n + 1));
  if (q.rank > n) {
    q.degenerate = true;
    q.value = std::numeric_limits<double>::infinity();
    return q;
  }
  q.rank = std::max<std::size_t>(q.rank, 1);
  std::vector<double> sorted(residuals.begin(), residuals.end());
  const auto kth = sorted.begin() + static_cast<long>(q.rank - 1);
  std::nth_element(sorted.begin(), kth, sorted.end());
  q.value = *kth;
  return q;
}

Interval prediction_interval(double prediction, double quantile) {
  return {prediction - quantile, prediction + quantile};
}

Interval display_interval(double prediction, double quantile) {
  return {std::max(0.0, prediction - quantile), prediction + quantile};
}

double CalibrationTable::quantile(std::size_t node) const {
  if (node >= entries.size() || !entries[node].calibrated()) {
    throw UncalibratedNode("node " + std::to_string(node) + " has no calibration entry");
  }
  return entries[node].quantile;
}

CalibrationTable make_calibration_table(const std::vector<std::vector<double>>& residuals,
                                        const std::vector<std::string>& labels, double alpha, std::size_t budget,
                                        bool keep_residuals) {
  CalibrationTable table;
  table.alpha = alpha;
  table.budget = budget;
  table.entries.resize(residuals.size());
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    auto& e = table.entries[i];
    e.label = i < labels.size() ? labels[i] : std::to_string(i);
    const auto q = conformal_quantile(residuals[i], alpha);
    e.quantile = q.value;
    e.n_cal = q.n;
    e.degenerate = q.degenerate;
    if (keep_residuals) e.residuals = residuals[i];
  }
  return table;
}

CalibrationTable recalibrate(const CalibrationTable& table, double alpha) {
  CalibrationTable out = table;
  out.alpha = alpha;
  for (auto& e : out.entries) {
    if (e.residuals.empty()) {
      throw UncalibratedNode("node '" + e.label + "' has no archived residuals to recalibrate from");
    }
    const auto q = conformal_quantile(e.residuals, alpha);
    e.quantile = q.value;
    e.degenerate = q.degenerate;
  }
  return out;
}

double uncertainty_score(const CalibrationTable& table, std::size_t node) { return 2.0 * table.quantile(node); }

std::string calibration_to_json(const CalibrationTable& table) {
  nlohmann::json j;
  j["alpha"] = table.alpha;
  j["budget"] = table.budget;
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& e : table.entries) {
    nlohmann::json n;
    n["label"] = e.label;
    // JSON has no infinity; a degenerate quantile is written as null.
    n["quantile"] = std::isfinite(e.quantile) ? nlohmann::json(e.quantile) : nlohmann::json(nullptr);
    n["n_cal"] = e.n_cal;
    if (!e.residuals.empty()) n["residuals"] = e.residuals;
    nodes.push_back(std::move(n));
  }
  j["nodes"] = nodes;
  return j.dump(1);
}

CalibrationTable calibration_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  CalibrationTable t;
  t.alpha = j.at("alpha").get<double>();
  t.budget = j.at("budget").get<std::size_t>();
  for (const auto& n : j.at("nodes")) {
    CalibrationEntry e;
    e.label = n.at("label").get<std::string>();
    e.n_cal = n.at("n_cal").get<std::size_t>();
    if (n.at("quantile").is_null()) {
      e.quantile = std::numeric_limits<double>::infinity();
      e.degenerate = true;
    } else {
      e.quantile = n.at("quantile").get<double>();
    }
    if (n.contains("residuals")) e.residuals = n.at("residuals").get<std::vector<double>>();
    t.entries.push_back(std::move(e));
  }
  return t;
}

}  // namespace aquatwin

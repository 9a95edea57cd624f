#include "aquatwin/calibration.hpp"

#include <cmath>

#include "aquatwin/error.hpp"

namespace aquatwin {

std::vector<std::vector<double>> collect_residuals(const NetworkModel& net, const Predictor& predictor,
                                                   const std::vector<const DemandMatrix*>& scenarios,
                                                   UncertaintyScorer* scorer, const SamplingPolicy& policy,
                                                   const TwinConfig& cfg) {
  const std::size_t n = predictor.node_count();
  std::vector<std::vector<double>> residuals(n);
  for (std::size_t s = 0; s < scenarios.size(); ++s) {
    const DemandMatrix& demands = *scenarios[s];
    if (static_cast<std::size_t>(demands.cols()) != n) {
      throw MissingModel("predictor covers " + std::to_string(n) + " nodes, scenario has " +
                         std::to_string(demands.cols()) + " junctions");
    }
    TwinTrajectory traj;
    try {
      traj = run_digital_twin(net, predictor, scorer, demands, policy, cfg);
    } catch (const Error& e) {
      throw RolloutFailure(s, 0, e.what());
    }
    for (std::size_t i = 0; i < n; ++i) {
      auto& out = residuals[i];
      const auto c = static_cast<Eigen::Index>(i);
      for (Eigen::Index r = 0; r < traj.q_hat.rows(); ++r) out.push_back(std::abs(traj.q_true(r, c) - traj.q_hat(r, c)));
    }
  }
  return residuals;
}

CalibrationResult calibrate_two_pass(const NetworkModel& net, const Predictor& predictor,
                                     const std::vector<const DemandMatrix*>& scenarios,
                                     const std::vector<std::string>& labels, const CalibrationOptions& options) {
  TwinConfig cfg;
  cfg.budget = options.budget;
  cfg.sensor_sigma = options.sensor_sigma;
  cfg.noise_mode = options.noise_mode;
  cfg.noise_seed = derive_seed(options.seed, 101, options.budget);
  cfg.solver = options.solver;
  cfg.solve_hydraulics = options.solve_hydraulics;

  CalibrationResult result;
  const auto first = collect_residuals(net, predictor, scenarios, nullptr,
                                       SamplingPolicy::uniform(derive_seed(options.seed, 102, options.budget)), cfg);
  result.provisional = make_calibration_table(first, labels, options.alpha, options.budget, options.keep_residuals);

  ConformalScorer scorer(result.provisional);
  const auto second = collect_residuals(net, predictor, scenarios, &scorer, SamplingPolicy::adaptive(), cfg);
  result.table = make_calibration_table(second, labels, options.alpha, options.budget, options.keep_residuals);

  double sum = 0.0;
  std::size_t finite = 0;
  for (std::size_t i = 0; i < result.table.size(); ++i) {
    const double d = std::abs(result.table.entries[i].quantile - result.provisional.entries[i].quantile);
    if (!std::isfinite(d)) continue;
    result.max_drift = std::max(result.max_drift, d);
    sum += d;
    ++finite;
  }
  result.mean_drift = finite ? sum / static_cast<double>(finite) : 0.0;
  return result;
}

}  // namespace aquatwin

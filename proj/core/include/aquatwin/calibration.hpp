#pragma once

#include <cstdint>
#include <vector>

#include "aquatwin/conformal.hpp"
#include "aquatwin/sampling.hpp"

namespace aquatwin {

/// Absolute one-step residuals |q - q_hat| per junction, gathered from
/// closed-loop rollouts over the given scenarios. Warm-up steps are excluded,
/// so each node receives scenarios * (T - w) residuals.
///
/// Throws MissingModel when the predictor does not cover every column and
/// RolloutFailure when a rollout cannot complete.
std::vector<std::vector<double>> collect_residuals(const NetworkModel& net, const Predictor& predictor,
                                                   const std::vector<const DemandMatrix*>& scenarios,
                                                   UncertaintyScorer* scorer, const SamplingPolicy& policy,
                                                   const TwinConfig& cfg);

struct CalibrationOptions {
  double alpha = 0.1;
  std::size_t budget = 0;
  double sensor_sigma = 0.0;
  NoiseMode noise_mode = NoiseMode::Multiplicative;
  std::uint64_t seed = 0;
  /// Calibration only needs demand residuals; the hydraulic solve is optional.
  bool solve_hydraulics = false;
  SolverConfig solver;
  bool keep_residuals = true;
};

struct CalibrationResult {
  CalibrationTable provisional;  // uniform-random rollouts
  CalibrationTable table;        // adaptive rollouts scored by `provisional`
  double max_drift = 0.0;        // max |Q2 - Q1| over nodes
  double mean_drift = 0.0;
};

/// Two-pass calibration. Pass one rolls out under uniform-random selection to
/// get provisional quantiles; pass two rolls out under adaptive selection
/// scored by those quantiles and yields the final table.
CalibrationResult calibrate_two_pass(const NetworkModel& net, const Predictor& predictor,
                                     const std::vector<const DemandMatrix*>& scenarios,
                                     const std::vector<std::string>& labels, const CalibrationOptions& options);

}  // namespace aquatwin

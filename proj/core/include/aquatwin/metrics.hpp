#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "aquatwin/sampling.hpp"

namespace aquatwin {

/// Pressure below which a junction is considered under-served, meters.
inline constexpr double kPressureThreshold = 20.0;

/// Root mean squared difference over all entries. Throws EmptyEvaluation.
double rmse(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& estimate);

/// Demand RMSE of the fused state against the true demands (warm-up excluded).
double rmse_demand(const TwinTrajectory& traj);

/// Pressure RMSE over steps where both the twin and the ground-truth solve
/// converged. Throws EmptyEvaluation when no such step exists.
double rmse_pressure(const TwinTrajectory& traj);

struct CoverageStats {
  double unmeasured = 0.0;  // primary figure
  double all = 0.0;
  std::size_t n_unmeasured = 0;
  std::size_t n_all = 0;
};

/// Fraction of true demands inside [lo, hi]. Throws EmptyEvaluation when no
/// unmeasured entry exists.
CoverageStats empirical_coverage(const TwinTrajectory& traj);

/// Mean of 1[p_tilde >= threshold and p < threshold] over the given pairs.
double violation_rate(std::span<const double> p_true, std::span<const double> p_tilde,
                      double threshold = kPressureThreshold);
/// Same over every evaluable (step, junction) of a trajectory.
double violation_rate(const TwinTrajectory& traj, double threshold = kPressureThreshold);

struct ComponentStats {
  double mean = 0.0;
  double p95 = 0.0;
};

struct TimingProfile {
  ComponentStats inference;
  ComponentStats uncertainty;
  ComponentStats selection;
  ComponentStats solve;
  ComponentStats total;
  /// (total - solve) / total, from the means.
  double overhead = 0.0;
};

TimingProfile timing_profile(std::span<const StepTiming> steps);

struct RunMetrics {
  double rmse_q = 0.0;
  double rmse_p = 0.0;
  double coverage = 0.0;
  double coverage_all = 0.0;
  double violation_rate = 0.0;
  double mean_width = 0.0;  // mean interval width on unmeasured entries
  std::size_t nonconverged_steps = 0;
};

RunMetrics evaluate_trajectory(const TwinTrajectory& traj);

/// Pool the metrics of several trajectories by summing squared errors and
/// indicator counts, so scenarios of different length weigh by their size.
RunMetrics pool_metrics(const std::vector<const TwinTrajectory*>& runs);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single value
};
MeanStd mean_std(std::span<const double> values);

}  // namespace aquatwin

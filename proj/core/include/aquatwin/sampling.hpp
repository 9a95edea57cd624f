#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "aquatwin/conformal.hpp"
#include "aquatwin/forecaster.hpp"
#include "aquatwin/hydraulics.hpp"
#include "aquatwin/network.hpp"
#include "aquatwin/scenario.hpp"

namespace aquatwin {

// ---------------------------------------------------------------------------
// Forecasters as seen by the twin loop
// ---------------------------------------------------------------------------

/// Produces one-step-ahead demand forecasts for every junction.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::size_t node_count() const = 0;
  /// Steps of true history needed before the first forecast.
  virtual std::size_t warmup() const = 0;
  /// Forecast step t from rows [0, t) of the fused history.
  virtual void predict(const DemandMatrix& fused, std::size_t t, std::span<double> out) const = 0;
};

/// One trained LSTM per junction.
class LstmPredictor final : public Predictor {
 public:
  explicit LstmPredictor(std::vector<ForecastModel> models);
  std::size_t node_count() const override { return models_.size(); }
  std::size_t warmup() const override { return lookback_; }
  void predict(const DemandMatrix& fused, std::size_t t, std::span<double> out) const override;
  const std::vector<ForecastModel>& models() const noexcept { return models_; }

 private:
  std::vector<ForecastModel> models_;
  std::size_t lookback_ = 0;
};

/// Mean of the same hour of day over the previous `days` days of fused
/// history (fewer when less history exists).
class MovingAveragePredictor final : public Predictor {
 public:
  MovingAveragePredictor(std::size_t nodes, std::size_t warmup, int days = 7);
  std::size_t node_count() const override { return nodes_; }
  std::size_t warmup() const override { return warmup_; }
  void predict(const DemandMatrix& fused, std::size_t t, std::span<double> out) const override;

 private:
  std::size_t nodes_;
  std::size_t warmup_;
  int days_;
};

// ---------------------------------------------------------------------------
// Uncertainty scores
// ---------------------------------------------------------------------------

/// Per-step uncertainty score U and interval half-width for every node.
class UncertaintyScorer {
 public:
  virtual ~UncertaintyScorer() = default;
  virtual void reset() {}
  virtual void score(std::span<const double> predictions, std::span<double> uncertainty,
                     std::span<double> half_width) = 0;
};

/// U = 2 * conformal quantile; half-width = quantile.
class ConformalScorer final : public UncertaintyScorer {
 public:
  explicit ConformalScorer(const CalibrationTable& table);
  void score(std::span<const double> predictions, std::span<double> uncertainty,
             std::span<double> half_width) override;

 private:
  std::vector<double> quantiles_;
};

/// U = variance of the last `window` predictions of each node; half-width
/// = z * sqrt(U) with z the two-sided normal quantile at `alpha`.
class RollingVarianceScorer final : public UncertaintyScorer {
 public:
  RollingVarianceScorer(std::size_t nodes, std::size_t window, double alpha);
  void reset() override;
  void score(std::span<const double> predictions, std::span<double> uncertainty,
             std::span<double> half_width) override;

 private:
  std::size_t nodes_;
  std::size_t window_;
  double z_;
  std::vector<std::vector<double>> history_;
  std::size_t filled_ = 0;
  std::size_t head_ = 0;
};

/// Same half-width for every node; U = 2 * half-width.
class FixedWidthScorer final : public UncertaintyScorer {
 public:
  explicit FixedWidthScorer(double half_width) : half_width_(half_width) {}
  void score(std::span<const double> predictions, std::span<double> uncertainty,
             std::span<double> half_width) override;

 private:
  double half_width_;
};

/// Two-sided standard normal quantile z with P(|Z| <= z) = 1 - alpha.
double normal_two_sided_quantile(double alpha);

// ---------------------------------------------------------------------------
// Selection and fusion
// ---------------------------------------------------------------------------

enum class PolicyKind { Adaptive, UniformRandom, StaticHighVariance, RoundRobin, Full };
const char* to_string(PolicyKind k);
PolicyKind policy_from_string(const std::string& s);

struct SamplingPolicy {
  PolicyKind kind = PolicyKind::Adaptive;
  std::uint64_t seed = 0;       // UniformRandom
  std::vector<int> static_set;  // StaticHighVariance

  static SamplingPolicy adaptive() { return {PolicyKind::Adaptive, 0, {}}; }
  static SamplingPolicy uniform(std::uint64_t seed) { return {PolicyKind::UniformRandom, seed, {}}; }
  static SamplingPolicy round_robin() { return {PolicyKind::RoundRobin, 0, {}}; }
  static SamplingPolicy full() { return {PolicyKind::Full, 0, {}}; }
  static SamplingPolicy static_high_variance(std::vector<int> set) {
    return {PolicyKind::StaticHighVariance, 0, std::move(set)};
  }
};

/// Indices of the `budget` largest scores, ties to the lower index, ascending.
std::vector<int> top_k(std::span<const double> scores, std::size_t budget);

/// Node set for step `step` (0 = first step after warm-up), ascending.
/// Full ignores `budget`. Throws BudgetExceedsNetwork.
std::vector<int> select_nodes(const SamplingPolicy& policy, std::span<const double> uncertainty, std::size_t budget,
                              std::size_t step, std::mt19937_64& rng);

enum class NoiseMode { Multiplicative, Additive };

/// Measured entries get truth plus sensor noise, the rest keep the
/// prediction bitwise. Measured values are clamped at zero.
std::vector<double> fuse_state(std::span<const double> truth, std::span<const double> predictions,
                               std::span<const int> selected, double sensor_sigma, NoiseMode mode,
                               std::mt19937_64& rng);

/// Top-`budget` junctions by demand variance pooled over all given series.
std::vector<int> precompute_static_set(const std::vector<const DemandMatrix*>& train, std::size_t budget);

// ---------------------------------------------------------------------------
// Closed loop
// ---------------------------------------------------------------------------

/// Junction pressures from solving the true demands, rows aligned with the
/// scenario's hours.
struct GroundTruth {
  DemandMatrix pressures;
  std::vector<char> converged;
};
GroundTruth solve_ground_truth(const NetworkModel& net, const DemandMatrix& demands, std::size_t first_step,
                               const SolverConfig& cfg);

struct TwinConfig {
  std::size_t budget = 0;
  double sensor_sigma = 0.0;
  NoiseMode noise_mode = NoiseMode::Multiplicative;
  std::uint64_t noise_seed = 0;
  SolverConfig solver;
  bool solve_hydraulics = true;
};

struct StepTiming {
  double inference_ms = 0.0;
  double uncertainty_ms = 0.0;
  double selection_ms = 0.0;  // includes fusion
  double solve_ms = 0.0;
};

/// Everything recorded by one closed-loop run. Matrices have one row per
/// evaluated step (scenario hour = warmup + row) and one column per junction.
struct TwinTrajectory {
  std::size_t warmup = 0;
  std::size_t budget = 0;
  std::vector<std::vector<int>> selected;
  Eigen::Matrix<unsigned char, Eigen::Dynamic, Eigen::Dynamic> measured;
  DemandMatrix q_true;
  DemandMatrix q_hat;
  DemandMatrix q_tilde;
  DemandMatrix lo;
  DemandMatrix hi;
  DemandMatrix uncertainty;
  DemandMatrix p_true;
  DemandMatrix p_tilde;
  Eigen::MatrixXd flows;  // pipe flows of the twin state
  std::vector<char> converged;        // twin solve converged (or reused state flagged)
  std::vector<char> truth_converged;  // ground-truth solve converged
  std::vector<int> solver_iterations;
  std::vector<StepTiming> timing;
  bool has_hydraulics = false;

  std::size_t steps() const noexcept { return selected.size(); }
  std::size_t nodes() const noexcept { return static_cast<std::size_t>(q_true.cols()); }
};

/// One closed-loop run over a scenario: predict, score, select, fuse, solve.
///
/// `scorer` may be null, in which case every score is zero and intervals are
/// unbounded. `truth` may be null; it is then computed when hydraulics are on.
/// A twin solve that fails to converge reuses the previous state and is
/// flagged in `converged`.
TwinTrajectory run_digital_twin(const NetworkModel& net, const Predictor& predictor, UncertaintyScorer* scorer,
                                const DemandMatrix& demands, const SamplingPolicy& policy, const TwinConfig& cfg,
                                const GroundTruth* truth = nullptr);

/// Trajectory dump: t,node,selected,q_true,q_hat,q_tilde,lo,hi,p_true,p_tilde,flow_diag.
std::string trajectory_csv(const TwinTrajectory& traj);

/// Rebuild the metric-relevant fields of a trajectory from its CSV dump.
/// Predictions, intervals, measurement flags, pressures and convergence
/// flags survive; uncertainty scores, flows and timings do not.
TwinTrajectory trajectory_from_csv(const std::string& text);

/// Per-step timing dump: step,inference_ms,uncertainty_ms,selection_ms,solve_ms.
std::string timing_csv(const std::vector<StepTiming>& timing);
std::vector<StepTiming> timing_from_csv(const std::string& text);

}  // namespace aquatwin

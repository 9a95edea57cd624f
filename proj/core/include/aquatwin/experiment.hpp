#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "aquatwin/calibration.hpp"
#include "aquatwin/forecaster.hpp"
#include "aquatwin/metrics.hpp"
#include "aquatwin/scenario.hpp"

namespace aquatwin {

struct AblationConfig {
  double budget = 0.4;
  std::size_t rolling_window = 24;
  double fixed_half_width = 2.5;
  int moving_average_days = 7;
};

struct SweepConfig {
  double budget = 0.4;
  std::vector<double> alphas{0.05, 0.1, 0.2};
  std::vector<int> lookbacks{12, 24, 48};
};

/// Everything a pipeline run depends on. Serialized as one JSON document.
struct ExperimentConfig {
  std::string network = "hanoi";
  GenConfig generator;
  SplitFractions split;
  LstmHyperparams lstm;
  SolverConfig solver;
  double alpha = 0.1;
  std::vector<double> budgets{0.2, 0.4, 0.6, 0.8};
  std::vector<std::string> policies{"adaptive", "uniform", "static", "round_robin", "full"};
  std::vector<double> sensor_sigmas{0.0};
  NoiseMode noise_mode = NoiseMode::Multiplicative;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::string output_dir = "aquatwin_out";
  AblationConfig ablation;
  SweepConfig sweep;

  /// Throws InvalidConfig naming the offending field path.
  void validate() const;
};

std::string config_to_json(const ExperimentConfig& cfg);
/// Missing fields keep their defaults; unknown fields are rejected.
ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// round(fraction * nodes), at least 1 for a positive fraction.
std::size_t budget_count(double fraction, std::size_t nodes);

/// Runs fn(0..count-1) on up to `workers` threads. Exceptions are rethrown
/// on the calling thread, lowest index first.
void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& fn);

using LogFn = std::function<void(const std::string&)>;

// ---------------------------------------------------------------------------
// In-memory stages
// ---------------------------------------------------------------------------

/// Scenarios for one replicate seed, already split.
ScenarioSet make_scenarios(const NetworkModel& net, const ExperimentConfig& cfg, std::uint64_t seed);

/// One model per junction trained on the Train split.
std::vector<ForecastModel> train_models(const NetworkModel& net, const ScenarioSet& set, LstmHyperparams hyper,
                                        std::uint64_t seed, int workers, const LogFn& log = {});

std::vector<const DemandMatrix*> split_matrices(const ScenarioSet& set, Split s);

struct CellSpec {
  std::string method;  // policy name or ablation variant
  double budget_fraction = 0.0;
  std::size_t budget = 0;
  double sigma = 0.0;
  std::uint64_t seed = 0;
};

struct CellResult {
  CellSpec spec;
  std::vector<int> scenario_ids;
  std::vector<TwinTrajectory> trajectories;
  RunMetrics metrics;
  TimingProfile timing;
};

/// Closed-loop runs of one policy over the test scenarios. `truths` holds the
/// ground-truth solve of every test scenario in the same order.
CellResult run_cell(const NetworkModel& net, const Predictor& predictor, UncertaintyScorer* scorer,
                    const std::vector<const DemandScenario*>& tests, const std::vector<GroundTruth>& truths,
                    const SamplingPolicy& policy, const CellSpec& spec, const ExperimentConfig& cfg);

/// Policy object for a policy name at budget B.
SamplingPolicy make_policy(const std::string& name, const ScenarioSet& set, std::size_t budget, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Disk-backed commands
// ---------------------------------------------------------------------------

struct CommandOptions {
  int workers = 1;
  LogFn log;
};

/// Artifact locations under the output directory.
struct Layout {
  std::filesystem::path root;

  std::filesystem::path seed_dir(std::uint64_t seed) const;
  std::filesystem::path scenarios(std::uint64_t seed) const;
  std::filesystem::path models(std::uint64_t seed, int lookback) const;
  std::filesystem::path calibration(std::uint64_t seed, double alpha, std::size_t budget, double sigma,
                                    int lookback) const;
  std::filesystem::path run_dir(std::uint64_t seed, const std::string& method, std::size_t budget,
                                double sigma) const;
  std::filesystem::path reports() const;
};

void cmd_generate(const ExperimentConfig& cfg, const CommandOptions& opt);
void cmd_train(const ExperimentConfig& cfg, const CommandOptions& opt);
void cmd_calibrate(const ExperimentConfig& cfg, const CommandOptions& opt);
void cmd_run(const ExperimentConfig& cfg, const CommandOptions& opt);
void cmd_evaluate(const ExperimentConfig& cfg, const CommandOptions& opt);
void cmd_ablate(const ExperimentConfig& cfg, const CommandOptions& opt);
void cmd_sweep(const ExperimentConfig& cfg, const CommandOptions& opt);

}  // namespace aquatwin

#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "aquatwin/network.hpp"

namespace aquatwin {

/// Hourly demand matrix: one row per hour, one column per junction, L/s.
using DemandMatrix = Eigen::MatrixXd;

enum class Split { Train, Calibration, Test };
const char* to_string(Split s);
Split split_from_string(const std::string& s);

enum class NodeClass { Residential, Commercial };

struct DemandScenario {
  int scenario_id = 0;
  DemandMatrix demands;
  double timestep_hours = 1.0;
};

struct ScenarioSet {
  std::vector<DemandScenario> scenarios;
  std::vector<Split> split;            // one label per scenario
  std::vector<NodeClass> node_class;   // one label per junction

  std::vector<const DemandScenario*> with_label(Split s) const;
};

struct GenConfig {
  int n_scenarios = 20;
  int horizon_hours = 2160;
  std::uint64_t seed = 1;
  double diurnal_amplitude = 0.6;
  double weekly_amplitude = 0.15;
  double noise_cv = 0.15;
  /// Fraction of junctions given the commercial profile.
  double commercial_fraction = 0.3;
  /// Noise multiplier for commercial junctions.
  double commercial_noise_scale = 2.0;
  /// Global multiplier on the network's base demands.
  double demand_scale = 0.75;

  void validate() const;
};

/// Diurnal multipliers, mean 1. Residential peaks at hours 7 and 19,
/// commercial at hour 13.
const std::array<double, 24>& diurnal_shape(NodeClass c);
/// Weekly multipliers indexed by hour of week (hour 0 = Monday 00:00), mean 1.
const std::array<double, 168>& weekly_shape();

/// Deterministic class assignment for the junctions of a network.
std::vector<NodeClass> assign_node_classes(std::size_t junctions, double commercial_fraction, std::uint64_t seed);

/// Synthetic demand scenarios. Every scenario is labelled Train until
/// split_scenarios is applied. Throws InvalidConfig.
ScenarioSet generate_scenarios(const NetworkModel& net, const GenConfig& cfg);

struct SplitFractions {
  double train = 0.6;
  double calibration = 0.2;
  double test = 0.2;
};

/// Deterministic split by scenario order: train first, then calibration, then
/// test. Throws TooFewScenarios when a split would be empty.
ScenarioSet split_scenarios(ScenarioSet set, const SplitFractions& fractions = {});

/// entry * (1 + sigma * eta), clamped at zero; eta standard normal from `seed`.
DemandMatrix inject_noise(const DemandMatrix& series, double sigma, std::uint64_t seed);

/// Seed for a (base seed, stream, index) triple, used to give every scenario
/// and node its own generator.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index);

/// Scenario archive: scenario_<id>.csv files plus manifest.json.
void write_scenario_archive(const ScenarioSet& set, const GenConfig& cfg, const std::filesystem::path& dir);
ScenarioSet read_scenario_archive(const std::filesystem::path& dir);

std::string demand_csv(const DemandMatrix& demands);
DemandMatrix parse_demand_csv(const std::string& text);

}  // namespace aquatwin

#pragma once

#include <span>
#include <vector>

#include "aquatwin/network.hpp"

namespace aquatwin {

/// Hazen-Williams exponent on flow.
inline constexpr double kHazenFlowExponent = 1.852;
/// Hazen-Williams exponent on diameter.
inline constexpr double kHazenDiameterExponent = 4.871;
/// SI coefficient for flow in m3/s, length and diameter in m.
inline constexpr double kHazenSiCoefficient = 10.667;

/// Signed Hazen-Williams headloss in metres for a flow given in L/s.
double hazen_williams_headloss(double flow_lps, double length_m, double diameter_m, double roughness);

/// Resistance coefficient r such that headloss = r * |q|^1.852 * sign(q), q in L/s.
double hazen_williams_resistance(double length_m, double diameter_m, double roughness);

struct SolverConfig {
  int max_iterations = 200;
  /// Relative total flow change, sum|dQ| / sum|Q|.
  double tolerance = 1e-6;
  /// Largest acceptable junction mass-balance residual, L/s.
  double mass_tolerance = 1e-6;
  /// Flow below which the headloss curve is replaced by a C1 polynomial, m3/s.
  double headloss_regularization = 1e-4;
};

/// Heads and pressures are per node, flows per pipe (positive from -> to).
struct HydraulicState {
  std::vector<double> heads;
  std::vector<double> pressures;
  std::vector<double> flows;
  int iterations = 0;
  double flow_change = 0.0;
  double mass_residual = 0.0;
};

/// Headloss with the small-flow regularization the solver uses, and its slope.
struct HeadlossEval {
  double headloss;
  double slope;
};
HeadlossEval regularized_headloss(double flow_lps, double resistance, double regularization_lps);

/// Demand-driven steady state by the global gradient method.
///
/// `junction_demands` is indexed by junction (see NetworkModel::junctions).
/// Throws NonConvergence when max_iterations is reached, ShapeMismatch on a
/// wrong demand vector length.
HydraulicState solve_steady_state(const NetworkModel& net, std::span<const double> junction_demands,
                                  const SolverConfig& cfg = {});

/// max over junctions of |inflow - outflow - demand|, L/s.
double mass_balance_residual(const NetworkModel& net, const HydraulicState& state,
                             std::span<const double> junction_demands);

/// max over pipes of |head(from) - head(to) - headloss(flow)|, m. Uses the
/// unregularized Hazen-Williams curve.
double energy_residual(const NetworkModel& net, const HydraulicState& state);

}  // namespace aquatwin

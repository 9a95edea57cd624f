#include "aquatwin/hydraulics.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "aquatwin/error.hpp"

namespace aquatwin {

double hazen_williams_resistance(double length_m, double diameter_m, double roughness) {
  // r in m per (m3/s)^1.852, rescaled to flows in L/s.
  const double r_si = kHazenSiCoefficient * length_m /
                      (std::pow(roughness, kHazenFlowExponent) * std::pow(diameter_m, kHazenDiameterExponent));
  return r_si * std::pow(1e-3, kHazenFlowExponent);
}

double hazen_williams_headloss(double flow_lps, double length_m, double diameter_m, double roughness) {
  if (flow_lps == 0.0) return 0.0;
  const double q = std::abs(flow_lps) * 1e-3;
  const double h = kHazenSiCoefficient * length_m * std::pow(q, kHazenFlowExponent) /
                   (std::pow(roughness, kHazenFlowExponent) * std::pow(diameter_m, kHazenDiameterExponent));
  return std::copysign(h, flow_lps);
}

HeadlossEval regularized_headloss(double flow_lps, double resistance, double regularization_lps) {
  const double aq = std::abs(flow_lps);
  if (aq >= regularization_lps) {
    const double mag = resistance * std::pow(aq, kHazenFlowExponent);
    return {std::copysign(mag, flow_lps), kHazenFlowExponent * mag / aq};
  }
  // h = r*qe^n * (a*x + b*x|x|), x = q/qe, with a + b = 1 and a + 2b = n so
  // value and slope match the power law at |q| = qe.
  constexpr double b = kHazenFlowExponent - 1.0;
  constexpr double a = 1.0 - b;
  const double scale = resistance * std::pow(regularization_lps, kHazenFlowExponent);
  const double x = flow_lps / regularization_lps;
  return {scale * (a * x + b * x * std::abs(x)), scale * (a + 2.0 * b * std::abs(x)) / regularization_lps};
}

HydraulicState solve_steady_state(const NetworkModel& net, std::span<const double> junction_demands,
                                  const SolverConfig& cfg) {
  const auto nj = static_cast<Eigen::Index>(net.junction_count());
  const std::size_t np = net.pipe_count();
  if (junction_demands.size() != net.junction_count()) {
    throw ShapeMismatch("demand vector has " + std::to_string(junction_demands.size()) + " entries, network has " +
                        std::to_string(net.junction_count()) + " junctions");
  }
  const double q_eps = cfg.headloss_regularization * 1000.0;

  std::vector<double> resistance(np);
  HydraulicState state;
  state.flows.resize(np);
  state.heads.resize(net.node_count());
  double max_source_head = -std::numeric_limits<double>::infinity();
  for (const auto& node : net.nodes()) {
    if (!node.is_junction()) max_source_head = std::max(max_source_head, node.fixed_head);
  }
  for (const auto& node : net.nodes()) {
    state.heads[static_cast<std::size_t>(node.id.index)] = node.is_junction() ? max_source_head : node.fixed_head;
  }
  for (std::size_t k = 0; k < np; ++k) {
    const auto& p = net.pipes()[k];
    resistance[k] = hazen_williams_resistance(p.length, p.diameter, p.roughness);
    // Start at 0.3 m/s.
    state.flows[k] = 0.3 * 3.141592653589793 * p.diameter * p.diameter / 4.0 * 1000.0;
  }

  Eigen::MatrixXd A(nj, nj);
  Eigen::VectorXd rhs(nj);
  std::vector<double> inv_slope(np);
  std::vector<double> correction(np);
  Eigen::LLT<Eigen::MatrixXd> llt;

  for (int iter = 1; iter <= cfg.max_iterations; ++iter) {
    A.setZero();
    for (Eigen::Index j = 0; j < nj; ++j) rhs[j] = -junction_demands[static_cast<std::size_t>(j)];

    for (std::size_t k = 0; k < np; ++k) {
      const auto& p = net.pipes()[k];
      const auto [h, g] = regularized_headloss(state.flows[k], resistance[k], q_eps);
      const double pk = 1.0 / g;
      inv_slope[k] = pk;
      correction[k] = h / g;
      const double q_lin = state.flows[k] - correction[k];
      const int ja = net.junction_index(p.from);
      const int jb = net.junction_index(p.to);
      // Node `to` receives +q, node `from` loses q.
      if (ja >= 0) {
        A(ja, ja) += pk;
        rhs[ja] -= q_lin;
      }
      if (jb >= 0) {
        A(jb, jb) += pk;
        rhs[jb] += q_lin;
      }
      if (ja >= 0 && jb >= 0) {
        A(ja, jb) -= pk;
        A(jb, ja) -= pk;
      } else if (ja >= 0) {
        rhs[ja] += pk * net.node(p.to).fixed_head;
      } else if (jb >= 0) {
        rhs[jb] += pk * net.node(p.from).fixed_head;
      }
    }

    llt.compute(A);
    if (llt.info() != Eigen::Success) throw NonConvergence(iter, INFINITY, INFINITY);
    const Eigen::VectorXd H = llt.solve(rhs);
    for (Eigen::Index j = 0; j < nj; ++j) {
      state.heads[static_cast<std::size_t>(net.junctions()[static_cast<std::size_t>(j)])] = H[j];
    }

    double sum_dq = 0.0;
    double sum_q = 0.0;
    for (std::size_t k = 0; k < np; ++k) {
      const auto& p = net.pipes()[k];
      const double dh = state.heads[static_cast<std::size_t>(p.from)] - state.heads[static_cast<std::size_t>(p.to)];
      const double q_new = state.flows[k] - correction[k] + inv_slope[k] * dh;
      sum_dq += std::abs(q_new - state.flows[k]);
      sum_q += std::abs(q_new);
      state.flows[k] = q_new;
    }
    state.iterations = iter;
    // Near-zero total flow makes the ratio meaningless; flows inside the
    // regularized band count as the floor.
    state.flow_change = sum_dq / std::max(sum_q, q_eps * static_cast<double>(np));
    state.mass_residual = mass_balance_residual(net, state, junction_demands);
    if (!std::isfinite(state.flow_change)) break;
    if (state.flow_change < cfg.tolerance && state.mass_residual < cfg.mass_tolerance) {
      state.pressures.resize(net.node_count());
      for (const auto& node : net.nodes()) {
        const auto i = static_cast<std::size_t>(node.id.index);
        state.pressures[i] = state.heads[i] - node.elevation;
      }
      return state;
    }
  }
  throw NonConvergence(state.iterations, state.flow_change, state.mass_residual);
}

double mass_balance_residual(const NetworkModel& net, const HydraulicState& state,
                             std::span<const double> junction_demands) {
  if (state.flows.size() != net.pipe_count() || junction_demands.size() != net.junction_count()) {
    throw ShapeMismatch("state or demand dimensions do not match the network");
  }
  std::vector<double> balance(net.junction_count());
  for (std::size_t j = 0; j < balance.size(); ++j) balance[j] = -junction_demands[j];
  for (const auto& p : net.pipes()) {
    const double q = state.flows[static_cast<std::size_t>(p.id)];
    if (const int ja = net.junction_index(p.from); ja >= 0) balance[static_cast<std::size_t>(ja)] -= q;
    if (const int jb = net.junction_index(p.to); jb >= 0) balance[static_cast<std::size_t>(jb)] += q;
  }
  double worst = 0.0;
  for (double b : balance) worst = std::max(worst, std::abs(b));
  return worst;
}

double energy_residual(const NetworkModel& net, const HydraulicState& state) {
  double worst = 0.0;
  for (const auto& p : net.pipes()) {
    const double dh = state.heads[static_cast<std::size_t>(p.from)] - state.heads[static_cast<std::size_t>(p.to)];
    const double hl = hazen_williams_headloss(state.flows[static_cast<std::size_t>(p.id)], p.length, p.diameter,
                                              p.roughness);
    worst = std::max(worst, std::abs(dh - hl));
  }
  return worst;
}

}  // namespace aquatwin

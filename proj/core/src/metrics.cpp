#include "aquatwin/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "aquatwin/error.hpp"

namespace aquatwin {

namespace {

struct Accumulator {
  double sq_q = 0.0;
  std::size_t n_q = 0;
  double sq_p = 0.0;
  std::size_t n_p = 0;
  std::size_t covered_unmeasured = 0;
  std::size_t n_unmeasured = 0;
  std::size_t covered_all = 0;
  std::size_t n_all = 0;
  std::size_t violations = 0;
  std::size_t n_violation = 0;
  double width_sum = 0.0;
  std::size_t nonconverged = 0;
};

bool pressure_step_ok(const TwinTrajectory& traj, std::size_t s) {
  return traj.has_hydraulics && traj.converged[s] && traj.truth_converged[s];
}

void accumulate(const TwinTrajectory& traj, Accumulator& acc) {
  const auto steps = traj.steps();
  const auto n = traj.nodes();
  for (std::size_t s = 0; s < steps; ++s) {
    const auto r = static_cast<Eigen::Index>(s);
    const bool p_ok = pressure_step_ok(traj, s);
    if (traj.has_hydraulics && !p_ok) ++acc.nonconverged;
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<Eigen::Index>(i);
      const double q = traj.q_true(r, c);
      const double dq = q - traj.q_tilde(r, c);
      acc.sq_q += dq * dq;
      ++acc.n_q;
      const bool inside = traj.lo(r, c) <= q && q <= traj.hi(r, c);
      ++acc.n_all;
      acc.covered_all += inside;
      if (!traj.measured(r, c)) {
        ++acc.n_unmeasured;
        acc.covered_unmeasured += inside;
        acc.width_sum += traj.hi(r, c) - traj.lo(r, c);
      }
      if (p_ok) {
        const double p = traj.p_true(r, c);
        const double pt = traj.p_tilde(r, c);
        acc.sq_p += (p - pt) * (p - pt);
        ++acc.n_p;
        ++acc.n_violation;
        acc.violations += (pt >= kPressureThreshold && p < kPressureThreshold);
      }
    }
  }
}

RunMetrics finish(const Accumulator& acc, bool hydraulics) {
  if (acc.n_q == 0) throw EmptyEvaluation("trajectory has no evaluated steps");
  RunMetrics m;
  m.rmse_q = std::sqrt(acc.sq_q / static_cast<double>(acc.n_q));
  if (hydraulics) {
    if (acc.n_p == 0) throw EmptyEvaluation("no step with converged twin and ground-truth solves");
    m.rmse_p = std::sqrt(acc.sq_p / static_cast<double>(acc.n_p));
    m.violation_rate = static_cast<double>(acc.violations) / static_cast<double>(acc.n_violation);
  }
  m.coverage_all = static_cast<double>(acc.covered_all) / static_cast<double>(acc.n_all);
  // Full sampling leaves nothing unmeasured; coverage is then vacuous.
  m.coverage = acc.n_unmeasured ? static_cast<double>(acc.covered_unmeasured) / static_cast<double>(acc.n_unmeasured)
                                : 1.0;
  m.mean_width = acc.n_unmeasured ? acc.width_sum / static_cast<double>(acc.n_unmeasured) : 0.0;
  m.nonconverged_steps = acc.nonconverged;
  return m;
}

ComponentStats stats_of(std::vector<double> v) {
  ComponentStats c;
  if (v.empty()) return c;
  c.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  // Nearest-rank percentile.
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(v.size())));
  const auto kth = v.begin() + static_cast<long>(std::max<std::size_t>(rank, 1) - 1);
  std::nth_element(v.begin(), kth, v.end());
  c.p95 = *kth;
  return c;
}

}  // namespace

double rmse(const Eigen::MatrixXd& truth, const Eigen::MatrixXd& estimate) {
  if (truth.rows() != estimate.rows() || truth.cols() != estimate.cols()) {
    throw ShapeMismatch("rmse operands differ in shape");
  }
  if (truth.size() == 0) throw EmptyEvaluation("rmse of an empty matrix");
  return std::sqrt((truth - estimate).squaredNorm() / static_cast<double>(truth.size()));
}

double rmse_demand(const TwinTrajectory& traj) {
  if (traj.steps() == 0) throw EmptyEvaluation("trajectory has no evaluated steps");
  return rmse(traj.q_true, traj.q_tilde);
}

double rmse_pressure(const TwinTrajectory& traj) {
  if (!traj.has_hydraulics) throw EmptyEvaluation("trajectory carries no hydraulic state");
  double sq = 0.0;
  std::size_t n = 0;
  for (std::size_t s = 0; s < traj.steps(); ++s) {
    if (!pressure_step_ok(traj, s)) continue;
    const auto r = static_cast<Eigen::Index>(s);
    sq += (traj.p_true.row(r) - traj.p_tilde.row(r)).squaredNorm();
    n += traj.nodes();
  }
  if (n == 0) throw EmptyEvaluation("no step with converged twin and ground-truth solves");
  return std::sqrt(sq / static_cast<double>(n));
}

CoverageStats empirical_coverage(const TwinTrajectory& traj) {
  Accumulator acc;
  accumulate(traj, acc);
  if (acc.n_unmeasured == 0) throw EmptyEvaluation("no unmeasured entries to evaluate coverage on");
  CoverageStats c;
  c.n_unmeasured = acc.n_unmeasured;
  c.n_all = acc.n_all;
  c.unmeasured = static_cast<double>(acc.covered_unmeasured) / static_cast<double>(acc.n_unmeasured);
  c.all = static_cast<double>(acc.covered_all) / static_cast<double>(acc.n_all);
  return c;
}

double violation_rate(std::span<const double> p_true, std::span<const double> p_tilde, double threshold) {
  if (p_true.size() != p_tilde.size()) throw ShapeMismatch("pressure vectors differ in length");
  if (p_true.empty()) throw EmptyEvaluation("no pressures to evaluate");
  std::size_t v = 0;
  for (std::size_t i = 0; i < p_true.size(); ++i) v += (p_tilde[i] >= threshold && p_true[i] < threshold);
  return static_cast<double>(v) / static_cast<double>(p_true.size());
}

double violation_rate(const TwinTrajectory& traj, double threshold) {
  if (!traj.has_hydraulics) throw EmptyEvaluation("trajectory carries no hydraulic state");
  std::size_t v = 0;
  std::size_t n = 0;
  for (std::size_t s = 0; s < traj.steps(); ++s) {
    if (!pressure_step_ok(traj, s)) continue;
    const auto r = static_cast<Eigen::Index>(s);
    for (Eigen::Index c = 0; c < traj.p_true.cols(); ++c) {
      v += (traj.p_tilde(r, c) >= threshold && traj.p_true(r, c) < threshold);
      ++n;
    }
  }
  if (n == 0) throw EmptyEvaluation("no step with converged twin and ground-truth solves");
  return static_cast<double>(v) / static_cast<double>(n);
}

TimingProfile timing_profile(std::span<const StepTiming> steps) {
  std::vector<double> inf, unc, sel, sol, tot;
  for (const auto& s : steps) {
    inf.push_back(s.inference_ms);
    unc.push_back(s.uncertainty_ms);
    sel.push_back(s.selection_ms);
    sol.push_back(s.solve_ms);
    tot.push_back(s.inference_ms + s.uncertainty_ms + s.selection_ms + s.solve_ms);
  }
  TimingProfile p;
  p.inference = stats_of(std::move(inf));
  p.uncertainty = stats_of(std::move(unc));
  p.selection = stats_of(std::move(sel));
  p.solve = stats_of(std::move(sol));
  p.total = stats_of(std::move(tot));
  p.overhead = p.total.mean > 0.0 ? (p.total.mean - p.solve.mean) / p.total.mean : 0.0;
  return p;
}

RunMetrics evaluate_trajectory(const TwinTrajectory& traj) {
  Accumulator acc;
  accumulate(traj, acc);
  return finish(acc, traj.has_hydraulics);
}

RunMetrics pool_metrics(const std::vector<const TwinTrajectory*>& runs) {
  Accumulator acc;
  bool hydraulics = !runs.empty();
  for (const auto* t : runs) {
    accumulate(*t, acc);
    hydraulics = hydraulics && t->has_hydraulics;
  }
  return finish(acc, hydraulics);
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd m;
  if (values.empty()) return m;
  m.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - m.mean) * (v - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return m;
}

}  // namespace aquatwin

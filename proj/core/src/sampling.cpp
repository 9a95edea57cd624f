#include "aquatwin/sampling.hpp"

#include <algorithm>
#include <array>
#include <boost/math/distributions/normal.hpp>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "aquatwin/error.hpp"
#include "aquatwin/text_io.hpp"

namespace aquatwin {

LstmPredictor::LstmPredictor(std::vector<ForecastModel> models) : models_(std::move(models)) {
  if (models_.empty()) throw MissingModel("no forecast models supplied");
  lookback_ = static_cast<std::size_t>(models_.front().hyper.lookback);
  for (const auto& m : models_) {
    if (static_cast<std::size_t>(m.hyper.lookback) != lookback_) {
      throw ShapeMismatch("all node models must share one lookback window");
    }
  }
}

void LstmPredictor::predict(const DemandMatrix& fused, std::size_t t, std::span<double> out) const {
  const auto w = static_cast<Eigen::Index>(lookback_);
  for (std::size_t i = 0; i < models_.size(); ++i) {
    const double* col = fused.col(static_cast<Eigen::Index>(i)).data();
    out[i] = lstm_forward(models_[i], std::span<const double>(col + static_cast<Eigen::Index>(t) - w, lookback_), {},
                          t - lookback_);
  }
}

MovingAveragePredictor::MovingAveragePredictor(std::size_t nodes, std::size_t warmup, int days)
    : nodes_(nodes), warmup_(std::max<std::size_t>(warmup, 24)), days_(days) {
  if (days < 1) throw InvalidConfig("days", "must be >= 1");
}

void MovingAveragePredictor::predict(const DemandMatrix& fused, std::size_t t, std::span<double> out) const {
  for (std::size_t i = 0; i < nodes_; ++i) {
    double sum = 0.0;
    int n = 0;
    for (int k = 1; k <= days_ && t >= static_cast<std::size_t>(24 * k); ++k) {
      sum += fused(static_cast<Eigen::Index>(t) - 24 * k, static_cast<Eigen::Index>(i));
      ++n;
    }
    out[i] = n > 0 ? sum / n : fused(static_cast<Eigen::Index>(t) - 1, static_cast<Eigen::Index>(i));
  }
}

ConformalScorer::ConformalScorer(const CalibrationTable& table) {
  quantiles_.reserve(table.size());
  for (std::size_t i = 0; i < table.size(); ++i) quantiles_.push_back(table.quantile(i));
}

void ConformalScorer::score(std::span<const double> predictions, std::span<double> uncertainty,
                            std::span<double> half_width) {
  if (predictions.size() != quantiles_.size()) {
    throw UncalibratedNode("calibration table covers " + std::to_string(quantiles_.size()) + " nodes, twin has " +
                           std::to_string(predictions.size()));
  }
  for (std::size_t i = 0; i < quantiles_.size(); ++i) {
    uncertainty[i] = 2.0 * quantiles_[i];
    half_width[i] = quantiles_[i];
  }
}

double normal_two_sided_quantile(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidConfig("alpha", "must lie in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), 1.0 - alpha / 2.0);
}

RollingVarianceScorer::RollingVarianceScorer(std::size_t nodes, std::size_t window, double alpha)
    : nodes_(nodes), window_(window), z_(normal_two_sided_quantile(alpha)) {
  if (window < 2) throw InvalidConfig("window", "must be >= 2");
  reset();
}

void RollingVarianceScorer::reset() {
  history_.assign(nodes_, std::vector<double>(window_, 0.0));
  filled_ = 0;
  head_ = 0;
}

void RollingVarianceScorer::score(std::span<const double> predictions, std::span<double> uncertainty,
                                  std::span<double> half_width) {
  for (std::size_t i = 0; i < nodes_; ++i) history_[i][head_] = predictions[i];
  head_ = (head_ + 1) % window_;
  filled_ = std::min(filled_ + 1, window_);
  for (std::size_t i = 0; i < nodes_; ++i) {
    double var = 0.0;
    if (filled_ >= 2) {
      double mean = 0.0;
      for (std::size_t k = 0; k < filled_; ++k) mean += history_[i][k];
      mean /= static_cast<double>(filled_);
      for (std::size_t k = 0; k < filled_; ++k) var += (history_[i][k] - mean) * (history_[i][k] - mean);
      var /= static_cast<double>(filled_ - 1);
    }
    uncertainty[i] = var;
    half_width[i] = z_ * std::sqrt(var);
  }
}

void FixedWidthScorer::score(std::span<const double> predictions, std::span<double> uncertainty,
                             std::span<double> half_width) {
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    uncertainty[i] = 2.0 * half_width_;
    half_width[i] = half_width_;
  }
}

const char* to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::Adaptive: return "adaptive";
    case PolicyKind::UniformRandom: return "uniform";
    case PolicyKind::StaticHighVariance: return "static";
    case PolicyKind::RoundRobin: return "round_robin";
    case PolicyKind::Full: return "full";
  }
  return "?";
}

PolicyKind policy_from_string(const std::string& s) {
  if (s == "adaptive") return PolicyKind::Adaptive;
  if (s == "uniform" || s == "random") return PolicyKind::UniformRandom;
  if (s == "static") return PolicyKind::StaticHighVariance;
  if (s == "round_robin") return PolicyKind::RoundRobin;
  if (s == "full") return PolicyKind::Full;
  throw InvalidConfig("policies", "unknown policy '" + s + "'");
}

std::vector<int> top_k(std::span<const double> scores, std::size_t budget) {
  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  budget = std::min(budget, scores.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<long>(budget), order.end(), [&](int a, int b) {
    const double ua = scores[static_cast<std::size_t>(a)];
    const double ub = scores[static_cast<std::size_t>(b)];
    return ua > ub || (ua == ub && a < b);
  });
  order.resize(budget);
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<int> select_nodes(const SamplingPolicy& policy, std::span<const double> uncertainty, std::size_t budget,
                              std::size_t step, std::mt19937_64& rng) {
  const std::size_t n = uncertainty.size();
  if (policy.kind == PolicyKind::Full) {
    std::vector<int> all(n);
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  if (budget > n) {
    throw BudgetExceedsNetwork("budget " + std::to_string(budget) + " exceeds " + std::to_string(n) + " nodes");
  }
  switch (policy.kind) {
    case PolicyKind::Adaptive:
      return top_k(uncertainty, budget);
    case PolicyKind::UniformRandom: {
      // Partial Fisher-Yates.
      std::vector<int> pool(n);
      std::iota(pool.begin(), pool.end(), 0);
      for (std::size_t k = 0; k < budget; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, n - 1);
        std::swap(pool[k], pool[pick(rng)]);
      }
      pool.resize(budget);
      std::sort(pool.begin(), pool.end());
      return pool;
    }
    case PolicyKind::RoundRobin: {
      std::vector<int> out;
      out.reserve(budget);
      for (std::size_t k = 0; k < budget; ++k) out.push_back(static_cast<int>((step * budget + k) % n));
      std::sort(out.begin(), out.end());
      return out;
    }
    case PolicyKind::StaticHighVariance: {
      if (policy.static_set.size() != budget) {
        throw InvalidConfig("static_set", "holds " + std::to_string(policy.static_set.size()) +
                                              " nodes, budget is " + std::to_string(budget));
      }
      auto out = policy.static_set;
      std::sort(out.begin(), out.end());
      return out;
    }
    case PolicyKind::Full:
      break;
  }
  return {};
}

std::vector<double> fuse_state(std::span<const double> truth, std::span<const double> predictions,
                               std::span<const int> selected, double sensor_sigma, NoiseMode mode,
                               std::mt19937_64& rng) {
  if (truth.size() != predictions.size()) throw ShapeMismatch("truth and prediction vectors differ in length");
  std::vector<double> out(predictions.begin(), predictions.end());
  std::normal_distribution<double> eta(0.0, 1.0);
  for (int i : selected) {
    const auto k = static_cast<std::size_t>(i);
    if (k >= out.size()) throw ShapeMismatch("selected node out of range");
    double v = truth[k];
    if (sensor_sigma > 0.0) {
      v = mode == NoiseMode::Multiplicative ? v * (1.0 + sensor_sigma * eta(rng)) : v + sensor_sigma * eta(rng);
    }
    out[k] = std::max(0.0, v);
  }
  return out;
}

std::vector<int> precompute_static_set(const std::vector<const DemandMatrix*>& train, std::size_t budget) {
  if (train.empty()) throw InsufficientData("no training series for the static set");
  const auto n = static_cast<std::size_t>(train.front()->cols());
  if (budget > n) {
    throw BudgetExceedsNetwork("budget " + std::to_string(budget) + " exceeds " + std::to_string(n) + " nodes");
  }
  std::vector<double> variance(n);
  for (std::size_t i = 0; i < n; ++i) {
    // Welford over every training hour of every scenario.
    double mean = 0.0;
    double m2 = 0.0;
    double count = 0.0;
    for (const auto* m : train) {
      for (Eigen::Index t = 0; t < m->rows(); ++t) {
        const double x = (*m)(t, static_cast<Eigen::Index>(i));
        count += 1.0;
        const double delta = x - mean;
        mean += delta / count;
        m2 += delta * (x - mean);
      }
    }
    variance[i] = count > 1.0 ? m2 / (count - 1.0) : 0.0;
  }
  return top_k(variance, budget);
}

GroundTruth solve_ground_truth(const NetworkModel& net, const DemandMatrix& demands, std::size_t first_step,
                               const SolverConfig& cfg) {
  GroundTruth gt;
  const auto T = static_cast<std::size_t>(demands.rows());
  const auto nj = net.junction_count();
  gt.pressures = DemandMatrix::Constant(demands.rows(), static_cast<Eigen::Index>(nj),
                                        std::numeric_limits<double>::quiet_NaN());
  gt.converged.assign(T, 0);
  std::vector<double> q(nj);
  for (std::size_t t = first_step; t < T; ++t) {
    for (std::size_t j = 0; j < nj; ++j) q[j] = demands(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j));
    try {
      const auto state = solve_steady_state(net, q, cfg);
      for (std::size_t j = 0; j < nj; ++j) {
        gt.pressures(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j)) =
            state.pressures[static_cast<std::size_t>(net.junctions()[j])];
      }
      gt.converged[t] = 1;
    } catch (const NonConvergence&) {
    }
  }
  return gt;
}

namespace {

using Clock = std::chrono::steady_clock;
double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

}  // namespace

TwinTrajectory run_digital_twin(const NetworkModel& net, const Predictor& predictor, UncertaintyScorer* scorer,
                                const DemandMatrix& demands, const SamplingPolicy& policy, const TwinConfig& cfg,
                                const GroundTruth* truth) {
  const auto n = predictor.node_count();
  const auto w = predictor.warmup();
  const auto T = static_cast<std::size_t>(demands.rows());
  if (static_cast<std::size_t>(demands.cols()) != n) {
    throw ShapeMismatch("scenario has " + std::to_string(demands.cols()) + " junction columns, predictor covers " +
                        std::to_string(n));
  }
  if (cfg.solve_hydraulics && net.junction_count() != n) {
    throw ShapeMismatch("network junction count does not match the predictor");
  }
  if (T <= w) throw InsufficientData("scenario shorter than the warm-up window");

  GroundTruth computed;
  if (cfg.solve_hydraulics && truth == nullptr) {
    computed = solve_ground_truth(net, demands, w, cfg.solver);
    truth = &computed;
  }

  const std::size_t steps = T - w;
  const auto rows = static_cast<Eigen::Index>(steps);
  const auto cols = static_cast<Eigen::Index>(n);
  TwinTrajectory traj;
  traj.warmup = w;
  traj.budget = policy.kind == PolicyKind::Full ? n : cfg.budget;
  traj.has_hydraulics = cfg.solve_hydraulics;
  traj.selected.reserve(steps);
  traj.measured.setZero(rows, cols);
  traj.q_true = demands.bottomRows(rows);
  traj.q_hat.resize(rows, cols);
  traj.q_tilde.resize(rows, cols);
  traj.lo.resize(rows, cols);
  traj.hi.resize(rows, cols);
  traj.uncertainty.resize(rows, cols);
  if (cfg.solve_hydraulics) {
    traj.p_true = truth->pressures.bottomRows(rows);
    traj.p_tilde.resize(rows, cols);
    traj.flows.resize(rows, static_cast<Eigen::Index>(net.pipe_count()));
    traj.truth_converged.assign(truth->converged.end() - static_cast<long>(steps), truth->converged.end());
  }
  traj.converged.assign(steps, 1);
  traj.solver_iterations.assign(steps, 0);
  traj.timing.resize(steps);

  DemandMatrix fused = demands;  // rows >= w are overwritten step by step
  std::vector<double> q_hat(n);
  std::vector<double> unc(n);
  std::vector<double> half(n);
  std::mt19937_64 select_rng(policy.seed);
  std::mt19937_64 noise_rng(cfg.noise_seed);
  if (scorer) scorer->reset();
  std::vector<double> prev_pressure;
  std::vector<double> prev_flows;

  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t t = w + s;
    const auto r = static_cast<Eigen::Index>(s);
    auto& timing = traj.timing[s];

    auto t0 = Clock::now();
    predictor.predict(fused, t, q_hat);
    timing.inference_ms = ms_since(t0);

    t0 = Clock::now();
    if (scorer) {
      scorer->score(q_hat, unc, half);
    } else {
      std::fill(unc.begin(), unc.end(), 0.0);
      std::fill(half.begin(), half.end(), std::numeric_limits<double>::infinity());
    }
    timing.uncertainty_ms = ms_since(t0);

    t0 = Clock::now();
    auto sel = select_nodes(policy, unc, cfg.budget, s, select_rng);
    std::vector<double> truth_row(n);
    for (std::size_t i = 0; i < n; ++i) truth_row[i] = demands(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i));
    const auto q_tilde = fuse_state(truth_row, q_hat, sel, cfg.sensor_sigma, cfg.noise_mode, noise_rng);
    for (std::size_t i = 0; i < n; ++i) fused(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i)) = q_tilde[i];
    timing.selection_ms = ms_since(t0);

    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<Eigen::Index>(i);
      traj.q_hat(r, c) = q_hat[i];
      traj.q_tilde(r, c) = q_tilde[i];
      const auto iv = prediction_interval(q_hat[i], half[i]);
      traj.lo(r, c) = iv.lo;
      traj.hi(r, c) = iv.hi;
      traj.uncertainty(r, c) = unc[i];
    }
    for (int i : sel) traj.measured(r, i) = 1;
    traj.selected.push_back(std::move(sel));

    if (cfg.solve_hydraulics) {
      t0 = Clock::now();
      try {
        const auto state = solve_steady_state(net, q_tilde, cfg.solver);
        prev_pressure.resize(n);
        for (std::size_t j = 0; j < n; ++j) prev_pressure[j] = state.pressures[static_cast<std::size_t>(net.junctions()[j])];
        prev_flows = state.flows;
        traj.solver_iterations[s] = state.iterations;
      } catch (const NonConvergence& e) {
        traj.converged[s] = 0;
        traj.solver_iterations[s] = e.iterations();
        if (prev_pressure.empty()) {
          prev_pressure.assign(n, std::numeric_limits<double>::quiet_NaN());
          prev_flows.assign(net.pipe_count(), std::numeric_limits<double>::quiet_NaN());
        }
      }
      timing.solve_ms = ms_since(t0);
      for (std::size_t j = 0; j < n; ++j) traj.p_tilde(r, static_cast<Eigen::Index>(j)) = prev_pressure[j];
      for (std::size_t k = 0; k < prev_flows.size(); ++k) traj.flows(r, static_cast<Eigen::Index>(k)) = prev_flows[k];
    }
  }
  return traj;
}

std::string trajectory_csv(const TwinTrajectory& traj) {
  CsvWriter csv({"t", "node", "selected", "q_true", "q_hat", "q_tilde", "lo", "hi", "p_true", "p_tilde", "flow_diag"});
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t s = 0; s < traj.steps(); ++s) {
    const auto r = static_cast<Eigen::Index>(s);
    // Solver diagnostic: iteration count, negative when the step reused the previous state.
    const int diag = traj.has_hydraulics ? (traj.converged[s] ? traj.solver_iterations[s] : -traj.solver_iterations[s]) : 0;
    for (std::size_t i = 0; i < traj.nodes(); ++i) {
      const auto c = static_cast<Eigen::Index>(i);
      csv.cell(static_cast<long long>(traj.warmup + s))
          .cell(static_cast<long long>(i))
          .cell(static_cast<long long>(traj.measured(r, c)))
          .cell(traj.q_true(r, c))
          .cell(traj.q_hat(r, c))
          .cell(traj.q_tilde(r, c))
          .cell(traj.lo(r, c))
          .cell(traj.hi(r, c))
          .cell(traj.has_hydraulics ? traj.p_true(r, c) : nan)
          .cell(traj.has_hydraulics ? traj.p_tilde(r, c) : nan)
          .cell(static_cast<long long>(diag));
      csv.end_row();
    }
  }
  return csv.str();
}

TwinTrajectory trajectory_from_csv(const std::string& text) {
  const CsvTable table = parse_csv(text);
  static const char* const names[] = {"t",  "node", "selected", "q_true", "q_hat",   "q_tilde",
                                      "lo", "hi",   "p_true",   "p_tilde", "flow_diag"};
  std::array<int, 11> col{};
  for (std::size_t k = 0; k < col.size(); ++k) {
    col[k] = table.column(names[k]);
    if (col[k] < 0) throw ShapeMismatch(std::string("trajectory CSV lacks column '") + names[k] + "'");
  }
  std::size_t t_min = std::numeric_limits<std::size_t>::max();
  std::size_t t_max = 0;
  std::size_t nodes = 0;
  for (const auto& row : table.rows) {
    const auto t = static_cast<std::size_t>(parse_double(row[static_cast<std::size_t>(col[0])]));
    const auto i = static_cast<std::size_t>(parse_double(row[static_cast<std::size_t>(col[1])]));
    t_min = std::min(t_min, t);
    t_max = std::max(t_max, t);
    nodes = std::max(nodes, i + 1);
  }
  if (table.rows.empty()) throw EmptyEvaluation("trajectory CSV has no rows");
  const std::size_t steps = t_max - t_min + 1;
  if (steps * nodes != table.rows.size()) throw ShapeMismatch("trajectory CSV is not a complete step x node grid");

  TwinTrajectory traj;
  traj.warmup = t_min;
  const auto R = static_cast<Eigen::Index>(steps);
  const auto C = static_cast<Eigen::Index>(nodes);
  traj.measured.setZero(R, C);
  for (auto* m : {&traj.q_true, &traj.q_hat, &traj.q_tilde, &traj.lo, &traj.hi, &traj.p_true, &traj.p_tilde}) {
    m->resize(R, C);
  }
  traj.uncertainty = DemandMatrix::Zero(R, C);
  traj.selected.assign(steps, {});
  traj.converged.assign(steps, 1);
  traj.truth_converged.assign(steps, 1);
  traj.solver_iterations.assign(steps, 0);
  traj.timing.assign(steps, {});
  bool any_pressure = false;
  for (const auto& row : table.rows) {
    const auto get = [&](int k) { return parse_double(row[static_cast<std::size_t>(col[static_cast<std::size_t>(k)])]); };
    const auto s = static_cast<std::size_t>(get(0)) - t_min;
    const auto i = static_cast<std::size_t>(get(1));
    const auto r = static_cast<Eigen::Index>(s);
    const auto c = static_cast<Eigen::Index>(i);
    if (get(2) != 0.0) {
      traj.measured(r, c) = 1;
      traj.selected[s].push_back(static_cast<int>(i));
    }
    traj.q_true(r, c) = get(3);
    traj.q_hat(r, c) = get(4);
    traj.q_tilde(r, c) = get(5);
    traj.lo(r, c) = get(6);
    traj.hi(r, c) = get(7);
    traj.p_true(r, c) = get(8);
    traj.p_tilde(r, c) = get(9);
    const double diag = get(10);
    traj.solver_iterations[s] = static_cast<int>(std::abs(diag));
    if (diag < 0.0) traj.converged[s] = 0;
    if (std::isfinite(traj.p_tilde(r, c))) any_pressure = true;
    if (!std::isfinite(traj.p_true(r, c))) traj.truth_converged[s] = 0;
  }
  for (auto& sel : traj.selected) std::sort(sel.begin(), sel.end());
  traj.has_hydraulics = any_pressure;
  std::size_t b = 0;
  for (const auto& sel : traj.selected) b = std::max(b, sel.size());
  traj.budget = b;
  return traj;
}

std::string timing_csv(const std::vector<StepTiming>& timing) {
  CsvWriter csv({"step", "inference_ms", "uncertainty_ms", "selection_ms", "solve_ms"});
  for (std::size_t s = 0; s < timing.size(); ++s) {
    csv.cell(s).cell(timing[s].inference_ms).cell(timing[s].uncertainty_ms).cell(timing[s].selection_ms).cell(
        timing[s].solve_ms);
    csv.end_row();
  }
  return csv.str();
}

std::vector<StepTiming> timing_from_csv(const std::string& text) {
  const CsvTable table = parse_csv(text);
  std::vector<StepTiming> out;
  out.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    if (row.size() < 5) throw ShapeMismatch("timing CSV row has too few cells");
    out.push_back({parse_double(row[1]), parse_double(row[2]), parse_double(row[3]), parse_double(row[4])});
  }
  return out;
}

}  // namespace aquatwin

#include "aquatwin/forecaster.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <limits>
#include <numeric>
#include <optional>
#include <random>

#include "aquatwin/error.hpp"

namespace aquatwin {

void LstmHyperparams::validate() const {
  if (lookback < 1) throw InvalidConfig("lstm.lookback", "must be >= 1");
  if (layers < 1) throw InvalidConfig("lstm.layers", "must be >= 1");
  if (hidden < 1) throw InvalidConfig("lstm.hidden", "must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidConfig("lstm.dropout", "must lie in [0, 1)");
  if (!(learning_rate > 0.0)) throw InvalidConfig("lstm.learning_rate", "must be > 0");
  if (batch < 1) throw InvalidConfig("lstm.batch", "must be >= 1");
  if (max_epochs < 1) throw InvalidConfig("lstm.max_epochs", "must be >= 1");
  if (patience < 1) throw InvalidConfig("lstm.patience", "must be >= 1");
  if (!(l2 >= 0.0)) throw InvalidConfig("lstm.l2", "must be >= 0");
  if (windows_per_epoch < 0) throw InvalidConfig("lstm.windows_per_epoch", "must be >= 0");
  if (max_validation_windows < 0) throw InvalidConfig("lstm.max_validation_windows", "must be >= 0");
}

LstmLayout::LstmLayout(int layers, int hidden, int inputs) : layers_(layers), hidden_(hidden), inputs_(inputs) {
  const Eigen::Index d = hidden;
  for (int l = 0; l < layers; ++l) {
    const Eigen::Index in = input_size(l);
    blocks_.push_back({"layer" + std::to_string(l) + ".W", size_, 4 * d, in + d});
    size_ += 4 * d * (in + d);
    blocks_.push_back({"layer" + std::to_string(l) + ".b", size_, 4 * d, 1});
    size_ += 4 * d;
  }
  blocks_.push_back({"head.w", size_, d, 1});
  size_ += d;
  blocks_.push_back({"head.b", size_, 1, 1});
  size_ += 1;
}

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

using ConstMap = Eigen::Map<const MatrixXd>;
using Map = Eigen::Map<MatrixXd>;

ConstMap view(const VectorXd& theta, const ParamBlock& b) {
  return ConstMap(theta.data() + b.offset, b.rows, b.cols);
}
Map view(VectorXd& theta, const ParamBlock& b) { return Map(theta.data() + b.offset, b.rows, b.cols); }

// Gate activations on whole blocks so Eigen's packet exp does the work; tanh
// is written as 2 * sigmoid(2x) - 1 for the same reason.
void sigmoid_inplace(Eigen::Ref<MatrixXd> x) { x = (1.0 + (-x.array()).exp()).inverse().matrix(); }
void tanh_inplace(Eigen::Ref<MatrixXd> x) { x = (2.0 * (1.0 + (-2.0 * x.array()).exp()).inverse() - 1.0).matrix(); }

/// Rows [0, 2d) and [3d, 4d) get the sigmoid, rows [2d, 3d) get tanh.
void activate_gates(MatrixXd& z, Index d) {
  sigmoid_inplace(z.topRows(2 * d));
  tanh_inplace(z.middleRows(2 * d, d));
  sigmoid_inplace(z.bottomRows(d));
}

constexpr double kTwoPi = 6.283185307179586;

/// Hour-of-day phase features for the value at scenario hour `hour`.
inline double phase_sin(std::size_t hour) { return std::sin(kTwoPi * static_cast<double>(hour % 24) / 24.0); }
inline double phase_cos(std::size_t hour) { return std::cos(kTwoPi * static_cast<double>(hour % 24) / 24.0); }

struct StepCache {
  MatrixXd xh;     // (in + d) x B, concatenated input and previous hidden
  MatrixXd gates;  // 4d x B, activated i, f, g, o
  MatrixXd c;      // d x B
  MatrixXd c_prev; // d x B
  MatrixXd tanh_c; // d x B
};

/// Batched forward/backward over windows stored column-wise.
class LstmPass {
 public:
  LstmPass(const ForecastModel& model) : model_(model), layout_(model.layout()) {}

  /// inputs: lookback x B standardized windows; first_hours: scenario hour of
  /// each window's first value. Returns head outputs y (B), standardized,
  /// before the non-negativity clamp.
  VectorXd forward(const MatrixXd& inputs, const std::vector<std::size_t>& first_hours, bool train,
                   std::mt19937_64* rng, bool keep_cache) {
    const Index d = layout_.hidden();
    const Index B = inputs.cols();
    const Index T = inputs.rows();
    const int L = layout_.layers();
    const double keep = 1.0 - model_.hyper.dropout;
    const bool use_dropout = train && model_.hyper.dropout > 0.0 && L > 1;

    if (keep_cache) {
      cache_.assign(static_cast<std::size_t>(L), std::vector<StepCache>(static_cast<std::size_t>(T)));
      masks_.assign(static_cast<std::size_t>(T), MatrixXd());
    }
    // Layer inputs for the current layer, one matrix per step.
    std::vector<MatrixXd> layer_in(static_cast<std::size_t>(T));
    const int features = model_.input_features();
    for (Index t = 0; t < T; ++t) {
      auto& x = layer_in[static_cast<std::size_t>(t)];
      x.resize(features, B);
      x.row(0) = inputs.row(t);
      if (features == 3) {
        for (Index k = 0; k < B; ++k) {
          const std::size_t hour = first_hours[static_cast<std::size_t>(k)] + static_cast<std::size_t>(t);
          x(1, k) = phase_sin(hour);
          x(2, k) = phase_cos(hour);
        }
      }
    }

    MatrixXd h(d, B);
    MatrixXd c(d, B);
    MatrixXd xh;
    MatrixXd z;
    for (int l = 0; l < L; ++l) {
      const auto W = view(model_.params, layout_.weights(l));
      const auto b = view(model_.params, layout_.bias(l));
      const Index in = layout_.input_size(l);
      h.setZero();
      c.setZero();
      xh.resize(in + d, B);
      for (Index t = 0; t < T; ++t) {
        auto& x = layer_in[static_cast<std::size_t>(t)];
        if (l == 1 && use_dropout) {
          // Inverted dropout on the hidden sequence entering layer 2.
          MatrixXd mask(d, B);
          std::bernoulli_distribution draw(keep);
          for (Index k = 0; k < mask.size(); ++k) mask.data()[k] = draw(*rng) ? 1.0 / keep : 0.0;
          x = x.cwiseProduct(mask);
          if (keep_cache) masks_[static_cast<std::size_t>(t)] = std::move(mask);
        }
        xh.topRows(in) = x;
        xh.bottomRows(d) = h;
        z.noalias() = W * xh;
        z.colwise() += b.col(0);
        activate_gates(z, d);
        if (keep_cache) {
          auto& sc = cache_[static_cast<std::size_t>(l)][static_cast<std::size_t>(t)];
          sc.xh = xh;
          sc.c_prev = c;
        }
        c = z.middleRows(d, d).cwiseProduct(c) + z.topRows(d).cwiseProduct(z.middleRows(2 * d, d));
        MatrixXd tc = c;
        tanh_inplace(tc);
        h = z.bottomRows(d).cwiseProduct(tc);
        if (keep_cache) {
          auto& sc = cache_[static_cast<std::size_t>(l)][static_cast<std::size_t>(t)];
          sc.gates = z;
          sc.c = c;
          sc.tanh_c = tc;
        }
        x = h;  // becomes the next layer's input at step t
      }
    }
    last_h_ = h;
    const auto w = view(model_.params, layout_.head_weights());
    const double bias = model_.params[layout_.head_bias().offset];
    VectorXd y = (w.transpose() * h).transpose();
    y.array() += bias;
    return y;
  }

  /// Accumulates dLoss/dtheta given dLoss/dy for the last forward pass.
  void backward(const VectorXd& dy, VectorXd& grad) const {
    const Index d = layout_.hidden();
    const Index B = dy.size();
    const int L = layout_.layers();
    const auto T = static_cast<Index>(cache_.front().size());

    const auto w = view(model_.params, layout_.head_weights());
    view(grad, layout_.head_weights()).noalias() += last_h_ * dy;
    grad[layout_.head_bias().offset] += dy.sum();

    // Gradient reaching each step's hidden output from above.
    std::vector<MatrixXd> dh_above(static_cast<std::size_t>(T), MatrixXd::Zero(d, B));
    dh_above.back() = w * dy.transpose();

    MatrixXd dz(4 * d, B);
    for (int l = L - 1; l >= 0; --l) {
      const auto W = view(model_.params, layout_.weights(l));
      auto dW = view(grad, layout_.weights(l));
      auto db = view(grad, layout_.bias(l));
      const Index in = layout_.input_size(l);
      MatrixXd dh_rec = MatrixXd::Zero(d, B);
      MatrixXd dc_next = MatrixXd::Zero(d, B);
      std::vector<MatrixXd> dx(static_cast<std::size_t>(T));
      for (Index t = T - 1; t >= 0; --t) {
        const auto& sc = cache_[static_cast<std::size_t>(l)][static_cast<std::size_t>(t)];
        const MatrixXd dh = dh_above[static_cast<std::size_t>(t)] + dh_rec;
        const auto i = sc.gates.topRows(d).array();
        const auto f = sc.gates.middleRows(d, d).array();
        const auto g = sc.gates.middleRows(2 * d, d).array();
        const auto o = sc.gates.bottomRows(d).array();
        const auto tc = sc.tanh_c.array();
        const MatrixXd dc = (dc_next.array() + dh.array() * o * (1.0 - tc * tc)).matrix();
        dz.topRows(d) = (dc.array() * g * i * (1.0 - i)).matrix();
        dz.middleRows(d, d) = (dc.array() * sc.c_prev.array() * f * (1.0 - f)).matrix();
        dz.middleRows(2 * d, d) = (dc.array() * i * (1.0 - g * g)).matrix();
        dz.bottomRows(d) = (dh.array() * tc * o * (1.0 - o)).matrix();
        dc_next = (dc.array() * f).matrix();
        dW.noalias() += dz * sc.xh.transpose();
        db.col(0) += dz.rowwise().sum();
        const MatrixXd dxh = W.transpose() * dz;
        dh_rec = dxh.bottomRows(d);
        dx[static_cast<std::size_t>(t)] = dxh.topRows(in);
      }
      if (l > 0) {
        for (Index t = 0; t < T; ++t) {
          auto& g_in = dx[static_cast<std::size_t>(t)];
          if (l == 1 && !masks_.empty() && masks_[static_cast<std::size_t>(t)].size() > 0) {
            g_in = g_in.cwiseProduct(masks_[static_cast<std::size_t>(t)]);
          }
          dh_above[static_cast<std::size_t>(t)] = std::move(g_in);
        }
      }
    }
  }

 private:
  const ForecastModel& model_;
  LstmLayout layout_;
  std::vector<std::vector<StepCache>> cache_;
  std::vector<MatrixXd> masks_;
  MatrixXd last_h_;
};

void check_window(const ForecastModel& model, std::span<const double> window) {
  if (static_cast<int>(window.size()) != model.hyper.lookback) {
    throw ShapeMismatch("window has " + std::to_string(window.size()) + " values, model expects " +
                        std::to_string(model.hyper.lookback));
  }
  if (model.params.size() != model.layout().size()) {
    throw ShapeMismatch("parameter vector does not match the layer layout");
  }
  for (double v : window) {
    if (!std::isfinite(v)) throw ShapeMismatch("window contains a non-finite value");
  }
}

MatrixXd standardized_column(const ForecastModel& model, std::span<const double> window) {
  MatrixXd x(static_cast<Index>(window.size()), 1);
  for (std::size_t t = 0; t < window.size(); ++t) x(static_cast<Index>(t), 0) = model.norm.standardize(window[t]);
  return x;
}

/// Clamp in physical units, then back to standardized units.
inline double clamped_standardized(const Normalization& norm, double y) {
  return norm.destandardize(y) > 0.0 ? y : norm.standardize(0.0);
}

/// Eval-mode forward for one window with reusable per-thread buffers; the
/// twin loop calls this once per node and step.
double eval_single(const ForecastModel& model, std::span<const double> window, std::size_t first_hour) {
  struct Workspace {
    VectorXd in_seq, out_seq, h, c, tc;
    MatrixXd z;
  };
  thread_local Workspace ws;
  thread_local std::optional<LstmLayout> cached;
  if (!cached || cached->layers() != model.hyper.layers || cached->hidden() != model.hyper.hidden ||
      cached->input_size(0) != model.input_features()) {
    cached = model.layout();
  }
  const LstmLayout& layout = *cached;
  const Index d = layout.hidden();
  const auto T = static_cast<Index>(window.size());
  const int features = model.input_features();
  // Input sequence of the current layer, one contiguous block per step.
  ws.in_seq.resize(T * std::max<Index>(d, features));
  ws.out_seq.resize(T * d);
  for (Index t = 0; t < T; ++t) {
    ws.in_seq[t * features] = model.norm.standardize(window[static_cast<std::size_t>(t)]);
    if (features == 3) {
      const std::size_t hour = first_hour + static_cast<std::size_t>(t);
      ws.in_seq[t * features + 1] = phase_sin(hour);
      ws.in_seq[t * features + 2] = phase_cos(hour);
    }
  }
  ws.h.resize(d);
  ws.c.resize(d);
  ws.z.resize(4 * d, 1);
  ws.tc.resize(d);
  for (int l = 0; l < layout.layers(); ++l) {
    const auto W = view(model.params, layout.weights(l));
    const auto b = view(model.params, layout.bias(l));
    const Index in = layout.input_size(l);
    ws.h.setZero();
    ws.c.setZero();
    for (Index t = 0; t < T; ++t) {
      const Eigen::Map<const VectorXd> x(ws.in_seq.data() + t * in, in);
      ws.z.noalias() = W.leftCols(in) * x;
      ws.z.noalias() += W.rightCols(d) * ws.h;
      ws.z += b.col(0);
      activate_gates(ws.z, d);
      const auto zc = ws.z.col(0);
      ws.c = zc.segment(d, d).cwiseProduct(ws.c) + zc.head(d).cwiseProduct(zc.segment(2 * d, d));
      ws.tc = ws.c;
      tanh_inplace(ws.tc);
      ws.h = zc.tail(d).cwiseProduct(ws.tc);
      ws.out_seq.segment(t * d, d) = ws.h;
    }
    std::swap(ws.in_seq, ws.out_seq);
    ws.out_seq.resize(T * d);
  }
  const auto w = view(model.params, layout.head_weights());
  return w.col(0).dot(ws.h) + model.params[layout.head_bias().offset];
}

}  // namespace

ForecastModel init_model(const LstmHyperparams& hyper, Normalization norm, std::uint64_t seed) {
  hyper.validate();
  ForecastModel m;
  m.hyper = hyper;
  m.norm = norm;
  const LstmLayout layout = m.layout();
  m.params = VectorXd::Zero(layout.size());
  std::mt19937_64 rng(seed);
  const auto xavier = [&](const ParamBlock& b, double fan_in, double fan_out) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    auto M = view(m.params, b);
    for (Index k = 0; k < M.size(); ++k) M.data()[k] = u(rng);
  };
  const double d = hyper.hidden;
  for (int l = 0; l < hyper.layers; ++l) {
    xavier(layout.weights(l), layout.input_size(l) + d, 4.0 * d);
    view(m.params, layout.bias(l)).middleRows(hyper.hidden, hyper.hidden).setOnes();
  }
  xavier(layout.head_weights(), d, 1.0);
  return m;
}

double lstm_forward(const ForecastModel& model, std::span<const double> window, ForwardMode mode,
                    std::size_t first_hour) {
  check_window(model, window);
  if (!mode.train) return std::max(0.0, model.norm.destandardize(eval_single(model, window, first_hour)));
  LstmPass pass(model);
  std::mt19937_64 rng(mode.dropout_seed);
  const VectorXd y = pass.forward(standardized_column(model, window), {first_hour}, true, &rng, false);
  return std::max(0.0, model.norm.destandardize(y[0]));
}

double predict(const ForecastModel& model, std::span<const double> history) {
  const auto w = static_cast<std::size_t>(model.hyper.lookback);
  if (history.size() < w) {
    throw ShapeMismatch("history has " + std::to_string(history.size()) + " values, model needs " +
                        std::to_string(w));
  }
  return lstm_forward(model, history.subspan(history.size() - w), {}, history.size() - w);
}

double loss_and_gradient(const ForecastModel& model, std::span<const double> window, double target,
                         VectorXd& gradient, std::size_t first_hour) {
  check_window(model, window);
  LstmPass pass(model);
  const VectorXd y = pass.forward(standardized_column(model, window), {first_hour}, false, nullptr, true);
  const double z_target = model.norm.standardize(target);
  const double z_pred = clamped_standardized(model.norm, y[0]);
  const double err = z_pred - z_target;
  gradient = 2.0 * model.hyper.l2 * model.params;
  VectorXd dy(1);
  dy[0] = model.norm.destandardize(y[0]) > 0.0 ? 2.0 * err : 0.0;
  pass.backward(dy, gradient);
  return err * err + model.hyper.l2 * model.params.squaredNorm();
}

double gradient_check(const ForecastModel& model, std::span<const double> window, double target,
                      const GradientCheckOptions& options, std::size_t first_hour) {
  VectorXd analytic;
  loss_and_gradient(model, window, target, analytic, first_hour);
  if (options.corrupt_index) analytic[*options.corrupt_index] = 0.0;

  std::vector<Index> indices(static_cast<std::size_t>(model.params.size()));
  std::iota(indices.begin(), indices.end(), Index{0});
  std::mt19937_64 rng(options.seed);
  std::shuffle(indices.begin(), indices.end(), rng);
  indices.resize(std::min<std::size_t>(indices.size(), static_cast<std::size_t>(options.samples)));
  if (options.corrupt_index &&
      std::find(indices.begin(), indices.end(), *options.corrupt_index) == indices.end()) {
    indices.push_back(*options.corrupt_index);
  }

  ForecastModel probe = model;
  VectorXd scratch;
  double worst = 0.0;
  for (const Index k : indices) {
    const double saved = probe.params[k];
    probe.params[k] = saved + options.step;
    const double up = loss_and_gradient(probe, window, target, scratch, first_hour);
    probe.params[k] = saved - options.step;
    const double down = loss_and_gradient(probe, window, target, scratch, first_hour);
    probe.params[k] = saved;
    const double numeric = (up - down) / (2.0 * options.step);
    const double err = std::abs(analytic[k] - numeric) / std::max(std::abs(analytic[k]) + std::abs(numeric), 1e-8);
    worst = std::max(worst, err);
  }
  return worst;
}

void forward_fill(std::vector<double>& series) {
  double last = std::numeric_limits<double>::quiet_NaN();
  for (double v : series) {
    if (std::isfinite(v)) {
      last = v;
      break;
    }
  }
  for (double& v : series) {
    if (std::isfinite(v)) {
      last = v;
    } else {
      v = last;
    }
  }
}

ForecastModel train_node_model(const NodeSeries& raw_series, const LstmHyperparams& hyper, int node,
                               std::string label) {
  hyper.validate();
  const auto w = static_cast<std::size_t>(hyper.lookback);

  NodeSeries series = raw_series;
  double sum = 0.0;
  double sum_sq = 0.0;
  std::size_t count = 0;
  std::vector<std::pair<std::size_t, std::size_t>> windows;  // (series, target index)
  for (std::size_t s = 0; s < series.size(); ++s) {
    forward_fill(series[s]);
    for (double v : series[s]) {
      if (!std::isfinite(v)) throw InsufficientData("series " + std::to_string(s) + " has no finite values");
      sum += v;
      sum_sq += v * v;
      ++count;
    }
    for (std::size_t t = w; t < series[s].size(); ++t) windows.emplace_back(s, t);
  }
  if (windows.size() < 2 * static_cast<std::size_t>(hyper.batch)) {
    throw InsufficientData("node " + std::to_string(node) + ": " + std::to_string(windows.size()) +
                           " training windows, need at least " + std::to_string(2 * hyper.batch));
  }
  Normalization norm;
  norm.mean = sum / static_cast<double>(count);
  const double var = std::max(0.0, sum_sq / static_cast<double>(count) - norm.mean * norm.mean);
  norm.std = std::sqrt(var);
  if (!(norm.std > 1e-9 * std::max(1.0, std::abs(norm.mean)))) norm.std = 1.0;

  std::mt19937_64 rng(hyper.seed);
  ForecastModel model = init_model(hyper, norm, rng());
  model.node = node;
  model.label = std::move(label);

  std::shuffle(windows.begin(), windows.end(), rng);
  const std::size_t n_val = std::max<std::size_t>(1, windows.size() / 10);
  std::vector<std::pair<std::size_t, std::size_t>> val(windows.end() - static_cast<long>(n_val), windows.end());
  windows.resize(windows.size() - n_val);
  if (hyper.max_validation_windows > 0 && val.size() > static_cast<std::size_t>(hyper.max_validation_windows)) {
    val.resize(static_cast<std::size_t>(hyper.max_validation_windows));
  }

  std::vector<std::size_t> hours;
  const auto fill_batch = [&](const auto& idx, std::size_t begin, std::size_t end, MatrixXd& X, VectorXd& y) {
    const auto B = static_cast<Index>(end - begin);
    X.resize(static_cast<Index>(w), B);
    y.resize(B);
    hours.resize(end - begin);
    for (std::size_t k = begin; k < end; ++k) {
      const auto& [s, t] = idx[k];
      const auto col = static_cast<Index>(k - begin);
      hours[k - begin] = t - w;
      for (std::size_t j = 0; j < w; ++j) X(static_cast<Index>(j), col) = norm.standardize(series[s][t - w + j]);
      y[col] = norm.standardize(series[s][t]);
    }
  };

  const auto validation_loss = [&](const ForecastModel& m) {
    LstmPass pass(m);
    double total = 0.0;
    MatrixXd X;
    VectorXd y;
    for (std::size_t b = 0; b < val.size(); b += 256) {
      const auto e = std::min(val.size(), b + 256);
      fill_batch(val, b, e, X, y);
      const VectorXd out = pass.forward(X, hours, false, nullptr, false);
      for (Index k = 0; k < out.size(); ++k) {
        const double err = clamped_standardized(norm, out[k]) - y[k];
        total += err * err;
      }
    }
    return total / static_cast<double>(val.size());
  };

  constexpr double beta1 = 0.9;
  constexpr double beta2 = 0.999;
  constexpr double eps = 1e-8;
  VectorXd m1 = VectorXd::Zero(model.params.size());
  VectorXd m2 = VectorXd::Zero(model.params.size());
  VectorXd grad(model.params.size());
  long step = 0;

  VectorXd best_params = model.params;
  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;
  MatrixXd X;
  VectorXd y;
  const std::size_t per_epoch = hyper.windows_per_epoch > 0
                                    ? std::min(windows.size(), static_cast<std::size_t>(hyper.windows_per_epoch))
                                    : windows.size();

  for (int epoch = 1; epoch <= hyper.max_epochs; ++epoch) {
    std::shuffle(windows.begin(), windows.end(), rng);
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < per_epoch; b += static_cast<std::size_t>(hyper.batch)) {
      const auto e = std::min(per_epoch, b + static_cast<std::size_t>(hyper.batch));
      fill_batch(windows, b, e, X, y);
      LstmPass pass(model);
      const VectorXd out = pass.forward(X, hours, true, &rng, true);
      const auto B = static_cast<double>(e - b);
      VectorXd dy(out.size());
      for (Index k = 0; k < out.size(); ++k) {
        const double err = clamped_standardized(norm, out[k]) - y[k];
        epoch_loss += err * err;
        dy[k] = norm.destandardize(out[k]) > 0.0 ? 2.0 * err / B : 0.0;
      }
      seen += e - b;
      grad = 2.0 * hyper.l2 * model.params;
      pass.backward(dy, grad);
      if (!grad.allFinite()) throw NonFiniteLoss("node " + std::to_string(node) + ": non-finite gradient");
      ++step;
      m1 = beta1 * m1 + (1.0 - beta1) * grad;
      m2 = beta2 * m2 + (1.0 - beta2) * grad.cwiseAbs2();
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      model.params.array() -=
          hyper.learning_rate * (m1.array() / c1) / ((m2.array() / c2).sqrt() + eps);
    }
    const double train_loss = epoch_loss / static_cast<double>(seen);
    const double val_loss = validation_loss(model);
    if (!std::isfinite(train_loss) || !std::isfinite(val_loss)) {
      throw NonFiniteLoss("node " + std::to_string(node) + ": loss diverged at epoch " + std::to_string(epoch));
    }
    if (val_loss < best) {
      best = val_loss;
      best_params = model.params;
      since_best = 0;
    } else {
      ++since_best;
    }
    model.train_log.push_back({epoch, train_loss, val_loss, best});
    if (since_best >= hyper.patience) break;
  }
  model.params = std::move(best_params);
  return model;
}

std::string model_to_json(const ForecastModel& model) {
  nlohmann::json j;
  j["node"] = model.node;
  j["label"] = model.label;
  const auto& h = model.hyper;
  j["hyper"] = {{"lookback", h.lookback},
                {"layers", h.layers},
                {"hidden", h.hidden},
                {"dropout", h.dropout},
                {"learning_rate", h.learning_rate},
                {"batch", h.batch},
                {"max_epochs", h.max_epochs},
                {"patience", h.patience},
                {"l2", h.l2},
                {"seed", h.seed},
                {"windows_per_epoch", h.windows_per_epoch},
                {"max_validation_windows", h.max_validation_windows},
                {"phase_inputs", h.phase_inputs}};
  j["normalization"] = {{"mean", model.norm.mean}, {"std", model.norm.std}};
  nlohmann::json shapes = nlohmann::json::array();
  const LstmLayout layout = model.layout();
  for (const auto& b : layout.blocks()) {
    shapes.push_back({{"name", b.name}, {"offset", b.offset}, {"rows", b.rows}, {"cols", b.cols}});
  }
  j["shapes"] = shapes;
  j["layout"] = "column-major blocks; gate order input, forget, candidate, output; gate input [x_t; h_t-1]";
  j["params"] = std::vector<double>(model.params.data(), model.params.data() + model.params.size());
  nlohmann::json log = nlohmann::json::array();
  for (const auto& e : model.train_log) {
    log.push_back({{"epoch", e.epoch},
                   {"train_loss", e.train_loss},
                   {"validation_loss", e.validation_loss},
                   {"best_validation_loss", e.best_validation_loss}});
  }
  j["train_log"] = log;
  return j.dump(1);
}

ForecastModel model_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  ForecastModel m;
  m.node = j.at("node").get<int>();
  m.label = j.at("label").get<std::string>();
  const auto& h = j.at("hyper");
  m.hyper.lookback = h.at("lookback").get<int>();
  m.hyper.layers = h.at("layers").get<int>();
  m.hyper.hidden = h.at("hidden").get<int>();
  m.hyper.dropout = h.at("dropout").get<double>();
  m.hyper.learning_rate = h.at("learning_rate").get<double>();
  m.hyper.batch = h.at("batch").get<int>();
  m.hyper.max_epochs = h.at("max_epochs").get<int>();
  m.hyper.patience = h.at("patience").get<int>();
  m.hyper.l2 = h.at("l2").get<double>();
  m.hyper.seed = h.at("seed").get<std::uint64_t>();
  m.hyper.windows_per_epoch = h.value("windows_per_epoch", 0);
  m.hyper.max_validation_windows = h.value("max_validation_windows", 0);
  m.hyper.phase_inputs = h.value("phase_inputs", false);
  m.norm.mean = j.at("normalization").at("mean").get<double>();
  m.norm.std = j.at("normalization").at("std").get<double>();
  const auto p = j.at("params").get<std::vector<double>>();
  m.params = Eigen::Map<const VectorXd>(p.data(), static_cast<Index>(p.size()));
  if (m.params.size() != m.layout().size()) throw ShapeMismatch("model archive parameter count mismatch");
  for (const auto& e : j.at("train_log")) {
    m.train_log.push_back({e.at("epoch").get<int>(), e.at("train_loss").get<double>(),
                           e.at("validation_loss").get<double>(), e.at("best_validation_loss").get<double>()});
  }
  return m;
}

}  // namespace aquatwin

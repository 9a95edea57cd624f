#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace aquatwin {

struct LstmHyperparams {
  int lookback = 24;
  int layers = 2;
  int hidden = 16;
  double dropout = 0.2;
  double learning_rate = 1e-3;
  int batch = 32;
  int max_epochs = 100;
  int patience = 10;
  double l2 = 1e-5;
  std::uint64_t seed = 1;
  /// Training windows drawn per epoch, 0 for all of them.
  int windows_per_epoch = 0;
  /// Cap on validation windows, 0 for no cap.
  int max_validation_windows = 0;
  /// Feed sin/cos of the hour of day alongside each demand value. Without a
  /// clock a free-running rollout drifts out of phase with the daily cycle.
  bool phase_inputs = true;

  void validate() const;
  friend bool operator==(const LstmHyperparams&, const LstmHyperparams&) = default;
};

/// z-score applied to inputs and targets.
struct Normalization {
  double mean = 0.0;
  double std = 1.0;

  double standardize(double x) const noexcept { return (x - mean) / std; }
  double destandardize(double z) const noexcept { return mean + std * z; }
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
  double best_validation_loss = 0.0;

  friend bool operator==(const EpochLog&, const EpochLog&) = default;
};

/// Where one parameter block lives inside the flat parameter vector.
struct ParamBlock {
  std::string name;
  Eigen::Index offset;
  Eigen::Index rows;
  Eigen::Index cols;
};

/// Parameter layout of a stacked LSTM with a scalar linear head.
///
/// Layer l owns a gate matrix of shape 4d x (in_l + d), gate order
/// input, forget, candidate, output, acting on [x_t; h_{t-1}], and a bias of
/// length 4d. The head is w (d) and b (1).
class LstmLayout {
 public:
  LstmLayout(int layers, int hidden, int inputs = 1);

  int layers() const noexcept { return layers_; }
  int hidden() const noexcept { return hidden_; }
  Eigen::Index size() const noexcept { return size_; }
  int input_size(int layer) const noexcept { return layer == 0 ? inputs_ : hidden_; }
  const ParamBlock& weights(int layer) const { return blocks_[static_cast<std::size_t>(2 * layer)]; }
  const ParamBlock& bias(int layer) const { return blocks_[static_cast<std::size_t>(2 * layer + 1)]; }
  const ParamBlock& head_weights() const { return blocks_[static_cast<std::size_t>(2 * layers_)]; }
  const ParamBlock& head_bias() const { return blocks_[static_cast<std::size_t>(2 * layers_ + 1)]; }
  const std::vector<ParamBlock>& blocks() const noexcept { return blocks_; }

 private:
  int layers_;
  int hidden_;
  int inputs_;
  Eigen::Index size_ = 0;
  std::vector<ParamBlock> blocks_;
};

struct ForecastModel {
  int node = -1;
  std::string label;
  LstmHyperparams hyper;
  Normalization norm;
  Eigen::VectorXd params;
  std::vector<EpochLog> train_log;

  int input_features() const noexcept { return hyper.phase_inputs ? 3 : 1; }
  LstmLayout layout() const { return LstmLayout(hyper.layers, hyper.hidden, input_features()); }
};

/// Fresh model: Xavier-uniform gate and head weights, forget-gate bias 1,
/// other biases 0, all drawn from hyper.seed.
ForecastModel init_model(const LstmHyperparams& hyper, Normalization norm, std::uint64_t seed);

struct ForwardMode {
  bool train = false;
  std::uint64_t dropout_seed = 0;
};

/// Prediction in L/s for a window of `lookback` past demands (oldest first)
/// whose first value falls at hour `first_hour` of the scenario. Always >= 0.
/// Throws ShapeMismatch.
double lstm_forward(const ForecastModel& model, std::span<const double> window, ForwardMode mode = {},
                    std::size_t first_hour = 0);

/// Eval-mode prediction from the latest `lookback` values of a (possibly
/// fused) history that starts at hour 0.
double predict(const ForecastModel& model, std::span<const double> history);

/// Loss for one window in standardized units, plus lambda*||theta||^2, and
/// its gradient with respect to the flat parameter vector (Eval mode).
double loss_and_gradient(const ForecastModel& model, std::span<const double> window, double target,
                         Eigen::VectorXd& gradient, std::size_t first_hour = 0);

struct GradientCheckOptions {
  int samples = 64;        // parameters checked, drawn without replacement
  double step = 1e-5;      // central difference step
  std::uint64_t seed = 7;
  /// Index whose analytic gradient is replaced by zero before comparison.
  std::optional<Eigen::Index> corrupt_index;
};

/// max over checked parameters of |analytic - numeric| / max(|analytic| + |numeric|, 1e-8).
double gradient_check(const ForecastModel& model, std::span<const double> window, double target,
                      const GradientCheckOptions& options = {}, std::size_t first_hour = 0);

/// Training series for one node: one vector per training scenario. NaN
/// entries are treated as missing and forward-filled.
using NodeSeries = std::vector<std::vector<double>>;

/// Fit a model with Adam on MSE + l2 penalty. Keeps the best validation
/// epoch. Throws InsufficientData, NonFiniteLoss.
ForecastModel train_node_model(const NodeSeries& series, const LstmHyperparams& hyper, int node = -1,
                               std::string label = {});

void forward_fill(std::vector<double>& series);

std::string model_to_json(const ForecastModel& model);
ForecastModel model_from_json(const std::string& text);

}  // namespace aquatwin

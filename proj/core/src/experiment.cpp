#include "aquatwin/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <exception>
#include <json.hpp>
#include <mutex>
#include <set>
#include <thread>

#include "aquatwin/error.hpp"
#include "aquatwin/report.hpp"
#include "aquatwin/text_io.hpp"

namespace aquatwin {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
  if (network.empty()) throw InvalidConfig("network", "must name a builtin network or an INP path");
  generator.validate();
  lstm.validate();
  if (!(split.train > 0.0 && split.calibration > 0.0 && split.test > 0.0) ||
      std::abs(split.train + split.calibration + split.test - 1.0) > 1e-9) {
    throw InvalidConfig("split", "fractions must be positive and sum to 1");
  }
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidConfig("alpha", "must lie in (0, 1)");
  if (budgets.empty()) throw InvalidConfig("budgets", "must not be empty");
  for (std::size_t k = 0; k < budgets.size(); ++k) {
    if (!(budgets[k] > 0.0 && budgets[k] <= 1.0)) {
      throw InvalidConfig("budgets[" + std::to_string(k) + "]", "must lie in (0, 1]");
    }
  }
  if (policies.empty()) throw InvalidConfig("policies", "must not be empty");
  for (std::size_t k = 0; k < policies.size(); ++k) {
    try {
      policy_from_string(policies[k]);
    } catch (const InvalidConfig&) {
      throw InvalidConfig("policies[" + std::to_string(k) + "]", "unknown policy '" + policies[k] + "'");
    }
  }
  if (sensor_sigmas.empty()) throw InvalidConfig("sensor_sigmas", "must not be empty");
  for (std::size_t k = 0; k < sensor_sigmas.size(); ++k) {
    if (!(sensor_sigmas[k] >= 0.0)) throw InvalidConfig("sensor_sigmas[" + std::to_string(k) + "]", "must be >= 0");
  }
  if (seeds.empty()) throw InvalidConfig("seeds", "at least one seed is required");
  if (output_dir.empty()) throw InvalidConfig("output_dir", "must not be empty");
  if (!(solver.tolerance > 0.0)) throw InvalidConfig("solver.tolerance", "must be > 0");
  if (!(solver.mass_tolerance > 0.0)) throw InvalidConfig("solver.mass_tolerance", "must be > 0");
  if (solver.max_iterations < 1) throw InvalidConfig("solver.max_iterations", "must be >= 1");
  if (!(solver.headloss_regularization > 0.0)) throw InvalidConfig("solver.headloss_regularization", "must be > 0");
  if (!(ablation.budget > 0.0 && ablation.budget <= 1.0)) throw InvalidConfig("ablation.budget", "must lie in (0, 1]");
  if (ablation.rolling_window < 2) throw InvalidConfig("ablation.rolling_window", "must be >= 2");
  if (!(ablation.fixed_half_width >= 0.0)) throw InvalidConfig("ablation.fixed_half_width", "must be >= 0");
  if (ablation.moving_average_days < 1) throw InvalidConfig("ablation.moving_average_days", "must be >= 1");
  if (!(sweep.budget > 0.0 && sweep.budget <= 1.0)) throw InvalidConfig("sweep.budget", "must lie in (0, 1]");
  for (std::size_t k = 0; k < sweep.alphas.size(); ++k) {
    if (!(sweep.alphas[k] > 0.0 && sweep.alphas[k] < 1.0)) {
      throw InvalidConfig("sweep.alphas[" + std::to_string(k) + "]", "must lie in (0, 1)");
    }
  }
  for (std::size_t k = 0; k < sweep.lookbacks.size(); ++k) {
    if (sweep.lookbacks[k] < 1) throw InvalidConfig("sweep.lookbacks[" + std::to_string(k) + "]", "must be >= 1");
  }
}

namespace {

const char* noise_mode_name(NoiseMode m) { return m == NoiseMode::Additive ? "additive" : "multiplicative"; }

/// Reads known keys of one JSON object and rejects the rest.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw InvalidConfig(path_.empty() ? "<root>" : path_, "must be a JSON object");
  }
  /// Call after every known key has been read.
  void finish() const {
    for (const auto& item : j_.items()) {
      if (!known_.count(item.key())) throw InvalidConfig(field(item.key()), "unknown field");
    }
  }

  template <class T>
  void get(const std::string& key, T& out) {
    known_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw InvalidConfig(field(key), std::string("wrong type: ") + e.what());
    }
  }
  const json* child(const std::string& key) {
    known_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> known_;
};

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  j["network"] = c.network;
  const auto& g = c.generator;
  j["generator"] = {{"n_scenarios", g.n_scenarios},
                    {"horizon_hours", g.horizon_hours},
                    {"seed", g.seed},
                    {"diurnal_amplitude", g.diurnal_amplitude},
                    {"weekly_amplitude", g.weekly_amplitude},
                    {"noise_cv", g.noise_cv},
                    {"commercial_fraction", g.commercial_fraction},
                    {"commercial_noise_scale", g.commercial_noise_scale},
                    {"demand_scale", g.demand_scale}};
  j["split"] = {{"train", c.split.train}, {"calibration", c.split.calibration}, {"test", c.split.test}};
  const auto& h = c.lstm;
  j["lstm"] = {{"lookback", h.lookback},
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
  j["solver"] = {{"max_iterations", c.solver.max_iterations},
                 {"tolerance", c.solver.tolerance},
                 {"mass_tolerance", c.solver.mass_tolerance},
                 {"headloss_regularization", c.solver.headloss_regularization}};
  j["alpha"] = c.alpha;
  j["budgets"] = c.budgets;
  j["policies"] = c.policies;
  j["sensor_sigmas"] = c.sensor_sigmas;
  j["noise_mode"] = noise_mode_name(c.noise_mode);
  j["seeds"] = c.seeds;
  j["output_dir"] = c.output_dir;
  j["ablation"] = {{"budget", c.ablation.budget},
                   {"rolling_window", c.ablation.rolling_window},
                   {"fixed_half_width", c.ablation.fixed_half_width},
                   {"moving_average_days", c.ablation.moving_average_days}};
  j["sweep"] = {{"budget", c.sweep.budget}, {"alphas", c.sweep.alphas}, {"lookbacks", c.sweep.lookbacks}};
  return j.dump(2);
}

ExperimentConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidConfig("<root>", std::string("not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  {
    ObjectReader r(j, "");
    r.get("network", c.network);
    if (const auto* g = r.child("generator")) {
      ObjectReader rg(*g, "generator");
      rg.get("n_scenarios", c.generator.n_scenarios);
      rg.get("horizon_hours", c.generator.horizon_hours);
      rg.get("seed", c.generator.seed);
      rg.get("diurnal_amplitude", c.generator.diurnal_amplitude);
      rg.get("weekly_amplitude", c.generator.weekly_amplitude);
      rg.get("noise_cv", c.generator.noise_cv);
      rg.get("commercial_fraction", c.generator.commercial_fraction);
      rg.get("commercial_noise_scale", c.generator.commercial_noise_scale);
      rg.get("demand_scale", c.generator.demand_scale);
      rg.finish();
    }
    if (const auto* s = r.child("split")) {
      ObjectReader rs(*s, "split");
      rs.get("train", c.split.train);
      rs.get("calibration", c.split.calibration);
      rs.get("test", c.split.test);
      rs.finish();
    }
    if (const auto* l = r.child("lstm")) {
      ObjectReader rl(*l, "lstm");
      rl.get("lookback", c.lstm.lookback);
      rl.get("layers", c.lstm.layers);
      rl.get("hidden", c.lstm.hidden);
      rl.get("dropout", c.lstm.dropout);
      rl.get("learning_rate", c.lstm.learning_rate);
      rl.get("batch", c.lstm.batch);
      rl.get("max_epochs", c.lstm.max_epochs);
      rl.get("patience", c.lstm.patience);
      rl.get("l2", c.lstm.l2);
      rl.get("seed", c.lstm.seed);
      rl.get("windows_per_epoch", c.lstm.windows_per_epoch);
      rl.get("max_validation_windows", c.lstm.max_validation_windows);
      rl.get("phase_inputs", c.lstm.phase_inputs);
      rl.finish();
    }
    if (const auto* s = r.child("solver")) {
      ObjectReader rs(*s, "solver");
      rs.get("max_iterations", c.solver.max_iterations);
      rs.get("tolerance", c.solver.tolerance);
      rs.get("mass_tolerance", c.solver.mass_tolerance);
      rs.get("headloss_regularization", c.solver.headloss_regularization);
      rs.finish();
    }
    r.get("alpha", c.alpha);
    r.get("budgets", c.budgets);
    r.get("policies", c.policies);
    r.get("sensor_sigmas", c.sensor_sigmas);
    std::string mode = noise_mode_name(c.noise_mode);
    r.get("noise_mode", mode);
    if (mode == "multiplicative") {
      c.noise_mode = NoiseMode::Multiplicative;
    } else if (mode == "additive") {
      c.noise_mode = NoiseMode::Additive;
    } else {
      throw InvalidConfig("noise_mode", "must be 'multiplicative' or 'additive'");
    }
    r.get("seeds", c.seeds);
    r.get("output_dir", c.output_dir);
    if (const auto* a = r.child("ablation")) {
      ObjectReader ra(*a, "ablation");
      ra.get("budget", c.ablation.budget);
      ra.get("rolling_window", c.ablation.rolling_window);
      ra.get("fixed_half_width", c.ablation.fixed_half_width);
      ra.get("moving_average_days", c.ablation.moving_average_days);
      ra.finish();
    }
    if (const auto* s = r.child("sweep")) {
      ObjectReader rs(*s, "sweep");
      rs.get("budget", c.sweep.budget);
      rs.get("alphas", c.sweep.alphas);
      rs.get("lookbacks", c.sweep.lookbacks);
      rs.finish();
    }
    r.finish();
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const fs::path& path) { return config_from_json(read_text_file(path)); }

std::size_t budget_count(double fraction, std::size_t nodes) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw InvalidConfig("budgets", "fraction must lie in [0, 1]");
  const auto b = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(nodes)));
  return fraction > 0.0 ? std::max<std::size_t>(b, 1) : 0;
}

void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& fn) {
  const auto threads = static_cast<std::size_t>(std::max(1, workers));
  if (threads == 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(threads, count); ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// ---------------------------------------------------------------------------
// In-memory stages
// ---------------------------------------------------------------------------

ScenarioSet make_scenarios(const NetworkModel& net, const ExperimentConfig& cfg, std::uint64_t seed) {
  GenConfig g = cfg.generator;
  g.seed = derive_seed(cfg.generator.seed, 11, seed);
  return split_scenarios(generate_scenarios(net, g), cfg.split);
}

std::vector<const DemandMatrix*> split_matrices(const ScenarioSet& set, Split s) {
  std::vector<const DemandMatrix*> out;
  for (const auto* sc : set.with_label(s)) out.push_back(&sc->demands);
  return out;
}

std::vector<ForecastModel> train_models(const NetworkModel& net, const ScenarioSet& set, LstmHyperparams hyper,
                                        std::uint64_t seed, int workers, const LogFn& log) {
  const auto train = set.with_label(Split::Train);
  const std::size_t n = net.junction_count();
  std::vector<ForecastModel> models(n);
  std::mutex log_mutex;
  std::size_t done = 0;
  parallel_for(n, workers, [&](std::size_t i) {
    NodeSeries series;
    for (const auto* s : train) {
      const auto col = s->demands.col(static_cast<Eigen::Index>(i));
      series.emplace_back(col.data(), col.data() + col.size());
    }
    LstmHyperparams h = hyper;
    h.seed = derive_seed(hyper.seed, seed, i);
    models[i] = train_node_model(series, h, static_cast<int>(i), net.junction_labels()[i]);
    if (log) {
      std::lock_guard lock(log_mutex);
      ++done;
      const auto& last = models[i].train_log.back();
      log("trained node " + models[i].label + " (" + std::to_string(done) + "/" + std::to_string(n) + "), " +
          std::to_string(models[i].train_log.size()) + " epochs, best validation loss " +
          format_double(last.best_validation_loss));
    }
  });
  return models;
}

SamplingPolicy make_policy(const std::string& name, const ScenarioSet& set, std::size_t budget, std::uint64_t seed) {
  switch (policy_from_string(name)) {
    case PolicyKind::Adaptive: return SamplingPolicy::adaptive();
    case PolicyKind::UniformRandom: return SamplingPolicy::uniform(derive_seed(seed, 201, budget));
    case PolicyKind::StaticHighVariance:
      return SamplingPolicy::static_high_variance(precompute_static_set(split_matrices(set, Split::Train), budget));
    case PolicyKind::RoundRobin: return SamplingPolicy::round_robin();
    case PolicyKind::Full: return SamplingPolicy::full();
  }
  return SamplingPolicy::adaptive();
}

CellResult run_cell(const NetworkModel& net, const Predictor& predictor, UncertaintyScorer* scorer,
                    const std::vector<const DemandScenario*>& tests, const std::vector<GroundTruth>& truths,
                    const SamplingPolicy& policy, const CellSpec& spec, const ExperimentConfig& cfg) {
  CellResult out;
  out.spec = spec;
  std::vector<StepTiming> timing;
  for (std::size_t k = 0; k < tests.size(); ++k) {
    TwinConfig tc;
    tc.budget = spec.budget;
    tc.sensor_sigma = spec.sigma;
    tc.noise_mode = cfg.noise_mode;
    tc.noise_seed = derive_seed(spec.seed, 301 + static_cast<std::uint64_t>(tests[k]->scenario_id), spec.budget);
    tc.solver = cfg.solver;
    try {
      out.trajectories.push_back(
          run_digital_twin(net, predictor, scorer, tests[k]->demands, policy, tc, truths.empty() ? nullptr : &truths[k]));
    } catch (const Error& e) {
      throw RolloutFailure(static_cast<std::size_t>(tests[k]->scenario_id), 0, e.what());
    }
    out.scenario_ids.push_back(tests[k]->scenario_id);
    const auto& t = out.trajectories.back().timing;
    timing.insert(timing.end(), t.begin(), t.end());
  }
  std::vector<const TwinTrajectory*> ptrs;
  for (const auto& t : out.trajectories) ptrs.push_back(&t);
  out.metrics = pool_metrics(ptrs);
  out.timing = timing_profile(timing);
  return out;
}

// ---------------------------------------------------------------------------
// Disk layout
// ---------------------------------------------------------------------------

namespace {

std::string num(double v) {
  std::string s = format_double(v);
  std::replace(s.begin(), s.end(), '.', 'p');
  return s;
}

}  // namespace

fs::path Layout::seed_dir(std::uint64_t seed) const { return root / ("seed_" + std::to_string(seed)); }
fs::path Layout::scenarios(std::uint64_t seed) const { return seed_dir(seed) / "scenarios"; }
fs::path Layout::models(std::uint64_t seed, int lookback) const {
  return seed_dir(seed) / ("models_w" + std::to_string(lookback));
}
fs::path Layout::calibration(std::uint64_t seed, double alpha, std::size_t budget, double sigma,
                             int lookback) const {
  return seed_dir(seed) / "calibration" /
         ("w" + std::to_string(lookback) + "_alpha" + num(alpha) + "_B" + std::to_string(budget) + "_sigma" +
          num(sigma) + ".json");
}
fs::path Layout::run_dir(std::uint64_t seed, const std::string& method, std::size_t budget, double sigma) const {
  return seed_dir(seed) / "runs" / (method + "_B" + std::to_string(budget) + "_sigma" + num(sigma));
}
fs::path Layout::reports() const { return root / "reports"; }

namespace {

void say(const CommandOptions& opt, const std::string& msg) {
  if (opt.log) opt.log(msg);
}

/// Run manifest kept apart from the CSV artifacts: it is the only output that
/// carries a timestamp.
void write_manifest(const ExperimentConfig& cfg, const std::string& command) {
  const auto text = config_to_json(cfg);
  json m;
  m["command"] = command;
  m["config_hash"] = fnv1a(text);
  m["seeds"] = cfg.seeds;
  m["version"] = "aquatwin 0.3.0";
  m["finished_at_unix"] = static_cast<long long>(std::time(nullptr));
  m["config"] = json::parse(text);
  write_text_file(fs::path(cfg.output_dir) / ("manifest_" + command + ".json"), m.dump(2));
}

std::vector<ForecastModel> load_models(const fs::path& dir, std::size_t n) {
  std::vector<ForecastModel> models;
  models.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    models.push_back(model_from_json(read_text_file(dir / ("node_" + std::to_string(i) + ".json"))));
  }
  return models;
}

void save_models(const fs::path& dir, const std::vector<ForecastModel>& models) {
  CsvWriter log({"node", "label", "epoch", "train_loss", "validation_loss", "best_validation_loss"});
  for (std::size_t i = 0; i < models.size(); ++i) {
    write_text_file(dir / ("node_" + std::to_string(i) + ".json"), model_to_json(models[i]));
    for (const auto& e : models[i].train_log) {
      log.cell(i).cell(models[i].label).cell(e.epoch).cell(e.train_loss).cell(e.validation_loss).cell(
          e.best_validation_loss);
      log.end_row();
    }
  }
  write_text_file(dir / "training_log.csv", log.str());
}

/// Budget fractions that need a calibration table.
std::vector<double> calibration_fractions(const ExperimentConfig& cfg) {
  std::vector<double> f = cfg.budgets;
  for (double extra : {cfg.ablation.budget, cfg.sweep.budget}) {
    if (std::find(f.begin(), f.end(), extra) == f.end()) f.push_back(extra);
  }
  return f;
}

CalibrationOptions calibration_options(const ExperimentConfig& cfg, double alpha, std::size_t budget, double sigma,
                                       std::uint64_t seed) {
  CalibrationOptions o;
  o.alpha = alpha;
  o.budget = budget;
  o.sensor_sigma = sigma;
  o.noise_mode = cfg.noise_mode;
  o.seed = seed;
  o.solver = cfg.solver;
  o.keep_residuals = true;
  return o;
}

struct SeedContext {
  NetworkModel net;
  ScenarioSet set;
  std::vector<const DemandScenario*> tests;
};

SeedContext load_seed(const ExperimentConfig& cfg, const Layout& layout, std::uint64_t seed) {
  SeedContext c{load_network(cfg.network), read_scenario_archive(layout.scenarios(seed)), {}};
  c.tests = c.set.with_label(Split::Test);
  if (c.set.scenarios.empty()) throw MissingArtifact("scenario archive for seed " + std::to_string(seed) + " is empty");
  if (static_cast<std::size_t>(c.set.scenarios.front().demands.cols()) != c.net.junction_count()) {
    throw ShapeMismatch("scenario archive does not match network '" + cfg.network + "'");
  }
  return c;
}

std::vector<GroundTruth> ground_truths(const SeedContext& c, std::size_t warmup, const SolverConfig& solver,
                                       int workers) {
  std::vector<GroundTruth> truths(c.tests.size());
  parallel_for(c.tests.size(), workers,
               [&](std::size_t k) { truths[k] = solve_ground_truth(c.net, c.tests[k]->demands, warmup, solver); });
  return truths;
}

void write_cell(const Layout& layout, const CellResult& r) {
  const auto dir = layout.run_dir(r.spec.seed, r.spec.method, r.spec.budget, r.spec.sigma);
  for (std::size_t k = 0; k < r.trajectories.size(); ++k) {
    const auto id = std::to_string(r.scenario_ids[k]);
    write_text_file(dir / ("scenario_" + id + ".csv"), trajectory_csv(r.trajectories[k]));
    write_text_file(dir / ("timing_" + id + ".csv"), timing_csv(r.trajectories[k].timing));
  }
}

/// Every (policy, budget, sigma) cell the run and evaluate commands cover.
std::vector<CellSpec> run_cells(const ExperimentConfig& cfg, std::size_t n, std::uint64_t seed) {
  std::vector<CellSpec> cells;
  for (const auto& p : cfg.policies) {
    for (double sigma : cfg.sensor_sigmas) {
      if (policy_from_string(p) == PolicyKind::Full) {
        cells.push_back({p, 1.0, n, sigma, seed});
        continue;
      }
      for (double f : cfg.budgets) cells.push_back({p, f, budget_count(f, n), sigma, seed});
    }
  }
  return cells;
}

CellRecord record_of(const CellSpec& s, const std::string& network, const RunMetrics& m, const TimingProfile& t) {
  return {s.method, network, s.budget_fraction, s.budget, s.sigma, s.seed, m, t};
}

/// Reads a cell's trajectories back from disk.
CellRecord read_cell(const Layout& layout, const CellSpec& spec, const SeedContext& c, const std::string& network) {
  const auto dir = layout.run_dir(spec.seed, spec.method, spec.budget, spec.sigma);
  std::vector<TwinTrajectory> trajs;
  std::vector<StepTiming> timing;
  for (const auto* t : c.tests) {
    const auto id = std::to_string(t->scenario_id);
    trajs.push_back(trajectory_from_csv(read_text_file(dir / ("scenario_" + id + ".csv"))));
    const auto tt = timing_from_csv(read_text_file(dir / ("timing_" + id + ".csv")));
    timing.insert(timing.end(), tt.begin(), tt.end());
  }
  std::vector<const TwinTrajectory*> ptrs;
  for (const auto& t : trajs) ptrs.push_back(&t);
  return record_of(spec, network, pool_metrics(ptrs), timing_profile(timing));
}

std::string network_name(const ExperimentConfig& cfg) { return fs::path(cfg.network).stem().string(); }

}  // namespace

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

void cmd_generate(const ExperimentConfig& cfg, const CommandOptions& opt) {
  cfg.validate();
  const Layout layout{cfg.output_dir};
  const auto net = load_network(cfg.network);
  for (const auto seed : cfg.seeds) {
    const auto set = make_scenarios(net, cfg, seed);
    GenConfig g = cfg.generator;
    g.seed = derive_seed(cfg.generator.seed, 11, seed);
    write_scenario_archive(set, g, layout.scenarios(seed));
    say(opt, "seed " + std::to_string(seed) + ": wrote " + std::to_string(set.scenarios.size()) + " scenarios");
  }
  write_manifest(cfg, "generate");
}

void cmd_train(const ExperimentConfig& cfg, const CommandOptions& opt) {
  cfg.validate();
  const Layout layout{cfg.output_dir};
  for (const auto seed : cfg.seeds) {
    const auto c = load_seed(cfg, layout, seed);
    say(opt, "seed " + std::to_string(seed) + ": training " + std::to_string(c.net.junction_count()) + " models");
    const auto models = train_models(c.net, c.set, cfg.lstm, seed, opt.workers, opt.log);
    save_models(layout.models(seed, cfg.lstm.lookback), models);
  }
  write_manifest(cfg, "train");
}

void cmd_calibrate(const ExperimentConfig& cfg, const CommandOptions& opt) {
  cfg.validate();
  const Layout layout{cfg.output_dir};
  for (const auto seed : cfg.seeds) {
    const auto c = load_seed(cfg, layout, seed);
    const LstmPredictor predictor(load_models(layout.models(seed, cfg.lstm.lookback), c.net.junction_count()));
    const auto cal = split_matrices(c.set, Split::Calibration);
    struct Job {
      std::size_t budget;
      double sigma;
    };
    std::vector<Job> jobs;
    for (double f : calibration_fractions(cfg)) {
      for (double sigma : cfg.sensor_sigmas) jobs.push_back({budget_count(f, c.net.junction_count()), sigma});
    }
    std::vector<CalibrationResult> results(jobs.size());
    parallel_for(jobs.size(), opt.workers, [&](std::size_t k) {
      results[k] = calibrate_two_pass(c.net, predictor, cal, c.net.junction_labels(),
                                      calibration_options(cfg, cfg.alpha, jobs[k].budget, jobs[k].sigma, seed));
    });
    for (std::size_t k = 0; k < jobs.size(); ++k) {
      write_text_file(layout.calibration(seed, cfg.alpha, jobs[k].budget, jobs[k].sigma, cfg.lstm.lookback),
                      calibration_to_json(results[k].table));
      say(opt, "seed " + std::to_string(seed) + " B=" + std::to_string(jobs[k].budget) +
                   " sigma=" + format_double(jobs[k].sigma) + ": pass-1 to pass-2 quantile drift max " +
                   format_double(results[k].max_drift) + " mean " + format_double(results[k].mean_drift) + " L/s");
    }
  }
  write_manifest(cfg, "calibrate");
}

void cmd_run(const ExperimentConfig& cfg, const CommandOptions& opt) {
  cfg.validate();
  const Layout layout{cfg.output_dir};
  const int w = cfg.lstm.lookback;
  for (const auto seed : cfg.seeds) {
    const auto c = load_seed(cfg, layout, seed);
    const std::size_t n = c.net.junction_count();
    const LstmPredictor predictor(load_models(layout.models(seed, w), n));
    const auto truths = ground_truths(c, static_cast<std::size_t>(w), cfg.solver, opt.workers);
    const auto cells = run_cells(cfg, n, seed);
    parallel_for(cells.size(), opt.workers, [&](std::size_t k) {
      const auto& spec = cells[k];
      std::unique_ptr<ConformalScorer> scorer;
      if (policy_from_string(spec.method) != PolicyKind::Full) {
        scorer = std::make_unique<ConformalScorer>(calibration_from_json(
            read_text_file(layout.calibration(seed, cfg.alpha, spec.budget, spec.sigma, w))));
      }
      const auto policy = make_policy(spec.method, c.set, spec.budget, seed);
      const auto result = run_cell(c.net, predictor, scorer.get(), c.tests, truths, policy, spec, cfg);
      write_cell(layout, result);
      say(opt, "seed " + std::to_string(seed) + " " + spec.method + " B=" + std::to_string(spec.budget) +
                   " sigma=" + format_double(spec.sigma) + ": rmse_q " + format_double(result.metrics.rmse_q));
    });
  }
  write_manifest(cfg, "run");
}

void cmd_evaluate(const ExperimentConfig& cfg, const CommandOptions& opt) {
  cfg.validate();
  const Layout layout{cfg.output_dir};
  const auto network = network_name(cfg);
  std::vector<CellRecord> records;
  CsvWriter per_cell({"method", "network", "budget_fraction", "budget_nodes", "sigma", "seed", "rmse_q", "rmse_p",
                      "coverage", "coverage_all", "violation_rate", "interval_width", "nonconverged_steps"});
  for (const auto seed : cfg.seeds) {
    const auto c = load_seed(cfg, layout, seed);
    for (const auto& spec : run_cells(cfg, c.net.junction_count(), seed)) {
      records.push_back(read_cell(layout, spec, c, network));
      const auto& m = records.back().metrics;
      per_cell.cell(spec.method).cell(network).cell(spec.budget_fraction).cell(spec.budget).cell(spec.sigma).cell(
          static_cast<long long>(seed));
      per_cell.cell(m.rmse_q).cell(m.rmse_p).cell(m.coverage).cell(m.coverage_all).cell(m.violation_rate).cell(
          m.mean_width).cell(m.nonconverged_steps);
      per_cell.end_row();
    }
  }
  // Records arrive seed-major; regroup cell-major so table rows follow the config order.
  std::stable_sort(records.begin(), records.end(), [&](const CellRecord& a, const CellRecord& b) {
    const auto rank = [&](const CellRecord& r) {
      const auto p = std::find(cfg.policies.begin(), cfg.policies.end(), r.method) - cfg.policies.begin();
      const auto s = std::find(cfg.sensor_sigmas.begin(), cfg.sensor_sigmas.end(), r.sigma) - cfg.sensor_sigmas.begin();
      return std::make_tuple(p, s, r.budget);
    };
    return rank(a) < rank(b);
  });
  const auto dir = layout.reports();
  write_text_file(dir / "table_demand.csv", table_demand_csv(records));
  write_text_file(dir / "table_pressure.csv", table_pressure_csv(records));
  write_text_file(dir / "table_safety.csv", table_safety_csv(records));
  write_text_file(dir / "cell_metrics.csv", per_cell.str());

  // Timing rows only for the adaptive policy; they are the one report whose
  // values are wall-clock measurements.
  std::vector<CellRecord> timing;
  for (const auto& r : records) {
    if (r.method == "adaptive" || r.method == "full") timing.push_back(r);
  }
  write_text_file(dir / "table_timing.csv", table_timing_csv(timing));

  const auto chart = [&](const std::string& file, const std::string& title, const std::string& y_label,
                         auto field) {
    std::vector<ChartSeries> series;
    for (const auto& p : cfg.policies) {
      if (policy_from_string(p) == PolicyKind::Full) continue;
      ChartSeries s{p, {}};
      for (double f : cfg.budgets) {
        std::vector<double> v;
        for (const auto& r : records) {
          if (r.method == p && r.budget_fraction == f && r.sigma == cfg.sensor_sigmas.front()) v.push_back(field(r));
        }
        s.points.emplace_back(f * 100.0, mean_std(v).mean);
      }
      series.push_back(std::move(s));
    }
    write_text_file(dir / file, line_chart_svg(title, "sampling budget (% of junctions)", y_label, series));
  };
  chart("chart_demand.svg", "Demand RMSE by budget (" + network + ")", "RMSE (L/s)",
        [](const CellRecord& r) { return r.metrics.rmse_q; });
  chart("chart_pressure.svg", "Pressure RMSE by budget (" + network + ")", "RMSE (m)",
        [](const CellRecord& r) { return r.metrics.rmse_p; });
  chart("chart_coverage.svg", "Unmeasured-node coverage by budget (" + network + ")", "coverage",
        [](const CellRecord& r) { return r.metrics.coverage; });
  say(opt, "wrote reports to " + dir.string());
  write_manifest(cfg, "evaluate");
}

void cmd_ablate(const ExperimentConfig& cfg, const CommandOptions& opt) {
  cfg.validate();
  const Layout layout{cfg.output_dir};
  const int w = cfg.lstm.lookback;
  const auto network = network_name(cfg);
  const std::vector<std::string> variants{"full",   "wo_cp_rolling_var", "wo_cp_fixed_width",
                                          "wo_lstm_ma7d", "wo_adaptive_static", "random"};
  std::vector<CellRecord> records;
  for (const auto seed : cfg.seeds) {
    const auto c = load_seed(cfg, layout, seed);
    const std::size_t n = c.net.junction_count();
    const std::size_t budget = budget_count(cfg.ablation.budget, n);
    const LstmPredictor lstm(load_models(layout.models(seed, w), n));
    const MovingAveragePredictor moving_average(n, static_cast<std::size_t>(w), cfg.ablation.moving_average_days);
    const auto table = calibration_from_json(read_text_file(layout.calibration(seed, cfg.alpha, budget, 0.0, w)));
    const auto truths = ground_truths(c, static_cast<std::size_t>(w), cfg.solver, opt.workers);
    std::vector<CellRecord> seed_records(variants.size());
    parallel_for(variants.size(), opt.workers, [&](std::size_t k) {
      const auto& v = variants[k];
      const Predictor* predictor = &lstm;
      std::unique_ptr<UncertaintyScorer> scorer;
      SamplingPolicy policy = SamplingPolicy::adaptive();
      if (v == "wo_cp_rolling_var") {
        scorer = std::make_unique<RollingVarianceScorer>(n, cfg.ablation.rolling_window, cfg.alpha);
      } else if (v == "wo_cp_fixed_width") {
        scorer = std::make_unique<FixedWidthScorer>(cfg.ablation.fixed_half_width);
      } else if (v == "wo_lstm_ma7d") {
        predictor = &moving_average;
        const auto ma = calibrate_two_pass(c.net, moving_average, split_matrices(c.set, Split::Calibration),
                                           c.net.junction_labels(), calibration_options(cfg, cfg.alpha, budget, 0.0, seed));
        scorer = std::make_unique<ConformalScorer>(ma.table);
      } else {
        scorer = std::make_unique<ConformalScorer>(table);
        if (v == "wo_adaptive_static") policy = make_policy("static", c.set, budget, seed);
        if (v == "random") policy = make_policy("uniform", c.set, budget, seed);
      }
      const CellSpec spec{v, cfg.ablation.budget, budget, 0.0, seed};
      const auto result = run_cell(c.net, *predictor, scorer.get(), c.tests, truths, policy, spec, cfg);
      write_cell(layout, CellResult{{"ablation_" + v, spec.budget_fraction, budget, 0.0, seed},
                                    result.scenario_ids, result.trajectories, result.metrics, result.timing});
      seed_records[k] = record_of(spec, network, result.metrics, result.timing);
      say(opt, "seed " + std::to_string(seed) + " ablation " + v + ": rmse_q " + format_double(result.metrics.rmse_q) +
                   " coverage " + format_double(result.metrics.coverage));
    });
    records.insert(records.end(), seed_records.begin(), seed_records.end());
  }
  std::stable_sort(records.begin(), records.end(), [&](const CellRecord& a, const CellRecord& b) {
    return std::find(variants.begin(), variants.end(), a.method) < std::find(variants.begin(), variants.end(), b.method);
  });
  const auto dir = layout.reports();
  write_text_file(dir / "table_ablation.csv", table_ablation_csv(records));
  std::vector<std::pair<std::string, double>> bars;
  for (const auto& v : variants) {
    std::vector<double> q;
    for (const auto& r : records) {
      if (r.method == v) q.push_back(r.metrics.rmse_q);
    }
    bars.emplace_back(v, mean_std(q).mean);
  }
  write_text_file(dir / "chart_ablation.svg", bar_chart_svg("Ablation at " + format_double(cfg.ablation.budget * 100) +
                                                               "% budget (" + network + ")",
                                                           "demand RMSE (L/s)", bars));
  write_manifest(cfg, "ablate");
}

void cmd_sweep(const ExperimentConfig& cfg, const CommandOptions& opt) {
  cfg.validate();
  const Layout layout{cfg.output_dir};
  const int w0 = cfg.lstm.lookback;
  std::vector<SensitivityRecord> records;
  for (const auto seed : cfg.seeds) {
    const auto c = load_seed(cfg, layout, seed);
    const std::size_t n = c.net.junction_count();
    const std::size_t budget = budget_count(cfg.sweep.budget, n);
    const auto cal = split_matrices(c.set, Split::Calibration);

    struct Job {
      double alpha;
      int lookback;
    };
    std::vector<Job> jobs;
    for (double a : cfg.sweep.alphas) jobs.push_back({a, w0});
    for (int lb : cfg.sweep.lookbacks) {
      if (lb != w0) jobs.push_back({cfg.alpha, lb});
    }

    // Models and base tables per lookback, trained and calibrated on demand.
    std::map<int, std::unique_ptr<LstmPredictor>> predictors;
    std::map<int, CalibrationTable> tables;
    for (const auto& job : jobs) {
      if (predictors.count(job.lookback)) continue;
      const auto dir = layout.models(seed, job.lookback);
      std::vector<ForecastModel> models;
      if (fs::exists(dir / "node_0.json")) {
        models = load_models(dir, n);
      } else {
        LstmHyperparams h = cfg.lstm;
        h.lookback = job.lookback;
        say(opt, "seed " + std::to_string(seed) + ": training lookback " + std::to_string(job.lookback) + " models");
        models = train_models(c.net, c.set, h, seed, opt.workers, opt.log);
        save_models(dir, models);
      }
      predictors[job.lookback] = std::make_unique<LstmPredictor>(std::move(models));
      const auto path = layout.calibration(seed, cfg.alpha, budget, 0.0, job.lookback);
      if (fs::exists(path)) {
        tables[job.lookback] = calibration_from_json(read_text_file(path));
      } else {
        tables[job.lookback] = calibrate_two_pass(c.net, *predictors[job.lookback], cal, c.net.junction_labels(),
                                                  calibration_options(cfg, cfg.alpha, budget, 0.0, seed))
                                   .table;
        write_text_file(path, calibration_to_json(tables[job.lookback]));
      }
    }

    std::vector<SensitivityRecord> seed_records(jobs.size());
    parallel_for(jobs.size(), opt.workers, [&](std::size_t k) {
      const auto& job = jobs[k];
      const auto& predictor = *predictors.at(job.lookback);
      const auto table = recalibrate(tables.at(job.lookback), job.alpha);
      ConformalScorer scorer(table);
      const auto truths = ground_truths(c, static_cast<std::size_t>(job.lookback), cfg.solver, 1);
      const CellSpec spec{"adaptive", cfg.sweep.budget, budget, 0.0, seed};
      const auto result = run_cell(c.net, predictor, &scorer, c.tests, truths, SamplingPolicy::adaptive(), spec, cfg);
      seed_records[k] = {job.alpha, job.lookback, seed, result.metrics};
      say(opt, "seed " + std::to_string(seed) + " sweep alpha=" + format_double(job.alpha) +
                   " w=" + std::to_string(job.lookback) + ": rmse_q " + format_double(result.metrics.rmse_q) +
                   " coverage " + format_double(result.metrics.coverage));
    });
    records.insert(records.end(), seed_records.begin(), seed_records.end());
  }
  std::stable_sort(records.begin(), records.end(), [](const SensitivityRecord& a, const SensitivityRecord& b) {
    return std::make_pair(a.lookback, a.alpha) < std::make_pair(b.lookback, b.alpha);
  });
  write_text_file(layout.reports() / "table_sensitivity.csv", table_sensitivity_csv(records));
  write_manifest(cfg, "sweep");
}

}  // namespace aquatwin

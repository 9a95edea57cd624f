// Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero
// when any criterion fails. Pass criterion numbers as arguments to run a
// subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <json.hpp>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "aquatwin/calibration.hpp"
#include "aquatwin/conformal.hpp"
#include "aquatwin/error.hpp"
#include "aquatwin/experiment.hpp"
#include "aquatwin/forecaster.hpp"
#include "aquatwin/hydraulics.hpp"
#include "aquatwin/metrics.hpp"
#include "aquatwin/network.hpp"
#include "aquatwin/sampling.hpp"
#include "aquatwin/scenario.hpp"
#include "aquatwin/text_io.hpp"

namespace fs = std::filesystem;
using namespace aquatwin;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

void log(const std::string& msg) { std::clog << "[acceptance] " << msg << std::endl; }

int worker_count() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

// ---------------------------------------------------------------------------
// 1. Hydraulic correctness
// ---------------------------------------------------------------------------

Outcome hydraulic_correctness() {
  const auto t0 = Clock::now();
  // Reservoir at 100 m feeding one junction at elevation 0 through one pipe.
  const NetworkModel two("two",
                         {{{0, "J"}, NodeKind::Junction, SourceType::Reservoir, 0.0, 10.0, 0.0, ""},
                          {{1, "R"}, NodeKind::FixedHeadSource, SourceType::Reservoir, 0.0, 0.0, 100.0, ""}},
                         {{0, "P", 1, 0, 1000.0, 0.3, 100.0}});
  const std::vector<double> d2{10.0};
  const auto s2 = solve_steady_state(two, d2);
  const double q = 0.010;
  const double analytic = 100.0 - 10.667 * 1000.0 * std::pow(q, 1.852) / (std::pow(100.0, 1.852) * std::pow(0.3, 4.871));
  const double head_err = std::abs(s2.heads[0] - analytic);

  // Hanoi under a spread of demand levels, from light load to past the
  // design point.
  const auto net = hanoi_builtin();
  const auto base = net.base_demands();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> level(0.2, 1.1), jitter(0.7, 1.3);
  double worst_mass = 0.0, worst_energy = 0.0;
  int converged = 0, failed = 0;
  for (int k = 0; k < 200; ++k) {
    const double s = level(rng);
    std::vector<double> d(base.size());
    for (std::size_t j = 0; j < d.size(); ++j) d[j] = base[j] * s * jitter(rng);
    try {
      const auto st = solve_steady_state(net, d);
      ++converged;
      worst_mass = std::max(worst_mass, mass_balance_residual(net, st, d));
      worst_energy = std::max(worst_energy, energy_residual(net, st));
    } catch (const NonConvergence&) {
      ++failed;
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = head_err <= 1e-6 && converged > 0 && worst_mass < 1e-6 && worst_energy < 1e-6 && secs < 1.0;
  o.detail = "2-node head error " + fmt(head_err, 3) + " m; Hanoi " + std::to_string(converged) + " converged, " +
             std::to_string(failed) + " failed, max mass residual " + fmt(worst_mass, 3) + " L/s, max energy residual " +
             fmt(worst_energy, 3) + " m; " + fmt(secs, 3) + " s";
  return o;
}

// ---------------------------------------------------------------------------
// 2. Headloss oracle
// ---------------------------------------------------------------------------

Outcome headloss_oracle() {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> lq(-3.0, 3.0), lL(1.0, 4.0), ld(-1.3, 0.3), lC(70.0, 150.0);
  double worst = 0.0;
  bool odd = true, monotone = true;
  for (int k = 0; k < 1000; ++k) {
    const double mag = std::pow(10.0, lq(rng));
    const double q = (rng() % 2) ? mag : -mag;
    const double L = std::pow(10.0, lL(rng));
    const double d = std::pow(10.0, ld(rng));
    const double C = lC(rng);
    // Independent evaluation in long double, flow converted to m3/s.
    const long double qm = static_cast<long double>(q) / 1000.0L;
    const long double ref = (qm < 0 ? -1.0L : 1.0L) * 10.667L * L * std::pow(std::fabs(qm), 1.852L) /
                            (std::pow(static_cast<long double>(C), 1.852L) * std::pow(static_cast<long double>(d), 4.871L));
    const double got = hazen_williams_headloss(q, L, d, C);
    worst = std::max(worst, static_cast<double>(std::fabs((got - ref) / ref)));
    odd = odd && hazen_williams_headloss(-q, L, d, C) == -got;
    const double q2 = q + std::abs(q) * 1e-3 + 1e-9;
    monotone = monotone && hazen_williams_headloss(q2, L, d, C) > got;
  }
  Outcome o;
  o.pass = worst <= 1e-10 && odd && monotone;
  o.detail = "max relative error " + fmt(worst, 3) + ", odd " + (odd ? "yes" : "no") + ", monotone " +
             (monotone ? "yes" : "no");
  return o;
}

// ---------------------------------------------------------------------------
// 3. Conformal coverage under exchangeability
// ---------------------------------------------------------------------------

Outcome conformal_coverage() {
  const auto t0 = Clock::now();
  const std::size_t n = 99;
  const double alpha = 0.1;
  const int trials = 2000;
  const int tests_per_trial = 100;
  std::mt19937_64 rng(99);
  std::gamma_distribution<double> dist(2.0, 1.5);
  std::vector<double> per_trial;
  std::vector<double> cal(n);
  for (int t = 0; t < trials; ++t) {
    for (auto& x : cal) x = dist(rng);
    const double q = conformal_quantile(cal, alpha).value;
    int hit = 0;
    for (int k = 0; k < tests_per_trial; ++k) hit += dist(rng) <= q;
    per_trial.push_back(static_cast<double>(hit) / tests_per_trial);
  }
  const auto ms = mean_std(per_trial);
  const double se = ms.std / std::sqrt(static_cast<double>(trials));
  const double lo = 1.0 - alpha, hi = 1.0 - alpha + 1.0 / static_cast<double>(n + 1);
  const double secs = seconds_since(t0);
  Outcome o;
  // The theoretical band, widened by three standard errors of the estimate,
  // never beyond 0.918 on the upper side.
  o.pass = ms.mean >= lo - 3.0 * se && ms.mean <= std::min(0.918, hi + 3.0 * se) && secs < 30.0;
  o.detail = "mean coverage " + fmt(ms.mean, 5) + " (se " + fmt(se, 2) + ", band [" + fmt(lo) + ", " + fmt(hi) + "]); " +
             fmt(secs, 3) + " s";
  return o;
}

// ---------------------------------------------------------------------------
// 4-8. Desk pipeline
// ---------------------------------------------------------------------------

struct SeedRun {
  std::uint64_t seed = 0;
  std::map<std::string, RunMetrics> cells;  // keyed "<method>@<budget>@<sigma>"
};

std::string key(const std::string& method, std::size_t budget, double sigma) {
  return method + "@" + std::to_string(budget) + "@" + fmt(sigma);
}

struct DeskResult {
  ExperimentConfig cfg;
  std::vector<std::size_t> budgets;
  std::size_t b40 = 0;
  std::vector<SeedRun> seeds;
  double seconds = 0.0;

  std::vector<double> values(const std::string& k, double RunMetrics::*field) const {
    std::vector<double> v;
    for (const auto& s : seeds) v.push_back(s.cells.at(k).*field);
    return v;
  }
  double mean(const std::string& k, double RunMetrics::*field) const { return mean_std(values(k, field)).mean; }
};

DeskResult run_desk_pipeline() {
  DeskResult r;
  const auto t0 = Clock::now();
  r.cfg = load_config(fs::path(AQUATWIN_CONFIG_DIR) / "desk.json");
  const auto& cfg = r.cfg;
  const auto net = load_network(cfg.network);
  const std::size_t n = net.junction_count();
  const auto w = static_cast<std::size_t>(cfg.lstm.lookback);
  for (double f : {0.2, 0.4, 0.6, 0.8}) r.budgets.push_back(budget_count(f, n));
  r.b40 = budget_count(0.4, n);
  const int workers = worker_count();

  for (const std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    SeedRun sr;
    sr.seed = seed;
    const auto set = make_scenarios(net, cfg, seed);
    const auto ts = Clock::now();
    const LstmPredictor lstm(train_models(net, set, cfg.lstm, seed, workers));
    log("seed " + std::to_string(seed) + ": trained " + std::to_string(n) + " models in " + fmt(seconds_since(ts), 3) +
        " s");
    const auto cal = split_matrices(set, Split::Calibration);
    const auto tests = set.with_label(Split::Test);
    std::vector<GroundTruth> truths;
    for (const auto* t : tests) truths.push_back(solve_ground_truth(net, t->demands, w, cfg.solver));

    auto calibrate = [&](std::size_t budget, double sigma) {
      CalibrationOptions o;
      o.alpha = cfg.alpha;
      o.budget = budget;
      o.sensor_sigma = sigma;
      o.noise_mode = cfg.noise_mode;
      o.seed = seed;
      o.solver = cfg.solver;
      return calibrate_two_pass(net, lstm, cal, net.junction_labels(), o).table;
    };
    auto run = [&](const std::string& method, const std::string& policy_name, std::size_t budget, double sigma,
                   UncertaintyScorer* scorer) {
      const CellSpec spec{method, static_cast<double>(budget) / static_cast<double>(n), budget, sigma, seed};
      const auto res = run_cell(net, lstm, scorer, tests, truths, make_policy(policy_name, set, budget, seed), spec, cfg);
      sr.cells[key(method, budget, sigma)] = res.metrics;
      log("seed " + std::to_string(seed) + " " + method + " B=" + std::to_string(budget) + " sigma=" + fmt(sigma) +
          ": rmse_q " + fmt(res.metrics.rmse_q) + " rmse_p " + fmt(res.metrics.rmse_p) + " coverage " +
          fmt(res.metrics.coverage));
    };

    for (const auto b : r.budgets) {
      ConformalScorer scorer(calibrate(b, 0.0));
      run("adaptive", "adaptive", b, 0.0, &scorer);
      if (b == r.b40) {
        for (const char* p : {"uniform", "static", "round_robin"}) run(p, p, b, 0.0, &scorer);
        run("full", "full", n, 0.0, &scorer);
        RollingVarianceScorer rolling(n, cfg.ablation.rolling_window, cfg.alpha);
        run("wo_cp_rolling_var", "adaptive", b, 0.0, &rolling);
      }
    }
    ConformalScorer noisy(calibrate(r.b40, 0.1));
    run("adaptive", "adaptive", r.b40, 0.1, &noisy);
    r.seeds.push_back(std::move(sr));
  }
  r.seconds = seconds_since(t0);
  return r;
}

Outcome end_to_end_coverage(const DeskResult& r) {
  const auto cov = r.values(key("adaptive", r.b40, 0.0), &RunMetrics::coverage);
  const double m = mean_std(cov).mean;
  Outcome o;
  o.pass = m >= 0.86 && m <= 0.94 && r.seconds < 600.0;
  o.detail = "unmeasured coverage " + fmt(m) + " (seeds " + fmt(cov[0]) + ", " + fmt(cov[1]) + ", " + fmt(cov[2]) +
             "); desk pipeline " + fmt(r.seconds, 4) + " s";
  return o;
}

Outcome adaptive_advantage(const DeskResult& r) {
  const auto q = [&](const char* m) { return r.mean(key(m, r.b40, 0.0), &RunMetrics::rmse_q); };
  const double a = q("adaptive"), u = q("uniform"), s = q("static"), rr = q("round_robin");
  const double gain = 1.0 - a / u;
  Outcome o;
  o.pass = gain >= 0.10 && a < s && a < rr;
  o.detail = "rmse_q adaptive " + fmt(a) + ", uniform " + fmt(u) + " (" + fmt(100.0 * gain, 3) + "% lower), static " +
             fmt(s) + ", round_robin " + fmt(rr);
  return o;
}

Outcome budget_monotonicity(const DeskResult& r) {
  std::vector<double> q;
  std::string trail;
  for (auto b : r.budgets) {
    q.push_back(r.mean(key("adaptive", b, 0.0), &RunMetrics::rmse_q));
    trail += (trail.empty() ? "" : " > ") + fmt(q.back());
  }
  bool strictly = true;
  for (std::size_t k = 1; k < q.size(); ++k) strictly = strictly && q[k] < q[k - 1];
  const std::size_t n = r.budgets.empty() ? 0 : budget_count(1.0, 31);
  bool exact = true;
  for (const auto& s : r.seeds) {
    const auto& f = s.cells.at(key("full", n, 0.0));
    exact = exact && f.rmse_q == 0.0 && f.rmse_p == 0.0;
  }
  Outcome o;
  o.pass = strictly && exact;
  o.detail = "adaptive rmse_q by budget " + trail + "; full policy rmse_q = rmse_p = 0: " + (exact ? "yes" : "no");
  return o;
}

Outcome ablation_ordering(const DeskResult& r) {
  int ordered = 0;
  std::string per_seed;
  for (const auto& s : r.seeds) {
    const double f = s.cells.at(key("adaptive", r.b40, 0.0)).rmse_q;
    const double rv = s.cells.at(key("wo_cp_rolling_var", r.b40, 0.0)).rmse_q;
    const double st = s.cells.at(key("static", r.b40, 0.0)).rmse_q;
    const double rn = s.cells.at(key("uniform", r.b40, 0.0)).rmse_q;
    const bool ok = f <= rv && rv <= st && st <= rn;
    ordered += ok;
    per_seed += (per_seed.empty() ? "" : "; ") + std::string("seed ") + std::to_string(s.seed) + " " + fmt(f) + " / " +
                fmt(rv) + " / " + fmt(st) + " / " + fmt(rn) + (ok ? " ok" : " out of order");
  }
  const double cov_full = r.mean(key("adaptive", r.b40, 0.0), &RunMetrics::coverage);
  const double cov_rv = r.mean(key("wo_cp_rolling_var", r.b40, 0.0), &RunMetrics::coverage);
  Outcome o;
  o.pass = ordered >= 2 && cov_full - cov_rv >= 0.04;
  o.detail = "full / wo_cp_rolling_var / wo_adaptive_static / random rmse_q: " + per_seed + "; coverage full " +
             fmt(cov_full) + " vs wo_cp " + fmt(cov_rv);
  return o;
}

Outcome noise_robustness(const DeskResult& r) {
  const double q0 = r.mean(key("adaptive", r.b40, 0.0), &RunMetrics::rmse_q);
  const double q1 = r.mean(key("adaptive", r.b40, 0.1), &RunMetrics::rmse_q);
  const double c0 = r.mean(key("adaptive", r.b40, 0.0), &RunMetrics::coverage);
  const double c1 = r.mean(key("adaptive", r.b40, 0.1), &RunMetrics::coverage);
  const double rel = q1 / q0 - 1.0;
  Outcome o;
  o.pass = rel < 0.10 && std::abs(c1 - c0) < 0.03;
  o.detail = "sigma=0.1 (" + std::string(r.cfg.noise_mode == NoiseMode::Additive ? "additive" : "multiplicative") +
             "): rmse_q " + fmt(q0) + " -> " + fmt(q1) + " (" + fmt(100.0 * rel, 3) + "%), coverage " + fmt(c0) + " -> " +
             fmt(c1);
  return o;
}

// ---------------------------------------------------------------------------
// 9. Gradient check on the shipped model
// ---------------------------------------------------------------------------

Outcome lstm_gradient_check() {
  const auto t0 = Clock::now();
  const auto model = model_from_json(read_text_file(fs::path(AQUATWIN_FIXTURE_DIR) / "tiny_model.json"));
  const auto c = nlohmann::json::parse(read_text_file(fs::path(AQUATWIN_FIXTURE_DIR) / "tiny_case.json"));
  const auto window = c.at("window").get<std::vector<double>>();
  GradientCheckOptions opt;
  opt.samples = static_cast<int>(model.params.size());  // every parameter
  const double err = gradient_check(model, window, c.at("target").get<double>(), opt, c.at("first_hour").get<std::size_t>());
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = err < 1e-4 && secs < 5.0;
  o.detail = "max relative error " + fmt(err, 3) + " over " + std::to_string(model.params.size()) + " parameters; " +
             fmt(secs, 3) + " s";
  return o;
}

// ---------------------------------------------------------------------------
// 10. Selection overhead at N = 388
// ---------------------------------------------------------------------------

Outcome selection_overhead() {
  const auto net = grid_network(9, 43);
  const std::size_t n = net.junction_count();
  LstmHyperparams h;  // default sizes; weights do not affect cost
  std::vector<ForecastModel> models;
  for (std::size_t i = 0; i < n; ++i) {
    auto m = init_model(h, {2.0, 0.5}, derive_seed(1, 5, i));
    m.node = static_cast<int>(i);
    models.push_back(std::move(m));
  }
  const LstmPredictor lstm(std::move(models));
  CalibrationTable table;
  for (std::size_t i = 0; i < n; ++i) table.entries.push_back({"n" + std::to_string(i), 0.1 + 0.001 * static_cast<double>(i % 97), 100, false, {}});
  GenConfig g;
  g.n_scenarios = 1;
  g.horizon_hours = 24 + 40;
  const auto demands = generate_scenarios(net, g).scenarios[0].demands;

  // Scoring plus top-B selection in isolation.
  ConformalScorer scorer(table);
  const std::size_t budget = budget_count(0.4, n);
  std::vector<double> pred(n, 1.0), u(n), hw(n);
  std::mt19937_64 rng(1);
  const int reps = 2000;
  const auto t0 = Clock::now();
  std::size_t sink = 0;
  for (int k = 0; k < reps; ++k) {
    scorer.score(pred, u, hw);
    sink += select_nodes(SamplingPolicy::adaptive(), u, budget, static_cast<std::size_t>(k), rng).size();
  }
  const double select_ms = 1000.0 * seconds_since(t0) / reps;

  // Whole closed loop.
  TwinConfig tc;
  tc.budget = budget;
  const auto traj = run_digital_twin(net, lstm, &scorer, demands, SamplingPolicy::adaptive(), tc);
  const auto prof = timing_profile(traj.timing);
  Outcome o;
  o.pass = sink == reps * budget && select_ms < 2.0 && prof.overhead < 0.15;
  o.detail = "N=" + std::to_string(n) + ": scoring + selection " + fmt(select_ms, 3) + " ms/step; step means inference " +
             fmt(prof.inference.mean, 3) + " ms, uncertainty " + fmt(prof.uncertainty.mean, 3) + " ms, selection " +
             fmt(prof.selection.mean, 3) + " ms, solve " + fmt(prof.solve.mean, 3) + " ms; non-solver share " +
             fmt(100.0 * prof.overhead, 3) + "%";
  return o;
}

// ---------------------------------------------------------------------------
// 11. Determinism of the disk pipeline
// ---------------------------------------------------------------------------

std::map<std::string, std::string> csv_bodies(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().extension() != ".csv") continue;
    const auto name = e.path().filename().string();
    // Wall-clock measurements are the one non-deterministic output.
    if (name.rfind("timing_", 0) == 0 || name == "table_timing.csv") continue;
    out[fs::relative(e.path(), root).string()] = read_text_file(e.path());
  }
  return out;
}

Outcome determinism() {
  const auto base = fs::temp_directory_path() / "aquatwin_acceptance_determinism";
  fs::remove_all(base);
  std::vector<std::map<std::string, std::string>> runs;
  for (int rep = 0; rep < 2; ++rep) {
    auto cfg = load_config(fs::path(AQUATWIN_CONFIG_DIR) / "smoke.json");
    cfg.output_dir = (base / ("run_" + std::to_string(rep))).string();
    // Different thread counts must not change the results either.
    const CommandOptions opt{rep == 0 ? 1 : std::max(2, worker_count()), {}};
    cmd_generate(cfg, opt);
    cmd_train(cfg, opt);
    cmd_calibrate(cfg, opt);
    cmd_run(cfg, opt);
    cmd_evaluate(cfg, opt);
    cmd_ablate(cfg, opt);
    cmd_sweep(cfg, opt);
    runs.push_back(csv_bodies(cfg.output_dir));
  }
  std::size_t differing = 0;
  std::string first;
  for (const auto& [name, body] : runs[0]) {
    const auto it = runs[1].find(name);
    if (it == runs[1].end() || it->second != body) {
      ++differing;
      if (first.empty()) first = name;
    }
  }
  const bool same_set = runs[0].size() == runs[1].size();
  fs::remove_all(base);
  Outcome o;
  o.pass = same_set && differing == 0 && !runs[0].empty();
  o.detail = std::to_string(runs[0].size()) + " CSV files compared, " + std::to_string(differing) + " differ" +
             (first.empty() ? "" : " (first: " + first + ")");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  auto want = [&](int c) { return wanted.empty() || wanted.count(c) > 0; };

  std::vector<std::pair<int, std::string>> names{
      {1, "hydraulic correctness"},  {2, "headloss oracle"},     {3, "conformal coverage guarantee"},
      {4, "end-to-end coverage"},    {5, "adaptive advantage"},  {6, "budget monotonicity"},
      {7, "ablation ordering"},      {8, "noise robustness"},    {9, "LSTM gradient check"},
      {10, "selection overhead"},    {11, "determinism"}};
  std::map<int, Outcome> results;
  auto guarded = [&](int c, const std::function<Outcome()>& fn) {
    if (!want(c)) return;
    try {
      results[c] = fn();
    } catch (const std::exception& e) {
      results[c] = {false, std::string("error: ") + e.what()};
    }
  };

  guarded(1, hydraulic_correctness);
  guarded(2, headloss_oracle);
  guarded(3, conformal_coverage);
  guarded(9, lstm_gradient_check);
  guarded(10, selection_overhead);
  if (want(4) || want(5) || want(6) || want(7) || want(8)) {
    try {
      const auto desk = run_desk_pipeline();
      guarded(4, [&] { return end_to_end_coverage(desk); });
      guarded(5, [&] { return adaptive_advantage(desk); });
      guarded(6, [&] { return budget_monotonicity(desk); });
      guarded(7, [&] { return ablation_ordering(desk); });
      guarded(8, [&] { return noise_robustness(desk); });
    } catch (const std::exception& e) {
      for (int c = 4; c <= 8; ++c)
        if (want(c)) results[c] = {false, std::string("desk pipeline error: ") + e.what()};
    }
  }
  guarded(11, determinism);

  int failed = 0;
  for (const auto& [c, name] : names) {
    const auto it = results.find(c);
    if (it == results.end()) continue;
    failed += !it->second.pass;
    std::cout << "criterion " << c << " " << (it->second.pass ? "PASS" : "FAIL") << ": " << name << ": "
              << it->second.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "../support/oracles.hpp"
#include "aquatwin/calibration.hpp"
#include "aquatwin/error.hpp"
#include "aquatwin/metrics.hpp"
#include "aquatwin/network.hpp"
#include "aquatwin/sampling.hpp"
#include "aquatwin/scenario.hpp"

using namespace aquatwin;

namespace {

/// Best achievable score sum over all subsets of size k, by enumeration.
double best_subset_sum(const std::vector<double>& u, std::size_t k) {
  const std::size_t n = u.size();
  double best = -1e300;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != k) continue;
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask & (1u << i)) s += u[i];
    best = std::max(best, s);
  }
  return best;
}

DemandMatrix small_scenario(const NetworkModel& net, int hours, std::uint64_t seed) {
  GenConfig cfg;
  cfg.n_scenarios = 1;
  cfg.horizon_hours = hours;
  cfg.seed = seed;
  return generate_scenarios(net, cfg).scenarios[0].demands;
}

CalibrationTable flat_table(std::size_t n, double q) {
  CalibrationTable t;
  for (std::size_t i = 0; i < n; ++i) {
    CalibrationEntry e;
    e.label = std::to_string(i);
    e.quantile = q * static_cast<double>(i + 1);
    e.n_cal = 50;
    t.entries.push_back(e);
  }
  return t;
}

}  // namespace

TEST_SUITE("sampling") {
  TEST_CASE("top-k examples and tie rule") {
    const std::vector<double> u{0.5, 3.0, 1.0, 3.0, 2.0};
    CHECK(top_k(u, 2) == std::vector<int>{1, 3});
    CHECK(top_k(u, 3) == std::vector<int>{1, 3, 4});
    const std::vector<double> flat(6, 1.0);
    CHECK(top_k(flat, 3) == std::vector<int>{0, 1, 2});
    CHECK(top_k(u, 0).empty());
  }

  TEST_CASE("adaptive selection is optimal against enumeration") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 300; ++trial) {
      const std::size_t n = 1 + rng() % 12;
      const std::size_t k = rng() % (n + 1);
      std::vector<double> u(n);
      // Coarse values force ties.
      for (auto& x : u) x = static_cast<double>(rng() % 5);
      std::mt19937_64 unused;
      const auto sel = select_nodes(SamplingPolicy::adaptive(), u, k, 0, unused);
      REQUIRE(sel.size() == k);
      CHECK(std::is_sorted(sel.begin(), sel.end()));
      CHECK(std::set<int>(sel.begin(), sel.end()).size() == k);
      double s = 0.0;
      for (int i : sel) s += u[static_cast<std::size_t>(i)];
      CHECK(s == best_subset_sum(u, k));
      // Every unselected node scores no more than every selected one, and a
      // tie is resolved to the lower index.
      for (std::size_t i = 0; i < n; ++i) {
        if (std::binary_search(sel.begin(), sel.end(), static_cast<int>(i))) continue;
        for (int j : sel) {
          CHECK(u[i] <= u[static_cast<std::size_t>(j)]);
          if (u[i] == u[static_cast<std::size_t>(j)]) CHECK(static_cast<int>(i) > j);
        }
      }
    }
  }

  TEST_CASE("other policies") {
    const std::vector<double> u(10, 0.0);
    std::mt19937_64 rng(1);
    CHECK(select_nodes(SamplingPolicy::round_robin(), u, 4, 0, rng) == std::vector<int>{0, 1, 2, 3});
    CHECK(select_nodes(SamplingPolicy::round_robin(), u, 4, 2, rng) == std::vector<int>{0, 1, 8, 9});
    CHECK(select_nodes(SamplingPolicy::full(), u, 3, 0, rng).size() == 10);
    CHECK(select_nodes(SamplingPolicy::static_high_variance({7, 2}), u, 2, 5, rng) == std::vector<int>{2, 7});
    CHECK_THROWS_AS(select_nodes(SamplingPolicy::static_high_variance({7}), u, 2, 0, rng), InvalidConfig);
    CHECK_THROWS_AS(select_nodes(SamplingPolicy::adaptive(), u, 11, 0, rng), BudgetExceedsNetwork);
    CHECK(policy_from_string("random") == PolicyKind::UniformRandom);
    CHECK(policy_from_string(to_string(PolicyKind::StaticHighVariance)) == PolicyKind::StaticHighVariance);
  }

  TEST_CASE("uniform selection is unbiased") {
    const std::vector<double> u(8, 0.0);
    std::mt19937_64 rng(77);
    std::vector<int> hits(8, 0);
    const int trials = 40000;
    for (int t = 0; t < trials; ++t) {
      const auto sel = select_nodes(SamplingPolicy::uniform(1), u, 3, static_cast<std::size_t>(t), rng);
      REQUIRE(sel.size() == 3);
      REQUIRE(std::set<int>(sel.begin(), sel.end()).size() == 3);
      for (int i : sel) ++hits[static_cast<std::size_t>(i)];
    }
    const double p = 3.0 / 8.0;
    const double se = std::sqrt(p * (1 - p) / trials);
    for (int h : hits) CHECK(std::abs(h / static_cast<double>(trials) - p) < 4.5 * se);
  }

  TEST_CASE("fusion") {
    std::mt19937_64 rng(3);
    const std::vector<double> truth{4.0, 9.0, 7.0}, pred{1.0, 2.0, 3.0};
    const std::vector<int> sel{0, 2};
    CHECK(fuse_state(truth, pred, sel, 0.0, NoiseMode::Multiplicative, rng) == std::vector<double>{4.0, 2.0, 7.0});
    const auto noisy = fuse_state(truth, pred, sel, 0.5, NoiseMode::Additive, rng);
    CHECK(noisy[1] == 2.0);
    CHECK(noisy[0] != 4.0);
    CHECK(noisy[0] >= 0.0);
    // Multiplicative noise statistics on one measured entry.
    std::vector<double> rel;
    for (int t = 0; t < 20000; ++t) {
      const std::vector<int> s0{0};
      rel.push_back(fuse_state(std::vector<double>{10.0}, std::vector<double>{0.0}, s0, 0.1,
                               NoiseMode::Multiplicative, rng)[0] / 10.0 - 1.0);
    }
    CHECK(std::sqrt(oracle::variance(rel)) == doctest::Approx(0.1).epsilon(0.03));
  }

  TEST_CASE("static set from streaming variance") {
    std::mt19937_64 rng(9);
    std::vector<DemandMatrix> mats;
    for (int m = 0; m < 3; ++m) {
      DemandMatrix d(40 + 10 * m, 7);
      for (Eigen::Index j = 0; j < 7; ++j)
        for (Eigen::Index t = 0; t < d.rows(); ++t)
          d(t, j) = std::normal_distribution<double>(5.0 + m, 0.3 + 0.25 * static_cast<double>((j * 3) % 7))(rng);
      mats.push_back(d);
    }
    std::vector<const DemandMatrix*> ptrs;
    for (const auto& m : mats) ptrs.push_back(&m);
    std::vector<double> var(7);
    for (Eigen::Index j = 0; j < 7; ++j) {
      std::vector<double> col;
      for (const auto& m : mats)
        for (Eigen::Index t = 0; t < m.rows(); ++t) col.push_back(m(t, j));
      var[static_cast<std::size_t>(j)] = oracle::variance(col);
    }
    for (std::size_t b = 1; b <= 7; ++b) {
      const auto got = precompute_static_set(ptrs, b);
      std::vector<int> idx(7);
      std::iota(idx.begin(), idx.end(), 0);
      std::stable_sort(idx.begin(), idx.end(), [&](int a, int c) { return var[static_cast<std::size_t>(a)] > var[static_cast<std::size_t>(c)]; });
      std::vector<int> want(idx.begin(), idx.begin() + static_cast<long>(b));
      std::sort(want.begin(), want.end());
      CHECK(got == want);
    }
  }

  TEST_CASE("rolling variance and fixed width scorers") {
    CHECK(normal_two_sided_quantile(0.05) == doctest::Approx(1.959963985).epsilon(1e-8));
    CHECK(normal_two_sided_quantile(0.1) == doctest::Approx(1.644853627).epsilon(1e-8));
    RollingVarianceScorer rv(1, 3, 0.1);
    std::vector<double> u(1), h(1);
    const std::vector<double> seq{1.0, 4.0, 2.0, 8.0};
    for (double x : seq) rv.score(std::vector<double>{x}, u, h);
    CHECK(u[0] == doctest::Approx(oracle::variance({4.0, 2.0, 8.0})));
    CHECK(h[0] == doctest::Approx(1.644853627 * std::sqrt(u[0])).epsilon(1e-8));
    FixedWidthScorer fw(2.5);
    fw.score(std::vector<double>{1.0}, u, h);
    CHECK(h[0] == 2.5);
    CHECK(u[0] == 5.0);
  }

  TEST_CASE("closed-loop invariants") {
    const auto net = hanoi_builtin();
    const auto demands = small_scenario(net, 60, 4);
    const MovingAveragePredictor ma(31, 24, 7);
    auto table = flat_table(31, 0.5);
    ConformalScorer scorer(table);
    TwinConfig cfg;
    cfg.budget = 6;
    const auto traj = run_digital_twin(net, ma, &scorer, demands, SamplingPolicy::adaptive(), cfg);
    REQUIRE(traj.steps() == 36);
    CHECK(traj.warmup == 24);
    for (std::size_t s = 0; s < traj.steps(); ++s) {
      CHECK(traj.selected[s].size() == 6);
      // Widest quantiles belong to the highest indices.
      CHECK(traj.selected[s] == std::vector<int>{25, 26, 27, 28, 29, 30});
      for (Eigen::Index i = 0; i < 31; ++i) {
        const auto r = static_cast<Eigen::Index>(s);
        if (traj.measured(r, i)) CHECK(traj.q_tilde(r, i) == traj.q_true(r, i));
        else CHECK(traj.q_tilde(r, i) == traj.q_hat(r, i));
        CHECK(traj.hi(r, i) - traj.lo(r, i) == doctest::Approx(2.0 * table.quantile(static_cast<std::size_t>(i))));
        CHECK(traj.q_true(r, i) == demands(24 + r, i));
      }
      CHECK(traj.converged[s]);
      CHECK(traj.truth_converged[s]);
    }
    // The twin's pressures are exactly the solve of the fused state.
    std::vector<double> fused(31);
    for (Eigen::Index i = 0; i < 31; ++i) fused[static_cast<std::size_t>(i)] = traj.q_tilde(5, i);
    const auto state = solve_steady_state(net, fused);
    for (Eigen::Index i = 0; i < 31; ++i)
      CHECK(traj.p_tilde(5, i) == doctest::Approx(state.pressures[static_cast<std::size_t>(net.junctions()[static_cast<std::size_t>(i)])]));

    // Full sampling reproduces the truth.
    const auto full = run_digital_twin(net, ma, &scorer, demands, SamplingPolicy::full(), cfg);
    CHECK(rmse_demand(full) == 0.0);
    CHECK(rmse_pressure(full) == doctest::Approx(0.0).epsilon(1e-9));
  }

  TEST_CASE("runs are reproducible for a fixed seed") {
    const auto net = hanoi_builtin();
    const auto demands = small_scenario(net, 40, 8);
    const MovingAveragePredictor ma(31, 24, 7);
    TwinConfig cfg;
    cfg.budget = 5;
    cfg.sensor_sigma = 0.1;
    cfg.noise_seed = 12;
    cfg.solve_hydraulics = false;
    const auto a = run_digital_twin(net, ma, nullptr, demands, SamplingPolicy::uniform(3), cfg);
    const auto b = run_digital_twin(net, ma, nullptr, demands, SamplingPolicy::uniform(3), cfg);
    CHECK(a.selected == b.selected);
    CHECK(a.q_tilde == b.q_tilde);
    CHECK(trajectory_csv(a) == trajectory_csv(b));
  }

  TEST_CASE("trajectory CSV round trip") {
    const auto net = hanoi_builtin();
    const auto demands = small_scenario(net, 30, 2);
    const MovingAveragePredictor ma(31, 24, 7);
    ConformalScorer scorer(flat_table(31, 0.3));
    TwinConfig cfg;
    cfg.budget = 10;
    const auto traj = run_digital_twin(net, ma, &scorer, demands, SamplingPolicy::round_robin(), cfg);
    const auto csv = trajectory_csv(traj);
    CHECK(csv.rfind("t,node,selected,q_true,q_hat,q_tilde,lo,hi,p_true,p_tilde,flow_diag\n", 0) == 0);
    const auto back = trajectory_from_csv(csv);
    CHECK(back.selected == traj.selected);
    CHECK(back.q_true == traj.q_true);
    CHECK(back.q_hat == traj.q_hat);
    CHECK(back.q_tilde == traj.q_tilde);
    CHECK(back.lo == traj.lo);
    CHECK(back.p_tilde == traj.p_tilde);
    CHECK(back.converged == traj.converged);
    CHECK(back.has_hydraulics);
    CHECK(trajectory_csv(back) == csv);
    const auto m1 = evaluate_trajectory(traj);
    const auto m2 = evaluate_trajectory(back);
    CHECK(m1.rmse_q == m2.rmse_q);
    CHECK(m1.rmse_p == m2.rmse_p);
    CHECK(m1.coverage == m2.coverage);
  }

  TEST_CASE("calibration collects residuals of every post-warmup step") {
    const auto net = hanoi_builtin();
    const auto d1 = small_scenario(net, 50, 1), d2 = small_scenario(net, 45, 2);
    const MovingAveragePredictor ma(31, 24, 7);
    TwinConfig cfg;
    cfg.budget = 5;
    cfg.solve_hydraulics = false;
    const auto res = collect_residuals(net, ma, {&d1, &d2}, nullptr, SamplingPolicy::uniform(4), cfg);
    REQUIRE(res.size() == 31);
    CHECK(res[0].size() == (50 - 24) + (45 - 24));
    for (const auto& r : res)
      for (double x : r) CHECK(x >= 0.0);
    CalibrationOptions opt;
    opt.budget = 5;
    opt.seed = 3;
    const auto result = calibrate_two_pass(net, ma, {&d1, &d2}, net.junction_labels(), opt);
    CHECK(result.table.size() == 31);
    CHECK(result.table.budget == 5);
    CHECK(result.max_drift >= result.mean_drift);
    const DemandMatrix wrong(50, 3);
    CHECK_THROWS_AS(collect_residuals(net, ma, {&wrong}, nullptr, SamplingPolicy::uniform(4), cfg), MissingModel);
  }
}

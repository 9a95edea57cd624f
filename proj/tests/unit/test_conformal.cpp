#include <doctest.h>

#include <cmath>
#include <random>

#include "../support/oracles.hpp"
#include "aquatwin/conformal.hpp"
#include "aquatwin/error.hpp"

using namespace aquatwin;

namespace {
std::vector<double> one_to(int n) {
  std::vector<double> v;
  for (int i = n; i >= 1; --i) v.push_back(i);  // reversed on purpose
  return v;
}
}  // namespace

TEST_SUITE("conformal") {
  TEST_CASE("worked examples") {
    const auto q19 = conformal_quantile(one_to(19), 0.1);
    CHECK(q19.rank == 18);
    CHECK(q19.value == 18.0);
    const auto q9 = conformal_quantile(one_to(9), 0.1);
    CHECK(q9.rank == 9);
    CHECK(q9.value == 9.0);
    CHECK_FALSE(q9.degenerate);
  }

  TEST_CASE("rank matches ceil((1-alpha)(n+1)) computed exactly") {
    // Integer arithmetic: alpha = a/100.
    for (int a : {5, 10, 20, 25, 50}) {
      const double alpha = a / 100.0;
      for (std::size_t n = min_calibration_size(alpha); n < 250; ++n) {
        if (n == 0) continue;
        const std::size_t num = static_cast<std::size_t>(100 - a) * (n + 1);
        const std::size_t k = (num + 99) / 100;
        std::vector<double> r(n);
        std::mt19937_64 rng(n);
        for (auto& x : r) x = std::uniform_real_distribution<double>(0, 5)(rng);
        const auto q = conformal_quantile(r, alpha);
        if (k > n) {
          CHECK(q.degenerate);
          CHECK(std::isinf(q.value));
        } else {
          CHECK(q.rank == k);
          CHECK(q.value == oracle::order_statistic(r, k));
        }
      }
    }
  }

  TEST_CASE("too few residuals and bad inputs") {
    CHECK(min_calibration_size(0.1) == 9);
    CHECK(min_calibration_size(0.05) == 19);
    CHECK_THROWS_AS(conformal_quantile(one_to(8), 0.1), TooFewResiduals);
    CHECK_THROWS_AS(conformal_quantile({}, 0.5), TooFewResiduals);
    CHECK_THROWS_AS(conformal_quantile(one_to(20), 0.0), InvalidConfig);
    CHECK_THROWS_AS(conformal_quantile(one_to(20), 1.0), InvalidConfig);
    const std::vector<double> neg{1, 2, -1, 3, 4, 5, 6, 7, 8, 9};
    CHECK_THROWS_AS(conformal_quantile(neg, 0.1), InvalidConfig);
  }

  TEST_CASE("intervals") {
    const auto i = prediction_interval(5.0, 2.0);
    CHECK(i.lo == 3.0);
    CHECK(i.hi == 7.0);
    CHECK(i.width() == 4.0);
    CHECK(prediction_interval(1.0, 2.0).lo == -1.0);
    CHECK(display_interval(1.0, 2.0).lo == 0.0);
  }

  TEST_CASE("Monte-Carlo marginal coverage on exchangeable residuals") {
    std::mt19937_64 rng(2024);
    std::lognormal_distribution<double> dist(0.0, 0.8);
    for (std::size_t n : {19u, 50u, 200u}) {
      const double alpha = 0.1;
      const int trials = 20000;
      int covered = 0;
      std::vector<double> r(n);
      for (int t = 0; t < trials; ++t) {
        for (auto& x : r) x = dist(rng);
        const double q = conformal_quantile(r, alpha).value;
        covered += dist(rng) <= q;
      }
      const double cov = static_cast<double>(covered) / trials;
      const double se = std::sqrt(0.09 / trials);
      CHECK(cov >= 1.0 - alpha - 4.0 * se);
      CHECK(cov <= 1.0 - alpha + 1.0 / static_cast<double>(n + 1) + 4.0 * se);
    }
  }

  TEST_CASE("table, recalibration and JSON") {
    std::vector<std::vector<double>> res{one_to(19), one_to(39)};
    const auto t = make_calibration_table(res, {"A", "B"}, 0.1, 7, true);
    CHECK(t.quantile(0) == 18.0);
    CHECK(t.quantile(1) == 36.0);
    CHECK(t.entries[1].n_cal == 39);
    CHECK(uncertainty_score(t, 1) == 72.0);
    CHECK_THROWS_AS(t.quantile(2), UncalibratedNode);
    const auto r = recalibrate(t, 0.2);
    CHECK(r.quantile(0) == 16.0);
    CHECK(r.alpha == 0.2);
    const auto back = calibration_from_json(calibration_to_json(t));
    CHECK(back.alpha == t.alpha);
    CHECK(back.budget == 7);
    REQUIRE(back.size() == 2);
    CHECK(back.entries[1].label == "B");
    CHECK(back.quantile(1) == 36.0);
    CHECK(back.entries[0].residuals == t.entries[0].residuals);
  }
}

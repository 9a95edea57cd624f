#include <doctest.h>

#include <atomic>
#include <cmath>
#include <stdexcept>

#include "aquatwin/error.hpp"
#include "aquatwin/experiment.hpp"
#include "aquatwin/report.hpp"
#include "aquatwin/text_io.hpp"

using namespace aquatwin;

namespace {

std::string invalid_field(const std::string& json) {
  try {
    config_from_json(json);
  } catch (const InvalidConfig& e) {
    return e.field();
  }
  return "<accepted>";
}

CellRecord cell(const std::string& method, std::size_t b, std::uint64_t seed, double rmse_q) {
  CellRecord c;
  c.method = method;
  c.network = "hanoi";
  c.budget = b;
  c.budget_fraction = static_cast<double>(b) / 31.0;
  c.seed = seed;
  c.metrics.rmse_q = rmse_q;
  c.metrics.coverage = 0.9;
  return c;
}

}  // namespace

TEST_SUITE("experiment") {
  TEST_CASE("config JSON round trip") {
    ExperimentConfig c;
    c.budgets = {0.25, 0.5};
    c.seeds = {4, 9};
    c.lstm.hidden = 7;
    c.generator.noise_cv = 0.2;
    c.noise_mode = NoiseMode::Additive;
    c.sweep.lookbacks = {6, 12};
    const auto back = config_from_json(config_to_json(c));
    CHECK(config_to_json(back) == config_to_json(c));
    CHECK(back.lstm == c.lstm);
    CHECK(back.noise_mode == NoiseMode::Additive);
    CHECK(back.seeds == c.seeds);
  }

  TEST_CASE("missing fields keep defaults") {
    const auto c = config_from_json(R"({"alpha": 0.2, "lstm": {"hidden": 4}})");
    CHECK(c.alpha == 0.2);
    CHECK(c.lstm.hidden == 4);
    CHECK(c.lstm.lookback == 24);
    CHECK(c.network == "hanoi");
  }

  TEST_CASE("errors name the field path") {
    CHECK(invalid_field(R"({"lstm": {"hiden": 4}})") == "lstm.hiden");
    CHECK(invalid_field(R"({"alpha": 1.5})") == "alpha");
    CHECK(invalid_field(R"({"budgets": [0.2, 1.4]})") == "budgets[1]");
    CHECK(invalid_field(R"({"generator": {"noise_cv": -1}})") == "generator.noise_cv");
    CHECK(invalid_field(R"({"lstm": {"hidden": "many"}})") == "lstm.hidden");
    CHECK(invalid_field(R"({"policies": ["adaptive", "psychic"]})") == "policies[1]");
    CHECK(invalid_field(R"({"noise_mode": "loud"})") == "noise_mode");
    CHECK(invalid_field("[1, 2]") == "<root>");
    CHECK(invalid_field("{") == "<root>");
  }

  TEST_CASE("shipped configs load") {
    for (const char* name : {"smoke.json", "desk.json"}) {
      CAPTURE(name);
      CHECK_NOTHROW(load_config(std::string(AQUATWIN_CONFIG_DIR) + "/" + name));
    }
  }

  TEST_CASE("budget counts") {
    CHECK(budget_count(0.2, 31) == 6);
    CHECK(budget_count(0.4, 31) == 12);
    CHECK(budget_count(0.6, 31) == 19);
    CHECK(budget_count(0.8, 31) == 25);
    CHECK(budget_count(0.01, 31) == 1);
    CHECK(budget_count(1.0, 31) == 31);
  }

  TEST_CASE("parallel_for runs every index and reports the first failure") {
    for (int workers : {1, 3}) {
      std::vector<std::atomic<int>> hits(50);
      parallel_for(50, workers, [&](std::size_t i) { hits[i]++; });
      for (auto& h : hits) CHECK(h.load() == 1);
      try {
        parallel_for(20, workers, [](std::size_t i) {
          if (i == 7 || i == 15) throw std::runtime_error("fail " + std::to_string(i));
        });
        FAIL("expected an exception");
      } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()) == "fail 7");
      }
    }
  }

  TEST_CASE("report tables aggregate over seeds") {
    const std::vector<CellRecord> cells{cell("adaptive", 6, 1, 1.0), cell("adaptive", 6, 2, 3.0),
                                        cell("uniform", 6, 1, 5.0)};
    const auto t = parse_csv(table_demand_csv(cells));
    REQUIRE(t.rows.size() == 2);
    CHECK(t.header[0] == "method");
    const int mean = t.column("rmse_q_mean");
    const int sd = t.column("rmse_q_std");
    REQUIRE(mean >= 0);
    CHECK(parse_double(t.rows[0][static_cast<std::size_t>(mean)]) == 2.0);
    CHECK(parse_double(t.rows[0][static_cast<std::size_t>(sd)]) == doctest::Approx(std::sqrt(2.0)));
    CHECK(t.rows[1][0] == "uniform");
    for (const auto& text : {table_pressure_csv(cells), table_safety_csv(cells), table_timing_csv(cells),
                             table_ablation_csv(cells)}) {
      CHECK_FALSE(parse_csv(text).rows.empty());
    }
    const auto ab = parse_csv(table_ablation_csv(cells));
    CHECK(ab.column("rmse_q_seed_2") >= 0);
  }

  TEST_CASE("charts are standalone SVG") {
    const auto svg = line_chart_svg("t", "x", "y", {{"a", {{0.2, 1.0}, {0.4, 0.5}}}});
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("</svg>") != std::string::npos);
    const auto bars = bar_chart_svg("t", "y", {{"a", 1.0}, {"b<c", 2.0}});
    CHECK(bars.find("b&lt;c") != std::string::npos);
  }

  TEST_CASE("text helpers") {
    for (double v : {0.1, 1e-300, 123456.789, -2.5, 1.0 / 3.0}) CHECK(parse_double(format_double(v)) == v);
    CHECK_THROWS_AS(parse_double("1.5x"), std::invalid_argument);
    CHECK(trim("  a b  ") == "a b");
    CHECK(split_ws(" a\tb  c ").size() == 3);
  }
}

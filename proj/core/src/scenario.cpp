#include "aquatwin/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numeric>
#include <random>

#include "aquatwin/error.hpp"
#include "aquatwin/text_io.hpp"

namespace aquatwin {

const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Calibration: return "calibration";
    case Split::Test: return "test";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "calibration") return Split::Calibration;
  if (s == "test") return Split::Test;
  throw InvalidConfig("split", "unknown split label '" + s + "'");
}

std::vector<const DemandScenario*> ScenarioSet::with_label(Split s) const {
  std::vector<const DemandScenario*> out;
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    if (split[i] == s) out.push_back(&scenarios[i]);
  }
  return out;
}

namespace {

template <std::size_t N>
std::array<double, N> normalized(std::array<double, N> raw) {
  const double mean = std::accumulate(raw.begin(), raw.end(), 0.0) / static_cast<double>(N);
  for (auto& v : raw) v /= mean;
  return raw;
}

std::array<double, 168> build_weekly() {
  // Monday..Sunday.
  constexpr std::array<double, 7> day = {1.2, 1.2, 1.2, 1.2, 1.1, 0.7, 0.5};
  std::array<double, 168> raw{};
  for (std::size_t h = 0; h < 168; ++h) raw[h] = day[h / 24];
  return normalized(raw);
}

}  // namespace

const std::array<double, 24>& diurnal_shape(NodeClass c) {
  static const auto residential = normalized(std::array<double, 24>{
      0.55, 0.45, 0.40, 0.40, 0.45, 0.70, 1.20, 1.75, 1.55, 1.20, 1.00, 0.95,
      1.00, 0.95, 0.90, 0.90, 1.00, 1.25, 1.55, 1.70, 1.45, 1.15, 0.85, 0.65});
  static const auto commercial = normalized(std::array<double, 24>{
      0.35, 0.30, 0.30, 0.30, 0.35, 0.45, 0.65, 0.95, 1.30, 1.55, 1.70, 1.80,
      1.85, 1.90, 1.80, 1.70, 1.55, 1.30, 0.95, 0.70, 0.55, 0.45, 0.40, 0.35});
  return c == NodeClass::Residential ? residential : commercial;
}

const std::array<double, 168>& weekly_shape() {
  static const auto table = build_weekly();
  return table;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream, std::uint64_t index) {
  // splitmix64 over the three words.
  auto mix = [](std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ stream) ^ index);
}

void GenConfig::validate() const {
  if (n_scenarios < 1) throw InvalidConfig("generator.n_scenarios", "must be at least 1");
  if (horizon_hours < 2) throw InvalidConfig("generator.horizon_hours", "must be at least 2");
  if (!(diurnal_amplitude >= 0.0 && diurnal_amplitude < 1.0)) {
    throw InvalidConfig("generator.diurnal_amplitude", "must lie in [0, 1)");
  }
  if (!(weekly_amplitude >= 0.0 && weekly_amplitude < 1.0)) {
    throw InvalidConfig("generator.weekly_amplitude", "must lie in [0, 1)");
  }
  if (!(noise_cv >= 0.0) || !std::isfinite(noise_cv)) throw InvalidConfig("generator.noise_cv", "must be >= 0");
  if (!(commercial_fraction >= 0.0 && commercial_fraction <= 1.0)) {
    throw InvalidConfig("generator.commercial_fraction", "must lie in [0, 1]");
  }
  if (!(commercial_noise_scale >= 0.0)) throw InvalidConfig("generator.commercial_noise_scale", "must be >= 0");
  if (!(demand_scale > 0.0)) throw InvalidConfig("generator.demand_scale", "must be > 0");
}

std::vector<NodeClass> assign_node_classes(std::size_t junctions, double commercial_fraction, std::uint64_t seed) {
  std::vector<std::size_t> order(junctions);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(seed, 0xC1A55ULL, 0));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_com = static_cast<std::size_t>(std::lround(commercial_fraction * static_cast<double>(junctions)));
  std::vector<NodeClass> out(junctions, NodeClass::Residential);
  for (std::size_t k = 0; k < n_com && k < junctions; ++k) out[order[k]] = NodeClass::Commercial;
  return out;
}

ScenarioSet generate_scenarios(const NetworkModel& net, const GenConfig& cfg) {
  cfg.validate();
  const auto base = net.base_demands();
  const auto nj = base.size();
  ScenarioSet set;
  set.node_class = assign_node_classes(nj, cfg.commercial_fraction, cfg.seed);
  const auto& week = weekly_shape();

  for (int s = 0; s < cfg.n_scenarios; ++s) {
    DemandScenario sc;
    sc.scenario_id = s;
    sc.demands.resize(cfg.horizon_hours, static_cast<Eigen::Index>(nj));
    for (std::size_t i = 0; i < nj; ++i) {
      const auto cls = set.node_class[i];
      const auto& day = diurnal_shape(cls);
      const double cv = cfg.noise_cv * (cls == NodeClass::Commercial ? cfg.commercial_noise_scale : 1.0);
      std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(s) + 1, i));
      std::normal_distribution<double> eta(0.0, 1.0);
      for (int t = 0; t < cfg.horizon_hours; ++t) {
        const double d = 1.0 + cfg.diurnal_amplitude * (day[static_cast<std::size_t>(t % 24)] - 1.0);
        const double w = 1.0 + cfg.weekly_amplitude * (week[static_cast<std::size_t>(t % 168)] - 1.0);
        const double noise = std::max(0.0, 1.0 + cv * eta(rng));
        sc.demands(t, static_cast<Eigen::Index>(i)) = cfg.demand_scale * base[i] * d * w * noise;
      }
    }
    set.scenarios.push_back(std::move(sc));
    set.split.push_back(Split::Train);
  }
  return set;
}

ScenarioSet split_scenarios(ScenarioSet set, const SplitFractions& f) {
  if (!(f.train > 0.0 && f.calibration > 0.0 && f.test > 0.0) ||
      std::abs(f.train + f.calibration + f.test - 1.0) > 1e-9) {
    throw InvalidConfig("split", "fractions must be positive and sum to 1");
  }
  const auto n = static_cast<long>(set.scenarios.size());
  const long n_cal = std::max(1L, std::lround(static_cast<double>(n) * f.calibration));
  const long n_test = std::max(1L, std::lround(static_cast<double>(n) * f.test));
  const long n_train = n - n_cal - n_test;
  if (n_train < 1) {
    throw TooFewScenarios(std::to_string(n) + " scenarios cannot fill train, calibration and test splits");
  }
  std::vector<std::size_t> order(set.scenarios.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return set.scenarios[a].scenario_id < set.scenarios[b].scenario_id;
  });
  set.split.assign(set.scenarios.size(), Split::Train);
  for (long k = 0; k < n; ++k) {
    const auto idx = order[static_cast<std::size_t>(k)];
    set.split[idx] = k < n_train ? Split::Train : (k < n_train + n_cal ? Split::Calibration : Split::Test);
  }
  return set;
}

DemandMatrix inject_noise(const DemandMatrix& series, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw InvalidConfig("sigma", "must be >= 0");
  if (sigma == 0.0) return series;
  DemandMatrix out(series.rows(), series.cols());
  std::mt19937_64 rng(derive_seed(seed, 0x5E45ULL, 0));
  std::normal_distribution<double> eta(0.0, 1.0);
  for (Eigen::Index j = 0; j < series.cols(); ++j) {
    for (Eigen::Index t = 0; t < series.rows(); ++t) {
      out(t, j) = std::max(0.0, series(t, j) * (1.0 + sigma * eta(rng)));
    }
  }
  return out;
}

std::string demand_csv(const DemandMatrix& demands) {
  std::vector<std::string> header{"hour"};
  for (Eigen::Index j = 0; j < demands.cols(); ++j) header.push_back("node_" + std::to_string(j));
  CsvWriter csv(std::move(header));
  for (Eigen::Index t = 0; t < demands.rows(); ++t) {
    csv.cell(static_cast<long long>(t));
    for (Eigen::Index j = 0; j < demands.cols(); ++j) csv.cell(demands(t, j));
    csv.end_row();
  }
  return csv.str();
}

DemandMatrix parse_demand_csv(const std::string& text) {
  const auto table = parse_csv(text);
  if (table.header.empty() || table.header[0] != "hour") throw MissingArtifact("demand csv lacks an 'hour' column");
  const auto cols = static_cast<Eigen::Index>(table.header.size() - 1);
  DemandMatrix m(static_cast<Eigen::Index>(table.rows.size()), cols);
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    if (table.rows[r].size() != table.header.size()) throw MissingArtifact("ragged demand csv row");
    for (Eigen::Index j = 0; j < cols; ++j) {
      m(static_cast<Eigen::Index>(r), j) = parse_double(table.rows[r][static_cast<std::size_t>(j) + 1]);
    }
  }
  return m;
}

void write_scenario_archive(const ScenarioSet& set, const GenConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["seed"] = cfg.seed;
  manifest["config"] = {{"n_scenarios", cfg.n_scenarios},
                        {"horizon_hours", cfg.horizon_hours},
                        {"diurnal_amplitude", cfg.diurnal_amplitude},
                        {"weekly_amplitude", cfg.weekly_amplitude},
                        {"noise_cv", cfg.noise_cv},
                        {"commercial_fraction", cfg.commercial_fraction},
                        {"commercial_noise_scale", cfg.commercial_noise_scale},
                        {"demand_scale", cfg.demand_scale}};
  nlohmann::json scen = nlohmann::json::array();
  for (std::size_t i = 0; i < set.scenarios.size(); ++i) {
    const auto file = "scenario_" + std::to_string(set.scenarios[i].scenario_id) + ".csv";
    scen.push_back({{"id", set.scenarios[i].scenario_id}, {"file", file}, {"split", to_string(set.split[i])}});
    write_text_file(dir / file, demand_csv(set.scenarios[i].demands));
  }
  manifest["scenarios"] = scen;
  nlohmann::json classes = nlohmann::json::array();
  for (auto c : set.node_class) classes.push_back(c == NodeClass::Commercial ? "commercial" : "residential");
  manifest["node_class"] = classes;
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

ScenarioSet read_scenario_archive(const std::filesystem::path& dir) {
  const auto manifest = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
  ScenarioSet set;
  for (const auto& s : manifest.at("scenarios")) {
    DemandScenario sc;
    sc.scenario_id = s.at("id").get<int>();
    sc.demands = parse_demand_csv(read_text_file(dir / s.at("file").get<std::string>()));
    set.scenarios.push_back(std::move(sc));
    set.split.push_back(split_from_string(s.at("split").get<std::string>()));
  }
  for (const auto& c : manifest.at("node_class")) {
    set.node_class.push_back(c.get<std::string>() == "commercial" ? NodeClass::Commercial : NodeClass::Residential);
  }
  return set;
}

}  // namespace aquatwin

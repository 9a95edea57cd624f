#include "aquatwin/report.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>

#include "aquatwin/text_io.hpp"

namespace aquatwin {

namespace {

struct Group {
  const CellRecord* first = nullptr;
  std::vector<const CellRecord*> members;
};

std::vector<Group> group_cells(const std::vector<CellRecord>& cells, bool by_budget = true) {
  std::vector<Group> groups;
  for (const auto& c : cells) {
    auto it = std::find_if(groups.begin(), groups.end(), [&](const Group& g) {
      return g.first->method == c.method && g.first->network == c.network && g.first->sigma == c.sigma &&
             (!by_budget || g.first->budget == c.budget);
    });
    if (it == groups.end()) {
      groups.push_back({&c, {}});
      it = groups.end() - 1;
    }
    it->members.push_back(&c);
  }
  return groups;
}

MeanStd stat(const Group& g, const std::function<double(const CellRecord&)>& field) {
  std::vector<double> v;
  for (const auto* c : g.members) v.push_back(field(*c));
  return mean_std(v);
}

void key_cells(CsvWriter& csv, const Group& g) {
  csv.cell(g.first->method).cell(g.first->network).cell(g.first->budget_fraction).cell(g.first->budget).cell(
      g.first->sigma);
}

const std::vector<std::string> kKeyHeader{"method", "network", "budget_fraction", "budget_nodes", "sigma"};

std::vector<std::string> with_key(std::vector<std::string> tail) {
  auto h = kKeyHeader;
  h.insert(h.end(), tail.begin(), tail.end());
  return h;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fmt(double v, int precision = 3) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

}  // namespace

std::string table_demand_csv(const std::vector<CellRecord>& cells) {
  CsvWriter csv(with_key({"rmse_q_mean", "rmse_q_std", "n_seeds"}));
  for (const auto& g : group_cells(cells)) {
    const auto q = stat(g, [](const CellRecord& c) { return c.metrics.rmse_q; });
    key_cells(csv, g);
    csv.cell(q.mean).cell(q.std).cell(g.members.size());
    csv.end_row();
  }
  return csv.str();
}

std::string table_pressure_csv(const std::vector<CellRecord>& cells) {
  CsvWriter csv(with_key({"rmse_p_mean", "rmse_p_std", "nonconverged_steps", "n_seeds"}));
  for (const auto& g : group_cells(cells)) {
    const auto p = stat(g, [](const CellRecord& c) { return c.metrics.rmse_p; });
    std::size_t bad = 0;
    for (const auto* c : g.members) bad += c->metrics.nonconverged_steps;
    key_cells(csv, g);
    csv.cell(p.mean).cell(p.std).cell(bad).cell(g.members.size());
    csv.end_row();
  }
  return csv.str();
}

std::string table_safety_csv(const std::vector<CellRecord>& cells) {
  CsvWriter csv(with_key({"violation_rate_mean", "violation_rate_std", "coverage_mean", "coverage_std",
                          "coverage_all_mean", "interval_width_mean", "n_seeds"}));
  for (const auto& g : group_cells(cells)) {
    const auto v = stat(g, [](const CellRecord& c) { return c.metrics.violation_rate; });
    const auto cov = stat(g, [](const CellRecord& c) { return c.metrics.coverage; });
    const auto all = stat(g, [](const CellRecord& c) { return c.metrics.coverage_all; });
    const auto w = stat(g, [](const CellRecord& c) { return c.metrics.mean_width; });
    key_cells(csv, g);
    csv.cell(v.mean).cell(v.std).cell(cov.mean).cell(cov.std).cell(all.mean).cell(w.mean).cell(g.members.size());
    csv.end_row();
  }
  return csv.str();
}

std::string table_timing_csv(const std::vector<CellRecord>& cells) {
  CsvWriter csv(with_key({"component", "mean_ms", "p95_ms"}));
  using Pick = std::function<const ComponentStats&(const TimingProfile&)>;
  const std::vector<std::pair<std::string, Pick>> parts{
      {"inference", [](const TimingProfile& t) -> const ComponentStats& { return t.inference; }},
      {"uncertainty", [](const TimingProfile& t) -> const ComponentStats& { return t.uncertainty; }},
      {"selection", [](const TimingProfile& t) -> const ComponentStats& { return t.selection; }},
      {"hydraulic_solve", [](const TimingProfile& t) -> const ComponentStats& { return t.solve; }},
      {"total", [](const TimingProfile& t) -> const ComponentStats& { return t.total; }},
  };
  for (const auto& g : group_cells(cells)) {
    for (const auto& [name, pick] : parts) {
      const auto m = stat(g, [&](const CellRecord& c) { return pick(c.timing).mean; });
      const auto p = stat(g, [&](const CellRecord& c) { return pick(c.timing).p95; });
      key_cells(csv, g);
      csv.cell(name).cell(m.mean).cell(p.mean);
      csv.end_row();
    }
    const auto o = stat(g, [](const CellRecord& c) { return c.timing.overhead; });
    key_cells(csv, g);
    csv.cell("overhead_fraction").cell(o.mean).cell(o.mean);
    csv.end_row();
  }
  return csv.str();
}

std::string table_ablation_csv(const std::vector<CellRecord>& cells) {
  std::vector<std::uint64_t> seeds;
  for (const auto& c : cells) {
    if (std::find(seeds.begin(), seeds.end(), c.seed) == seeds.end()) seeds.push_back(c.seed);
  }
  std::vector<std::string> header{"variant",      "network",       "budget_fraction", "budget_nodes",
                                  "rmse_q_mean",  "rmse_q_std",    "rmse_p_mean",     "rmse_p_std",
                                  "coverage_mean", "coverage_std", "violation_rate_mean"};
  for (auto s : seeds) header.push_back("rmse_q_seed_" + std::to_string(s));
  for (auto s : seeds) header.push_back("coverage_seed_" + std::to_string(s));
  CsvWriter csv(header);
  for (const auto& g : group_cells(cells, false)) {
    const auto q = stat(g, [](const CellRecord& c) { return c.metrics.rmse_q; });
    const auto p = stat(g, [](const CellRecord& c) { return c.metrics.rmse_p; });
    const auto cov = stat(g, [](const CellRecord& c) { return c.metrics.coverage; });
    const auto v = stat(g, [](const CellRecord& c) { return c.metrics.violation_rate; });
    csv.cell(g.first->method).cell(g.first->network).cell(g.first->budget_fraction).cell(g.first->budget);
    csv.cell(q.mean).cell(q.std).cell(p.mean).cell(p.std).cell(cov.mean).cell(cov.std).cell(v.mean);
    const auto per_seed = [&](std::uint64_t s, auto field) {
      for (const auto* c : g.members) {
        if (c->seed == s) return field(*c);
      }
      return std::numeric_limits<double>::quiet_NaN();
    };
    for (auto s : seeds) csv.cell(per_seed(s, [](const CellRecord& c) { return c.metrics.rmse_q; }));
    for (auto s : seeds) csv.cell(per_seed(s, [](const CellRecord& c) { return c.metrics.coverage; }));
    csv.end_row();
  }
  return csv.str();
}

std::string table_sensitivity_csv(const std::vector<SensitivityRecord>& records) {
  CsvWriter csv({"alpha", "lookback", "rmse_q_mean", "rmse_q_std", "coverage_mean", "coverage_std",
                 "interval_width_mean", "n_seeds"});
  std::vector<std::pair<double, int>> keys;
  for (const auto& r : records) {
    const std::pair<double, int> k{r.alpha, r.lookback};
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
  }
  for (const auto& [alpha, lookback] : keys) {
    std::vector<double> q, cov, w;
    for (const auto& r : records) {
      if (r.alpha != alpha || r.lookback != lookback) continue;
      q.push_back(r.metrics.rmse_q);
      cov.push_back(r.metrics.coverage);
      w.push_back(r.metrics.mean_width);
    }
    const auto mq = mean_std(q);
    const auto mc = mean_std(cov);
    csv.cell(alpha).cell(lookback).cell(mq.mean).cell(mq.std).cell(mc.mean).cell(mc.std).cell(mean_std(w).mean).cell(
        q.size());
    csv.end_row();
  }
  return csv.str();
}

std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<ChartSeries>& series) {
  constexpr double W = 640, H = 400, left = 70, right = 160, top = 40, bottom = 55;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y1 = 0.0;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(y)) continue;
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y1 = std::max(y1, y);
    }
  }
  if (!std::isfinite(x0)) x0 = 0.0, x1 = 1.0;
  if (x1 == x0) x1 = x0 + 1.0;
  if (y1 <= 0.0) y1 = 1.0;
  y1 *= 1.1;
  const auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * (W - left - right); };
  const auto py = [&](double y) { return H - bottom - y / y1 * (H - top - bottom); };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape_xml(title)
     << "</text>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << H - bottom << "\" x2=\"" << W - right << "\" y2=\"" << H - bottom
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << H - bottom
     << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double yv = y1 * k / 4.0;
    const double xv = x0 + (x1 - x0) * k / 4.0;
    os << "<text x=\"" << left - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << fmt(yv) << "</text>\n";
    os << "<text x=\"" << px(xv) << "\" y=\"" << H - bottom + 16 << "\" text-anchor=\"middle\">" << fmt(xv)
       << "</text>\n";
  }
  os << "<text x=\"" << (left + W - right) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">"
     << escape_xml(x_label) << "</text>\n";
  os << "<text transform=\"translate(16," << (top + H - bottom) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
     << escape_xml(y_label) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = kPalette[k % std::size(kPalette)];
    std::ostringstream pts;
    for (const auto& [x, y] : series[k].points) {
      if (std::isfinite(y)) pts << px(x) << ',' << py(y) << ' ';
    }
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"" << pts.str() << "\"/>\n";
    for (const auto& [x, y] : series[k].points) {
      if (std::isfinite(y)) {
        os << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
      }
    }
    const double ly = top + 18.0 * static_cast<double>(k);
    os << "<rect x=\"" << W - right + 12 << "\" y=\"" << ly << "\" width=\"12\" height=\"12\" fill=\"" << color
       << "\"/>\n";
    os << "<text x=\"" << W - right + 30 << "\" y=\"" << ly + 10 << "\">" << escape_xml(series[k].name)
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string bar_chart_svg(const std::string& title, const std::string& y_label,
                          const std::vector<std::pair<std::string, double>>& bars) {
  constexpr double W = 640, H = 400, left = 70, right = 20, top = 40, bottom = 90;
  double y1 = 0.0;
  for (const auto& b : bars) {
    if (std::isfinite(b.second)) y1 = std::max(y1, b.second);
  }
  if (y1 <= 0.0) y1 = 1.0;
  y1 *= 1.1;
  const double slot = bars.empty() ? 1.0 : (W - left - right) / static_cast<double>(bars.size());
  const auto py = [&](double y) { return H - bottom - y / y1 * (H - top - bottom); };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape_xml(title)
     << "</text>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << H - bottom << "\" x2=\"" << W - right << "\" y2=\"" << H - bottom
     << "\" stroke=\"black\"/>\n";
  os << "<text transform=\"translate(16," << (top + H - bottom) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
     << escape_xml(y_label) << "</text>\n";
  for (std::size_t k = 0; k < bars.size(); ++k) {
    const double x = left + slot * static_cast<double>(k) + slot * 0.15;
    const double v = std::isfinite(bars[k].second) ? bars[k].second : 0.0;
    os << "<rect x=\"" << x << "\" y=\"" << py(v) << "\" width=\"" << slot * 0.7 << "\" height=\""
       << (H - bottom) - py(v) << "\" fill=\"" << kPalette[k % std::size(kPalette)] << "\"/>\n";
    os << "<text x=\"" << x + slot * 0.35 << "\" y=\"" << py(v) - 4 << "\" text-anchor=\"middle\">" << fmt(v)
       << "</text>\n";
    os << "<text transform=\"translate(" << x + slot * 0.35 << "," << H - bottom + 14
       << ") rotate(30)\" text-anchor=\"start\">" << escape_xml(bars[k].first) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace aquatwin

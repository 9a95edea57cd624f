#include "aquatwin/network.hpp"

#include <cmath>
#include <filesystem>
#include <limits>
#include <optional>
#include <queue>
#include <set>
#include <sstream>

#include "aquatwin/error.hpp"
#include "aquatwin/text_io.hpp"

namespace aquatwin {

NetworkModel::NetworkModel(std::string title, std::vector<Node> nodes, std::vector<Pipe> pipes)
    : title_(std::move(title)), nodes_(std::move(nodes)), pipes_(std::move(pipes)) {
  adjacency_.resize(nodes_.size());
  junction_of_node_.assign(nodes_.size(), -1);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    nodes_[i].id.index = static_cast<int>(i);
    by_label_.emplace(nodes_[i].id.label, static_cast<int>(i));
    if (nodes_[i].is_junction()) {
      junction_of_node_[i] = static_cast<int>(junctions_.size());
      junctions_.push_back(static_cast<int>(i));
    }
  }
  const auto n = static_cast<int>(nodes_.size());
  for (std::size_t k = 0; k < pipes_.size(); ++k) {
    auto& p = pipes_[k];
    p.id = static_cast<int>(k);
    if (p.from >= 0 && p.from < n) adjacency_[static_cast<std::size_t>(p.from)].push_back(p.id);
    if (p.to >= 0 && p.to < n && p.to != p.from) adjacency_[static_cast<std::size_t>(p.to)].push_back(p.id);
  }
}

int NetworkModel::find(std::string_view label) const {
  const auto it = by_label_.find(label);
  return it == by_label_.end() ? -1 : it->second;
}

std::vector<double> NetworkModel::base_demands() const {
  std::vector<double> out;
  out.reserve(junctions_.size());
  for (int j : junctions_) out.push_back(nodes_[static_cast<std::size_t>(j)].base_demand);
  return out;
}

std::vector<std::string> NetworkModel::junction_labels() const {
  std::vector<std::string> out;
  out.reserve(junctions_.size());
  for (int j : junctions_) out.push_back(nodes_[static_cast<std::size_t>(j)].id.label);
  return out;
}

namespace {

enum class Section {
  None, Title, Junctions, Reservoirs, Tanks, Pipes, Patterns, Demands, Coordinates, Pumps, Valves, End, Other
};

Section section_from_name(const std::string& upper) {
  if (upper == "TITLE") return Section::Title;
  if (upper == "JUNCTIONS") return Section::Junctions;
  if (upper == "RESERVOIRS") return Section::Reservoirs;
  if (upper == "TANKS") return Section::Tanks;
  if (upper == "PIPES") return Section::Pipes;
  if (upper == "PATTERNS") return Section::Patterns;
  if (upper == "DEMANDS") return Section::Demands;
  if (upper == "COORDINATES") return Section::Coordinates;
  if (upper == "PUMPS") return Section::Pumps;
  if (upper == "VALVES") return Section::Valves;
  if (upper == "END") return Section::End;
  return Section::Other;
}

struct PendingPipe {
  std::string label;
  std::string from;
  std::string to;
  double length;
  double diameter_mm;
  double roughness;
  std::size_t line;
};

class InpReader {
 public:
  explicit InpReader(std::vector<std::string>* warnings) : warnings_(warnings) {}

  NetworkModel read(std::string_view text) {
    std::size_t line_no = 0;
    for (auto raw : split_char(text, '\n')) {
      ++line_no;
      line_ = line_no;
      if (const auto semi = raw.find(';'); semi != std::string_view::npos) raw = raw.substr(0, semi);
      const auto line = trim(raw);
      if (line.empty()) continue;
      if (line.front() == '[') {
        const auto close = line.find(']');
        if (close == std::string_view::npos) fail_malformed("unterminated section header");
        section_name_ = to_upper(trim(line.substr(1, close - 1)));
        section_ = section_from_name(section_name_);
        if (section_ == Section::Other && warnings_) {
          warnings_->push_back("line " + std::to_string(line_no) + ": skipping unsupported section [" +
                               section_name_ + "]");
        }
        continue;
      }
      if (section_ == Section::End) break;
      if (section_ == Section::Title) {
        if (!title_.empty()) title_ += '\n';
        title_ += std::string(line);
        continue;
      }
      handle_data(split_ws(line));
    }
    return finish();
  }

 private:
  [[noreturn]] void fail_malformed(const std::string& what) const {
    throw ParseError(ParseError::Kind::MalformedSection, section_name_, line_, "",
                     "line " + std::to_string(line_) + " in [" + section_name_ + "]: " + what);
  }

  double number(std::string_view tok) const {
    try {
      const double v = parse_double(tok);
      if (!std::isfinite(v)) fail_malformed("non-finite value '" + std::string(tok) + "'");
      return v;
    } catch (const std::invalid_argument&) {
      fail_malformed("expected a number, got '" + std::string(tok) + "'");
    }
  }

  void need(const std::vector<std::string_view>& toks, std::size_t n) const {
    if (toks.size() < n) {
      fail_malformed("expected at least " + std::to_string(n) + " columns, got " + std::to_string(toks.size()));
    }
  }

  void add_node(Node node) {
    if (!labels_.insert(node.id.label).second) {
      throw ParseError(ParseError::Kind::DuplicateLabel, section_name_, line_, node.id.label,
                       "line " + std::to_string(line_) + ": duplicate node label '" + node.id.label + "'");
    }
    nodes_.push_back(std::move(node));
  }

  void handle_data(const std::vector<std::string_view>& toks) {
    switch (section_) {
      case Section::None:
        fail_malformed("data outside of any section");
      case Section::Junctions: {
        need(toks, 2);
        Node n;
        n.id.label = std::string(toks[0]);
        n.kind = NodeKind::Junction;
        n.elevation = number(toks[1]);
        n.base_demand = toks.size() > 2 ? number(toks[2]) : 0.0;
        if (toks.size() > 3) n.pattern = std::string(toks[3]);
        if (n.base_demand < 0.0) {
          throw ParseError(ParseError::Kind::InvalidAttribute, section_name_, line_, n.id.label,
                           "line " + std::to_string(line_) + ": negative base demand at '" + n.id.label + "'");
        }
        add_node(std::move(n));
        break;
      }
      case Section::Reservoirs: {
        need(toks, 2);
        Node n;
        n.id.label = std::string(toks[0]);
        n.kind = NodeKind::FixedHeadSource;
        n.source_type = SourceType::Reservoir;
        n.fixed_head = number(toks[1]);
        n.elevation = n.fixed_head;
        if (toks.size() > 2) n.pattern = std::string(toks[2]);
        add_node(std::move(n));
        break;
      }
      case Section::Tanks: {
        need(toks, 3);
        Node n;
        n.id.label = std::string(toks[0]);
        n.kind = NodeKind::FixedHeadSource;
        n.source_type = SourceType::Tank;
        n.elevation = number(toks[1]);
        n.fixed_head = n.elevation + number(toks[2]);
        add_node(std::move(n));
        break;
      }
      case Section::Pipes: {
        need(toks, 6);
        PendingPipe p{std::string(toks[0]), std::string(toks[1]), std::string(toks[2]),
                      number(toks[3]),      number(toks[4]),      number(toks[5]), line_};
        if (toks.size() > 7 && to_upper(toks[7]) == "CLOSED") {
          if (warnings_) warnings_->push_back("line " + std::to_string(line_) + ": closed pipe '" + p.label + "' dropped");
          break;
        }
        if (p.from == p.to) {
          throw ParseError(ParseError::Kind::InvalidAttribute, section_name_, line_, p.label,
                           "line " + std::to_string(line_) + ": pipe '" + p.label + "' connects a node to itself");
        }
        if (!(p.length > 0.0) || !(p.diameter_mm > 0.0) || !(p.roughness > 0.0)) {
          throw ParseError(ParseError::Kind::InvalidAttribute, section_name_, line_, p.label,
                           "line " + std::to_string(line_) + ": pipe '" + p.label +
                               "' needs positive length, diameter and roughness");
        }
        if (!pipe_labels_.insert(p.label).second) {
          throw ParseError(ParseError::Kind::DuplicateLabel, section_name_, line_, p.label,
                           "line " + std::to_string(line_) + ": duplicate pipe label '" + p.label + "'");
        }
        pipes_.push_back(std::move(p));
        break;
      }
      case Section::Patterns: {
        need(toks, 2);
        auto& values = patterns_[std::string(toks[0])];
        for (std::size_t i = 1; i < toks.size(); ++i) values.push_back(number(toks[i]));
        break;
      }
      case Section::Demands: {
        need(toks, 2);
        demands_.push_back({std::string(toks[0]), number(toks[1]), toks.size() > 2 ? std::string(toks[2]) : ""});
        break;
      }
      case Section::Pumps:
      case Section::Valves:
        throw ParseError(ParseError::Kind::UnsupportedElement, section_name_, line_, std::string(toks[0]),
                         "line " + std::to_string(line_) + ": [" + section_name_ + "] elements are not supported ('" +
                             std::string(toks[0]) + "')");
      case Section::Coordinates:
      case Section::Other:
      case Section::Title:
      case Section::End:
        break;
    }
  }

  NetworkModel finish() {
    std::map<std::string, int> index;
    for (std::size_t i = 0; i < nodes_.size(); ++i) index.emplace(nodes_[i].id.label, static_cast<int>(i));
    std::vector<Pipe> pipes;
    pipes.reserve(pipes_.size());
    for (const auto& pp : pipes_) {
      for (const auto* end : {&pp.from, &pp.to}) {
        if (!index.count(*end)) {
          throw ParseError(ParseError::Kind::DanglingPipeEndpoint, "PIPES", pp.line, *end,
                           "line " + std::to_string(pp.line) + ": pipe '" + pp.label +
                               "' references undefined node '" + *end + "'");
        }
      }
      Pipe p;
      p.label = pp.label;
      p.from = index.at(pp.from);
      p.to = index.at(pp.to);
      p.length = pp.length;
      p.diameter = pp.diameter_mm / 1000.0;
      p.roughness = pp.roughness;
      pipes.push_back(std::move(p));
    }
    for (const auto& d : demands_) {
      if (!index.count(d.node)) {
        throw ParseError(ParseError::Kind::DanglingPipeEndpoint, "DEMANDS", 0, d.node,
                         "[DEMANDS] references undefined node '" + d.node + "'");
      }
    }
    bool has_source = false;
    for (const auto& n : nodes_) has_source = has_source || !n.is_junction();
    if (!has_source) {
      throw ParseError(ParseError::Kind::NoSource, "", 0, "", "network has no reservoir or tank");
    }
    NetworkModel net(title_, std::move(nodes_), std::move(pipes));
    net.patterns = std::move(patterns_);
    net.extra_demands = std::move(demands_);
    if (warnings_) {
      for (const auto& f : validate_network(net).findings) warnings_->push_back(f.message);
    }
    return net;
  }

  std::vector<std::string>* warnings_;
  Section section_ = Section::None;
  std::string section_name_ = "<none>";
  std::size_t line_ = 0;
  std::string title_;
  std::vector<Node> nodes_;
  std::set<std::string> labels_;
  std::set<std::string> pipe_labels_;
  std::vector<PendingPipe> pipes_;
  std::map<std::string, std::vector<double>> patterns_;
  std::vector<DemandEntry> demands_;
};

// Millimetre text for a diameter stored in metres that parses back to the
// identical double after division by 1000.
std::string diameter_mm_text(double diameter_m) {
  double mm = diameter_m * 1000.0;
  for (int step = 0; step < 64 && mm / 1000.0 != diameter_m; ++step) {
    mm = (mm / 1000.0 < diameter_m) ? std::nextafter(mm, std::numeric_limits<double>::infinity())
                                    : std::nextafter(mm, -std::numeric_limits<double>::infinity());
  }
  return format_double(mm);
}

}  // namespace

NetworkModel parse_inp(std::string_view text, std::vector<std::string>* warnings) {
  return InpReader(warnings).read(text);
}

std::string serialize_inp(const NetworkModel& net) {
  std::ostringstream out;
  if (!net.title().empty()) out << "[TITLE]\n" << net.title() << "\n\n";

  out << "[JUNCTIONS]\n;ID\tElev\tDemand\tPattern\n";
  for (const auto& n : net.nodes()) {
    if (!n.is_junction()) continue;
    out << n.id.label << '\t' << format_double(n.elevation) << '\t' << format_double(n.base_demand);
    if (!n.pattern.empty()) out << '\t' << n.pattern;
    out << '\n';
  }
  out << "\n[RESERVOIRS]\n;ID\tHead\tPattern\n";
  for (const auto& n : net.nodes()) {
    if (n.is_junction() || n.source_type != SourceType::Reservoir) continue;
    out << n.id.label << '\t' << format_double(n.fixed_head);
    if (!n.pattern.empty()) out << '\t' << n.pattern;
    out << '\n';
  }
  out << "\n[TANKS]\n;ID\tElev\tInitLvl\tMinLvl\tMaxLvl\tDiam\tMinVol\n";
  for (const auto& n : net.nodes()) {
    if (n.is_junction() || n.source_type != SourceType::Tank) continue;
    const auto level = format_double(n.fixed_head - n.elevation);
    out << n.id.label << '\t' << format_double(n.elevation) << '\t' << level << "\t0\t" << level << "\t1\t0\n";
  }
  out << "\n[PIPES]\n;ID\tNode1\tNode2\tLength\tDiameter\tRoughness\tMinorLoss\tStatus\n";
  for (const auto& p : net.pipes()) {
    out << p.label << '\t' << net.node(p.from).id.label << '\t' << net.node(p.to).id.label << '\t'
        << format_double(p.length) << '\t' << diameter_mm_text(p.diameter) << '\t' << format_double(p.roughness)
        << "\t0\tOpen\n";
  }
  if (!net.patterns.empty()) {
    out << "\n[PATTERNS]\n";
    for (const auto& [label, values] : net.patterns) {
      for (std::size_t i = 0; i < values.size(); i += 6) {
        out << label;
        for (std::size_t k = i; k < std::min(values.size(), i + 6); ++k) out << '\t' << format_double(values[k]);
        out << '\n';
      }
    }
  }
  if (!net.extra_demands.empty()) {
    out << "\n[DEMANDS]\n";
    for (const auto& d : net.extra_demands) {
      out << d.node << '\t' << format_double(d.demand);
      if (!d.pattern.empty()) out << '\t' << d.pattern;
      out << '\n';
    }
  }
  out << "\n[END]\n";
  return out.str();
}

ValidationReport validate_network(const NetworkModel& net) {
  using Kind = ValidationFinding::Kind;
  ValidationReport report;
  const auto n = static_cast<int>(net.node_count());

  for (const auto& node : net.nodes()) {
    if (!std::isfinite(node.elevation) || (!node.is_junction() && !std::isfinite(node.fixed_head))) {
      report.findings.push_back({Kind::NonFiniteAttribute, node.id.label,
                                 "node '" + node.id.label + "' has a non-finite elevation or head"});
    }
    if (node.is_junction() && !(node.base_demand >= 0.0)) {
      report.findings.push_back({Kind::NonPositiveAttribute, node.id.label,
                                 "junction '" + node.id.label + "' has a negative base demand"});
    }
  }
  bool bad_endpoints = false;
  for (const auto& p : net.pipes()) {
    if (p.from < 0 || p.from >= n || p.to < 0 || p.to >= n) {
      report.findings.push_back({Kind::BadEndpoint, p.label, "pipe '" + p.label + "' has an endpoint out of range"});
      bad_endpoints = true;
      continue;
    }
    if (p.from == p.to) {
      report.findings.push_back({Kind::SelfLoop, p.label, "pipe '" + p.label + "' connects a node to itself"});
    }
    if (!(p.length > 0.0) || !(p.diameter > 0.0) || !(p.roughness > 0.0)) {
      report.findings.push_back({Kind::NonPositiveAttribute, p.label,
                                 "pipe '" + p.label + "' needs positive length, diameter and roughness"});
    }
  }
  if (net.source_count() == 0) {
    report.findings.push_back({Kind::NoSource, "", "network has no fixed-head source"});
    return report;
  }
  if (bad_endpoints) return report;

  // Every node must reach a fixed-head source.
  std::vector<char> seen(net.node_count(), 0);
  std::queue<int> frontier;
  for (const auto& node : net.nodes()) {
    if (!node.is_junction()) {
      seen[static_cast<std::size_t>(node.id.index)] = 1;
      frontier.push(node.id.index);
    }
  }
  while (!frontier.empty()) {
    const int u = frontier.front();
    frontier.pop();
    for (int k : net.adjacency()[static_cast<std::size_t>(u)]) {
      const auto& p = net.pipe(k);
      const int v = p.from == u ? p.to : p.from;
      if (!seen[static_cast<std::size_t>(v)]) {
        seen[static_cast<std::size_t>(v)] = 1;
        frontier.push(v);
      }
    }
  }
  for (const auto& node : net.nodes()) {
    if (!seen[static_cast<std::size_t>(node.id.index)]) {
      report.findings.push_back({Kind::Disconnected, node.id.label,
                                 "node '" + node.id.label + "' is not connected to any fixed-head source"});
    }
  }
  return report;
}

NetworkModel grid_network(int rows, int cols, double spacing_m, double base_demand_lps) {
  if (rows < 1 || cols < 1) throw InvalidConfig("grid", "rows and cols must be positive");
  std::vector<Node> nodes;
  std::vector<Pipe> pipes;
  const auto label = [](int r, int c) { return "J" + std::to_string(r) + "_" + std::to_string(c); };
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      Node n;
      n.id.label = label(r, c);
      n.elevation = 0.0;
      n.base_demand = base_demand_lps;
      nodes.push_back(std::move(n));
    }
  }
  Node src;
  src.id.label = "R1";
  src.kind = NodeKind::FixedHeadSource;
  src.fixed_head = 80.0;
  src.elevation = 80.0;
  nodes.push_back(src);

  const double total = base_demand_lps * rows * cols;
  // Feeder sized for about 1.5 m/s at total demand.
  const double feeder_d = std::max(0.3, std::sqrt(4.0 * total / 1000.0 / (3.141592653589793 * 1.5)));
  int k = 0;
  const auto add = [&](int from, int to, double length, double diameter) {
    Pipe p;
    p.label = "P" + std::to_string(++k);
    p.from = from;
    p.to = to;
    p.length = length;
    p.diameter = diameter;
    p.roughness = 120.0;
    pipes.push_back(std::move(p));
  };
  add(rows * cols, 0, spacing_m, feeder_d);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const int i = r * cols + c;
      // Mains along the first row and column, distribution pipes elsewhere.
      if (c + 1 < cols) add(i, i + 1, spacing_m, r == 0 ? feeder_d * 0.6 : 0.2);
      if (r + 1 < rows) add(i, i + cols, spacing_m, c == 0 ? feeder_d * 0.6 : 0.2);
    }
  }
  return NetworkModel("grid " + std::to_string(rows) + "x" + std::to_string(cols), std::move(nodes),
                      std::move(pipes));
}

NetworkModel load_network(const std::string& name_or_path) {
  if (name_or_path == "hanoi" || name_or_path == "builtin:hanoi") return hanoi_builtin();
  if (!std::filesystem::exists(name_or_path)) {
    throw MissingArtifact("network '" + name_or_path + "' is neither a builtin name nor an existing file");
  }
  return parse_inp(read_text_file(name_or_path));
}

}  // namespace aquatwin

#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace aquatwin {

/// Dense handle of a node plus the identifier it carried in the INP file.
struct NodeId {
  int index = -1;
  std::string label;

  friend bool operator==(const NodeId&, const NodeId&) = default;
};

enum class NodeKind { Junction, FixedHeadSource };

/// How a fixed-head source was declared. Only used to write the node back out.
enum class SourceType { Reservoir, Tank };

struct Node {
  NodeId id;
  NodeKind kind = NodeKind::Junction;
  SourceType source_type = SourceType::Reservoir;
  double elevation = 0.0;    // m
  double base_demand = 0.0;  // L/s, junctions only
  double fixed_head = 0.0;   // m, sources only
  std::string pattern;       // demand pattern label from the INP, may be empty

  bool is_junction() const noexcept { return kind == NodeKind::Junction; }

  friend bool operator==(const Node&, const Node&) = default;
};

struct Pipe {
  int id = -1;
  std::string label;
  int from = -1;
  int to = -1;
  double length = 0.0;     // m
  double diameter = 0.0;   // m
  double roughness = 0.0;  // Hazen-Williams C

  friend bool operator==(const Pipe&, const Pipe&) = default;
};

/// An extra demand category from a [DEMANDS] section, kept for round trips.
struct DemandEntry {
  std::string node;
  double demand = 0.0;
  std::string pattern;

  friend bool operator==(const DemandEntry&, const DemandEntry&) = default;
};

/// Water distribution network: junctions and fixed-head sources joined by pipes.
///
/// Nodes are indexed densely in order of first declaration. Junctions also get
/// a second dense index (0..J-1) in the same order; demand vectors, demand
/// matrices and sampling sets are all expressed in junction indices.
class NetworkModel {
 public:
  NetworkModel() = default;
  NetworkModel(std::string title, std::vector<Node> nodes, std::vector<Pipe> pipes);

  const std::string& title() const noexcept { return title_; }
  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  const std::vector<Pipe>& pipes() const noexcept { return pipes_; }
  const Node& node(int index) const { return nodes_.at(static_cast<std::size_t>(index)); }
  const Pipe& pipe(int index) const { return pipes_.at(static_cast<std::size_t>(index)); }

  std::size_t node_count() const noexcept { return nodes_.size(); }
  std::size_t pipe_count() const noexcept { return pipes_.size(); }
  std::size_t junction_count() const noexcept { return junctions_.size(); }
  std::size_t source_count() const noexcept { return nodes_.size() - junctions_.size(); }

  /// Incident pipe indices for each node.
  const std::vector<std::vector<int>>& adjacency() const noexcept { return adjacency_; }
  /// Node index of every junction, in junction order.
  const std::vector<int>& junctions() const noexcept { return junctions_; }
  /// Junction index of a node, or -1 for sources.
  int junction_index(int node) const { return junction_of_node_.at(static_cast<std::size_t>(node)); }
  /// Node index for a label, or -1.
  int find(std::string_view label) const;

  std::vector<double> base_demands() const;
  std::vector<std::string> junction_labels() const;

  std::map<std::string, std::vector<double>> patterns;
  std::vector<DemandEntry> extra_demands;

  friend bool operator==(const NetworkModel& a, const NetworkModel& b) {
    return a.title_ == b.title_ && a.nodes_ == b.nodes_ && a.pipes_ == b.pipes_ &&
           a.patterns == b.patterns && a.extra_demands == b.extra_demands;
  }

 private:
  std::string title_;
  std::vector<Node> nodes_;
  std::vector<Pipe> pipes_;
  std::vector<std::vector<int>> adjacency_;
  std::vector<int> junctions_;
  std::vector<int> junction_of_node_;
  std::map<std::string, int, std::less<>> by_label_;
};

struct ValidationFinding {
  enum class Kind { Disconnected, NoSource, NonPositiveAttribute, NonFiniteAttribute, SelfLoop, BadEndpoint };
  Kind kind;
  std::string subject;  // node or pipe label
  std::string message;
};

struct ValidationReport {
  std::vector<ValidationFinding> findings;
  bool ok() const noexcept { return findings.empty(); }
};

/// Parse EPANET 2.x INP text (SI units, flows in LPS, pipe diameters in mm).
///
/// Unknown sections are skipped and reported through `warnings` when given.
/// Pumps and valves raise ParseError::Kind::UnsupportedElement. The returned
/// model has passed validate_network.
NetworkModel parse_inp(std::string_view text, std::vector<std::string>* warnings = nullptr);

/// Write the supported section subset back out. parse_inp(serialize_inp(m)) == m.
std::string serialize_inp(const NetworkModel& net);

ValidationReport validate_network(const NetworkModel& net);

/// The Hanoi benchmark: one 100 m reservoir, 31 junctions, 34 pipes, C = 130.
NetworkModel hanoi_builtin();
/// INP text of the embedded Hanoi network.
std::string_view hanoi_inp_text();

/// Rectangular grid of junctions fed by one reservoir at a corner. Used for
/// scale tests; rows*cols junctions and one source.
NetworkModel grid_network(int rows, int cols, double spacing_m = 200.0, double base_demand_lps = 2.0);

/// Builtin name ("hanoi") or a path to an INP file.
NetworkModel load_network(const std::string& name_or_path);

}  // namespace aquatwin

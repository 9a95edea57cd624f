#include <doctest.h>

#include <algorithm>
#include <string>

#include "../support/oracles.hpp"
#include "aquatwin/error.hpp"
#include "aquatwin/network.hpp"
#include "aquatwin/text_io.hpp"

using namespace aquatwin;

namespace {

const char* kTwoNode = R"([TITLE]
two node
[JUNCTIONS]
;ID  Elev  Demand
 J1  0     10
[RESERVOIRS]
 R1  100
[PIPES]
 P1  R1  J1  1000  300  100
[END]
)";

ParseError::Kind parse_error_kind(const std::string& text) {
  try {
    parse_inp(text);
  } catch (const ParseError& e) {
    return e.kind();
  }
  FAIL("expected a ParseError");
  return ParseError::Kind::MalformedSection;
}

}  // namespace

TEST_SUITE("network") {
  TEST_CASE("minimal two-node network") {
    const auto net = parse_inp(kTwoNode);
    CHECK(net.node_count() == 2);
    CHECK(net.pipe_count() == 1);
    CHECK(net.junction_count() == 1);
    CHECK(net.node(0).id.label == "J1");
    CHECK(net.node(0).base_demand == 10.0);
    CHECK(net.node(1).fixed_head == 100.0);
    CHECK(net.pipe(0).diameter == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(net.pipe(0).length == 1000.0);
    CHECK(net.adjacency()[0] == std::vector<int>{0});
    CHECK(net.adjacency()[1] == std::vector<int>{0});
  }

  TEST_CASE("dangling endpoint names the missing node") {
    const std::string text = "[JUNCTIONS]\nJ1 0 1\n[RESERVOIRS]\nR1 50\n[PIPES]\nP1 R1 J1 10 100 100\nP2 J1 X9 10 100 100\n";
    try {
      parse_inp(text);
      FAIL("expected DanglingPipeEndpoint");
    } catch (const ParseError& e) {
      CHECK(e.kind() == ParseError::Kind::DanglingPipeEndpoint);
      CHECK(e.label() == "X9");
      CHECK(std::string(e.what()).find("X9") != std::string::npos);
    }
  }

  TEST_CASE("parse errors carry kind, section and line") {
    CHECK(parse_error_kind("[JUNCTIONS]\nJ1 0 1\nJ1 0 2\n[RESERVOIRS]\nR 5\n[PIPES]\nP R J1 1 100 100\n") ==
          ParseError::Kind::DuplicateLabel);
    CHECK(parse_error_kind("[JUNCTIONS]\nJ1 0 1\nJ2 0 1\n[PIPES]\nP J1 J2 1 100 100\n") == ParseError::Kind::NoSource);
    CHECK(parse_error_kind("[JUNCTIONS]\nJ1 0 1\n[RESERVOIRS]\nR 5\n[PUMPS]\nPU R J1 HEAD 1\n") ==
          ParseError::Kind::UnsupportedElement);
    try {
      parse_inp("[JUNCTIONS]\nJ1 zero 1\n");
      FAIL("expected a malformed row");
    } catch (const ParseError& e) {
      CHECK(e.section() == "JUNCTIONS");
      CHECK(e.line() == 2);
    }
  }

  TEST_CASE("comments, blank lines and section case are ignored") {
    const std::string text =
        "[junctions]\n\n  J1 0 10 ; trailing comment\n;full comment\n[Reservoirs]\nR1 100\n[pipes]\nP1 R1 J1 1000 300 100\n";
    const auto a = parse_inp(text);
    const auto b = parse_inp(kTwoNode);
    CHECK(a.nodes() == b.nodes());
    CHECK(a.pipes() == b.pipes());
  }

  TEST_CASE("unknown sections produce warnings") {
    std::vector<std::string> warnings;
    parse_inp(std::string(kTwoNode) + "[QUALITY]\nJ1 0.5\n", &warnings);
    CHECK(std::any_of(warnings.begin(), warnings.end(),
                      [](const std::string& w) { return w.find("QUALITY") != std::string::npos; }));
  }

  TEST_CASE("tanks become fixed-head sources at their initial level") {
    const std::string text =
        "[JUNCTIONS]\nJ1 5 1\n[TANKS]\nT1 20 3 0 10 15 0\n[PIPES]\nP1 T1 J1 100 200 120\n";
    const auto net = parse_inp(text);
    const auto& t = net.node(net.find("T1"));
    CHECK_FALSE(t.is_junction());
    CHECK(t.fixed_head == doctest::Approx(23.0));
    CHECK(parse_inp(serialize_inp(net)) == net);
  }

  TEST_CASE("node indices follow first appearance") {
    const auto net = parse_inp("[RESERVOIRS]\nR9 50\n[JUNCTIONS]\nB 0 1\nA 0 1\n[PIPES]\nP1 R9 B 1 100 100\nP2 B A 1 100 100\n");
    CHECK(net.node(0).id.label == "R9");
    CHECK(net.node(1).id.label == "B");
    CHECK(net.node(2).id.label == "A");
    CHECK(net.junctions() == std::vector<int>{1, 2});
  }

  TEST_CASE("hanoi builtin matches the published benchmark") {
    const auto net = hanoi_builtin();
    CHECK(net.junction_count() == 31);
    CHECK(net.source_count() == 1);
    CHECK(net.pipe_count() == 34);
    CHECK(validate_network(net).ok());
    CHECK(oracle::all_nodes_reach_a_source(net));
    CHECK(hanoi_builtin() == net);
    CHECK(serialize_inp(hanoi_builtin()) == serialize_inp(net));
    // Total demand of the canonical data set is 19,940 m3/h; the L/s values
    // carry four decimals.
    double total = 0.0;
    for (double d : net.base_demands()) total += d;
    CHECK(total * 3.6 == doctest::Approx(19940.0).epsilon(1e-6));
  }

  TEST_CASE("shipped fixture parses to the builtin") {
    const auto text = read_text_file(AQUATWIN_FIXTURE_DIR "/hanoi.inp");
    const auto net = parse_inp(text);
    CHECK(net == hanoi_builtin());
    CHECK(validate_network(net).ok());
  }

  TEST_CASE("round trip parse(serialize(m)) == m") {
    for (const auto& net : {hanoi_builtin(), parse_inp(kTwoNode), grid_network(3, 4)}) {
      CHECK(parse_inp(serialize_inp(net)) == net);
    }
  }

  TEST_CASE("validation findings") {
    SUBCASE("isolated junction") {
      std::vector<Node> nodes{{{0, "R"}, NodeKind::FixedHeadSource, SourceType::Reservoir, 0, 0, 50, ""},
                              {{1, "J1"}, NodeKind::Junction, SourceType::Reservoir, 0, 1, 0, ""},
                              {{2, "LONE"}, NodeKind::Junction, SourceType::Reservoir, 0, 1, 0, ""}};
      std::vector<Pipe> pipes{{0, "P", 0, 1, 10, 0.1, 100}};
      const auto report = validate_network(NetworkModel("t", nodes, pipes));
      REQUIRE(report.findings.size() == 1);
      CHECK(report.findings[0].kind == ValidationFinding::Kind::Disconnected);
      CHECK(report.findings[0].subject == "LONE");
    }
    SUBCASE("zero diameter") {
      std::vector<Node> nodes{{{0, "R"}, NodeKind::FixedHeadSource, SourceType::Reservoir, 0, 0, 50, ""},
                              {{1, "J1"}, NodeKind::Junction, SourceType::Reservoir, 0, 1, 0, ""}};
      std::vector<Pipe> pipes{{0, "P", 0, 1, 10, 0.0, 100}};
      const auto report = validate_network(NetworkModel("t", nodes, pipes));
      REQUIRE_FALSE(report.ok());
      CHECK(report.findings[0].kind == ValidationFinding::Kind::NonPositiveAttribute);
      CHECK(report.findings[0].subject == "P");
    }
  }

  TEST_CASE("grid network shape") {
    const auto g = grid_network(9, 43);
    CHECK(g.node_count() == 388);
    CHECK(g.junction_count() == 387);
    CHECK(validate_network(g).ok());
  }
}

#include <sstream>

#include "doctest.h"
#include "support.hpp"

using namespace suegnn;

namespace {

Network parse(const std::string& text) {
  std::istringstream in(text);
  return read_network(in);
}

const char* kTwoNode = "NODES 2\nEDGES 1\nZONES 2\n1 1\n2 1\n1 2 1.5 60 1000\n1\n2\n";

}  // namespace

TEST_CASE("sioux falls loads with 24 nodes, 76 edges, 11 zones") {
  const Network net = testsupport::sioux_falls();
  CHECK(net.num_nodes() == 24);
  CHECK(net.num_edges() == 76);
  CHECK(net.num_zones() == 11);
  for (std::size_t z = 0; z < net.num_zones(); ++z) {
    CHECK(net.nodes()[net.zone_node_index(z)].is_centroid);
    CHECK(net.nodes()[net.zone_node_index(z)].id == net.zone_ids()[z]);
  }
  std::size_t centroids = 0;
  for (const auto& n : net.nodes()) centroids += n.is_centroid;
  CHECK(centroids == 11);
}

TEST_CASE("minimal two-node network") {
  const Network net = parse(kTwoNode);
  CHECK(net.num_nodes() == 2);
  CHECK(net.num_edges() == 1);
  CHECK(net.edge_tail(0) == 0);
  CHECK(net.edge_head(0) == 1);

  const Matrix a = adjacency(net);
  CHECK(a(0, 0) == 0.0);
  CHECK(a(0, 1) == 1.0);
  CHECK(a(1, 0) == 0.0);
  CHECK(a(1, 1) == 0.0);

  const Matrix m = incidence(net);
  CHECK(m(0, 0) == -1.0);
  CHECK(m(1, 0) == 1.0);
}

TEST_CASE("edge set may be empty") {
  const Network net = parse("NODES 2\nEDGES 0\nZONES 1\n1 1\n2 0\n1\n");
  const Matrix a = adjacency(net);
  for (double v : a.data()) CHECK(v == 0.0);
  CHECK(incidence(net).cols() == 0);
}

TEST_CASE("invalid networks are rejected") {
  CHECK_THROWS_AS(parse("NODES 2\nEDGES 1\nZONES 1\n1 1\n2 0\n1 3 1 60 1000\n1\n"), ValidationError);
  CHECK_THROWS_AS(parse("NODES 2\nEDGES 1\nZONES 1\n1 1\n2 0\n1 1 1 60 1000\n1\n"), ValidationError);
  CHECK_THROWS_AS(parse("NODES 2\nEDGES 2\nZONES 1\n1 1\n2 0\n1 2 1 60 1000\n1 2 1 60 1000\n1\n"),
                  ValidationError);
  CHECK_THROWS_AS(parse("NODES 2\nEDGES 0\nZONES 2\n1 1\n2 1\n1\n1\n"), ValidationError);
  CHECK_THROWS_AS(parse("NODES 2\nEDGES 0\nZONES 1\n1 1\n2 0\n2\n"), ValidationError);
  CHECK_THROWS_AS(parse("NODES 2\nEDGES 1\nZONES 1\n1 1\n2 0\n1 2 -1 60 1000\n1\n"), ValidationError);
  CHECK_THROWS_AS(parse("NODES 2\nEDGES 1\nZONES 1\n1 1\n2 0\n1 2 abc 60 1000\n1\n"), ParseError);
  CHECK_THROWS_AS(parse("NODES 2\nEDGES 1\n"), ParseError);
  CHECK_THROWS_AS(load_network("/nonexistent/net.net"), std::runtime_error);
}

TEST_CASE("parse errors carry the line number") {
  try {
    parse("NODES 2\nEDGES 1\nZONES 1\n1 1\n2 0\n1 2 x 60 1000\n1\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 6);
  }
}

TEST_CASE("sioux falls structure matrices") {
  const Network net = testsupport::sioux_falls();
  const Matrix a = adjacency(net);
  CHECK(a.rows() == 24);
  CHECK(a.cols() == 24);
  double ones = 0.0;
  for (double v : a.data()) {
    CHECK((v == 0.0 || v == 1.0));
    ones += v;
  }
  CHECK(ones == 76.0);

  const Matrix m = incidence(net);
  CHECK(m.rows() == 24);
  CHECK(m.cols() == 76);
  std::size_t nonzeros = 0;
  for (std::size_t e = 0; e < m.cols(); ++e) {
    int plus = 0, minus = 0;
    double sum = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i) {
      sum += m(i, e);
      plus += m(i, e) == 1.0;
      minus += m(i, e) == -1.0;
      nonzeros += m(i, e) != 0.0;
    }
    CHECK(sum == 0.0);
    CHECK(plus == 1);
    CHECK(minus == 1);
  }
  CHECK(nonzeros == 152);
}

TEST_CASE("network write/read round trip") {
  const Network net = testsupport::sioux_falls();
  std::ostringstream out;
  write_network(out, net);
  CHECK(parse(out.str()) == net);

  const Network small = parse(kTwoNode);
  std::ostringstream out2;
  write_network(out2, small);
  CHECK(parse(out2.str()) == small);
}

TEST_CASE("od matrix invariants and csv round trip") {
  const Network net = testsupport::sioux_falls();
  OdMatrix od(net.num_zones());
  CHECK_THROWS_AS(od.set(0, 0, 5.0), ValidationError);
  CHECK_THROWS_AS(od.set(0, 1, -1.0), ValidationError);
  od.set(0, 1, 120.5);
  od.set(10, 3, 7.25);
  od.set(0, 0, 0.0);
  CHECK(od.total() == doctest::Approx(127.75));

  std::ostringstream out;
  write_od_csv(out, od, net);
  std::istringstream in(out.str());
  CHECK(read_od_csv(in, net) == od);

  Matrix bad(2, 2);
  bad(1, 1) = 3.0;
  CHECK_THROWS_AS(OdMatrix{bad}, ValidationError);
}

TEST_CASE("node lookup by id") {
  const Network net = testsupport::sioux_falls();
  for (std::size_t i = 0; i < net.num_nodes(); ++i) CHECK(net.node_index(net.nodes()[i].id) == i);
  CHECK_THROWS_AS(net.node_index(999), std::out_of_range);
  for (std::size_t z = 0; z < net.num_zones(); ++z) CHECK(net.zone_of_node(net.zone_node_index(z)) == z);
}

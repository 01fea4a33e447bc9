#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "suegnn/matrix.hpp"

namespace suegnn {

using NodeId = long;

/// Raised for malformed network/OD text. Carries the 1-based line number when known.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A structurally invalid network or input (names the violated invariant).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct NodeRecord {
  NodeId id = 0;
  bool is_centroid = false;

  bool operator==(const NodeRecord&) const = default;
};

struct EdgeRecord {
  NodeId from = 0;
  NodeId to = 0;
  double length = 0.0;         // km
  double base_speed = 0.0;     // km/h
  double base_capacity = 0.0;  // veh/h

  bool operator==(const EdgeRecord&) const = default;
};

/// Directed road graph. Immutable once constructed; construction validates
/// every invariant and builds the id -> index lookup.
class Network {
 public:
  Network(std::vector<NodeRecord> nodes, std::vector<EdgeRecord> edges, std::vector<NodeId> zone_ids);

  const std::vector<NodeRecord>& nodes() const noexcept { return nodes_; }
  const std::vector<EdgeRecord>& edges() const noexcept { return edges_; }
  const std::vector<NodeId>& zone_ids() const noexcept { return zone_ids_; }

  std::size_t num_nodes() const noexcept { return nodes_.size(); }
  std::size_t num_edges() const noexcept { return edges_.size(); }
  std::size_t num_zones() const noexcept { return zone_ids_.size(); }

  /// Position of a node id in nodes(); throws std::out_of_range for unknown ids.
  std::size_t node_index(NodeId id) const;
  /// Position of a zone's node in nodes().
  std::size_t zone_node_index(std::size_t zone) const { return zone_node_[zone]; }
  /// Zone position of a node index, or npos for non-centroids.
  std::size_t zone_of_node(std::size_t node_index) const { return node_zone_[node_index]; }

  std::size_t edge_tail(std::size_t e) const { return edge_tail_[e]; }
  std::size_t edge_head(std::size_t e) const { return edge_head_[e]; }
  /// Outgoing edge indices of a node, sorted by head node id.
  const std::vector<std::size_t>& out_edges(std::size_t node_index) const { return out_[node_index]; }
  const std::vector<std::size_t>& in_edges(std::size_t node_index) const { return in_[node_index]; }

  bool operator==(const Network& other) const {
    return nodes_ == other.nodes_ && edges_ == other.edges_ && zone_ids_ == other.zone_ids_;
  }

  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

 private:
  std::vector<NodeRecord> nodes_;
  std::vector<EdgeRecord> edges_;
  std::vector<NodeId> zone_ids_;

  std::vector<NodeId> sorted_ids_;
  std::vector<std::size_t> sorted_pos_;
  std::vector<std::size_t> zone_node_;
  std::vector<std::size_t> node_zone_;
  std::vector<std::size_t> edge_tail_;
  std::vector<std::size_t> edge_head_;
  std::vector<std::vector<std::size_t>> out_;
  std::vector<std::vector<std::size_t>> in_;
};

/// Z x Z trip table indexed in zone order. Diagonal is always zero.
class OdMatrix {
 public:
  OdMatrix() = default;
  explicit OdMatrix(std::size_t zones) : demand_(zones, zones) {}
  explicit OdMatrix(Matrix demand);

  std::size_t zones() const noexcept { return demand_.rows(); }
  double operator()(std::size_t r, std::size_t s) const { return demand_(r, s); }
  /// Sets an off-diagonal entry; rejects negative values and nonzero diagonal writes.
  void set(std::size_t r, std::size_t s, double trips);
  const Matrix& matrix() const noexcept { return demand_; }
  double total() const;

  bool operator==(const OdMatrix&) const = default;

 private:
  Matrix demand_;
};

Network read_network(std::istream& in);
Network load_network(const std::filesystem::path& path);
void write_network(std::ostream& out, const Network& network);
void save_network(const std::filesystem::path& path, const Network& network);

/// |V| x |V| 0/1 matrix; entry (i, j) = 1 iff edge i -> j exists.
Matrix adjacency(const Network& network);
/// |V| x |E| matrix: -1 at the tail of each edge, +1 at its head.
Matrix incidence(const Network& network);

/// OD CSV: header row `zone,<z1>,<z2>,...`, then one row per origin zone.
OdMatrix read_od_csv(std::istream& in, const Network& network);
void write_od_csv(std::ostream& out, const OdMatrix& od, const Network& network);

}  // namespace suegnn

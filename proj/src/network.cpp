#include "suegnn/network.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

namespace suegnn {

Network::Network(std::vector<NodeRecord> nodes, std::vector<EdgeRecord> edges, std::vector<NodeId> zone_ids)
    : nodes_(std::move(nodes)), edges_(std::move(edges)), zone_ids_(std::move(zone_ids)) {
  const std::size_t n = nodes_.size();
  sorted_pos_.resize(n);
  std::iota(sorted_pos_.begin(), sorted_pos_.end(), std::size_t{0});
  std::sort(sorted_pos_.begin(), sorted_pos_.end(),
            [&](std::size_t a, std::size_t b) { return nodes_[a].id < nodes_[b].id; });
  sorted_ids_.resize(n);
  for (std::size_t i = 0; i < n; ++i) sorted_ids_[i] = nodes_[sorted_pos_[i]].id;
  if (std::adjacent_find(sorted_ids_.begin(), sorted_ids_.end()) != sorted_ids_.end()) {
    throw ValidationError("duplicate node id");
  }

  auto lookup = [&](NodeId id, const char* what) {
    auto it = std::lower_bound(sorted_ids_.begin(), sorted_ids_.end(), id);
    if (it == sorted_ids_.end() || *it != id) {
      throw ValidationError(std::string(what) + " references missing node " + std::to_string(id));
    }
    return sorted_pos_[static_cast<std::size_t>(it - sorted_ids_.begin())];
  };

  node_zone_.assign(n, npos);
  std::unordered_set<NodeId> seen_zones;
  for (std::size_t z = 0; z < zone_ids_.size(); ++z) {
    if (!seen_zones.insert(zone_ids_[z]).second) {
      throw ValidationError("duplicate zone id " + std::to_string(zone_ids_[z]));
    }
    const std::size_t idx = lookup(zone_ids_[z], "zone");
    zone_node_.push_back(idx);
    node_zone_[idx] = z;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (nodes_[i].is_centroid != (node_zone_[i] != npos)) {
      throw ValidationError("node " + std::to_string(nodes_[i].id) +
                            ": centroid flag disagrees with zone list");
    }
  }

  out_.resize(n);
  in_.resize(n);
  std::set<std::pair<NodeId, NodeId>> pairs;
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    const auto& edge = edges_[e];
    if (edge.from == edge.to) throw ValidationError("self-loop at node " + std::to_string(edge.from));
    if (!pairs.emplace(edge.from, edge.to).second) {
      throw ValidationError("duplicate edge " + std::to_string(edge.from) + "->" + std::to_string(edge.to));
    }
    if (!(edge.length > 0.0) || !(edge.base_speed > 0.0) || !(edge.base_capacity > 0.0)) {
      throw ValidationError("edge " + std::to_string(edge.from) + "->" + std::to_string(edge.to) +
                            ": length, speed and capacity must be positive");
    }
    edge_tail_.push_back(lookup(edge.from, "edge"));
    edge_head_.push_back(lookup(edge.to, "edge"));
    out_[edge_tail_.back()].push_back(e);
    in_[edge_head_.back()].push_back(e);
  }
  for (auto& list : out_) {
    std::sort(list.begin(), list.end(), [&](std::size_t a, std::size_t b) { return edges_[a].to < edges_[b].to; });
  }
}

std::size_t Network::node_index(NodeId id) const {
  auto it = std::lower_bound(sorted_ids_.begin(), sorted_ids_.end(), id);
  if (it == sorted_ids_.end() || *it != id) throw std::out_of_range("unknown node id " + std::to_string(id));
  return sorted_pos_[static_cast<std::size_t>(it - sorted_ids_.begin())];
}

OdMatrix::OdMatrix(Matrix demand) : demand_(std::move(demand)) {
  if (demand_.rows() != demand_.cols()) throw ValidationError("OD matrix must be square");
  for (std::size_t r = 0; r < demand_.rows(); ++r) {
    for (std::size_t s = 0; s < demand_.cols(); ++s) {
      if (!(demand_(r, s) >= 0.0)) throw ValidationError("OD demand must be nonnegative");
      if (r == s && demand_(r, s) != 0.0) throw ValidationError("OD diagonal must be zero");
    }
  }
}

void OdMatrix::set(std::size_t r, std::size_t s, double trips) {
  if (!(trips >= 0.0)) throw ValidationError("OD demand must be nonnegative");
  if (r == s && trips != 0.0) throw ValidationError("OD diagonal must be zero");
  demand_(r, s) = trips;
}

double OdMatrix::total() const {
  return std::accumulate(demand_.data().begin(), demand_.data().end(), 0.0);
}

namespace {

// Yields non-empty, non-comment lines with their line numbers.
class LineReader {
 public:
  explicit LineReader(std::istream& in) : in_(in) {}

  bool next(std::istringstream& fields) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      fields.clear();
      fields.str(line);
      return true;
    }
    return false;
  }

  std::size_t line() const noexcept { return line_no_; }

 private:
  std::istream& in_;
  std::size_t line_no_ = 0;
};

template <typename... T>
void parse_fields(std::istringstream& fields, std::size_t line, const char* what, T&... out) {
  ((fields >> out), ...);
  std::string rest;
  if (fields.fail() || (fields >> rest)) throw ParseError(std::string("malformed ") + what, line);
}

std::size_t read_header(LineReader& reader, const char* key) {
  std::istringstream fields;
  if (!reader.next(fields)) throw ParseError(std::string("missing ") + key + " header", reader.line());
  std::string word;
  long long count = -1;
  parse_fields(fields, reader.line(), key, word, count);
  if (word != key || count < 0) throw ParseError(std::string("expected '") + key + " <count>'", reader.line());
  return static_cast<std::size_t>(count);
}

}  // namespace

Network read_network(std::istream& in) {
  LineReader reader(in);
  const std::size_t n_nodes = read_header(reader, "NODES");
  const std::size_t n_edges = read_header(reader, "EDGES");
  const std::size_t n_zones = read_header(reader, "ZONES");

  std::istringstream fields;
  std::vector<NodeRecord> nodes;
  for (std::size_t i = 0; i < n_nodes; ++i) {
    if (!reader.next(fields)) throw ParseError("unexpected end of file in node list", reader.line());
    NodeRecord node;
    int flag = -1;
    parse_fields(fields, reader.line(), "node line", node.id, flag);
    if (flag != 0 && flag != 1) throw ParseError("centroid flag must be 0 or 1", reader.line());
    node.is_centroid = flag == 1;
    nodes.push_back(node);
  }
  std::vector<EdgeRecord> edges;
  for (std::size_t i = 0; i < n_edges; ++i) {
    if (!reader.next(fields)) throw ParseError("unexpected end of file in edge list", reader.line());
    EdgeRecord edge;
    parse_fields(fields, reader.line(), "edge line", edge.from, edge.to, edge.length, edge.base_speed,
                 edge.base_capacity);
    edges.push_back(edge);
  }
  std::vector<NodeId> zones;
  for (std::size_t i = 0; i < n_zones; ++i) {
    if (!reader.next(fields)) throw ParseError("unexpected end of file in zone list", reader.line());
    NodeId id = 0;
    parse_fields(fields, reader.line(), "zone line", id);
    zones.push_back(id);
  }
  if (reader.next(fields)) throw ParseError("trailing content after zone list", reader.line());
  return Network(std::move(nodes), std::move(edges), std::move(zones));
}

Network load_network(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open network file " + path.string());
  return read_network(in);
}

void write_network(std::ostream& out, const Network& network) {
  out << "NODES " << network.num_nodes() << '\n'
      << "EDGES " << network.num_edges() << '\n'
      << "ZONES " << network.num_zones() << '\n';
  for (const auto& node : network.nodes()) out << node.id << ' ' << (node.is_centroid ? 1 : 0) << '\n';
  out << std::setprecision(17);
  for (const auto& e : network.edges()) {
    out << e.from << ' ' << e.to << ' ' << e.length << ' ' << e.base_speed << ' ' << e.base_capacity << '\n';
  }
  for (NodeId z : network.zone_ids()) out << z << '\n';
}

void save_network(const std::filesystem::path& path, const Network& network) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write network file " + path.string());
  write_network(out, network);
}

Matrix adjacency(const Network& network) {
  Matrix a(network.num_nodes(), network.num_nodes());
  for (std::size_t e = 0; e < network.num_edges(); ++e) a(network.edge_tail(e), network.edge_head(e)) = 1.0;
  return a;
}

Matrix incidence(const Network& network) {
  Matrix m(network.num_nodes(), network.num_edges());
  for (std::size_t e = 0; e < network.num_edges(); ++e) {
    m(network.edge_tail(e), e) = -1.0;
    m(network.edge_head(e), e) = 1.0;
  }
  return m;
}

OdMatrix read_od_csv(std::istream& in, const Network& network) {
  const std::size_t z = network.num_zones();
  std::string line;
  std::size_t line_no = 0;
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    return cells;
  };
  auto to_id = [&](const std::string& cell) {
    try {
      std::size_t used = 0;
      NodeId id = std::stol(cell, &used);
      if (used != cell.size()) throw std::invalid_argument(cell);
      return id;
    } catch (const std::exception&) {
      throw ParseError("bad zone id '" + cell + "'", line_no);
    }
  };
  if (!std::getline(in, line)) throw ParseError("empty OD file", 0);
  ++line_no;
  auto header = split(line);
  if (header.size() != z + 1) throw ParseError("OD header must list every zone", line_no);
  for (std::size_t s = 0; s < z; ++s) {
    if (to_id(header[s + 1]) != network.zone_ids()[s]) throw ParseError("OD header zone order mismatch", line_no);
  }
  Matrix demand(z, z);
  for (std::size_t r = 0; r < z; ++r) {
    if (!std::getline(in, line)) throw ParseError("missing OD row", line_no);
    ++line_no;
    auto cells = split(line);
    if (cells.size() != z + 1) throw ParseError("OD row has wrong column count", line_no);
    if (to_id(cells[0]) != network.zone_ids()[r]) throw ParseError("OD row zone order mismatch", line_no);
    for (std::size_t s = 0; s < z; ++s) {
      try {
        demand(r, s) = std::stod(cells[s + 1]);
      } catch (const std::exception&) {
        throw ParseError("bad demand value '" + cells[s + 1] + "'", line_no);
      }
    }
  }
  return OdMatrix(std::move(demand));
}

void write_od_csv(std::ostream& out, const OdMatrix& od, const Network& network) {
  out << "zone";
  for (NodeId id : network.zone_ids()) out << ',' << id;
  out << '\n' << std::setprecision(17);
  for (std::size_t r = 0; r < od.zones(); ++r) {
    out << network.zone_ids()[r];
    for (std::size_t s = 0; s < od.zones(); ++s) out << ',' << od(r, s);
    out << '\n';
  }
}

}  // namespace suegnn

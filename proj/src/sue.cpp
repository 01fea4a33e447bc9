#include "suegnn/sue.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>

namespace suegnn {

void CostParams::validate() const {
  if (!(bpr_alpha >= 0.0)) throw ValidationError("bpr_alpha must be >= 0");
  if (!(bpr_beta >= 1.0)) throw ValidationError("bpr_beta must be >= 1");
  if (!(logit_theta > 0.0)) throw ValidationError("logit_theta must be > 0");
}

void SolverConfig::validate() const {
  cost.validate();
  if (max_iter < 1) throw ValidationError("max_iter must be >= 1");
  if (!(gap_tol > 0.0)) throw ValidationError("gap_tol must be > 0");
}

double bpr_time(double t0, double flow, double capacity, const CostParams& params) {
  if (!(t0 > 0.0)) throw std::domain_error("bpr_time: free-flow time must be positive");
  if (!(capacity > 0.0)) throw std::domain_error("bpr_time: capacity must be positive");
  return t0 * (1.0 + params.bpr_alpha * std::pow(flow / capacity, params.bpr_beta));
}

std::vector<double> free_flow_times(const Network& network, std::span<const double> speeds) {
  if (speeds.size() != network.num_edges()) throw ValidationError("speed vector not aligned to edges");
  std::vector<double> t0(speeds.size());
  for (std::size_t e = 0; e < speeds.size(); ++e) {
    if (!(speeds[e] > 0.0)) throw ValidationError("speeds must be positive");
    t0[e] = 60.0 * network.edges()[e].length / speeds[e];
  }
  return t0;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Cost-to-destination labels by reverse Dijkstra.
std::vector<double> distances_to(const Network& network, std::span<const double> times, std::size_t destination) {
  std::vector<double> dist(network.num_nodes(), kInf);
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  dist[destination] = 0.0;
  heap.emplace(0.0, destination);
  while (!heap.empty()) {
    auto [d, v] = heap.top();
    heap.pop();
    if (d > dist[v]) continue;
    for (std::size_t e : network.in_edges(v)) {
      const std::size_t u = network.edge_tail(e);
      const double cand = d + times[e];
      if (cand < dist[u]) {
        dist[u] = cand;
        heap.emplace(cand, u);
      }
    }
  }
  return dist;
}

// Walks the shortest-path DAG from origin, always taking the smallest next node id.
Path trace_path(const Network& network, std::span<const double> times, const std::vector<double>& dist,
                std::size_t origin, std::size_t destination) {
  Path path;
  std::size_t u = origin;
  while (u != destination) {
    const double tol = 1e-12 * std::max(1.0, dist[u]);
    std::size_t chosen = Network::npos;
    for (std::size_t e : network.out_edges(u)) {  // sorted by head id
      if (times[e] + dist[network.edge_head(e)] <= dist[u] + tol) {
        chosen = e;
        break;
      }
    }
    // Dijkstra labels guarantee at least one tight edge on a finite label.
    path.edges.push_back(chosen);
    path.cost += times[chosen];
    u = network.edge_head(chosen);
  }
  return path;
}

void check_times(const Network& network, std::span<const double> times) {
  if (times.size() != network.num_edges()) throw ValidationError("edge times not aligned to edges");
  for (double t : times) {
    if (!(t > 0.0)) throw ValidationError("edge times must be positive");
  }
}

double path_cost(std::span<const std::size_t> edges, std::span<const double> times) {
  double c = 0.0;
  for (std::size_t e : edges) c += times[e];
  return c;
}

}  // namespace

Path shortest_path(const Network& network, std::span<const double> edge_times, std::size_t origin,
                   std::size_t destination) {
  check_times(network, edge_times);
  if (origin >= network.num_nodes() || destination >= network.num_nodes()) {
    throw std::out_of_range("shortest_path: node index out of range");
  }
  auto dist = distances_to(network, edge_times, destination);
  if (dist[origin] == kInf) {
    throw NoPathError("no path from node " + std::to_string(network.nodes()[origin].id) + " to node " +
                      std::to_string(network.nodes()[destination].id));
  }
  return trace_path(network, edge_times, dist, origin, destination);
}

std::vector<double> logit_split(std::span<const double> path_costs, double theta) {
  if (path_costs.empty()) throw std::invalid_argument("logit_split: empty path list");
  if (!(theta > 0.0)) throw std::invalid_argument("logit_split: theta must be positive");
  const double c_min = *std::min_element(path_costs.begin(), path_costs.end());
  std::vector<double> p(path_costs.size());
  double total = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    p[k] = std::exp(-theta * (path_costs[k] - c_min));
    total += p[k];
  }
  for (double& v : p) v /= total;
  return p;
}

std::vector<double> PathSet::edge_flows(std::size_t num_edges) const {
  std::vector<double> flows(num_edges, 0.0);
  for (const auto& od : od_pairs) {
    for (std::size_t k = 0; k < od.paths.size(); ++k) {
      for (std::size_t e : od.paths[k]) flows[e] += od.flows[k];
    }
  }
  return flows;
}

double total_travel_time(const EquilibriumSolution& solution) {
  return std::inner_product(solution.edge_flows.begin(), solution.edge_flows.end(), solution.edge_times.begin(), 0.0);
}

EquilibriumSolution solve_sue(const Network& network, const OdMatrix& od, std::span<const double> speeds,
                              std::span<const double> capacities, const SolverConfig& config) {
  config.validate();
  const std::size_t n_edges = network.num_edges();
  const std::size_t n_zones = network.num_zones();
  if (od.zones() != n_zones) throw ValidationError("OD matrix not aligned to network zones");
  if (capacities.size() != n_edges) throw ValidationError("capacity vector not aligned to edges");
  for (double c : capacities) {
    if (!(c > 0.0)) throw ValidationError("capacities must be positive");
  }
  const std::vector<double> t0 = free_flow_times(network, speeds);

  EquilibriumSolution sol;
  sol.edge_flows.assign(n_edges, 0.0);
  sol.edge_times = t0;

  PathSet& set = sol.paths;
  std::vector<std::size_t> destinations;
  for (std::size_t r = 0; r < n_zones; ++r) {
    for (std::size_t s = 0; s < n_zones; ++s) {
      if (r != s && od(r, s) > 0.0) set.od_pairs.push_back({r, s, od(r, s), {}, {}});
    }
  }
  if (set.od_pairs.empty()) {
    sol.converged = true;
    return sol;
  }
  for (const auto& pair : set.od_pairs) destinations.push_back(pair.destination_zone);
  std::sort(destinations.begin(), destinations.end());
  destinations.erase(std::unique(destinations.begin(), destinations.end()), destinations.end());

  std::vector<std::vector<double>> dist(n_zones);
  auto add_shortest_paths = [&](std::span<const double> times) {
    for (std::size_t s : destinations) dist[s] = distances_to(network, times, network.zone_node_index(s));
    for (auto& pair : set.od_pairs) {
      const auto& d = dist[pair.destination_zone];
      const std::size_t origin = network.zone_node_index(pair.origin_zone);
      if (d[origin] == kInf) {
        throw NoPathError("OD pair " + std::to_string(network.zone_ids()[pair.origin_zone]) + " -> " +
                          std::to_string(network.zone_ids()[pair.destination_zone]) +
                          " has positive demand but no path");
      }
      Path p = trace_path(network, times, d, origin, network.zone_node_index(pair.destination_zone));
      if (std::find(pair.paths.begin(), pair.paths.end(), p.edges) == pair.paths.end()) {
        pair.paths.push_back(std::move(p.edges));
        pair.flows.push_back(0.0);
      }
    }
  };
  auto logit_route_flows = [&](std::span<const double> times) {
    std::vector<std::vector<double>> aux(set.od_pairs.size());
    std::vector<double> costs;
    for (std::size_t i = 0; i < set.od_pairs.size(); ++i) {
      const auto& pair = set.od_pairs[i];
      costs.resize(pair.paths.size());
      for (std::size_t k = 0; k < pair.paths.size(); ++k) costs[k] = path_cost(pair.paths[k], times);
      aux[i] = logit_split(costs, config.cost.logit_theta);
      for (double& v : aux[i]) v *= pair.demand;
    }
    return aux;
  };
  auto update_times = [&] {
    for (std::size_t e = 0; e < n_edges; ++e) {
      sol.edge_times[e] = bpr_time(t0[e], sol.edge_flows[e], capacities[e], config.cost);
    }
  };

  // Iteration 1: logit loading over free-flow shortest paths.
  add_shortest_paths(t0);
  auto aux = logit_route_flows(t0);
  for (std::size_t i = 0; i < set.od_pairs.size(); ++i) set.od_pairs[i].flows = aux[i];
  sol.edge_flows = set.edge_flows(n_edges);
  update_times();
  sol.iterations = 1;
  sol.gap = kInf;

  for (int n = 2; n <= config.max_iter; ++n) {
    sol.iterations = n;
    add_shortest_paths(sol.edge_times);
    aux = logit_route_flows(sol.edge_times);

    PathSet aux_set = set;
    for (std::size_t i = 0; i < set.od_pairs.size(); ++i) aux_set.od_pairs[i].flows = aux[i];
    const std::vector<double> aux_edges = aux_set.edge_flows(n_edges);
    double diff = 0.0;
    double norm = 0.0;
    for (std::size_t e = 0; e < n_edges; ++e) {
      diff += std::abs(aux_edges[e] - sol.edge_flows[e]);
      norm += std::abs(sol.edge_flows[e]);
    }
    sol.gap = diff / norm;
    sol.gap_history.push_back(sol.gap);
    if (sol.gap < config.gap_tol) {
      sol.converged = true;
      break;
    }

    const double step = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < set.od_pairs.size(); ++i) {
      auto& flows = set.od_pairs[i].flows;
      for (std::size_t k = 0; k < flows.size(); ++k) flows[k] += step * (aux[i][k] - flows[k]);
    }
    sol.edge_flows = set.edge_flows(n_edges);
    update_times();
  }
  return sol;
}

}  // namespace suegnn

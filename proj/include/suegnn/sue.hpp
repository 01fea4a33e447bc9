#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "suegnn/network.hpp"

namespace suegnn {

/// Link cost and route-choice dispersion parameters.
struct CostParams {
  double bpr_alpha = 0.15;
  double bpr_beta = 4.0;
  double logit_theta = 0.5;  // 1/min

  void validate() const;
  bool operator==(const CostParams&) const = default;
};

struct SolverConfig {
  CostParams cost;
  int max_iter = 200;
  double gap_tol = 1e-4;

  void validate() const;
  bool operator==(const SolverConfig&) const = default;
};

/// No route exists between two nodes under the current network.
class NoPathError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// t0 * (1 + alpha * (flow / capacity)^beta). Throws std::domain_error on t0 <= 0 or capacity <= 0.
double bpr_time(double t0, double flow, double capacity, const CostParams& params);

/// Free-flow minutes per edge: 60 * length / speed.
std::vector<double> free_flow_times(const Network& network, std::span<const double> speeds);

struct Path {
  std::vector<std::size_t> edges;
  double cost = 0.0;
};

/// Minimum-cost path between two node indices. Ties are broken towards the
/// lexicographically smallest node-id sequence. Throws NoPathError when unreachable.
Path shortest_path(const Network& network, std::span<const double> edge_times, std::size_t origin,
                   std::size_t destination);

/// Multinomial logit route shares: p_k proportional to exp(-theta * c_k), evaluated with a min-cost shift.
std::vector<double> logit_split(std::span<const double> path_costs, double theta);

/// Column-generated routes and their flows for one OD pair.
struct OdRoutes {
  std::size_t origin_zone = 0;
  std::size_t destination_zone = 0;
  double demand = 0.0;
  std::vector<std::vector<std::size_t>> paths;
  std::vector<double> flows;
};

struct PathSet {
  std::vector<OdRoutes> od_pairs;

  /// Sum over OD pairs and routes of route flow times edge membership.
  std::vector<double> edge_flows(std::size_t num_edges) const;
};

struct EquilibriumSolution {
  std::vector<double> edge_flows;  // veh/h
  std::vector<double> edge_times;  // minutes, evaluated at edge_flows
  double gap = 0.0;
  int iterations = 0;
  bool converged = false;
  PathSet paths;
  std::vector<double> gap_history;
};

/// Logit stochastic user equilibrium by the method of successive averages over
/// a column-generated path set.
EquilibriumSolution solve_sue(const Network& network, const OdMatrix& od, std::span<const double> speeds,
                              std::span<const double> capacities, const SolverConfig& config = {});

/// Sum over edges of flow * time.
double total_travel_time(const EquilibriumSolution& solution);

}  // namespace suegnn

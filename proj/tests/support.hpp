#pragma once

// Shared fixtures and independent oracles for the unit and acceptance tests.

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "suegnn/models.hpp"
#include "suegnn/network.hpp"
#include "suegnn/rng.hpp"
#include "suegnn/sue.hpp"
#include "suegnn/tensor.hpp"

namespace testsupport {

inline std::filesystem::path sioux_falls_path() { return std::filesystem::path(SUEGNN_DATA_DIR) / "sioux_falls.net"; }
inline suegnn::Network sioux_falls() { return suegnn::load_network(sioux_falls_path()); }

/// Fresh empty directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& name);

/// Two routes from node 1 to node 4: 1->2->4 and 1->3->4. Edge 0 (1->2) and
/// edge 2 (1->3) carry the route cost; the connectors 2->4 and 3->4 have
/// negligible time and no congestion. Speed 60 makes length equal to t0 in minutes.
struct TwoRoute {
  suegnn::Network network;
  std::vector<double> speeds;
  std::vector<double> capacities;
};
TwoRoute two_route_network(double t0_a, double cap_a, double t0_b, double cap_b);

/// Connector free-flow time used by two_route_network.
inline constexpr double kConnectorTime = 1e-6;

/// Route-1 flow solving x = d * p1(x) by bisection, with p1 the binary logit
/// share over BPR route costs.
double bisection_route_flow(double demand, double t0_a, double cap_a, double t0_b, double cap_b,
                            const suegnn::CostParams& cost);

/// Plain O(V^2) Dijkstra over node indices, returning the minimum cost.
double reference_shortest_cost(const suegnn::Network& net, const std::vector<double>& times, std::size_t origin,
                               std::size_t destination);

/// Central-difference gradient of f with respect to the values of `param`.
std::vector<double> numeric_grad(suegnn::ad::Tensor& param, const std::function<double()>& f, double h = 1e-5);

/// Largest |a-b| / max(|a|, |b|, floor) over entries.
double max_rel_error(const std::vector<double>& a, std::span<const double> b, double floor = 1e-6);

/// Random rank-2 tensor with entries uniform in [lo, hi).
suegnn::ad::Tensor random_tensor(std::size_t rows, std::size_t cols, std::uint64_t seed, double lo = -1.0,
                                 double hi = 1.0, bool requires_grad = true);

/// A connected directed graph with both directions of every undirected edge.
struct ToyGraph {
  std::size_t nodes = 0;
  std::vector<std::size_t> src;
  std::vector<std::size_t> dst;
};
ToyGraph random_toy_graph(std::size_t nodes, std::size_t extra_edges, std::uint64_t seed);

/// Single-graph batch with random features for a toy graph.
suegnn::GraphBatch toy_batch(const ToyGraph& g, std::size_t node_in, std::uint64_t seed);

/// Replaces every parameter value with uniform noise of the given scale.
void randomize(suegnn::ModelParams& params, std::uint64_t seed, double scale);

}  // namespace testsupport

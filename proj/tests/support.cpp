#include "support.hpp"

#include <algorithm>
#include <limits>
#include <set>

namespace testsupport {

using namespace suegnn;

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("suegnn_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

TwoRoute two_route_network(double t0_a, double cap_a, double t0_b, double cap_b) {
  std::vector<NodeRecord> nodes{{1, true}, {2, false}, {3, false}, {4, true}};
  std::vector<EdgeRecord> edges{{1, 2, t0_a, 60.0, cap_a},
                                {2, 4, kConnectorTime, 60.0, 1e12},
                                {1, 3, t0_b, 60.0, cap_b},
                                {3, 4, kConnectorTime, 60.0, 1e12}};
  return {Network(nodes, edges, {1, 4}), {60.0, 60.0, 60.0, 60.0}, {cap_a, 1e12, cap_b, 1e12}};
}

double bisection_route_flow(double demand, double t0_a, double cap_a, double t0_b, double cap_b,
                            const CostParams& cost) {
  auto bpr = [&](double t0, double f, double c) { return t0 * (1.0 + cost.bpr_alpha * std::pow(f / c, cost.bpr_beta)); };
  auto excess = [&](double x) {
    const double c1 = bpr(t0_a, x, cap_a);
    const double c2 = bpr(t0_b, demand - x, cap_b);
    const double p1 = 1.0 / (1.0 + std::exp(-cost.logit_theta * (c2 - c1)));
    return demand * p1 - x;
  };
  double lo = 0.0, hi = demand;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (excess(mid) > 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double reference_shortest_cost(const Network& net, const std::vector<double>& times, std::size_t origin,
                               std::size_t destination) {
  const std::size_t n = net.num_nodes();
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::vector<bool> done(n, false);
  dist[origin] = 0.0;
  for (std::size_t round = 0; round < n; ++round) {
    std::size_t u = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (!done[i] && (u == n || dist[i] < dist[u])) u = i;
    }
    if (u == n || std::isinf(dist[u])) break;
    done[u] = true;
    for (std::size_t e = 0; e < net.num_edges(); ++e) {
      if (net.edge_tail(e) == u) dist[net.edge_head(e)] = std::min(dist[net.edge_head(e)], dist[u] + times[e]);
    }
  }
  return dist[destination];
}

std::vector<double> numeric_grad(ad::Tensor& param, const std::function<double()>& f, double h) {
  auto values = param.mutable_values();
  std::vector<double> grad(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double keep = values[i];
    values[i] = keep + h;
    const double up = f();
    values[i] = keep - h;
    const double down = f();
    values[i] = keep;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double max_rel_error(const std::vector<double>& a, std::span<const double> b, double floor) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

ad::Tensor random_tensor(std::size_t rows, std::size_t cols, std::uint64_t seed, double lo, double hi,
                         bool requires_grad) {
  Rng rng(seed);
  std::vector<double> v(rows * cols);
  for (double& x : v) x = rng.uniform(lo, hi);
  return ad::Tensor::from({rows, cols}, std::move(v), requires_grad);
}

ToyGraph random_toy_graph(std::size_t nodes, std::size_t extra_edges, std::uint64_t seed) {
  Rng rng(seed);
  std::set<std::pair<std::size_t, std::size_t>> undirected;
  for (std::size_t i = 1; i < nodes; ++i) undirected.emplace(rng.index(i), i);
  while (undirected.size() < nodes - 1 + extra_edges) {
    const std::size_t a = rng.index(nodes), b = rng.index(nodes);
    if (a != b) undirected.emplace(std::min(a, b), std::max(a, b));
  }
  ToyGraph g;
  g.nodes = nodes;
  for (auto [a, b] : undirected) {
    g.src.push_back(a);
    g.dst.push_back(b);
    g.src.push_back(b);
    g.dst.push_back(a);
  }
  return g;
}

GraphBatch toy_batch(const ToyGraph& g, std::size_t node_in, std::uint64_t seed) {
  GraphBatch b;
  b.graphs = 1;
  b.nodes_per_graph = g.nodes;
  b.edges_per_graph = g.src.size();
  b.src = g.src;
  b.dst = g.dst;
  b.node_features = random_tensor(g.nodes, node_in, derive_seed(seed, 1), 0.0, 1.0, false);
  b.edge_features = random_tensor(g.src.size(), kEdgeFeatureCount, derive_seed(seed, 2), 0.0, 1.0, false);
  b.targets = random_tensor(g.src.size(), 1, derive_seed(seed, 3), 0.0, 1.0, false);
  return b;
}

void randomize(ModelParams& params, std::uint64_t seed, double scale) {
  Rng rng(seed);
  for (auto t : params.tensors()) {
    for (double& v : t.mutable_values()) v = rng.uniform(-scale, scale);
  }
}

}  // namespace testsupport

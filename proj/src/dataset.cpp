#include "suegnn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "suegnn/io.hpp"
#include "suegnn/rng.hpp"

namespace suegnn {

FeatureTensors assemble_features(const Scenario& scenario, const Network& network) {
  const std::size_t v = network.num_nodes();
  const std::size_t z = network.num_zones();
  const std::size_t e = network.num_edges();
  if (scenario.od.zones() != z) throw ValidationError("scenario OD matrix does not match network zones");
  for (const auto* vec : {&scenario.speeds, &scenario.capacities, &scenario.solution.edge_flows}) {
    if (vec->size() != e) throw ValidationError("scenario edge vectors do not match network edges");
  }

  FeatureTensors t;
  t.scenario_id = scenario.scenario_id;
  t.node_features = Matrix(v, z);
  for (std::size_t zone = 0; zone < z; ++zone) {
    auto row = t.node_features.row(network.zone_node_index(zone));
    for (std::size_t s = 0; s < z; ++s) row[s] = scenario.od(zone, s);
  }
  t.edge_features = Matrix(e, kEdgeFeatureCount);
  const auto t0 = free_flow_times(network, scenario.speeds);
  for (std::size_t k = 0; k < e; ++k) {
    t.edge_features(k, 0) = t0[k];
    t.edge_features(k, 1) = scenario.speeds[k];
    t.edge_features(k, 2) = scenario.capacities[k];
    t.edge_index.emplace_back(network.edge_tail(k), network.edge_head(k));
  }
  t.targets = scenario.solution.edge_flows;
  return t;
}

namespace {

struct RangeAccumulator {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  MinMax finish() const { return {lo, hi}; }
};

}  // namespace

Normalizer fit_normalizer(std::span<const FeatureTensors> train) {
  if (train.empty()) throw std::invalid_argument("fit_normalizer: empty training set");
  RangeAccumulator node, target;
  std::array<RangeAccumulator, kEdgeFeatureCount> edge;
  for (const auto& t : train) {
    for (double v : t.node_features.data()) node.add(v);
    for (std::size_t k = 0; k < t.edge_features.rows(); ++k) {
      for (std::size_t c = 0; c < kEdgeFeatureCount; ++c) edge[c].add(t.edge_features(k, c));
    }
    for (double v : t.targets) target.add(v);
  }
  Normalizer n;
  n.node = node.finish();
  for (std::size_t c = 0; c < kEdgeFeatureCount; ++c) n.edge[c] = edge[c].finish();
  n.target = target.finish();
  return n;
}

FeatureTensors Normalizer::transform(const FeatureTensors& raw) const {
  FeatureTensors out = raw;
  for (double& v : out.node_features.data()) v = node.transform(v);
  for (std::size_t k = 0; k < out.edge_features.rows(); ++k) {
    for (std::size_t c = 0; c < kEdgeFeatureCount; ++c) out.edge_features(k, c) = edge[c].transform(raw.edge_features(k, c));
  }
  for (double& v : out.targets) v = target.transform(v);
  return out;
}

FeatureTensors Normalizer::inverse_transform(const FeatureTensors& normalized) const {
  FeatureTensors out = normalized;
  for (double& v : out.node_features.data()) v = node.inverse(v);
  for (std::size_t k = 0; k < out.edge_features.rows(); ++k) {
    for (std::size_t c = 0; c < kEdgeFeatureCount; ++c) {
      out.edge_features(k, c) = edge[c].inverse(normalized.edge_features(k, c));
    }
  }
  for (double& v : out.targets) v = target.inverse(v);
  return out;
}

nlohmann::ordered_json to_json(const Normalizer& n) {
  auto mm = [](const MinMax& m) { return nlohmann::ordered_json{{"min", m.min}, {"max", m.max}}; };
  return {{"node", mm(n.node)},
          {"edge", {{"free_flow_time", mm(n.edge[0])}, {"speed", mm(n.edge[1])}, {"capacity", mm(n.edge[2])}}},
          {"target", mm(n.target)}};
}

Normalizer normalizer_from_json(const nlohmann::json& j) {
  auto mm = [](const nlohmann::json& m) { return MinMax{m.at("min").get<double>(), m.at("max").get<double>()}; };
  Normalizer n;
  n.node = mm(j.at("node"));
  n.edge = {mm(j.at("edge").at("free_flow_time")), mm(j.at("edge").at("speed")), mm(j.at("edge").at("capacity"))};
  n.target = mm(j.at("target"));
  return n;
}

SplitIndex split_dataset(std::span<const std::uint64_t> ids, std::array<double, 3> proportions, std::uint64_t seed) {
  for (double p : proportions) {
    if (!(p >= 0.0)) throw ValidationError("split proportions must be nonnegative");
  }
  if (std::abs(proportions[0] + proportions[1] + proportions[2] - 1.0) > 1e-9) {
    throw ValidationError("split proportions must sum to 1");
  }
  std::vector<std::uint64_t> shuffled(ids.begin(), ids.end());
  Rng(seed).shuffle(std::span(shuffled));
  const auto n = static_cast<double>(shuffled.size());
  const auto n_train = static_cast<std::size_t>(std::llround(proportions[0] * n));
  const auto n_val = std::min(shuffled.size() - n_train, static_cast<std::size_t>(std::llround(proportions[1] * n)));

  SplitIndex split;
  split.proportions = proportions;
  split.seed = seed;
  auto it = shuffled.begin();
  split.train.assign(it, it + static_cast<std::ptrdiff_t>(n_train));
  it += static_cast<std::ptrdiff_t>(n_train);
  split.val.assign(it, it + static_cast<std::ptrdiff_t>(n_val));
  it += static_cast<std::ptrdiff_t>(n_val);
  split.test.assign(it, shuffled.end());
  return split;
}

nlohmann::ordered_json to_json(const SplitIndex& s) {
  return {{"proportions", s.proportions}, {"seed", s.seed}, {"train", s.train}, {"val", s.val}, {"test", s.test}};
}

SplitIndex split_from_json(const nlohmann::json& j) {
  SplitIndex s;
  s.proportions = j.at("proportions").get<std::array<double, 3>>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.train = j.at("train").get<std::vector<std::uint64_t>>();
  s.val = j.at("val").get<std::vector<std::uint64_t>>();
  s.test = j.at("test").get<std::vector<std::uint64_t>>();
  return s;
}

namespace {
constexpr char kBundleMagic[8] = {'S', 'U', 'E', 'G', 'N', 'N', 'T', '1'};
}

void write_tensor_bundle(const std::filesystem::path& path, std::span<const FeatureTensors> tensors) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(kBundleMagic, sizeof kBundleMagic);
    const std::size_t v = tensors.empty() ? 0 : tensors[0].node_features.rows();
    const std::size_t z = tensors.empty() ? 0 : tensors[0].node_features.cols();
    const std::size_t e = tensors.empty() ? 0 : tensors[0].edge_features.rows();
    write_u64(out, tensors.size());
    write_u64(out, v);
    write_u64(out, z);
    write_u64(out, e);
    if (!tensors.empty()) {
      for (auto [a, b] : tensors[0].edge_index) {
        write_u64(out, a);
        write_u64(out, b);
      }
    }
    for (const auto& t : tensors) {
      if (t.node_features.rows() != v || t.node_features.cols() != z || t.edge_features.rows() != e ||
          t.targets.size() != e || t.edge_index != tensors[0].edge_index) {
        throw ValidationError("tensor bundle entries must share one topology");
      }
      write_u64(out, t.scenario_id);
      write_f64s(out, t.node_features.data());
      write_f64s(out, t.edge_features.data());
      write_f64s(out, t.targets);
    }
    if (!out) throw std::runtime_error("write failed for " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<FeatureTensors> read_tensor_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kBundleMagic, 8) != 0) {
    throw ParseError(path.string() + ": not a tensor bundle", 0);
  }
  const std::uint64_t n = read_u64(in), v = read_u64(in), z = read_u64(in), e = read_u64(in);
  std::vector<std::pair<std::size_t, std::size_t>> edge_index(e);
  for (auto& [a, b] : edge_index) {
    a = read_u64(in);
    b = read_u64(in);
  }
  std::vector<FeatureTensors> out(n);
  for (auto& t : out) {
    t.scenario_id = read_u64(in);
    t.node_features = Matrix(v, z);
    t.edge_features = Matrix(e, kEdgeFeatureCount);
    t.targets.resize(e);
    read_f64s(in, t.node_features.data());
    read_f64s(in, t.edge_features.data());
    read_f64s(in, t.targets);
    t.edge_index = edge_index;
  }
  return out;
}

}  // namespace suegnn

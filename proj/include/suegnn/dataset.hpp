#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "json.hpp"

#include "suegnn/matrix.hpp"
#include "suegnn/network.hpp"
#include "suegnn/scenario.hpp"

namespace suegnn {

/// Model-ready view of one scenario.
///   node_features  |V| x Z  row i = outgoing OD demand of node i (zero for non-centroids)
///   edge_features  |E| x 3  columns: free-flow time (min), speed (km/h), capacity (veh/h)
///   targets        |E|      equilibrium edge flows
struct FeatureTensors {
  std::uint64_t scenario_id = 0;
  Matrix node_features;
  Matrix edge_features;
  std::vector<std::pair<std::size_t, std::size_t>> edge_index;
  std::vector<double> targets;

  bool operator==(const FeatureTensors&) const = default;
};

inline constexpr std::size_t kEdgeFeatureCount = 3;

FeatureTensors assemble_features(const Scenario& scenario, const Network& network);

struct MinMax {
  double min = 0.0;
  double max = 0.0;

  /// (v - min) / (max - min); 0 when the feature is constant.
  double transform(double v) const { return max > min ? (v - min) / (max - min) : 0.0; }
  double inverse(double v) const { return max > min ? min + v * (max - min) : min; }
  bool operator==(const MinMax&) const = default;
};

/// MinMax statistics fitted on training tensors: one global range for all
/// OD entries, one per edge-feature column, one global range for flows.
struct Normalizer {
  MinMax node;
  std::array<MinMax, kEdgeFeatureCount> edge;
  MinMax target;

  FeatureTensors transform(const FeatureTensors& raw) const;
  FeatureTensors inverse_transform(const FeatureTensors& normalized) const;
  bool operator==(const Normalizer&) const = default;
};

Normalizer fit_normalizer(std::span<const FeatureTensors> train);

nlohmann::ordered_json to_json(const Normalizer& normalizer);
Normalizer normalizer_from_json(const nlohmann::json& j);

struct SplitIndex {
  std::vector<std::uint64_t> train;
  std::vector<std::uint64_t> val;
  std::vector<std::uint64_t> test;
  std::array<double, 3> proportions{0.6, 0.2, 0.2};
  std::uint64_t seed = 0;
};

/// Seeded shuffle, then train/val sizes by rounding and the remainder to test.
SplitIndex split_dataset(std::span<const std::uint64_t> ids, std::array<double, 3> proportions, std::uint64_t seed);

nlohmann::ordered_json to_json(const SplitIndex& split);
SplitIndex split_from_json(const nlohmann::json& j);

/// tensors.bin: magic "SUEGNNT1", then u64 counts (scenarios, nodes, zones,
/// edges), the edge index as u64 pairs, and per scenario: u64 id followed by
/// node features, edge features and targets as little-endian f64, row-major.
void write_tensor_bundle(const std::filesystem::path& path, std::span<const FeatureTensors> tensors);
std::vector<FeatureTensors> read_tensor_bundle(const std::filesystem::path& path);

}  // namespace suegnn

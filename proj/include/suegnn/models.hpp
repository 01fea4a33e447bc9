#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "suegnn/dataset.hpp"
#include "suegnn/network.hpp"
#include "suegnn/tensor.hpp"

namespace suegnn {

enum class ModelKind { GatedGcn, Gcn, Mlp };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

struct GatedGcnConfig {
  std::size_t hidden_dim = 64;
  std::size_t num_layers = 6;
  std::size_t decoder_hidden = 64;
  bool residual = true;
  double gate_eps = 1e-6;
  /// Divide aggregated messages by the sum of gates; false gives the plain sum.
  bool gate_normalized = true;
};

struct GcnConfig {
  std::size_t hidden_dim = 64;
  std::size_t num_layers = 6;
  std::size_t decoder_hidden = 64;
};

struct MlpConfig {
  std::size_t hidden_dim = 512;
  std::size_t num_layers = 5;
};

/// Named parameter tensors in creation order.
class ModelParams {
 public:
  ad::Tensor& add(std::string name, ad::Shape shape);
  const ad::Tensor& operator[](const std::string& name) const;
  ad::Tensor& operator[](const std::string& name);
  bool contains(const std::string& name) const;

  const ad::NamedTensors& entries() const { return entries_; }
  std::vector<ad::Tensor> tensors() const;
  std::size_t count() const;

  /// Glorot-uniform weights (rank 2), zero biases; parameter k draws from derive_seed(seed, k).
  void glorot_init(std::uint64_t seed);
  /// Deep copy of values (no shared storage).
  ModelParams clone() const;
  /// Replaces values with those of `other`; names and shapes must match.
  void assign(const ModelParams& other);

  static ModelParams from_named(ad::NamedTensors tensors);

 private:
  ad::NamedTensors entries_;
};

/// Disjoint union of B graphs sharing one topology; node i of graph b is row b*V + i.
struct GraphBatch {
  std::size_t graphs = 0;
  std::size_t nodes_per_graph = 0;
  std::size_t edges_per_graph = 0;
  ad::Tensor node_features;  // [B*V, Z]
  ad::Tensor edge_features;  // [B*E, 3]
  std::vector<std::size_t> src;
  std::vector<std::size_t> dst;
  ad::Tensor targets;  // [B*E, 1]

  std::size_t num_nodes() const { return graphs * nodes_per_graph; }
  std::size_t num_edges() const { return graphs * edges_per_graph; }
};

GraphBatch make_batch(std::span<const FeatureTensors> items, std::span<const std::size_t> pick);
GraphBatch make_batch(std::span<const FeatureTensors> items);

// ---- GatedGCN -------------------------------------------------------------

struct Embeddings {
  ad::Tensor nodes;  // [N, d]
  ad::Tensor edges;  // [M, d]
};

ModelParams init_gatedgcn(std::size_t node_in, std::size_t edge_in, const GatedGcnConfig& config,
                          std::uint64_t seed);

/// Affine node and edge encoders: h = x W + b, e = a W_e + b_e.
Embeddings encode(const ad::Tensor& node_features, const ad::Tensor& edge_features, const ModelParams& params);

/// One gated message-passing layer over directed edges src -> dst:
///   e' = e + relu(h_src A + h_dst B + e C)
///   eta = sigmoid(e')
///   m_dst = sum(eta * (h_src V)) / (sum(eta) + eps)
///   h' = h + relu(h U + m)
Embeddings gatedgcn_layer(const Embeddings& in, std::span<const std::size_t> src, std::span<const std::size_t> dst,
                          const ModelParams& params, std::size_t layer, const GatedGcnConfig& config);

/// Per-edge two-layer MLP over concat(h_src, h_dst, edge embedding); returns [M, 1].
ad::Tensor decode(const ad::Tensor& nodes, const ad::Tensor& edges, std::span<const std::size_t> src,
                  std::span<const std::size_t> dst, const ModelParams& params);

ad::Tensor forward_gatedgcn(const GraphBatch& batch, const ModelParams& params, const GatedGcnConfig& config);

// ---- GCN baseline ---------------------------------------------------------

/// Entries of D^-1/2 (A + I) D^-1/2 over the undirected version of the graph.
struct GcnPropagation {
  std::vector<std::size_t> row;
  std::vector<std::size_t> col;
  std::vector<double> weight;
  std::size_t num_nodes = 0;
};

GcnPropagation gcn_propagation(std::size_t num_nodes, std::span<const std::size_t> src,
                               std::span<const std::size_t> dst);
ad::Tensor gcn_layer(const ad::Tensor& h, const GcnPropagation& prop, const ad::Tensor& weight);

ModelParams init_gcn(std::size_t node_in, const GcnConfig& config, std::uint64_t seed);
/// Node features only; edge attributes never enter the computation.
ad::Tensor forward_gcn_baseline(const GraphBatch& batch, const ModelParams& params, const GcnConfig& config);

// ---- MLP baseline ---------------------------------------------------------

/// Fixed-topology input layout: flattened Z x Z OD block, E x 3 edge
/// features, V x V adjacency and V x E incidence.
struct MlpLayout {
  std::size_t zones = 0;
  std::size_t nodes = 0;
  std::size_t edges = 0;
  std::vector<std::size_t> zone_nodes;
  std::vector<std::pair<std::size_t, std::size_t>> edge_index;
  std::vector<double> structure;  // flattened adjacency followed by incidence

  std::size_t input_dim() const { return zones * zones + edges * 3 + structure.size(); }
};

MlpLayout mlp_layout(const Network& network);
ModelParams init_mlp(const MlpLayout& layout, const MlpConfig& config, std::uint64_t seed);
/// [B, input_dim] constant input matrix.
ad::Tensor mlp_input(const GraphBatch& batch, const MlpLayout& layout);
/// Returns [B*E, 1] in (graph, edge) order. Throws ValidationError on topology mismatch.
ad::Tensor forward_mlp_baseline(const GraphBatch& batch, const MlpLayout& layout, const ModelParams& params,
                                const MlpConfig& config);

// ---- Mean baseline --------------------------------------------------------

/// Per-edge mean of the given target vectors.
std::vector<double> mean_baseline(std::span<const std::vector<double>> eval_targets);

// ---- Uniform wrapper ------------------------------------------------------

struct ModelConfigs {
  GatedGcnConfig gatedgcn;
  GcnConfig gcn;
  MlpConfig mlp;
};

/// A trained or trainable learned model with its configuration.
class Metamodel {
 public:
  static Metamodel create(ModelKind kind, const Network& network, std::uint64_t seed,
                          const ModelConfigs& configs = {});

  ModelKind kind() const { return kind_; }
  std::string name() const { return to_string(kind_); }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }

  const ModelConfigs& configs() const { return configs_; }

  /// Per-edge predictions [B*E, 1].
  ad::Tensor forward(const GraphBatch& batch) const;
  /// Forward without tape, one vector per graph in the batch.
  std::vector<std::vector<double>> predict(std::span<const FeatureTensors> items, std::size_t batch_size = 64) const;

  nlohmann::ordered_json config_json() const;
  /// Writes model.ckpt and model.json into dir.
  void save(const std::filesystem::path& dir, const nlohmann::ordered_json& extra = {}) const;
  static Metamodel load(const std::filesystem::path& dir, const Network& network);

 private:
  ModelKind kind_ = ModelKind::GatedGcn;
  ModelConfigs configs_;
  ModelParams params_;
  MlpLayout layout_;
  std::uint64_t seed_ = 0;
};

}  // namespace suegnn

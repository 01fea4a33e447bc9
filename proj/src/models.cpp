#include "suegnn/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "suegnn/io.hpp"
#include "suegnn/rng.hpp"

namespace suegnn {

using ad::Tensor;

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::GatedGcn: return "gatedgcn";
    case ModelKind::Gcn: return "gcn";
    case ModelKind::Mlp: return "mlp";
  }
  return "unknown";
}

ModelKind parse_model_kind(const std::string& name) {
  if (name == "gatedgcn") return ModelKind::GatedGcn;
  if (name == "gcn") return ModelKind::Gcn;
  if (name == "mlp") return ModelKind::Mlp;
  throw ValidationError("unknown model '" + name + "' (expected gatedgcn|gcn|mlp)");
}

// ---- ModelParams -----------------------------------------------------------

Tensor& ModelParams::add(std::string name, ad::Shape shape) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter " + name);
  entries_.emplace_back(std::move(name), Tensor::zeros(std::move(shape), true));
  return entries_.back().second;
}

const Tensor& ModelParams::operator[](const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw std::out_of_range("no parameter named " + name);
}

Tensor& ModelParams::operator[](const std::string& name) {
  return const_cast<Tensor&>(std::as_const(*this)[name]);
}

bool ModelParams::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

std::vector<Tensor> ModelParams::tensors() const {
  std::vector<Tensor> out;
  for (const auto& e : entries_) out.push_back(e.second);
  return out;
}

std::size_t ModelParams::count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.numel();
  return n;
}

void ModelParams::glorot_init(std::uint64_t seed) {
  for (std::size_t k = 0; k < entries_.size(); ++k) {
    Tensor& t = entries_[k].second;
    auto values = t.mutable_values();
    if (t.rank() == 2) {
      const double limit = std::sqrt(6.0 / static_cast<double>(t.shape()[0] + t.shape()[1]));
      Rng rng(derive_seed(seed, k));
      for (double& v : values) v = rng.uniform(-limit, limit);
    } else {
      std::fill(values.begin(), values.end(), 0.0);
    }
  }
}

ModelParams ModelParams::clone() const {
  ModelParams out;
  for (const auto& [name, t] : entries_) {
    out.entries_.emplace_back(name, Tensor::from(t.shape(), {t.values().begin(), t.values().end()}, true));
  }
  return out;
}

void ModelParams::assign(const ModelParams& other) {
  if (other.entries_.size() != entries_.size()) throw std::invalid_argument("parameter sets differ");
  for (std::size_t k = 0; k < entries_.size(); ++k) {
    auto& [name, t] = entries_[k];
    const auto& [oname, ot] = other.entries_[k];
    if (name != oname || t.shape() != ot.shape()) throw std::invalid_argument("parameter mismatch at " + name);
    std::copy(ot.values().begin(), ot.values().end(), t.mutable_values().begin());
  }
}

ModelParams ModelParams::from_named(ad::NamedTensors tensors) {
  ModelParams out;
  out.entries_ = std::move(tensors);
  return out;
}

// ---- Batching --------------------------------------------------------------

GraphBatch make_batch(std::span<const FeatureTensors> items, std::span<const std::size_t> pick) {
  if (pick.empty()) throw std::invalid_argument("make_batch: empty batch");
  const FeatureTensors& first = items[pick[0]];
  GraphBatch b;
  b.graphs = pick.size();
  b.nodes_per_graph = first.node_features.rows();
  b.edges_per_graph = first.edge_features.rows();
  const std::size_t z = first.node_features.cols();
  const std::size_t ef = first.edge_features.cols();

  std::vector<double> x, ea, y;
  x.reserve(b.num_nodes() * z);
  ea.reserve(b.num_edges() * ef);
  y.reserve(b.num_edges());
  for (std::size_t g = 0; g < pick.size(); ++g) {
    const FeatureTensors& t = items[pick[g]];
    if (t.node_features.rows() != b.nodes_per_graph || t.node_features.cols() != z ||
        t.edge_features.rows() != b.edges_per_graph || t.edge_index != first.edge_index) {
      throw ValidationError("make_batch: graphs in a batch must share one topology");
    }
    x.insert(x.end(), t.node_features.data().begin(), t.node_features.data().end());
    ea.insert(ea.end(), t.edge_features.data().begin(), t.edge_features.data().end());
    y.insert(y.end(), t.targets.begin(), t.targets.end());
    const std::size_t offset = g * b.nodes_per_graph;
    for (auto [s, d] : t.edge_index) {
      b.src.push_back(s + offset);
      b.dst.push_back(d + offset);
    }
  }
  b.node_features = Tensor::from({b.num_nodes(), z}, std::move(x));
  b.edge_features = Tensor::from({b.num_edges(), ef}, std::move(ea));
  b.targets = Tensor::from({b.num_edges(), 1}, std::move(y));
  return b;
}

GraphBatch make_batch(std::span<const FeatureTensors> items) {
  std::vector<std::size_t> all(items.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return make_batch(items, all);
}

// ---- GatedGCN --------------------------------------------------------------

namespace {

Tensor affine(const Tensor& x, const ModelParams& p, const std::string& name) {
  return ad::add_bias(ad::matmul(x, p[name + ".W"]), p[name + ".b"]);
}

void add_linear(ModelParams& p, const std::string& name, std::size_t in, std::size_t out) {
  p.add(name + ".W", {in, out});
  p.add(name + ".b", {out});
}

std::string layer_name(std::size_t l, const char* what) { return "layer" + std::to_string(l) + "." + what; }

void add_decoder(ModelParams& p, std::size_t in, std::size_t hidden) {
  add_linear(p, "dec.fc1", in, hidden);
  add_linear(p, "dec.fc2", hidden, 1);
}

Tensor edge_decoder(const Tensor& z, const ModelParams& p) {
  return affine(ad::relu(affine(z, p, "dec.fc1")), p, "dec.fc2");
}

}  // namespace

ModelParams init_gatedgcn(std::size_t node_in, std::size_t edge_in, const GatedGcnConfig& config,
                          std::uint64_t seed) {
  if (config.hidden_dim == 0 || config.num_layers == 0) throw ValidationError("GatedGCN needs hidden_dim, num_layers >= 1");
  const std::size_t d = config.hidden_dim;
  ModelParams p;
  add_linear(p, "enc.node", node_in, d);
  add_linear(p, "enc.edge", edge_in, d);
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    for (const char* m : {"A", "B", "C", "U", "V"}) add_linear(p, layer_name(l, m), d, d);
  }
  add_decoder(p, 3 * d, config.decoder_hidden);
  p.glorot_init(seed);
  return p;
}

Embeddings encode(const Tensor& node_features, const Tensor& edge_features, const ModelParams& params) {
  return {affine(node_features, params, "enc.node"), affine(edge_features, params, "enc.edge")};
}

Embeddings gatedgcn_layer(const Embeddings& in, std::span<const std::size_t> src, std::span<const std::size_t> dst,
                          const ModelParams& params, std::size_t layer, const GatedGcnConfig& config) {
  const Tensor& h = in.nodes;
  const Tensor& e = in.edges;
  const std::size_t n = h.rows();

  const Tensor ah = affine(h, params, layer_name(layer, "A"));
  const Tensor bh = affine(h, params, layer_name(layer, "B"));
  const Tensor vh = affine(h, params, layer_name(layer, "V"));
  const Tensor ce = affine(e, params, layer_name(layer, "C"));

  const Tensor edge_update = ad::relu(ad::add(ad::add(ad::gather_rows(ah, src), ad::gather_rows(bh, dst)), ce));
  Tensor e_out = config.residual ? ad::add(e, edge_update) : edge_update;

  const Tensor gate = ad::sigmoid(e_out);
  const Tensor messages = ad::mul(gate, ad::gather_rows(vh, src));
  Tensor aggregated = ad::scatter_sum_rows(messages, dst, n);
  if (config.gate_normalized) {
    const Tensor gate_sum = ad::scatter_sum_rows(gate, dst, n);
    aggregated = ad::div(aggregated, ad::add_scalar(gate_sum, config.gate_eps));
  }
  const Tensor node_update = ad::relu(ad::add(affine(h, params, layer_name(layer, "U")), aggregated));
  Tensor h_out = config.residual ? ad::add(h, node_update) : node_update;
  return {std::move(h_out), std::move(e_out)};
}

Tensor decode(const Tensor& nodes, const Tensor& edges, std::span<const std::size_t> src,
              std::span<const std::size_t> dst, const ModelParams& params) {
  const Tensor z = ad::concat_cols({ad::gather_rows(nodes, src), ad::gather_rows(nodes, dst), edges});
  return edge_decoder(z, params);
}

Tensor forward_gatedgcn(const GraphBatch& batch, const ModelParams& params, const GatedGcnConfig& config) {
  const Embeddings encoded = encode(batch.node_features, batch.edge_features, params);
  Embeddings state = encoded;
  for (std::size_t l = 0; l < config.num_layers; ++l) state = gatedgcn_layer(state, batch.src, batch.dst, params, l, config);
  return decode(state.nodes, encoded.edges, batch.src, batch.dst, params);
}

// ---- GCN -------------------------------------------------------------------

GcnPropagation gcn_propagation(std::size_t num_nodes, std::span<const std::size_t> src,
                               std::span<const std::size_t> dst) {
  std::set<std::pair<std::size_t, std::size_t>> entries;
  for (std::size_t i = 0; i < num_nodes; ++i) entries.emplace(i, i);
  for (std::size_t k = 0; k < src.size(); ++k) {
    entries.emplace(src[k], dst[k]);
    entries.emplace(dst[k], src[k]);
  }
  std::vector<double> degree(num_nodes, 0.0);
  for (auto [i, j] : entries) degree[i] += 1.0;
  GcnPropagation prop;
  prop.num_nodes = num_nodes;
  for (auto [i, j] : entries) {
    prop.row.push_back(i);
    prop.col.push_back(j);
    prop.weight.push_back(1.0 / std::sqrt(degree[i] * degree[j]));
  }
  return prop;
}

Tensor gcn_layer(const Tensor& h, const GcnPropagation& prop, const Tensor& weight) {
  const Tensor hw = ad::matmul(h, weight);
  const Tensor propagated =
      ad::scatter_sum_rows(ad::scale_rows(ad::gather_rows(hw, prop.col), prop.weight), prop.row, prop.num_nodes);
  return ad::relu(propagated);
}

ModelParams init_gcn(std::size_t node_in, const GcnConfig& config, std::uint64_t seed) {
  if (config.hidden_dim == 0 || config.num_layers == 0) throw ValidationError("GCN needs hidden_dim, num_layers >= 1");
  const std::size_t d = config.hidden_dim;
  ModelParams p;
  add_linear(p, "enc.node", node_in, d);
  for (std::size_t l = 0; l < config.num_layers; ++l) p.add(layer_name(l, "W"), {d, d});
  add_decoder(p, 2 * d, config.decoder_hidden);
  p.glorot_init(seed);
  return p;
}

Tensor forward_gcn_baseline(const GraphBatch& batch, const ModelParams& params, const GcnConfig& config) {
  const GcnPropagation prop = gcn_propagation(batch.num_nodes(), batch.src, batch.dst);
  Tensor h = affine(batch.node_features, params, "enc.node");
  for (std::size_t l = 0; l < config.num_layers; ++l) h = gcn_layer(h, prop, params[layer_name(l, "W")]);
  const Tensor z = ad::concat_cols({ad::gather_rows(h, batch.src), ad::gather_rows(h, batch.dst)});
  return edge_decoder(z, params);
}

// ---- MLP -------------------------------------------------------------------

MlpLayout mlp_layout(const Network& network) {
  MlpLayout layout;
  layout.zones = network.num_zones();
  layout.nodes = network.num_nodes();
  layout.edges = network.num_edges();
  for (std::size_t z = 0; z < layout.zones; ++z) layout.zone_nodes.push_back(network.zone_node_index(z));
  for (std::size_t e = 0; e < layout.edges; ++e) layout.edge_index.emplace_back(network.edge_tail(e), network.edge_head(e));
  const Matrix a = adjacency(network);
  const Matrix m = incidence(network);
  layout.structure = a.data();
  layout.structure.insert(layout.structure.end(), m.data().begin(), m.data().end());
  return layout;
}

ModelParams init_mlp(const MlpLayout& layout, const MlpConfig& config, std::uint64_t seed) {
  if (config.hidden_dim == 0 || config.num_layers == 0) throw ValidationError("MLP needs hidden_dim, num_layers >= 1");
  ModelParams p;
  std::size_t in = layout.input_dim();
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    add_linear(p, "fc" + std::to_string(l), in, config.hidden_dim);
    in = config.hidden_dim;
  }
  add_linear(p, "out", in, layout.edges);
  p.glorot_init(seed);
  return p;
}

Tensor mlp_input(const GraphBatch& batch, const MlpLayout& layout) {
  if (batch.nodes_per_graph != layout.nodes || batch.edges_per_graph != layout.edges ||
      batch.node_features.cols() != layout.zones) {
    throw ValidationError("MLP input: batch topology does not match the network the model was built for");
  }
  for (std::size_t e = 0; e < layout.edges; ++e) {
    if (batch.src[e] != layout.edge_index[e].first || batch.dst[e] != layout.edge_index[e].second) {
      throw ValidationError("MLP input: edge order does not match the model's network");
    }
  }
  const std::size_t dim = layout.input_dim();
  const std::size_t z = layout.zones;
  std::vector<double> x;
  x.reserve(batch.graphs * dim);
  auto nodes = batch.node_features.values();
  auto edges = batch.edge_features.values();
  const std::size_t edge_block = layout.edges * 3;
  for (std::size_t g = 0; g < batch.graphs; ++g) {
    for (std::size_t zone : layout.zone_nodes) {
      const std::size_t row = g * layout.nodes + zone;
      x.insert(x.end(), nodes.begin() + static_cast<std::ptrdiff_t>(row * z),
               nodes.begin() + static_cast<std::ptrdiff_t>((row + 1) * z));
    }
    x.insert(x.end(), edges.begin() + static_cast<std::ptrdiff_t>(g * edge_block),
             edges.begin() + static_cast<std::ptrdiff_t>((g + 1) * edge_block));
    x.insert(x.end(), layout.structure.begin(), layout.structure.end());
  }
  return Tensor::from({batch.graphs, dim}, std::move(x));
}

Tensor forward_mlp_baseline(const GraphBatch& batch, const MlpLayout& layout, const ModelParams& params,
                            const MlpConfig& config) {
  Tensor h = mlp_input(batch, layout);
  for (std::size_t l = 0; l < config.num_layers; ++l) h = ad::relu(affine(h, params, "fc" + std::to_string(l)));
  return ad::reshape(affine(h, params, "out"), {batch.num_edges(), 1});
}

// ---- Mean ------------------------------------------------------------------

std::vector<double> mean_baseline(std::span<const std::vector<double>> eval_targets) {
  if (eval_targets.empty()) throw std::invalid_argument("mean_baseline: empty evaluation set");
  std::vector<double> mean(eval_targets[0].size(), 0.0);
  for (const auto& t : eval_targets) {
    if (t.size() != mean.size()) throw ValidationError("mean_baseline: target vectors differ in length");
    for (std::size_t e = 0; e < t.size(); ++e) mean[e] += t[e];
  }
  for (double& m : mean) m /= static_cast<double>(eval_targets.size());
  return mean;
}

// ---- Metamodel -------------------------------------------------------------

Metamodel Metamodel::create(ModelKind kind, const Network& network, std::uint64_t seed, const ModelConfigs& configs) {
  Metamodel m;
  m.kind_ = kind;
  m.configs_ = configs;
  m.seed_ = seed;
  m.layout_ = mlp_layout(network);
  switch (kind) {
    case ModelKind::GatedGcn:
      m.params_ = init_gatedgcn(network.num_zones(), kEdgeFeatureCount, configs.gatedgcn, seed);
      break;
    case ModelKind::Gcn: m.params_ = init_gcn(network.num_zones(), configs.gcn, seed); break;
    case ModelKind::Mlp: m.params_ = init_mlp(m.layout_, configs.mlp, seed); break;
  }
  return m;
}

Tensor Metamodel::forward(const GraphBatch& batch) const {
  switch (kind_) {
    case ModelKind::GatedGcn: return forward_gatedgcn(batch, params_, configs_.gatedgcn);
    case ModelKind::Gcn: return forward_gcn_baseline(batch, params_, configs_.gcn);
    case ModelKind::Mlp: return forward_mlp_baseline(batch, layout_, params_, configs_.mlp);
  }
  throw std::logic_error("unknown model kind");
}

std::vector<std::vector<double>> Metamodel::predict(std::span<const FeatureTensors> items, std::size_t batch_size) const {
  ad::NoGradGuard no_grad;
  std::vector<std::vector<double>> out;
  out.reserve(items.size());
  std::vector<std::size_t> pick;
  for (std::size_t start = 0; start < items.size(); start += batch_size) {
    pick.clear();
    for (std::size_t i = start; i < std::min(items.size(), start + batch_size); ++i) pick.push_back(i);
    const GraphBatch batch = make_batch(items, pick);
    const Tensor pred = forward(batch);
    auto v = pred.values();
    for (std::size_t g = 0; g < batch.graphs; ++g) {
      out.emplace_back(v.begin() + static_cast<std::ptrdiff_t>(g * batch.edges_per_graph),
                       v.begin() + static_cast<std::ptrdiff_t>((g + 1) * batch.edges_per_graph));
    }
  }
  return out;
}

nlohmann::ordered_json Metamodel::config_json() const {
  nlohmann::ordered_json j;
  j["model"] = to_string(kind_);
  j["init"] = {{"scheme", "glorot_uniform"}, {"seed", seed_}};
  switch (kind_) {
    case ModelKind::GatedGcn: {
      const auto& c = configs_.gatedgcn;
      j["config"] = {{"hidden_dim", c.hidden_dim},     {"num_layers", c.num_layers}, {"decoder_hidden", c.decoder_hidden},
                     {"activation", "relu"},           {"residual", c.residual},     {"gate_eps", c.gate_eps},
                     {"gate_normalized", c.gate_normalized}};
      break;
    }
    case ModelKind::Gcn: {
      const auto& c = configs_.gcn;
      j["config"] = {{"hidden_dim", c.hidden_dim}, {"num_layers", c.num_layers}, {"decoder_hidden", c.decoder_hidden}};
      break;
    }
    case ModelKind::Mlp: {
      const auto& c = configs_.mlp;
      j["config"] = {{"hidden_dim", c.hidden_dim}, {"num_layers", c.num_layers}, {"input_dim", layout_.input_dim()}};
      break;
    }
  }
  j["parameter_count"] = params_.count();
  return j;
}

void Metamodel::save(const std::filesystem::path& dir, const nlohmann::ordered_json& extra) const {
  ensure_directory(dir);
  ad::save_checkpoint(dir / "model.ckpt", params_.entries());
  nlohmann::ordered_json j = config_json();
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  write_text_file(dir / "model.json", j.dump(2) + "\n");
}

Metamodel Metamodel::load(const std::filesystem::path& dir, const Network& network) {
  const auto j = nlohmann::json::parse(read_text_file(dir / "model.json"));
  ModelConfigs configs;
  const ModelKind kind = parse_model_kind(j.at("model").get<std::string>());
  const auto& c = j.at("config");
  switch (kind) {
    case ModelKind::GatedGcn:
      configs.gatedgcn.hidden_dim = c.at("hidden_dim").get<std::size_t>();
      configs.gatedgcn.num_layers = c.at("num_layers").get<std::size_t>();
      configs.gatedgcn.decoder_hidden = c.at("decoder_hidden").get<std::size_t>();
      configs.gatedgcn.residual = c.at("residual").get<bool>();
      configs.gatedgcn.gate_eps = c.at("gate_eps").get<double>();
      configs.gatedgcn.gate_normalized = c.at("gate_normalized").get<bool>();
      break;
    case ModelKind::Gcn:
      configs.gcn.hidden_dim = c.at("hidden_dim").get<std::size_t>();
      configs.gcn.num_layers = c.at("num_layers").get<std::size_t>();
      configs.gcn.decoder_hidden = c.at("decoder_hidden").get<std::size_t>();
      break;
    case ModelKind::Mlp:
      configs.mlp.hidden_dim = c.at("hidden_dim").get<std::size_t>();
      configs.mlp.num_layers = c.at("num_layers").get<std::size_t>();
      break;
  }
  Metamodel m = create(kind, network, j.at("init").at("seed").get<std::uint64_t>(), configs);
  const ModelParams loaded = ModelParams::from_named(ad::load_checkpoint(dir / "model.ckpt"));
  m.params_.assign(loaded);
  return m;
}

}  // namespace suegnn

#include <cmath>
#include <numeric>

#include "doctest.h"
#include "suegnn/models.hpp"
#include "support.hpp"

using namespace suegnn;
using ad::Tensor;
using testsupport::random_tensor;

namespace {

std::vector<double> values(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

void zero(ModelParams& p) {
  for (auto t : p.tensors()) std::fill(t.mutable_values().begin(), t.mutable_values().end(), 0.0);
}

/// Plain-loop affine map x W + b for a row-major x [n, in].
std::vector<double> affine_ref(const std::vector<double>& x, std::size_t n, const Tensor& w, const Tensor& b) {
  const std::size_t in = w.shape()[0], out = w.shape()[1];
  std::vector<double> y(n * out);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < out; ++o) {
      double s = b.values()[o];
      for (std::size_t k = 0; k < in; ++k) s += x[i * in + k] * w.values()[k * out + o];
      y[i * out + o] = s;
    }
  }
  return y;
}

double relu_ref(double v) { return v > 0.0 ? v : 0.0; }
double sigmoid_ref(double v) { return 1.0 / (1.0 + std::exp(-v)); }

void check_close(const std::vector<double>& a, std::span<const double> b, double tol = 1e-12) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= tol * std::max(1.0, std::abs(a[i])));
}

}  // namespace

TEST_CASE("encoder with identity weights copies features") {
  GatedGcnConfig cfg;
  cfg.hidden_dim = 4;
  cfg.num_layers = 1;
  ModelParams p = init_gatedgcn(4, 3, cfg, 1);
  zero(p);
  auto w = p["enc.node.W"].mutable_values();
  for (std::size_t i = 0; i < 4; ++i) w[i * 4 + i] = 1.0;
  const Tensor x = random_tensor(5, 4, 2, -1, 1, false);
  const Tensor e = random_tensor(6, 3, 3, -1, 1, false);
  const Embeddings out = encode(x, e, p);
  CHECK(values(out.nodes) == values(x));
  for (double v : out.edges.values()) CHECK(v == 0.0);

  testsupport::randomize(p, 9, 0.5);
  const Embeddings r = encode(x, e, p);
  check_close(affine_ref(values(x), 5, p["enc.node.W"], p["enc.node.b"]), r.nodes.values());
  check_close(affine_ref(values(e), 6, p["enc.edge.W"], p["enc.edge.b"]), r.edges.values());
}

TEST_CASE("zero-weight gated layer is the identity under residuals") {
  GatedGcnConfig cfg;
  cfg.hidden_dim = 8;
  ModelParams p = init_gatedgcn(3, 3, cfg, 1);
  zero(p);
  const auto g = testsupport::random_toy_graph(7, 4, 5);
  const Embeddings in{random_tensor(7, 8, 6), random_tensor(g.src.size(), 8, 7)};
  const Embeddings out = gatedgcn_layer(in, g.src, g.dst, p, 0, cfg);
  CHECK(values(out.nodes) == values(in.nodes));
  CHECK(values(out.edges) == values(in.edges));
}

TEST_CASE("isolated node update depends on its own state only") {
  GatedGcnConfig cfg;
  cfg.hidden_dim = 3;
  cfg.num_layers = 1;
  ModelParams p = init_gatedgcn(3, 3, cfg, 2);
  testsupport::randomize(p, 4, 0.7);
  // node 2 has no incoming edge
  const std::vector<std::size_t> src{0, 1}, dst{1, 0};
  const Embeddings in{random_tensor(3, 3, 1), random_tensor(2, 3, 2)};
  const Embeddings out = gatedgcn_layer(in, src, dst, p, 0, cfg);
  const auto h = values(in.nodes);
  const std::vector<double> h2(h.begin() + 6, h.end());
  const auto u = affine_ref(h2, 1, p["layer0.U.W"], p["layer0.U.b"]);
  for (std::size_t k = 0; k < 3; ++k) CHECK(out.nodes.values()[6 + k] == doctest::Approx(h2[k] + relu_ref(u[k])));
}

TEST_CASE("gated layer matches a step-by-step evaluation on a 3-node path") {
  const std::size_t d = 2;
  GatedGcnConfig cfg;
  cfg.hidden_dim = d;
  cfg.num_layers = 1;
  ModelParams p = init_gatedgcn(2, 3, cfg, 3);
  testsupport::randomize(p, 8, 0.5);
  const std::vector<std::size_t> src{0, 1, 1, 2}, dst{1, 0, 2, 1};
  const Tensor h = Tensor::from({3, d}, {0.1, 0.2, -0.3, 0.4, 0.5, -0.6});
  const Tensor e = Tensor::from({4, d}, {0.2, -0.1, 0.3, 0.0, -0.4, 0.1, 0.05, 0.25});
  const Embeddings out = gatedgcn_layer({h, e}, src, dst, p, 0, cfg);

  const auto hv = values(h), ev = values(e);
  const auto A = affine_ref(hv, 3, p["layer0.A.W"], p["layer0.A.b"]);
  const auto B = affine_ref(hv, 3, p["layer0.B.W"], p["layer0.B.b"]);
  const auto C = affine_ref(ev, 4, p["layer0.C.W"], p["layer0.C.b"]);
  const auto V = affine_ref(hv, 3, p["layer0.V.W"], p["layer0.V.b"]);
  const auto U = affine_ref(hv, 3, p["layer0.U.W"], p["layer0.U.b"]);
  std::vector<double> e_new(4 * d), num(3 * d, 0.0), den(3 * d, 0.0), h_new(3 * d);
  for (std::size_t k = 0; k < 4; ++k) {
    for (std::size_t c = 0; c < d; ++c) {
      const double upd = relu_ref(A[src[k] * d + c] + B[dst[k] * d + c] + C[k * d + c]);
      e_new[k * d + c] = ev[k * d + c] + upd;
      const double gate = sigmoid_ref(e_new[k * d + c]);
      num[dst[k] * d + c] += gate * V[src[k] * d + c];
      den[dst[k] * d + c] += gate;
    }
  }
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      const double m = num[i * d + c] / (den[i * d + c] + 1e-6);
      h_new[i * d + c] = hv[i * d + c] + relu_ref(U[i * d + c] + m);
    }
  }
  check_close(e_new, out.edges.values());
  check_close(h_new, out.nodes.values());

  GatedGcnConfig plain = cfg;
  plain.gate_normalized = false;
  const Embeddings unnormalized = gatedgcn_layer({h, e}, src, dst, p, 0, plain);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      CHECK(unnormalized.nodes.values()[i * d + c] ==
            doctest::Approx(hv[i * d + c] + relu_ref(U[i * d + c] + num[i * d + c])));
    }
  }
}

TEST_CASE("decoder") {
  GatedGcnConfig cfg;
  cfg.hidden_dim = 3;
  cfg.decoder_hidden = 4;
  ModelParams p = init_gatedgcn(2, 3, cfg, 3);
  zero(p);
  p["dec.fc2.b"].mutable_values()[0] = 0.375;
  const std::vector<std::size_t> src{0, 1}, dst{1, 0};
  const Tensor zero_nodes = Tensor::zeros({2, 3});
  const Tensor zero_edges = Tensor::zeros({2, 3});
  const Tensor bias_only = decode(zero_nodes, zero_edges, src, dst, p);
  for (double v : bias_only.values()) CHECK(v == 0.375);

  testsupport::randomize(p, 6, 0.6);
  const Tensor h = random_tensor(3, 3, 1), e = random_tensor(4, 3, 2);
  const std::vector<std::size_t> s{0, 1, 2, 2}, t{1, 2, 0, 1};
  const auto pred = decode(h, e, s, t, p);
  const auto hv = values(h), ev = values(e);
  for (std::size_t k = 0; k < 4; ++k) {
    std::vector<double> z;
    for (std::size_t c = 0; c < 3; ++c) z.push_back(hv[s[k] * 3 + c]);
    for (std::size_t c = 0; c < 3; ++c) z.push_back(hv[t[k] * 3 + c]);
    for (std::size_t c = 0; c < 3; ++c) z.push_back(ev[k * 3 + c]);
    auto hidden = affine_ref(z, 1, p["dec.fc1.W"], p["dec.fc1.b"]);
    for (double& v : hidden) v = relu_ref(v);
    CHECK(pred.values()[k] == doctest::Approx(affine_ref(hidden, 1, p["dec.fc2.W"], p["dec.fc2.b"])[0]));
  }

  // permuting edges permutes predictions
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  std::vector<std::size_t> ps, pt;
  std::vector<double> pe;
  for (std::size_t k : perm) {
    ps.push_back(s[k]);
    pt.push_back(t[k]);
    for (std::size_t c = 0; c < 3; ++c) pe.push_back(ev[k * 3 + c]);
  }
  const auto permuted = decode(h, Tensor::from({4, 3}, pe), ps, pt, p);
  for (std::size_t k = 0; k < 4; ++k) CHECK(permuted.values()[k] == pred.values()[perm[k]]);
}

TEST_CASE("gated forward is permutation equivariant") {
  GatedGcnConfig cfg;
  cfg.hidden_dim = 16;
  cfg.num_layers = 3;
  const auto g = testsupport::random_toy_graph(8, 5, 12);
  const GraphBatch batch = testsupport::toy_batch(g, 4, 13);
  const ModelParams p = init_gatedgcn(4, 3, cfg, 14);
  const auto base = values(forward_gatedgcn(batch, p, cfg));
  CHECK(values(forward_gatedgcn(batch, p, cfg)) == base);

  Rng rng(15);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::size_t> perm(8);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span(perm));
    GraphBatch relabeled = batch;
    std::vector<double> x(8 * 4);
    for (std::size_t i = 0; i < 8; ++i) {
      for (std::size_t c = 0; c < 4; ++c) x[perm[i] * 4 + c] = batch.node_features.values()[i * 4 + c];
    }
    relabeled.node_features = Tensor::from({8, 4}, x);
    for (std::size_t k = 0; k < g.src.size(); ++k) {
      relabeled.src[k] = perm[g.src[k]];
      relabeled.dst[k] = perm[g.dst[k]];
    }
    CHECK(values(forward_gatedgcn(relabeled, p, cfg)) == base);
  }
}

TEST_CASE("end-to-end gradient through loss and gated forward") {
  GatedGcnConfig cfg;
  cfg.hidden_dim = 5;
  cfg.num_layers = 2;
  cfg.decoder_hidden = 4;
  const auto g = testsupport::random_toy_graph(4, 1, 3);
  const GraphBatch batch = testsupport::toy_batch(g, 2, 4);
  ModelParams p = init_gatedgcn(2, 3, cfg, 5);
  testsupport::randomize(p, 6, 0.5);
  auto loss = [&] { return ad::l1_loss(forward_gatedgcn(batch, p, cfg), batch.targets); };
  for (auto t : p.tensors()) t.zero_grad();
  loss().backward();
  double worst = 0.0;
  for (auto t : p.tensors()) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    const auto numeric = testsupport::numeric_grad(t, [&] {
      ad::NoGradGuard guard;
      return loss().item();
    });
    worst = std::max(worst, testsupport::max_rel_error(numeric, analytic, 1e-4));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("gcn propagation weights") {
  // triangle: every node has degree 3 with the self loop
  const std::vector<std::size_t> src{0, 1, 2}, dst{1, 2, 0};
  const auto prop = gcn_propagation(3, src, dst);
  CHECK(prop.row.size() == 9);
  for (double w : prop.weight) CHECK(w == doctest::Approx(1.0 / 3.0));

  // path 0-1-2: degrees 2, 3, 2
  const std::vector<std::size_t> ps{0, 1}, pd{1, 2};
  const auto path = gcn_propagation(3, ps, pd);
  for (std::size_t k = 0; k < path.row.size(); ++k) {
    const double deg[3] = {2.0, 3.0, 2.0};
    CHECK(path.weight[k] == doctest::Approx(1.0 / std::sqrt(deg[path.row[k]] * deg[path.col[k]])));
  }

  const auto single = gcn_propagation(1, {}, {});
  const Tensor h = Tensor::from({1, 3}, {-1.0, 0.5, 2.0});
  const Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(values(gcn_layer(h, single, eye)) == std::vector<double>{0.0, 0.5, 2.0});
}

TEST_CASE("gcn baseline ignores edge features bitwise") {
  GcnConfig cfg;
  cfg.hidden_dim = 8;
  const auto g = testsupport::random_toy_graph(6, 3, 1);
  GraphBatch batch = testsupport::toy_batch(g, 3, 2);
  const ModelParams p = init_gcn(3, cfg, 3);
  const auto base = values(forward_gcn_baseline(batch, p, cfg));
  batch.edge_features = random_tensor(g.src.size(), 3, 99, -50, 50, false);
  CHECK(values(forward_gcn_baseline(batch, p, cfg)) == base);
}

TEST_CASE("mlp layout and forward") {
  const Network net = testsupport::sioux_falls();
  const MlpLayout layout = mlp_layout(net);
  CHECK(layout.input_dim() == 2749);

  MlpConfig cfg;
  cfg.hidden_dim = 16;
  cfg.num_layers = 2;
  ModelParams p = init_mlp(layout, cfg, 1);
  zero(p);
  auto b = p["out.b"].mutable_values();
  std::iota(b.begin(), b.end(), 0.0);

  FeatureTensors t;
  t.node_features = Matrix(24, 11);
  t.edge_features = Matrix(76, 3);
  t.targets.assign(76, 0.0);
  for (std::size_t e = 0; e < 76; ++e) t.edge_index.emplace_back(net.edge_tail(e), net.edge_head(e));
  const std::vector<FeatureTensors> items{t, t};
  const GraphBatch batch = make_batch(items);
  const auto out = values(forward_mlp_baseline(batch, layout, p, cfg));
  REQUIRE(out.size() == 152);
  for (std::size_t i = 0; i < 152; ++i) CHECK(out[i] == static_cast<double>(i % 76));

  const Tensor x = mlp_input(batch, layout);
  CHECK(x.shape() == ad::Shape{2, 2749});

  FeatureTensors wrong = t;
  std::swap(wrong.edge_index[0], wrong.edge_index[1]);
  const std::vector<FeatureTensors> bad{wrong};
  CHECK_THROWS_AS(forward_mlp_baseline(make_batch(bad), layout, p, cfg), ValidationError);
}

TEST_CASE("mean baseline") {
  const std::vector<std::vector<double>> same{{1.0, 2.0}, {1.0, 2.0}};
  CHECK(mean_baseline(same) == std::vector<double>{1.0, 2.0});
  const std::vector<std::vector<double>> two{{0.0}, {1.0}};
  CHECK(mean_baseline(two) == std::vector<double>{0.5});
  CHECK_THROWS(mean_baseline(std::span<const std::vector<double>>{}));
}

TEST_CASE("batch stacks graphs with node offsets") {
  const auto g = testsupport::random_toy_graph(5, 2, 7);
  FeatureTensors t;
  t.node_features = Matrix(5, 2);
  t.edge_features = Matrix(g.src.size(), 3);
  t.targets.assign(g.src.size(), 1.0);
  for (std::size_t k = 0; k < g.src.size(); ++k) t.edge_index.emplace_back(g.src[k], g.dst[k]);
  const std::vector<FeatureTensors> items{t, t, t};
  const std::vector<std::size_t> pick{2, 0};
  const GraphBatch b = make_batch(items, pick);
  CHECK(b.graphs == 2);
  CHECK(b.num_nodes() == 10);
  CHECK(b.num_edges() == 2 * g.src.size());
  for (std::size_t k = 0; k < g.src.size(); ++k) {
    CHECK(b.src[g.src.size() + k] == g.src[k] + 5);
    CHECK(b.dst[g.src.size() + k] == g.dst[k] + 5);
  }
}

TEST_CASE("metamodels on sioux falls") {
  const Network net = testsupport::sioux_falls();
  FeatureTensors t;
  t.node_features = Matrix(24, 11);
  t.edge_features = Matrix(76, 3);
  t.targets.assign(76, 0.0);
  Rng rng(3);
  for (std::size_t z = 0; z < 11; ++z) {
    for (std::size_t w = 0; w < 11; ++w) t.node_features(net.zone_node_index(z), w) = rng.uniform();
  }
  for (double& v : t.edge_features.data()) v = rng.uniform();
  for (std::size_t e = 0; e < 76; ++e) t.edge_index.emplace_back(net.edge_tail(e), net.edge_head(e));
  const std::vector<FeatureTensors> items{t};

  for (ModelKind kind : {ModelKind::GatedGcn, ModelKind::Gcn, ModelKind::Mlp}) {
    const Metamodel m = Metamodel::create(kind, net, 42);
    const auto pred = m.predict(items);
    REQUIRE(pred.size() == 1);
    CHECK(pred[0].size() == 76);

    const auto dir = testsupport::scratch_dir("model_" + to_string(kind));
    m.save(dir);
    const Metamodel back = Metamodel::load(dir, net);
    CHECK(back.kind() == kind);
    CHECK(back.predict(items) == pred);
    CHECK(back.config_json() == m.config_json());
  }

  const Metamodel g = Metamodel::create(ModelKind::GatedGcn, net, 42);
  CHECK(g.config_json()["config"]["num_layers"] == 6);
  CHECK(g.config_json()["config"]["hidden_dim"] == 64);

  // a non-centroid feature row does feed into the prediction
  FeatureTensors poked = t;
  std::size_t non_centroid = 0;
  while (net.nodes()[non_centroid].is_centroid) ++non_centroid;
  for (std::size_t w = 0; w < 11; ++w) poked.node_features(non_centroid, w) = 0.9;
  const std::vector<FeatureTensors> poked_items{poked};
  CHECK_FALSE(g.predict(poked_items) == g.predict(items));

  CHECK(parse_model_kind("gcn") == ModelKind::Gcn);
  CHECK_THROWS_AS(parse_model_kind("transformer"), ValidationError);
}

#include "suegnn/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "suegnn/io.hpp"

namespace suegnn::ad {

namespace {

thread_local bool g_grad_enabled = true;

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMajor>;
using Map = Eigen::Map<RowMajor>;

std::string shape_str(const Shape& s) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < s.size(); ++i) out << (i ? "," : "") << s[i];
  out << ']';
  return out.str();
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

std::size_t product(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

void check_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 2) throw ShapeError("tensors must be rank 1 or 2, got " + shape_str(shape));
}

// Builds an op result. The backward closure is kept only when some parent needs gradients.
Tensor make_result(const char* op, Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                   std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  if (g_grad_enabled) {
    for (const auto& p : parents) node->requires_grad |= p.requires_grad();
  }
  if (node->requires_grad) {
    node->grad.assign(node->value.size(), 0.0);
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_fail(op, a.shape(), b.shape());
}

}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  check_shape(shape);
  return from(shape, std::vector<double>(product(shape), 0.0), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  check_shape(shape);
  if (values.size() != product(shape)) {
    throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  if (requires_grad) node->grad.assign(node->value.size(), 0.0);
  return Tensor(std::move(node));
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return node_->value[0];
}

void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }

void Tensor::backward() {
  if (numel() != 1) throw ShapeError("backward: expected a scalar, got " + shape_str(shape()));
  if (!requires_grad()) throw std::logic_error("backward: tensor does not require grad");

  // Iterative post-order DFS gives a topological order; reverse it to propagate.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) shape_fail("matmul", a.shape(), b.shape());
  const auto m = static_cast<Eigen::Index>(a.shape()[0]);
  const auto k = static_cast<Eigen::Index>(a.shape()[1]);
  const auto n = static_cast<Eigen::Index>(b.shape()[1]);
  std::vector<double> out(static_cast<std::size_t>(m * n));
  Map(out.data(), m, n).noalias() = MapC(a.values().data(), m, k) * MapC(b.values().data(), k, n);
  return make_result("matmul", {a.shape()[0], b.shape()[1]}, std::move(out), {a, b}, [m, k, n](Node& self) {
    MapC g(self.grad.data(), m, n);
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) Map(pa.grad.data(), m, k).noalias() += g * MapC(pb.value.data(), k, n).transpose();
    if (pb.requires_grad) Map(pb.grad.data(), k, n).noalias() += MapC(pa.value.data(), m, k).transpose() * g;
  });
}

namespace {

// Elementwise binary op with per-element partials da(x, y) and db(x, y).
template <typename F, typename DA, typename DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  require_same(op, a, b);
  std::vector<double> out(a.numel());
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
  return make_result(op, a.shape(), std::move(out), {a, b}, [da, db](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double g = self.grad[i];
      if (pa.requires_grad) pa.grad[i] += g * da(pa.value[i], pb.value[i]);
      if (pb.requires_grad) pb.grad[i] += g * db(pa.value[i], pb.value[i]);
    }
  });
}

// Elementwise unary op; the partial may use the input x and the output y.
template <typename F, typename D>
Tensor unary(const char* op, const Tensor& a, F f, D d) {
  std::vector<double> out(a.numel());
  auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
  return make_result(op, a.shape(), std::move(out), {a}, [d](Node& self) {
    Node& pa = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * d(pa.value[i], self.value[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary("add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
                [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary("sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
                [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary("mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
                [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary("div", a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
                [](double x, double y) { return -x / (y * y); });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary("add_scalar", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor scale(const Tensor& a, double c) {
  return unary("scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor relu(const Tensor& a) {
  return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double ex = std::exp(x);
        return ex / (1.0 + ex);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  if (a.rank() != 2 || bias.numel() != a.shape()[1] || (bias.rank() == 2 && bias.shape()[0] != 1)) {
    shape_fail("add_bias", a.shape(), bias.shape());
  }
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(a.values().begin(), a.values().end());
  auto bv = bias.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  }
  return make_result("add_bias", a.shape(), std::move(out), {a, bias}, [m, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) pb.grad[j] += self.grad[i * n + j];
      }
    }
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = parts[0].rows();
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.rows() != m) shape_fail("concat_cols", parts[0].shape(), p.shape());
    widths.push_back(p.shape()[1]);
  }
  const std::size_t total = std::accumulate(widths.begin(), widths.end(), std::size_t{0});
  std::vector<double> out(m * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto v = parts[k].values();
    for (std::size_t i = 0; i < m; ++i) {
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(i * widths[k]), widths[k], out.begin() + static_cast<std::ptrdiff_t>(i * total + offset));
    }
    offset += widths[k];
  }
  return make_result("concat_cols", {m, total}, std::move(out), {parts.begin(), parts.end()},
                     [m, total, widths](Node& self) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < widths.size(); ++k) {
                         Node& p = *self.parents[k];
                         if (p.requires_grad) {
                           for (std::size_t i = 0; i < m; ++i) {
                             for (std::size_t j = 0; j < widths[k]; ++j) {
                               p.grad[i * widths[k] + j] += self.grad[i * total + off + j];
                             }
                           }
                         }
                         off += widths[k];
                       }
                     });
}

Tensor concat_cols(std::initializer_list<Tensor> parts) { return concat_cols(std::span(parts.begin(), parts.size())); }

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index) {
  const std::size_t n = a.rows();
  const std::size_t w = a.numel() / n;
  std::vector<double> out(index.size() * w);
  auto av = a.values();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= n) throw ShapeError("gather_rows: index " + std::to_string(index[i]) + " out of range for " + shape_str(a.shape()));
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(index[i] * w), w, out.begin() + static_cast<std::ptrdiff_t>(i * w));
  }
  Shape shape = a.rank() == 1 ? Shape{index.size()} : Shape{index.size(), w};
  return make_result("gather_rows", std::move(shape), std::move(out), {a},
                     [idx = std::vector<std::size_t>(index.begin(), index.end()), w](Node& self) {
                       Node& pa = *self.parents[0];
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         for (std::size_t j = 0; j < w; ++j) pa.grad[idx[i] * w + j] += self.grad[i * w + j];
                       }
                     });
}

Tensor scatter_sum_rows(const Tensor& a, std::span<const std::size_t> index, std::size_t size) {
  if (index.size() != a.rows()) {
    throw ShapeError("scatter_sum_rows: " + std::to_string(index.size()) + " indices for " + shape_str(a.shape()));
  }
  const std::size_t w = a.numel() / std::max<std::size_t>(a.rows(), 1);
  std::vector<double> out(size * w, 0.0);
  auto av = a.values();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= size) throw ShapeError("scatter_sum_rows: index " + std::to_string(index[i]) + " >= size " + std::to_string(size));
    for (std::size_t j = 0; j < w; ++j) out[index[i] * w + j] += av[i * w + j];
  }
  Shape shape = a.rank() == 1 ? Shape{size} : Shape{size, w};
  return make_result("scatter_sum_rows", std::move(shape), std::move(out), {a},
                     [idx = std::vector<std::size_t>(index.begin(), index.end()), w](Node& self) {
                       Node& pa = *self.parents[0];
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         for (std::size_t j = 0; j < w; ++j) pa.grad[i * w + j] += self.grad[idx[i] * w + j];
                       }
                     });
}

Tensor scale_rows(const Tensor& a, std::span<const double> weights) {
  if (weights.size() != a.rows()) {
    throw ShapeError("scale_rows: " + std::to_string(weights.size()) + " weights for " + shape_str(a.shape()));
  }
  const std::size_t w = a.numel() / a.rows();
  std::vector<double> out(a.values().begin(), a.values().end());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] *= weights[i];
  }
  return make_result("scale_rows", a.shape(), std::move(out), {a},
                     [wts = std::vector<double>(weights.begin(), weights.end()), w](Node& self) {
                       Node& pa = *self.parents[0];
                       for (std::size_t i = 0; i < wts.size(); ++i) {
                         for (std::size_t j = 0; j < w; ++j) pa.grad[i * w + j] += self.grad[i * w + j] * wts[i];
                       }
                     });
}

Tensor reshape(const Tensor& a, Shape shape) {
  check_shape(shape);
  if (product(shape) != a.numel()) shape_fail("reshape", a.shape(), shape);
  return make_result("reshape", std::move(shape), std::vector<double>(a.values().begin(), a.values().end()), {a},
                     [](Node& self) {
                       Node& pa = *self.parents[0];
                       for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
                     });
}

Tensor sum(const Tensor& a) {
  const double s = std::accumulate(a.values().begin(), a.values().end(), 0.0);
  return make_result("sum", {1}, {s}, {a}, [](Node& self) {
    Node& pa = *self.parents[0];
    for (double& g : pa.grad) g += self.grad[0];
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor abs_sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += std::abs(v);
  return make_result("abs_sum", {1}, {s}, {a}, [](Node& self) {
    Node& pa = *self.parents[0];
    for (std::size_t i = 0; i < pa.grad.size(); ++i) {
      const double x = pa.value[i];
      pa.grad[i] += self.grad[0] * (x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0));
    }
  });
}

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
  if (pred.numel() != target.numel()) shape_fail("l1_loss", pred.shape(), target.shape());
  const Tensor t = target.shape() == pred.shape() ? target : reshape(target, pred.shape());
  return scale(abs_sum(sub(pred, t)), 1.0 / static_cast<double>(pred.numel()));
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.numel() != target.numel()) shape_fail("mse_loss", pred.shape(), target.shape());
  const Tensor t = target.shape() == pred.shape() ? target : reshape(target, pred.shape());
  const Tensor d = sub(pred, t);
  return mean(mul(d, d));
}

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig config) : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    if (!p.requires_grad()) throw std::invalid_argument("AdamW: parameter does not require grad");
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void AdamW::step() {
  ++step_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto value = params_[k].mutable_values();
    auto grad = params_[k].grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i];
      value[i] -= config_.lr * config_.weight_decay * value[i];
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      value[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

namespace {
constexpr char kCheckpointMagic[8] = {'S', 'U', 'E', 'G', 'N', 'N', 'C', 'K'};
}

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    write_u64(out, tensors.size());
    for (const auto& [name, t] : tensors) {
      write_u64(out, name.size());
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_u64(out, t.rank());
      for (std::size_t d : t.shape()) write_u64(out, d);
      write_f64s(out, t.values());
    }
    if (!out) throw std::runtime_error("write failed for " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

NamedTensors load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw std::runtime_error(path.string() + ": not a checkpoint file");
  }
  NamedTensors out;
  const std::uint64_t count = read_u64(in);
  for (std::uint64_t k = 0; k < count; ++k) {
    std::string name(read_u64(in), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    Shape shape(read_u64(in));
    for (auto& d : shape) d = read_u64(in);
    std::vector<double> values(product(shape));
    read_f64s(in, values);
    out.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(values), true));
  }
  return out;
}

}  // namespace suegnn::ad

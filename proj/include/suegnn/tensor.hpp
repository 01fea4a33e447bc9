#pragma once

// Dense float64 tensors with a reverse-mode tape.
//
// Every op returns a new Tensor whose node keeps its parents alive and a
// closure that pushes the output gradient into them. The tape is rebuilt on
// each forward pass and must stay on one thread. Tensors are rank 1 or 2 and
// shapes must match exactly; the only broadcast is add_bias (vector to rows).

#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace suegnn::ad {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated iff requires_grad
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v) { return from({1}, {v}); }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  /// Leading dimension; numel() / rows() is the row width.
  std::size_t rows() const { return node_->shape[0]; }
  std::size_t cols() const { return rank() == 1 ? 1 : node_->shape[1]; }

  std::span<const double> values() const { return node_->value; }
  /// In-place access for optimizers and initializers; bypasses the tape.
  std::span<double> mutable_values() { return node_->value; }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  double item() const;

  /// Back-propagates from this scalar through the recorded graph.
  void backward();
  void zero_grad();
  /// Same values, no history, no gradient.
  Tensor detach() const;

  bool defined() const { return static_cast<bool>(node_); }
  const std::shared_ptr<Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node> node_;
};

/// Disables tape recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor scale(const Tensor& a, double c);
/// a[m, n] + bias[n] added to every row.
Tensor add_bias(const Tensor& a, const Tensor& bias);
/// Column-wise concatenation of rank-2 tensors with equal row counts.
Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_cols(std::initializer_list<Tensor> parts);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
/// out[i] = a[index[i]] (row-wise).
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index);
/// out[index[i]] += a[i] (row-wise) into `size` rows.
Tensor scatter_sum_rows(const Tensor& a, std::span<const std::size_t> index, std::size_t size);
/// out[i] = weights[i] * a[i] with constant weights.
Tensor scale_rows(const Tensor& a, std::span<const double> weights);
Tensor reshape(const Tensor& a, Shape shape);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor abs_sum(const Tensor& a);

/// mean |pred - target|; d|x|/dx at 0 is taken as 0.
Tensor l1_loss(const Tensor& pred, const Tensor& target);
/// mean (pred - target)^2.
Tensor mse_loss(const Tensor& pred, const Tensor& target);

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Adam with decoupled weight decay. Owns its moment buffers; parameters are
/// shared handles and are updated in place.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, AdamWConfig config = {});

  void step();
  void zero_grad();
  long step_count() const { return step_; }
  const AdamWConfig& config() const { return config_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  std::vector<Tensor> params_;
  AdamWConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  long step_ = 0;
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Checkpoint: magic "SUEGNNCK", u64 count, then per tensor u64 name length,
/// name bytes, u64 rank, u64 dims, little-endian f64 values.
void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::filesystem::path& path);

}  // namespace suegnn::ad

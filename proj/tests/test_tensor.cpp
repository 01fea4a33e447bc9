#include <cmath>

#include "doctest.h"
#include "suegnn/tensor.hpp"
#include "support.hpp"

using namespace suegnn;
using namespace suegnn::ad;
using testsupport::max_rel_error;
using testsupport::numeric_grad;
using testsupport::random_tensor;

namespace {

/// Reduces any output to a scalar with fixed random weights so every output entry matters.
Tensor weighted_sum(const Tensor& out, std::uint64_t seed) {
  const Tensor w = random_tensor(out.rows(), out.cols(), seed, -1.0, 1.0, false);
  return sum(mul(reshape(out, {out.rows(), out.cols()}), w));
}

/// Gradient check of f with respect to each input.
void check_gradients(std::vector<Tensor> inputs, const std::function<Tensor()>& f, double tol = 1e-5) {
  for (auto& in : inputs) in.zero_grad();
  Tensor loss = f();
  loss.backward();
  for (auto& in : inputs) {
    const std::vector<double> analytic(in.grad().begin(), in.grad().end());
    const auto numeric = numeric_grad(in, [&] {
      NoGradGuard guard;
      return f().item();
    });
    CHECK(max_rel_error(numeric, analytic) < tol);
  }
}

}  // namespace

TEST_CASE("relu forward and mask") {
  Tensor x = Tensor::from({2}, {-1.0, 2.0}, true);
  Tensor y = relu(x);
  CHECK(y.values()[0] == 0.0);
  CHECK(y.values()[1] == 2.0);
  sum(y).backward();
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 1.0);
}

TEST_CASE("scatter sum by index") {
  const Tensor v = Tensor::from({3}, {1.0, 2.0, 3.0});
  const std::vector<std::size_t> idx{0, 0, 1};
  const Tensor out = scatter_sum_rows(v, idx, 2);
  CHECK(out.values()[0] == 3.0);
  CHECK(out.values()[1] == 3.0);
}

TEST_CASE("scatter then gather on distinct indices is identity") {
  const Tensor a = random_tensor(4, 3, 5, -1, 1, false);
  const std::vector<std::size_t> idx{3, 0, 5, 1};
  const Tensor back = gather_rows(scatter_sum_rows(a, idx, 6), idx);
  CHECK(std::equal(back.values().begin(), back.values().end(), a.values().begin()));
}

TEST_CASE("matmul gradient against central differences") {
  Tensor a = random_tensor(4, 3, 1);
  Tensor b = random_tensor(3, 2, 2);
  check_gradients({a, b}, [&] { return weighted_sum(matmul(a, b), 3); }, 1e-6);
}

TEST_CASE("elementwise op gradients") {
  Tensor a = random_tensor(3, 4, 11);
  Tensor b = random_tensor(3, 4, 12, 0.5, 2.0);
  check_gradients({a, b}, [&] { return weighted_sum(add(a, b), 1); });
  check_gradients({a, b}, [&] { return weighted_sum(sub(a, b), 2); });
  check_gradients({a, b}, [&] { return weighted_sum(mul(a, b), 3); });
  check_gradients({a, b}, [&] { return weighted_sum(div(a, b), 4); });
  check_gradients({a}, [&] { return weighted_sum(add_scalar(a, 0.7), 5); });
  check_gradients({a}, [&] { return weighted_sum(scale(a, -1.3), 6); });
  check_gradients({a}, [&] { return weighted_sum(sigmoid(a), 7); });
  check_gradients({a}, [&] { return weighted_sum(relu(a), 8); });
}

TEST_CASE("structural op gradients") {
  Tensor a = random_tensor(5, 3, 21);
  Tensor b = random_tensor(5, 2, 22);
  Tensor bias = Tensor::from({3}, {0.1, -0.2, 0.3}, true);
  const std::vector<std::size_t> idx{4, 0, 0, 2, 1, 4, 3};
  const std::vector<double> w{0.5, -1.0, 2.0, 0.25, 1.5};
  check_gradients({a, bias}, [&] { return weighted_sum(add_bias(a, bias), 1); });
  check_gradients({a, b}, [&] { return weighted_sum(concat_cols({a, b}), 2); });
  check_gradients({a}, [&] { return weighted_sum(gather_rows(a, idx), 3); });
  check_gradients({a}, [&] { return weighted_sum(scatter_sum_rows(a, std::vector<std::size_t>{2, 0, 2, 1, 0}, 3), 4); });
  check_gradients({a}, [&] { return weighted_sum(scale_rows(a, w), 5); });
  check_gradients({a}, [&] { return weighted_sum(reshape(a, {3, 5}), 6); });
  check_gradients({a}, [&] { return scale(sum(a), 0.3); });
  check_gradients({a}, [&] { return mean(mul(a, a)); });
  check_gradients({a}, [&] { return abs_sum(a); });
}

TEST_CASE("loss functions") {
  const Tensor p = Tensor::from({2}, {1.0, 2.0});
  const Tensor t = Tensor::from({2}, {1.0, 4.0});
  CHECK(l1_loss(p, t).item() == 1.0);
  CHECK(l1_loss(p, p).item() == 0.0);
  const Tensor p2 = Tensor::from({2}, {1.0, 1.0});
  const Tensor t2 = Tensor::from({2}, {0.0, 2.0});
  CHECK(mse_loss(p2, t2).item() == 1.0);
  CHECK(mse_loss(p2, p2).item() == 0.0);

  Tensor x = Tensor::from({3}, {0.0, 1.0, -2.0}, true);
  l1_loss(x, Tensor::from({3}, {0.0, 0.0, 0.0})).backward();
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == doctest::Approx(1.0 / 3.0));
  CHECK(x.grad()[2] == doctest::Approx(-1.0 / 3.0));

  Tensor a = random_tensor(6, 1, 31);
  const Tensor target = random_tensor(6, 1, 32, -1, 1, false);
  check_gradients({a}, [&] { return mse_loss(a, target); }, 1e-6);
  check_gradients({a}, [&] { return l1_loss(a, target); });
  CHECK_THROWS_AS(mse_loss(a, Tensor::from({2}, {0.0, 0.0})), ShapeError);
}

TEST_CASE("shape mismatches are rejected") {
  const Tensor a = random_tensor(2, 3, 1, -1, 1, false);
  const Tensor b = random_tensor(3, 2, 2, -1, 1, false);
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
  CHECK_THROWS_AS(add_bias(a, Tensor::from({2}, {0.0, 0.0})), ShapeError);
  CHECK_THROWS_AS(concat_cols({a, b}), ShapeError);
  CHECK_THROWS_AS(reshape(a, {4, 2}), ShapeError);
}

TEST_CASE("gradients accumulate over shared consumers") {
  Tensor x = Tensor::from({2}, {1.5, -2.0}, true);
  Tensor y = add(mul(x, x), scale(x, 3.0));
  sum(y).backward();
  CHECK(x.grad()[0] == doctest::Approx(2 * 1.5 + 3.0));
  CHECK(x.grad()[1] == doctest::Approx(2 * -2.0 + 3.0));
}

TEST_CASE("no-grad mode records no history") {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    const Tensor y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
    CHECK(y.node()->parents.empty());
  }
  CHECK(grad_enabled());
  CHECK(mul(x, x).requires_grad());
}

TEST_CASE("adamw updates") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    Tensor p = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
    AdamW opt({p});
    opt.zero_grad();
    opt.step();
    CHECK(p.values()[0] == 1.0);
    CHECK(p.values()[1] == -2.0);
    CHECK(p.values()[2] == 0.5);
  }
  SUBCASE("single scalar step matches the bias-corrected formula") {
    Tensor p = Tensor::from({1}, {0.8}, true);
    AdamWConfig cfg;
    cfg.lr = 0.01;
    cfg.weight_decay = 0.1;
    AdamW opt({p}, cfg);
    p.mutable_grad()[0] = 0.3;
    opt.step();
    const double m = (1 - 0.9) * 0.3, v = (1 - 0.999) * 0.09;
    const double mhat = m / (1 - 0.9), vhat = v / (1 - 0.999);
    const double expected = 0.8 - 0.01 * 0.1 * 0.8 - 0.01 * mhat / (std::sqrt(vhat) + 1e-8);
    CHECK(p.values()[0] == doctest::Approx(expected).epsilon(1e-14));
    CHECK(opt.step_count() == 1);
  }
  SUBCASE("identical runs give identical parameters") {
    auto run = [] {
      Tensor w = random_tensor(3, 2, 4);
      const Tensor x = random_tensor(5, 3, 5, -1, 1, false);
      const Tensor y = random_tensor(5, 2, 6, -1, 1, false);
      AdamW opt({w});
      for (int i = 0; i < 20; ++i) {
        opt.zero_grad();
        mse_loss(matmul(x, w), y).backward();
        opt.step();
      }
      return std::vector<double>(w.values().begin(), w.values().end());
    };
    CHECK(run() == run());
  }
}

TEST_CASE("checkpoint round trip") {
  const auto dir = testsupport::scratch_dir("ckpt");
  NamedTensors tensors{{"w", random_tensor(3, 4, 1)}, {"b", Tensor::from({4}, {1, 2, 3, 4}, true)}};
  save_checkpoint(dir / "m.ckpt", tensors);
  const auto back = load_checkpoint(dir / "m.ckpt");
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].first == tensors[i].first);
    CHECK(back[i].second.shape() == tensors[i].second.shape());
    CHECK(std::equal(back[i].second.values().begin(), back[i].second.values().end(),
                     tensors[i].second.values().begin()));
  }
  CHECK_THROWS(load_checkpoint(dir / "missing.ckpt"));
}

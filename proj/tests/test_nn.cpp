#include "doctest.h"

#include "fdnml/common.hpp"
#include "fdnml/nn.hpp"

#include <cmath>
#include <functional>
#include <random>

using namespace fdnml;
using namespace fdnml::nn;

namespace {

Batch random_batch(std::size_t b, Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Batch x(b, Eigen::MatrixXd(rows, cols));
  for (auto& m : x) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  }
  return x;
}

double dot(const Batch& a, const Batch& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i].cwiseProduct(b[i]).sum();
  return s;
}

// Checks the analytic input and parameter gradients of the scalar
// L = <G, f(x)> against central differences. `fresh_ctx` rebuilds the
// context so stochastic layers replay the same mask on every evaluation.
void check_gradients(Layer& layer, Batch x, const std::function<Context()>& fresh_ctx, double tol = 1e-6) {
  const Batch y0 = layer.forward(x, fresh_ctx());
  Batch g = random_batch(y0.size(), y0[0].rows(), y0[0].cols(), 99);
  for (auto* p : layer.params()) p->zero_grad();
  layer.forward(x, fresh_ctx());
  const Batch gx = layer.backward(g);

  auto loss = [&]() { return dot(g, layer.forward(x, fresh_ctx())); };
  const double h = 1e-6;
  for (std::size_t s = 0; s < x.size(); ++s) {
    for (Eigen::Index i = 0; i < x[s].size(); ++i) {
      double& v = x[s].data()[i];
      const double keep = v;
      v = keep + h;
      const double up = loss();
      v = keep - h;
      const double dn = loss();
      v = keep;
      REQUIRE(gx[s].data()[i] == doctest::Approx((up - dn) / (2.0 * h)).epsilon(tol).scale(1.0));
    }
  }
  for (auto* p : layer.params()) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      double& v = p->value.data()[i];
      const double keep = v;
      v = keep + h;
      const double up = loss();
      v = keep - h;
      const double dn = loss();
      v = keep;
      REQUIRE(p->grad.data()[i] == doctest::Approx((up - dn) / (2.0 * h)).epsilon(tol).scale(1.0));
    }
  }
}

Context eval_ctx() { return Context{}; }

}  // namespace

TEST_CASE("conv1d gradients") {
  std::mt19937_64 rng(1);
  for (auto [stride, pad] : {std::pair{1, 0}, std::pair{2, 1}, std::pair{2, 3}}) {
    Conv1d conv(3, 4, 5, stride, pad);
    conv.init(rng);
    check_gradients(conv, random_batch(3, 3, 17, 2), eval_ctx);
  }
}

TEST_CASE("conv1d output length and a hand-computed response") {
  Conv1d conv(1, 1, 3, 2, 1);
  CHECK(conv.output_length(8) == 4);
  CHECK(conv.output_length(7) == 4);
  auto ps = conv.params();
  ps[0]->value.setConstant(1.0);  // box filter
  ps[1]->value.setConstant(0.5);
  Eigen::MatrixXd x(1, 5);
  x << 1, 2, 3, 4, 5;
  const auto y = conv.forward({x}, Context{});
  REQUIRE(y[0].cols() == 3);
  CHECK(y[0](0, 0) == doctest::Approx(0 + 1 + 2 + 0.5));
  CHECK(y[0](0, 1) == doctest::Approx(2 + 3 + 4 + 0.5));
  CHECK(y[0](0, 2) == doctest::Approx(4 + 5 + 0 + 0.5));
}

TEST_CASE("linear gradients") {
  std::mt19937_64 rng(3);
  Linear lin(12, 5);
  lin.init(rng);
  check_gradients(lin, random_batch(4, 3, 4, 4), eval_ctx);
}

TEST_CASE("batch norm gradients in training mode") {
  std::mt19937_64 rng(5);
  BatchNorm1d bn(3);
  for (auto* p : bn.params()) {
    std::normal_distribution<double> nd(1.0, 0.3);
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = nd(rng);
  }
  check_gradients(bn, random_batch(4, 3, 6, 6), [] { return Context{true, nullptr}; }, 1e-5);
}

TEST_CASE("batch norm normalizes in training and uses running statistics in evaluation") {
  BatchNorm1d bn(2, 1.0);
  Batch x = random_batch(8, 2, 10, 7);
  for (auto& m : x) m.row(1) = 5.0 * m.row(1).array() + 3.0;
  const auto y = bn.forward(x, Context{true, nullptr});
  for (Eigen::Index c = 0; c < 2; ++c) {
    double s = 0.0, ss = 0.0, n = 0.0;
    for (const auto& m : y) {
      s += m.row(c).sum();
      ss += m.row(c).squaredNorm();
      n += static_cast<double>(m.cols());
    }
    CHECK(s / n == doctest::Approx(0.0).scale(1.0));
    CHECK(ss / n == doctest::Approx(1.0).epsilon(1e-4));
  }
  // momentum 1 stores the last batch statistics with the unbiased variance
  // (m = 80 values per channel), so evaluation rescales the training output
  // by sqrt((m - 1) / m) up to the eps term.
  const auto e = bn.forward(x, Context{});
  const double shrink = std::sqrt(79.0 / 80.0);
  for (std::size_t s = 0; s < x.size(); ++s) CHECK((e[s] - shrink * y[s]).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("relu and pooling gradients") {
  Relu relu;
  Batch x = random_batch(3, 2, 9, 8);
  for (auto& m : x) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      if (std::abs(m.data()[i]) < 1e-3) m.data()[i] = 0.5;
    }
  }
  check_gradients(relu, x, eval_ctx);
  GlobalAvgPool gap;
  check_gradients(gap, random_batch(3, 4, 7, 9), eval_ctx);
  const auto y = gap.forward(random_batch(1, 4, 7, 9), Context{});
  CHECK(y[0].rows() == 4);
  CHECK(y[0].cols() == 1);
}

TEST_CASE("dropout gradients replay the mask") {
  Dropout drop(0.4);
  std::mt19937_64 rng;
  auto ctx = [&rng] {
    rng.seed(42);
    return Context{true, &rng};
  };
  check_gradients(drop, random_batch(2, 3, 5, 10), ctx);
  const Batch x = random_batch(2, 3, 5, 11);
  const auto y = drop.forward(x, Context{});
  CHECK(y[0] == x[0]);
  CHECK_THROWS_AS(drop.forward(x, Context{true, nullptr}), ConfigError);
}

TEST_CASE("dropout preserves the mean") {
  Dropout drop(0.3);
  std::mt19937_64 rng(12);
  Batch x(1, Eigen::MatrixXd::Ones(1, 200000));
  const auto y = drop.forward(x, Context{true, &rng});
  CHECK(y[0].mean() == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("sequential composition gradients") {
  std::mt19937_64 rng(13);
  Sequential net;
  net.add(std::make_unique<Conv1d>(2, 3, 3, 1, 1));
  net.add(std::make_unique<Relu>());
  net.add(std::make_unique<GlobalAvgPool>());
  net.add(std::make_unique<Linear>(3, 2));
  net.init(rng);
  CHECK(net.parameter_count() == 2 * 3 * 3 + 3 + 3 * 2 + 2);
  Batch x = random_batch(3, 2, 8, 14);
  const Batch y = net.forward(x, Context{});
  const Batch g = random_batch(3, 2, 1, 15);
  for (auto* p : net.params()) p->zero_grad();
  const Batch gx = net.backward(g);
  const double h = 1e-6;
  double& v = x[1](0, 3);
  const double keep = v;
  v = keep + h;
  const double up = dot(g, net.forward(x, Context{}));
  v = keep - h;
  const double dn = dot(g, net.forward(x, Context{}));
  v = keep;
  CHECK(gx[1](0, 3) == doctest::Approx((up - dn) / (2.0 * h)).epsilon(1e-6));
}

TEST_CASE("row stacking round trip") {
  const Batch b = random_batch(5, 3, 1, 16);
  const Eigen::MatrixXd m = stack_rows(b);
  CHECK(m.rows() == 5);
  CHECK(m(2, 1) == b[2](1, 0));
  const Batch back = unstack_rows(m);
  for (std::size_t i = 0; i < b.size(); ++i) CHECK(back[i] == b[i]);
}

TEST_CASE("AdamW first step and decoupled decay") {
  Param p("w", 1, 2);
  p.value << 1.0, -2.0;
  p.grad << 0.5, -3.0;
  Param nd("b", 1, 1, false);
  nd.value << 1.0;
  nd.grad << 2.0;
  AdamW opt({&p, &nd}, AdamWOptions{0.1, 0.01, 0.9, 0.999, 0.0});
  opt.step(0.1);
  // Bias-corrected first step moves each coordinate by lr * sign(g).
  CHECK(p.value(0, 0) == doctest::Approx(1.0 * (1.0 - 0.001) - 0.1));
  CHECK(p.value(0, 1) == doctest::Approx(-2.0 * (1.0 - 0.001) + 0.1));
  CHECK(nd.value(0, 0) == doctest::Approx(0.9));
  opt.zero_grad();
  CHECK(p.grad.norm() == 0.0);
}

TEST_CASE("AdamW minimizes a quadratic") {
  Param p("w", 3, 1);
  p.value << 3.0, -1.0, 2.0;
  AdamW opt({&p}, AdamWOptions{0.05, 0.0});
  for (int it = 0; it < 2000; ++it) {
    p.grad = 2.0 * p.value;
    opt.step(0.05);
  }
  CHECK(p.value.norm() < 1e-2);
}

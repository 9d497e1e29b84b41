#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>

#include "ppgauth/error.hpp"
#include "ppgauth/rng.hpp"
#include "ppgauth/tensor.hpp"

using namespace ppgauth;
using namespace ppgauth::ag;
using Td = Tensor<double>;
using Catch::Matchers::WithinAbs;

namespace {

Td random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Td t(shape);
  for (auto& v : t.values()) v = rng.normal(0.0, scale);
  return t;
}

// Naive NHWC convolution with zero padding.
std::vector<double> conv_oracle(const Td& x, const Td& w, std::size_t stride, std::size_t pad) {
  const std::size_t n = x.size(0), h = x.size(1), wd = x.size(2), ci = x.size(3);
  const std::size_t k = w.size(0), co = w.size(3);
  const std::size_t ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
  std::vector<double> out(n * ho * wo * co, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox)
        for (std::size_t o = 0; o < co; ++o) {
          double acc = 0;
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
              const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(wd)) continue;
              for (std::size_t c = 0; c < ci; ++c) {
                acc += x.values()[((b * h + iy) * wd + ix) * ci + c] * w.values()[((ky * k + kx) * ci + c) * co + o];
              }
            }
          out[((b * ho + oy) * wo + ox) * co + o] = acc;
        }
  return out;
}

}  // namespace

TEST_CASE("softmax of a zero row is uniform", "[tensor_autodiff]") {
  const auto p = softmax_rows(Td(Shape{2, 5}));
  for (double v : p.values()) CHECK_THAT(v, WithinAbs(0.2, 1e-15));
}

TEST_CASE("matmul matches a triple loop", "[tensor_autodiff]") {
  Rng rng(1);
  const Td a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
  const Td c = matmul(a, b);
  REQUIRE(c.shape() == Shape{3, 2});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double acc = 0;
      for (std::size_t k = 0; k < 4; ++k) acc += a.values()[i * 4 + k] * b.values()[k * 2 + j];
      CHECK_THAT(c.values()[i * 2 + j], WithinAbs(acc, 1e-12));
    }
  // Batched left operand.
  const Td a3 = random_tensor({2, 3, 4}, rng);
  const Td c3 = matmul(a3, b);
  CHECK(c3.shape() == Shape{2, 3, 2});
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("identity 1x1 convolution", "[tensor_autodiff]") {
  Rng rng(2);
  const Td x = random_tensor({2, 5, 5, 3}, rng);
  Td w(Shape{1, 1, 3, 3});
  for (std::size_t c = 0; c < 3; ++c) w.values()[c * 3 + c] = 1.0;
  CHECK(conv2d(x, w, 1, 0).values() == x.values());
}

TEST_CASE("conv2d matches a naive loop", "[tensor_autodiff]") {
  Rng rng(3);
  const Td x = random_tensor({2, 9, 9, 2}, rng), w = random_tensor({3, 3, 2, 4}, rng);
  for (std::size_t stride : {1u, 2u}) {
    for (std::size_t pad : {0u, 1u}) {
      const auto y = conv2d(x, w, stride, pad);
      const auto ref = conv_oracle(x, w, stride, pad);
      REQUIRE(y.numel() == ref.size());
      for (std::size_t i = 0; i < ref.size(); ++i) CHECK_THAT(y.values()[i], WithinAbs(ref[i], 1e-12));
    }
  }
}

TEST_CASE("depthwise convolution matches per-channel convolution", "[tensor_autodiff]") {
  Rng rng(4);
  const Td x = random_tensor({1, 6, 6, 3}, rng), w = random_tensor({3, 3, 3}, rng);
  // Equivalent dense kernel: diagonal in the channel axes.
  Td dense(Shape{3, 3, 3, 3});
  for (std::size_t k = 0; k < 9; ++k)
    for (std::size_t c = 0; c < 3; ++c) dense.values()[(k * 3 + c) * 3 + c] = w.values()[k * 3 + c];
  const auto y = depthwise_conv2d(x, w, 1, 1);
  const auto ref = conv_oracle(x, dense, 1, 1);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK_THAT(y.values()[i], WithinAbs(ref[i], 1e-12));
}

TEST_CASE("elementary gradients", "[tensor_autodiff]") {
  Rng rng(5);
  Td x = random_tensor({4, 3}, rng);
  x.set_requires_grad(true);
  sum(x).backward();
  for (double g : x.grad()) CHECK(g == 1.0);

  x.zero_grad();
  sum(mul(x, x)).backward();
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK_THAT(x.grad()[i], WithinAbs(2 * x.values()[i], 1e-15));
}

TEST_CASE("leaf gradients accumulate across backward calls", "[tensor_autodiff]") {
  Td x(Shape{3}, 1.0, true);
  sum(x).backward();
  sum(x).backward();
  for (double g : x.grad()) CHECK(g == 2.0);
}

TEST_CASE("no-grad guard detaches results", "[tensor_autodiff]") {
  Td x(Shape{3}, 1.0, true);
  {
    NoGradGuard guard;
    CHECK_FALSE(NoGradGuard::grad_enabled());
    CHECK_FALSE(sum(x).requires_grad());
  }
  CHECK(NoGradGuard::grad_enabled());
  CHECK(sum(x).requires_grad());
}

TEST_CASE("tape orders parents before children", "[tensor_autodiff]") {
  Td x(Shape{2}, 1.0, true);
  const Td y = sum(mul(add(x, x), x));
  const auto tape = Tape<double>::record(y);
  const auto& nodes = tape.nodes();
  REQUIRE(nodes.back() == y.node());
  for (std::size_t i = 0; i < nodes.size(); ++i)
    for (const auto& p : nodes[i]->parents) {
      const auto it = std::find(nodes.begin(), nodes.end(), p.get());
      CHECK(it - nodes.begin() < static_cast<long>(i));
    }
}

TEST_CASE("shape mismatches throw", "[tensor_autodiff]") {
  CHECK_THROWS_AS(add(Td(Shape{2, 3}), Td(Shape{2})), ShapeError);
  CHECK_THROWS_AS(reshape(Td(Shape{2, 3}), Shape{4}), ShapeError);
  CHECK_THROWS_AS(Td(Shape{2}, std::vector<double>{1.0}), ShapeError);
}

TEST_CASE("finite-difference checks of every primitive", "[tensor_autodiff]") {
  Rng rng(6);
  using F = std::function<Td(const Td&)>;
  const Td b = random_tensor({4}, rng);
  const Td m = random_tensor({4, 3}, rng);
  const Td other = random_tensor({3, 4}, rng);
  const std::vector<int> labels = {0, 2, 1};
  BatchNormStats<double> stats(4);
  const Td gamma = random_tensor({4}, rng), beta = random_tensor({4}, rng);

  const std::vector<std::pair<std::string, F>> cases = {
      {"add", [&](const Td& x) { return sum(mul(add(x, b), add(x, b))); }},
      {"sub", [&](const Td& x) { return sum(mul(sub(x, other), x)); }},
      {"scale", [&](const Td& x) { return sum(mul(scale(x, 1.7), x)); }},
      {"matmul", [&](const Td& x) { return sum(tanh(matmul(x, m))); }},
      {"transpose", [&](const Td& x) { return sum(mul(transpose(x), m)); }},
      {"reshape+slice", [&](const Td& x) { return sum(mul(slice(reshape(x, {4, 3}), 0, 1, 3), slice(m, 0, 0, 2))); }},
      {"concat", [&](const Td& x) { return sum(sigmoid(concat<double>({x, mul(x, x)}, 1))); }},
      {"pool", [&](const Td& x) { return sum(mul(mean_pool_global(x), b)); }},
      {"softmax", [&](const Td& x) { return sum(mul(softmax_rows(x), other)); }},
      {"sigmoid", [&](const Td& x) { return sum(sigmoid(x)); }},
      {"gelu", [&](const Td& x) { return sum(mul(gelu(x), other)); }},
      {"mean", [&](const Td& x) { return mean(mul(x, x)); }},
      {"cross_entropy", [&](const Td& x) { return cross_entropy(x, labels); }},
      {"batchnorm", [&](const Td& x) {
         BatchNormStats<double> s = stats;
         return sum(mul(batchnorm(x, gamma, beta, s, true), other));
       }},
  };
  const Td x = random_tensor({3, 4}, rng);
  for (const auto& [name, f] : cases) {
    INFO(name);
    CHECK(grad_check<double>(f, x) < 1e-6);
  }
}

TEST_CASE("finite-difference checks of convolutions", "[tensor_autodiff]") {
  Rng rng(7);
  const Td w = random_tensor({3, 3, 2, 2}, rng), dw = random_tensor({3, 3, 2}, rng);
  const Td x = random_tensor({1, 4, 4, 2}, rng);
  CHECK(grad_check<double>([&](const Td& v) { return sum(tanh(conv2d(v, w, 2, 1))); }, x) < 1e-6);
  CHECK(grad_check<double>([&](const Td& v) { return sum(tanh(conv2d(x, v, 1, 1))); }, w) < 1e-6);
  CHECK(grad_check<double>([&](const Td& v) { return sum(tanh(depthwise_conv2d(v, dw, 1, 1))); }, x) < 1e-6);
  CHECK(grad_check<double>([&](const Td& v) { return sum(tanh(depthwise_conv2d(x, v, 1, 1))); }, dw) < 1e-6);
}

TEST_CASE("finite-difference checks of attention", "[tensor_autodiff]") {
  Rng rng(8);
  const Td x = random_tensor({1, 8, 16}, rng, 0.5);
  const Td wq = random_tensor({16, 16}, rng, 0.3), wk = random_tensor({16, 16}, rng, 0.3),
           wv = random_tensor({16, 16}, rng, 0.3);
  const auto block = [&](const Td& v) {
    return sum(scaled_dot_product_attention(matmul(v, wq), matmul(v, wk), matmul(v, wv), 2));
  };
  CHECK(grad_check<double>(block, x) < 1e-5);
  // Weights too, with a non-uniform downstream gradient.
  const Td r = random_tensor({1, 8, 16}, rng);
  const auto via_weights = [&](const Td& q) {
    return sum(mul(scaled_dot_product_attention(matmul(x, q), matmul(x, wk), matmul(x, wv), 2), r));
  };
  CHECK(grad_check<double>(via_weights, wq) < 1e-5);
}

TEST_CASE("attention matches a per-head reference", "[tensor_autodiff]") {
  Rng rng(9);
  const std::size_t t = 5, d = 6, heads = 2, dh = 3;
  const Td q = random_tensor({1, t, d}, rng), k = random_tensor({1, t, d}, rng), v = random_tensor({1, t, d}, rng);
  const auto out = scaled_dot_product_attention(q, k, v, heads);
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < t; ++i) {
      std::vector<double> s(t);
      double mx = -1e300;
      for (std::size_t j = 0; j < t; ++j) {
        double acc = 0;
        for (std::size_t e = 0; e < dh; ++e) acc += q.values()[i * d + h * dh + e] * k.values()[j * d + h * dh + e];
        s[j] = acc / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, s[j]);
      }
      double z = 0;
      for (auto& sj : s) z += (sj = std::exp(sj - mx));
      for (std::size_t e = 0; e < dh; ++e) {
        double acc = 0;
        for (std::size_t j = 0; j < t; ++j) acc += s[j] / z * v.values()[j * d + h * dh + e];
        CHECK_THAT(out.values()[i * d + h * dh + e], WithinAbs(acc, 1e-12));
      }
    }
}

TEST_CASE("constant functions have zero gradient error", "[tensor_autodiff]") {
  Rng rng(10);
  const Td c(Shape{}, std::vector<double>{3.0});
  CHECK(grad_check<double>([&](const Td&) { return c; }, random_tensor({4}, rng)) == 0.0);
}

TEST_CASE("cross entropy value", "[tensor_autodiff]") {
  const Td logits(Shape{2, 3}, std::vector<double>{1, 2, 3, 0, 0, 0});
  const std::vector<int> labels = {2, 1};
  const double l0 = -std::log(std::exp(3.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
  const double l1 = std::log(3.0);
  CHECK_THAT(cross_entropy(logits, labels).item(), WithinAbs((l0 + l1) / 2, 1e-12));
  const std::vector<int> bad = {3, 0};
  CHECK_THROWS_AS(cross_entropy(logits, bad), InvalidArgument);
}

TEST_CASE("batchnorm running statistics and eval mode", "[tensor_autodiff]") {
  Rng rng(11);
  const Td x = random_tensor({8, 2}, rng);
  const Td gamma(Shape{2}, 1.0), beta(Shape{2}, 0.0);
  BatchNormStats<double> stats(2);
  const auto y = batchnorm(x, gamma, beta, stats, true);
  for (std::size_t c = 0; c < 2; ++c) {
    double mu = 0, var = 0, ym = 0;
    for (std::size_t i = 0; i < 8; ++i) mu += x.values()[i * 2 + c] / 8;
    for (std::size_t i = 0; i < 8; ++i) var += std::pow(x.values()[i * 2 + c] - mu, 2) / 8;
    for (std::size_t i = 0; i < 8; ++i) ym += y.values()[i * 2 + c] / 8;
    CHECK_THAT(ym, WithinAbs(0.0, 1e-12));
    CHECK_THAT(stats.running_mean[c], WithinAbs(0.1 * mu, 1e-12));
    // Unbiased variance feeds the running estimate.
    CHECK_THAT(stats.running_var[c], WithinAbs(0.9 + 0.1 * var * 8 / 7, 1e-12));
  }
  const auto before = stats.running_mean;
  const auto e = batchnorm(x, gamma, beta, stats, false);
  CHECK(stats.running_mean == before);
  CHECK_THAT(e.values()[0], WithinAbs((x.values()[0] - stats.running_mean[0]) / std::sqrt(stats.running_var[0] + 1e-5), 1e-12));
}

TEST_CASE("float tensors compute the same graph", "[tensor_autodiff]") {
  Tensor<float> x(Shape{2, 2}, std::vector<float>{1, 2, 3, 4}, true);
  sum(mul(x, x)).backward();
  CHECK(std::vector<float>(x.grad().begin(), x.grad().end()) == std::vector<float>{2, 4, 6, 8});
}

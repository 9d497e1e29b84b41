#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "ppgauth/error.hpp"
#include "ppgauth/hybrid_model.hpp"
#include "ppgauth/rng.hpp"

using namespace ppgauth;
using ag::Shape;
using Td = ag::Tensor<double>;
using Catch::Matchers::WithinAbs;

namespace {

Td random_tensor(Shape shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Td t(shape);
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("LSTM with zero weights outputs zeros", "[hybrid_model]") {
  nn::ParamStore<double> store;
  Rng rng(1);
  nn::Lstm<double> lstm(store, "l", 5, rng);
  std::fill(lstm.weight.values().begin(), lstm.weight.values().end(), 0.0);
  const auto h = lstm(random_tensor({3, 12}, rng, -3, 3));
  for (double v : h.values()) CHECK(v == 0.0);
}

TEST_CASE("LSTM matches a step-by-step reference", "[hybrid_model]") {
  nn::ParamStore<double> store;
  Rng rng(2);
  const std::size_t H = 3, steps = 4;
  nn::Lstm<double> lstm(store, "l", H, rng);
  for (auto& v : lstm.bias.values()) v = rng.uniform(-0.5, 0.5);
  const Td x = random_tensor({2, steps}, rng, -1, 1);
  const auto h = lstm(x);

  const auto& W = lstm.weight.values();  // [H + 1, 4H], rows: h_prev..., x
  const auto& b = lstm.bias.values();
  for (std::size_t n = 0; n < 2; ++n) {
    std::vector<double> hp(H, 0.0), cp(H, 0.0);
    for (std::size_t t = 0; t < steps; ++t) {
      std::vector<double> z(4 * H);
      for (std::size_t j = 0; j < 4 * H; ++j) {
        double acc = b[j];
        for (std::size_t k = 0; k < H; ++k) acc += hp[k] * W[k * 4 * H + j];
        acc += x.values()[n * steps + t] * W[H * 4 * H + j];
        z[j] = acc;
      }
      for (std::size_t k = 0; k < H; ++k) {
        const double f = sigm(z[k]), i = sigm(z[H + k]), o = sigm(z[2 * H + k]), g = std::tanh(z[3 * H + k]);
        cp[k] = f * cp[k] + i * g;
        hp[k] = o * std::tanh(cp[k]);
      }
    }
    for (std::size_t k = 0; k < H; ++k) CHECK_THAT(h.values()[n * H + k], WithinAbs(hp[k], 1e-12));
  }
}

TEST_CASE("LSTM hidden states stay inside (-1, 1)", "[hybrid_model]") {
  nn::ParamStore<double> store;
  Rng rng(3);
  nn::Lstm<double> lstm(store, "l", 8, rng);
  for (auto& v : lstm.weight.values()) v *= 20.0;
  const auto h = lstm(random_tensor({4, 30}, rng, -50, 50));
  for (double v : h.values()) {
    CHECK(v > -1.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("LSTM gradients match finite differences", "[hybrid_model]") {
  nn::ParamStore<double> store;
  Rng rng(4);
  nn::Lstm<double> lstm(store, "l", 3, rng);
  const Td x = random_tensor({2, 6}, rng, -1, 1);
  const Td r = random_tensor({2, 3}, rng, -1, 1);
  const auto errs = ag::grad_check_params<double>([&] { return ag::sum(ag::mul(lstm(x), r)); }, store.tensors());
  for (double e : errs) CHECK(e < 1e-6);
}

TEST_CASE("standard model dimensions", "[hybrid_model]") {
  const auto cfg = ModelConfig::standard(8);
  CHECK(cfg.cvt_grid() == 32);
  CHECK(cfg.cvt_tokens() == 1024);
  CHECK(cfg.convmixer_tokens() == 1024);
  CHECK(cfg.fused_width() == 160);
}

TEST_CASE("full forward shapes and simplex output", "[hybrid_model]") {
  const auto cfg = ModelConfig::standard(5);
  HybridModel<float> model(cfg, 7);
  Rng rng(5);
  ag::Tensor<float> images(Shape{2, 256, 256, 1});
  for (auto& v : images.values()) v = static_cast<float>(rng.uniform());
  ag::Tensor<float> seqs(Shape{2, 350});
  for (auto& v : seqs.values()) v = static_cast<float>(rng.uniform());
  const auto out = model.infer(images, seqs);
  CHECK(out.cvt_tokens.shape() == Shape{2, 1024, 64});
  CHECK(out.z_cvt.shape() == Shape{2, 64});
  CHECK(out.cm_tokens.shape() == Shape{2, 1024, 32});
  CHECK(out.z_cm.shape() == Shape{2, 32});
  CHECK(out.z_lstm.shape() == Shape{2, 64});
  CHECK(out.fused.shape() == Shape{2, 160});
  CHECK(out.embedding.shape() == Shape{2, 64});
  CHECK(out.probs.shape() == Shape{2, 5});
  for (std::size_t n = 0; n < 2; ++n) {
    double s = 0;
    for (std::size_t c = 0; c < 5; ++c) s += out.probs.values()[n * 5 + c];
    CHECK_THAT(s, WithinAbs(1.0, 1e-6));
  }
  // Deterministic.
  CHECK(model.infer(images, seqs).embedding.values() == out.embedding.values());
  CHECK_THROWS_AS(model.infer(ag::Tensor<float>(Shape{2, 64, 64, 1}), seqs), ShapeError);
}

TEST_CASE("batch permutation equivariance in eval mode", "[hybrid_model]") {
  HybridModel<double> model(ModelConfig::miniature(3), 11);
  Rng rng(6);
  const Td images = random_tensor({3, 32, 32, 1}, rng);
  const Td seqs = random_tensor({3, 20}, rng);
  Td pi(Shape{3, 32, 32, 1}), ps(Shape{3, 20});
  const std::size_t perm[3] = {2, 0, 1};
  for (std::size_t n = 0; n < 3; ++n) {
    std::copy_n(images.values().begin() + perm[n] * 1024, 1024, pi.values().begin() + n * 1024);
    std::copy_n(seqs.values().begin() + perm[n] * 20, 20, ps.values().begin() + n * 20);
  }
  const auto a = model.infer(images, seqs).embedding.values();
  const auto b = model.infer(pi, ps).embedding.values();
  const std::size_t d = model.config().embed_dim;
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t j = 0; j < d; ++j) CHECK_THAT(b[n * d + j], WithinAbs(a[perm[n] * d + j], 1e-12));
}

TEST_CASE("ConvMixer branch", "[hybrid_model]") {
  HybridModel<double> model(ModelConfig::standard(3), 3);
  const Td zeros(Shape{1, 256, 256, 1});
  Td tokens;
  const auto z = model.convmixer_forward(zeros, &tokens);
  CHECK(z.shape() == Shape{1, 32});
  CHECK(tokens.shape() == Shape{1, 1024, 32});
  for (double v : z.values()) CHECK(std::isfinite(v));
  CHECK(model.convmixer_forward(zeros).values() == z.values());
}

TEST_CASE("removing the ConvMixer residual changes the block output", "[hybrid_model]") {
  HybridModel<double> model(ModelConfig::miniature(3), 4);
  Rng rng(7);
  const Td z = random_tensor({2, 4, 4, 8}, rng, -1, 1);
  const auto with = model.convmixer_block(z, 0, true).values();
  const auto without = model.convmixer_block(z, 0, false).values();
  double diff = 0;
  for (std::size_t i = 0; i < with.size(); ++i) diff = std::max(diff, std::abs(with[i] - without[i]));
  CHECK(diff > 1e-3);
}

TEST_CASE("classification head", "[hybrid_model]") {
  HybridModel<double> model(ModelConfig::miniature(4), 5);
  Rng rng(8);
  const Td images = random_tensor({3, 32, 32, 1}, rng);
  const Td seqs = random_tensor({3, 20}, rng);
  const auto out = model.infer(images, seqs);
  for (std::size_t n = 0; n < 3; ++n) {
    double s = 0;
    for (std::size_t c = 0; c < 4; ++c) s += out.probs.values()[n * 4 + c];
    CHECK_THAT(s, WithinAbs(1.0, 1e-9));
  }

  // Shift invariance of the argmax.
  const Td shifted = ag::add(out.logits, Td(Shape{4}, 123.0));
  const auto p1 = out.probs.values();
  const auto p2 = ag::softmax_rows(shifted).values();
  for (std::size_t n = 0; n < 3; ++n) {
    const auto a = std::max_element(p1.begin() + n * 4, p1.begin() + n * 4 + 4) - p1.begin();
    const auto b = std::max_element(p2.begin() + n * 4, p2.begin() + n * 4 + 4) - p2.begin();
    CHECK(a == b);
  }

  for (const char* name : {"fusion.classifier.weight", "fusion.classifier.bias"}) {
    auto t = model.store().find(name);
    std::fill(t.values().begin(), t.values().end(), 0.0);
  }
  const auto zeroed = model.infer(images, seqs);
  for (double p : zeroed.probs.values()) CHECK_THAT(p, WithinAbs(0.25, 1e-15));
}

TEST_CASE("branch masks change the fused width", "[hybrid_model]") {
  auto cfg = ModelConfig::miniature(3);
  cfg.branches = {false, false, true};
  HybridModel<double> lstm_only(cfg, 1);
  CHECK(cfg.fused_width() == 4);
  Rng rng(9);
  const auto out = lstm_only.infer(random_tensor({2, 32, 32, 1}, rng), random_tensor({2, 20}, rng));
  CHECK(out.fused.shape() == Shape{2, 4});
  CHECK_FALSE(out.z_cvt.defined());
  cfg.branches = {false, false, false};
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}

TEST_CASE("model construction is deterministic in the seed", "[hybrid_model]") {
  HybridModel<float> a(ModelConfig::miniature(3), 42), b(ModelConfig::miniature(3), 42), c(ModelConfig::miniature(3), 43);
  REQUIRE(a.store().params().size() == b.store().params().size());
  bool any_diff = false;
  for (std::size_t i = 0; i < a.store().params().size(); ++i) {
    CHECK(a.store().params()[i].second.values() == b.store().params()[i].second.values());
    any_diff |= a.store().params()[i].second.values() != c.store().params()[i].second.values();
  }
  CHECK(any_diff);
}

TEST_CASE("miniature model gradients match finite differences", "[hybrid_model]") {
  HybridModel<double> model(ModelConfig::miniature(3), 13);
  model.set_training(true);
  Rng rng(10);
  const Td images = random_tensor({2, 32, 32, 1}, rng);
  const Td seqs = random_tensor({2, 20}, rng);
  const std::vector<int> labels = {0, 2};
  // Two of the cheaper groups; the acceptance suite checks all of them.
  std::vector<Td> params = {model.store().find("fusion.projection.weight"), model.store().find("lstm.weight")};
  const auto errs = ag::grad_check_params<double>(
      [&] {
        // Training-mode batch norm uses batch statistics, so this is a pure function of the params.
        return ag::cross_entropy(model.forward(images, seqs).logits, labels);
      },
      params);
  for (double e : errs) CHECK(e < 1e-4);
}

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "ppgauth/auth.hpp"
#include "ppgauth/data_io.hpp"
#include "ppgauth/error.hpp"
#include "ppgauth/pipeline.hpp"
#include "ppgauth/train.hpp"
#include "test_util.hpp"

using namespace ppgauth;

namespace {

// Synthetic corpus -> preprocessed segments -> scalograms of side `size`.
ArchiveDataset synthetic_dataset(std::size_t subjects, double duration_s, std::size_t size, const std::string& tag) {
  RunConfig cfg;
  cfg.data.subjects = subjects;
  cfg.data.duration_s = duration_s;
  cfg.model.input_size = size;
  std::vector<TimeSeries> recs;
  std::vector<int> labels;
  for (std::size_t i = 0; i < subjects; ++i) {
    recs.push_back(generate_subject(corpus_subject_spec(cfg.data, i), duration_s, cfg.data.fs_hz));
    labels.push_back(static_cast<int>(i));
  }
  testutil::TempDir dir(tag);
  build_archive(recs, labels, cfg, dir.path());
  return load_archive_dataset(dir.path());
}

ModelConfig small_model(const Dataset& d) {
  ModelConfig m;
  m.input_size = d.image_size;
  m.num_classes = d.num_classes;
  m.lstm.steps = d.steps;
  m.cvt.embed_dim = 16;
  m.cvt.heads = 2;
  m.convmixer.filters = 16;
  m.convmixer.heads = 2;
  m.convmixer.blocks = 2;
  m.lstm.hidden = 16;
  m.embed_dim = 16;
  return m;
}

double sq_dist(const std::vector<float>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace

TEST_CASE("stratified split", "[hybrid_model][train]") {
  std::vector<int> labels;
  for (int c = 0; c < 3; ++c)
    for (int k = 0; k < 27; ++k) labels.push_back(c);
  const auto s = stratified_split(labels, 0.8, 5);
  CHECK(s.train.size() == 3 * 22);
  CHECK(s.test.size() == 3 * 5);
  CHECK(std::is_sorted(s.train.begin(), s.train.end()));
  std::vector<std::size_t> all = s.train;
  all.insert(all.end(), s.test.begin(), s.test.end());
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> want(labels.size());
  std::iota(want.begin(), want.end(), 0);
  CHECK(all == want);
  const auto again = stratified_split(labels, 0.8, 5);
  CHECK(again.train == s.train);
  const std::vector<int> lonely = {0, 0, 1};
  CHECK_THROWS_AS(stratified_split(lonely, 0.8, 1), InvalidArgument);
}

TEST_CASE("two synthetic subjects are learnable", "[hybrid_model][train]") {
  // 52.5 s at 70 Hz after resampling gives 20 windows per subject.
  const auto ad = synthetic_dataset(2, 52.5, 64, "learn");
  REQUIRE(ad.data.samples.size() == 40);
  const auto labels = ad.data.labels();
  const Split split = stratified_split(labels, 0.8, 3);

  // Separability floor: nearest centroid on the raw scalograms.
  std::vector<std::vector<double>> centroid(2, std::vector<double>(64 * 64, 0.0));
  std::vector<double> count(2, 0.0);
  for (std::size_t i : split.train) {
    const auto& s = ad.data.samples[i];
    for (std::size_t j = 0; j < s.image.size(); ++j) centroid[s.label][j] += s.image[j];
    count[s.label] += 1;
  }
  for (int c = 0; c < 2; ++c)
    for (auto& v : centroid[c]) v /= count[c];
  for (std::size_t i : split.test) {
    const auto& s = ad.data.samples[i];
    const int pred = sq_dist(s.image, centroid[0]) < sq_dist(s.image, centroid[1]) ? 0 : 1;
    CHECK(pred == s.label);
  }

  HybridModel<float> model(small_model(ad.data), 3);
  TrainConfig tc;
  tc.epochs = 30;
  tc.seed = 3;
  tc.patience = 0;
  const auto report = train(model, ad.data, split, tc);
  REQUIRE(report.epochs.size() == 30);
  CHECK(report.epochs.back().train_loss < report.initial_loss);
  CHECK(report.epochs.back().test_accuracy >= 0.9);

  // Embeddings are deterministic and match the batched evaluation up to
  // float summation order.
  const auto all = evaluate(model, ad.data, split.test);
  const auto single = embed(model, ad.data.samples[split.test[0]].image, ad.data.samples[split.test[0]].sequence);
  REQUIRE(single.size() == all.embeddings[0].size());
  for (std::size_t j = 0; j < single.size(); ++j) CHECK_THAT(single[j], Catch::Matchers::WithinAbs(all.embeddings[0][j], 1e-5));
  CHECK(embed(model, ad.data.samples[0].image, ad.data.samples[0].sequence) ==
        embed(model, ad.data.samples[0].image, ad.data.samples[0].sequence));
}

TEST_CASE("same-subject embeddings are closer than cross-subject ones", "[hybrid_model][train]") {
  const auto ad = synthetic_dataset(3, 52.5, 32, "embed");
  const auto labels = ad.data.labels();
  const Split split = stratified_split(labels, 0.8, 4);
  auto mc = small_model(ad.data);
  HybridModel<float> model(mc, 4);
  TrainConfig tc;
  tc.epochs = 20;
  tc.seed = 4;
  train(model, ad.data, split, tc);
  std::vector<std::size_t> every(ad.data.samples.size());
  std::iota(every.begin(), every.end(), 0);
  const auto ev = evaluate(model, ad.data, every);
  double same = 0, cross = 0;
  std::size_t ns = 0, nc = 0;
  for (std::size_t i = 0; i < every.size(); ++i)
    for (std::size_t j = i + 1; j < every.size(); ++j) {
      const double s = cosine_similarity(ev.embeddings[i], ev.embeddings[j]);
      if (labels[i] == labels[j]) {
        same += s;
        ++ns;
      } else {
        cross += s;
        ++nc;
      }
    }
  REQUIRE(ns >= 100);
  REQUIRE(nc >= 100);
  CHECK(same / static_cast<double>(ns) > cross / static_cast<double>(nc));
}

TEST_CASE("shuffled labels are memorised but do not generalise", "[hybrid_model][train]") {
  auto ad = synthetic_dataset(8, 52.5, 32, "shuffle");
  // Permute labels across samples; class sizes stay equal.
  auto labels = ad.data.labels();
  Rng rng(99);
  rng.shuffle(labels);
  for (std::size_t i = 0; i < labels.size(); ++i) ad.data.samples[i].label = labels[i];
  const Split split = stratified_split(labels, 0.8, 5);

  HybridModel<float> model(small_model(ad.data), 5);
  TrainConfig tc;
  tc.epochs = 40;
  tc.seed = 5;
  tc.learning_rate = 3e-3;
  tc.patience = 0;
  const auto report = train(model, ad.data, split, tc);
  const double chance = 1.0 / 8.0;
  CHECK(report.epochs.back().train_accuracy > chance + 0.1);
  CHECK(std::abs(report.epochs.back().test_accuracy - chance) <= 0.15);
}

TEST_CASE("a zero learning rate leaves parameters bit-identical", "[hybrid_model][train]") {
  const auto ad = synthetic_dataset(2, 52.5, 32, "lr0");
  HybridModel<float> model(small_model(ad.data), 6);
  std::vector<std::vector<float>> before;
  for (const auto& [name, t] : model.store().params()) before.push_back(t.values());

  // One explicit Adam step.
  Adam<float> adam(model.store().tensors(), 0.0);
  model.set_training(true);
  ag::Tensor<float> img(ag::Shape{2, 32, 32, 1}), seq(ag::Shape{2, ad.data.steps});
  std::copy(ad.data.samples[0].image.begin(), ad.data.samples[0].image.end(), img.values().begin());
  std::copy(ad.data.samples[25].image.begin(), ad.data.samples[25].image.end(), img.values().begin() + 1024);
  const std::vector<int> y = {ad.data.samples[0].label, ad.data.samples[25].label};
  ag::cross_entropy(model.forward(img, seq).logits, y).backward();
  adam.step();

  // And a full epoch through train().
  TrainConfig tc;
  tc.epochs = 1;
  tc.learning_rate = 0.0;
  const auto labels = ad.data.labels();
  train(model, ad.data, stratified_split(labels, 0.8, 1), tc);

  std::size_t i = 0;
  for (const auto& [name, t] : model.store().params()) {
    INFO(name);
    CHECK(t.values() == before[i++]);
  }
}

TEST_CASE("adam follows its update rule", "[hybrid_model][train]") {
  ag::Tensor<double> p(ag::Shape{2}, std::vector<double>{1.0, -2.0}, true);
  Adam<double> adam({p}, 0.1);
  p.grad()[0] = 0.5;
  p.grad()[1] = -4.0;
  adam.step();
  // First step: m_hat = g, v_hat = g^2, so each parameter moves by lr * sign(g).
  CHECK_THAT(p.values()[0], Catch::Matchers::WithinAbs(0.9, 1e-7));
  CHECK_THAT(p.values()[1], Catch::Matchers::WithinAbs(-1.9, 1e-7));
  CHECK(adam.steps() == 1);
}

TEST_CASE("training configuration validation", "[hybrid_model][train]") {
  TrainConfig tc;
  tc.batch_size = 0;
  CHECK_THROWS_AS(tc.validate(), InvalidArgument);
  tc = {};
  tc.train_fraction = 0.0;
  CHECK_THROWS_AS(tc.validate(), InvalidArgument);
  tc = {};
  tc.learning_rate = -1;
  CHECK_THROWS_AS(tc.validate(), InvalidArgument);
}

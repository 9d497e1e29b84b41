#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ppgauth/hybrid_model.hpp"

namespace ppgauth {

// One training example: a scalogram image and the raw segment it came from.
struct Sample {
  std::vector<float> image;     // image_size x image_size, row-major
  std::vector<float> sequence;  // one value per LSTM step
  int label = 0;
};

struct Dataset {
  std::size_t image_size = 0;
  std::size_t steps = 0;
  std::size_t num_classes = 0;
  std::vector<Sample> samples;

  std::vector<int> labels() const;
  // Sizes and labels consistent; throws InvalidArgument.
  void validate() const;
};

struct Split {
  std::vector<std::size_t> train;  // ascending
  std::vector<std::size_t> test;   // ascending
};

// Per class, round(train_fraction * n_c) of the examples go to train and the
// rest to test. Classes are shuffled independently with one seeded stream,
// visited in label order. Throws if a class has fewer than 2 examples.
Split stratified_split(std::span<const int> labels, double train_fraction, std::uint64_t seed);

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  double train_fraction = 0.8;
  // Stop after this many epochs without a lower training loss; 0 disables.
  std::size_t patience = 10;

  void validate() const;
};

template <typename T>
class Adam {
 public:
  Adam(std::vector<ag::Tensor<T>> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  // Applies one update from the accumulated gradients (missing gradients
  // count as zero).
  void step();
  std::size_t steps() const { return t_; }

 private:
  std::vector<ag::Tensor<T>> params_;
  std::vector<std::vector<T>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double test_loss = 0.0;      // 0 when the test split is empty
  double test_accuracy = 0.0;  // 0 when the test split is empty
};

struct TrainReport {
  double initial_loss = 0.0;  // mean training-split loss before the first update
  std::vector<EpochMetrics> epochs;
  bool stopped_early = false;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

// Mini-batch Adam on mean cross-entropy over split.train. Deterministic in
// cfg.seed. Throws Error on a non-finite loss.
template <typename T>
TrainReport train(HybridModel<T>& model, const Dataset& data, const Split& split, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<int> predictions;              // argmax of the class probabilities
  std::vector<std::vector<double>> probs;    // per example
  std::vector<std::vector<double>> embeddings;
};

// Eval-mode forward over the given examples; leaves the model untouched.
template <typename T>
Evaluation evaluate(const HybridModel<T>& model, const Dataset& data, std::span<const std::size_t> indices,
                    std::size_t batch_size = 16);

// Eval-mode fused embedding of a single example.
template <typename T>
std::vector<double> embed(const HybridModel<T>& model, std::span<const float> image, std::span<const float> sequence);

}  // namespace ppgauth

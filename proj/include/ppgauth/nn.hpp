#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ppgauth/rng.hpp"
#include "ppgauth/tensor.hpp"

namespace ppgauth::nn {

using ag::Tensor;

// Owns the named trainable tensors and batch-norm running statistics of a
// model. Registration order is the serialization order.
template <typename T>
class ParamStore {
 public:
  Tensor<T> add(std::string name, Tensor<T> t);
  ag::BatchNormStats<T>& add_stats(std::string name, std::size_t channels);

  const std::vector<std::pair<std::string, Tensor<T>>>& params() const { return params_; }
  std::vector<Tensor<T>> tensors() const;
  const std::vector<std::pair<std::string, ag::BatchNormStats<T>*>>& stats() const { return stats_view_; }

  Tensor<T> find(const std::string& name) const;
  std::size_t parameter_count() const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor<T>>> params_;
  std::vector<std::unique_ptr<ag::BatchNormStats<T>>> stats_owned_;
  std::vector<std::pair<std::string, ag::BatchNormStats<T>*>> stats_view_;
};

// Weights ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)).
template <typename T>
Tensor<T> fan_in_uniform(Rng& rng, ag::Shape shape, std::size_t fan_in);

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out], undefined when built without one

  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
         bool with_bias = true);
  Tensor<T> operator()(const Tensor<T>& x) const;
};

template <typename T>
struct Conv2d {
  Tensor<T> weight;  // [k, k, cin, cout]
  Tensor<T> bias;    // [cout]
  std::size_t stride = 1;
  std::size_t padding = 0;

  Conv2d() = default;
  Conv2d(ParamStore<T>& store, const std::string& name, std::size_t cin, std::size_t cout, std::size_t kernel,
         std::size_t stride, std::size_t padding, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
};

template <typename T>
struct DepthwiseConv2d {
  Tensor<T> weight;  // [k, k, c]
  Tensor<T> bias;    // [c]
  std::size_t padding = 0;

  DepthwiseConv2d() = default;
  DepthwiseConv2d(ParamStore<T>& store, const std::string& name, std::size_t channels, std::size_t kernel,
                  Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
};

template <typename T>
struct BatchNorm {
  Tensor<T> gamma;
  Tensor<T> beta;
  ag::BatchNormStats<T>* stats = nullptr;

  BatchNorm() = default;
  BatchNorm(ParamStore<T>& store, const std::string& name, std::size_t channels);
  Tensor<T> operator()(const Tensor<T>& x, bool training) const;
};

// Learned additive table, one row per token; initialised N(0, 0.02).
template <typename T>
struct PositionalEmbedding {
  Tensor<T> table;  // [tokens, dim]

  PositionalEmbedding() = default;
  PositionalEmbedding(ParamStore<T>& store, const std::string& name, std::size_t tokens, std::size_t dim, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;
};

// Self-attention with learned query/key/value/output projections.
template <typename T>
struct MultiHeadSelfAttention {
  Linear<T> query, key, value, output;
  std::size_t heads = 1;

  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(ParamStore<T>& store, const std::string& name, std::size_t dim, std::size_t heads,
                         Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const;  // [N, T, D] -> [N, T, D]
};

// Single-layer LSTM over a scalar input sequence. The four gate blocks are
// stacked column-wise in the order forget, input, output, candidate and act
// on the concatenation [h_prev, x_t].
template <typename T>
struct Lstm {
  Tensor<T> weight;  // [hidden + 1, 4 * hidden]
  Tensor<T> bias;    // [4 * hidden]
  std::size_t hidden = 0;

  Lstm() = default;
  Lstm(ParamStore<T>& store, const std::string& name, std::size_t hidden, Rng& rng);

  // seq: [N, T] -> final hidden state [N, hidden]. h0 = c0 = 0.
  Tensor<T> operator()(const Tensor<T>& seq, bool reverse = false) const;
};

}  // namespace ppgauth::nn

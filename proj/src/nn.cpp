#include "ppgauth/nn.hpp"

#include <cmath>

#include "ppgauth/error.hpp"

namespace ppgauth::nn {

template <typename T>
Tensor<T> ParamStore<T>::add(std::string name, Tensor<T> t) {
  for (const auto& [existing, _] : params_) {
    if (existing == name) throw InvalidArgument("ParamStore: duplicate parameter '" + name + "'");
  }
  t.set_requires_grad(true);
  params_.emplace_back(std::move(name), t);
  return t;
}

template <typename T>
ag::BatchNormStats<T>& ParamStore<T>::add_stats(std::string name, std::size_t channels) {
  stats_owned_.push_back(std::make_unique<ag::BatchNormStats<T>>(channels));
  stats_view_.emplace_back(std::move(name), stats_owned_.back().get());
  return *stats_owned_.back();
}

template <typename T>
std::vector<Tensor<T>> ParamStore<T>::tensors() const {
  std::vector<Tensor<T>> out;
  out.reserve(params_.size());
  for (const auto& [_, t] : params_) out.push_back(t);
  return out;
}

template <typename T>
Tensor<T> ParamStore<T>::find(const std::string& name) const {
  for (const auto& [n, t] : params_) {
    if (n == name) return t;
  }
  throw InvalidArgument("ParamStore: no parameter named '" + name + "'");
}

template <typename T>
std::size_t ParamStore<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& [_, t] : params_) t.zero_grad();
}

template <typename T>
Tensor<T> fan_in_uniform(Rng& rng, ag::Shape shape, std::size_t fan_in) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Tensor<T> t(std::move(shape));
  for (T& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
Linear<T>::Linear(ParamStore<T>& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                  bool with_bias)
    : weight(store.add(name + ".weight", fan_in_uniform<T>(rng, {in, out}, in))) {
  if (with_bias) bias = store.add(name + ".bias", Tensor<T>(ag::Shape{out}));
}

template <typename T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const {
  const auto y = ag::matmul(x, weight);
  return bias.defined() ? ag::add(y, bias) : y;
}

template <typename T>
Conv2d<T>::Conv2d(ParamStore<T>& store, const std::string& name, std::size_t cin, std::size_t cout,
                  std::size_t kernel, std::size_t stride_, std::size_t padding_, Rng& rng)
    : weight(store.add(name + ".weight", fan_in_uniform<T>(rng, {kernel, kernel, cin, cout}, kernel * kernel * cin))),
      bias(store.add(name + ".bias", Tensor<T>(ag::Shape{cout}))),
      stride(stride_),
      padding(padding_) {}

template <typename T>
Tensor<T> Conv2d<T>::operator()(const Tensor<T>& x) const {
  return ag::add(ag::conv2d(x, weight, stride, padding), bias);
}

template <typename T>
DepthwiseConv2d<T>::DepthwiseConv2d(ParamStore<T>& store, const std::string& name, std::size_t channels,
                                    std::size_t kernel, Rng& rng)
    : weight(store.add(name + ".weight", fan_in_uniform<T>(rng, {kernel, kernel, channels}, kernel * kernel))),
      bias(store.add(name + ".bias", Tensor<T>(ag::Shape{channels}))),
      padding(kernel / 2) {}

template <typename T>
Tensor<T> DepthwiseConv2d<T>::operator()(const Tensor<T>& x) const {
  return ag::add(ag::depthwise_conv2d(x, weight, 1, padding), bias);
}

template <typename T>
BatchNorm<T>::BatchNorm(ParamStore<T>& store, const std::string& name, std::size_t channels)
    : gamma(store.add(name + ".gamma", Tensor<T>(ag::Shape{channels}, T(1)))),
      beta(store.add(name + ".beta", Tensor<T>(ag::Shape{channels}))),
      stats(&store.add_stats(name, channels)) {}

template <typename T>
Tensor<T> BatchNorm<T>::operator()(const Tensor<T>& x, bool training) const {
  return ag::batchnorm(x, gamma, beta, *stats, training);
}

template <typename T>
PositionalEmbedding<T>::PositionalEmbedding(ParamStore<T>& store, const std::string& name, std::size_t tokens,
                                            std::size_t dim, Rng& rng) {
  Tensor<T> t(ag::Shape{tokens, dim});
  for (T& v : t.values()) v = static_cast<T>(rng.normal(0.0, 0.02));
  table = store.add(name + ".table", t);
}

template <typename T>
Tensor<T> PositionalEmbedding<T>::operator()(const Tensor<T>& x) const {
  return ag::embedding_add(x, table);
}

template <typename T>
MultiHeadSelfAttention<T>::MultiHeadSelfAttention(ParamStore<T>& store, const std::string& name, std::size_t dim,
                                                  std::size_t heads_, Rng& rng)
    : heads(heads_) {
  if (heads == 0 || dim % heads != 0) {
    throw InvalidArgument(name + ": " + std::to_string(heads) + " heads do not divide dim " + std::to_string(dim));
  }
  query = Linear<T>(store, name + ".query", dim, dim, rng);
  // A key bias shifts every score in a row equally, so softmax ignores it.
  key = Linear<T>(store, name + ".key", dim, dim, rng, false);
  value = Linear<T>(store, name + ".value", dim, dim, rng);
  output = Linear<T>(store, name + ".output", dim, dim, rng);
}

template <typename T>
Tensor<T> MultiHeadSelfAttention<T>::operator()(const Tensor<T>& x) const {
  return output(ag::scaled_dot_product_attention(query(x), key(x), value(x), heads));
}

template <typename T>
Lstm<T>::Lstm(ParamStore<T>& store, const std::string& name, std::size_t hidden_, Rng& rng)
    : weight(store.add(name + ".weight", fan_in_uniform<T>(rng, {hidden_ + 1, 4 * hidden_}, hidden_ + 1))),
      bias(store.add(name + ".bias", Tensor<T>(ag::Shape{4 * hidden_}))),
      hidden(hidden_) {}

template <typename T>
Tensor<T> Lstm<T>::operator()(const Tensor<T>& seq, bool reverse) const {
  if (seq.rank() != 2) throw ShapeError("Lstm: input must be [N, T], got " + ag::shape_str(seq.shape()));
  const std::size_t n = seq.size(0), steps = seq.size(1);
  if (steps == 0) throw InvalidArgument("Lstm: empty sequence");
  const std::size_t hd = hidden;

  Tensor<T> h(ag::Shape{n, hd});
  Tensor<T> c(ag::Shape{n, hd});
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t t = reverse ? steps - 1 - s : s;
    const Tensor<T> x_t = ag::slice(seq, 1, t, t + 1);
    const Tensor<T> gates = ag::add(ag::matmul(ag::concat<T>({h, x_t}, 1), weight), bias);
    const Tensor<T> f = ag::sigmoid(ag::slice(gates, 1, 0, hd));
    const Tensor<T> i = ag::sigmoid(ag::slice(gates, 1, hd, 2 * hd));
    const Tensor<T> o = ag::sigmoid(ag::slice(gates, 1, 2 * hd, 3 * hd));
    const Tensor<T> cand = ag::tanh(ag::slice(gates, 1, 3 * hd, 4 * hd));
    c = ag::add(ag::mul(i, cand), ag::mul(f, c));
    h = ag::mul(o, ag::tanh(c));
  }
  return h;
}

template class ParamStore<float>;
template class ParamStore<double>;
template Tensor<float> fan_in_uniform<float>(Rng&, ag::Shape, std::size_t);
template Tensor<double> fan_in_uniform<double>(Rng&, ag::Shape, std::size_t);
template struct Linear<float>;
template struct Linear<double>;
template struct Conv2d<float>;
template struct Conv2d<double>;
template struct DepthwiseConv2d<float>;
template struct DepthwiseConv2d<double>;
template struct BatchNorm<float>;
template struct BatchNorm<double>;
template struct PositionalEmbedding<float>;
template struct PositionalEmbedding<double>;
template struct MultiHeadSelfAttention<float>;
template struct MultiHeadSelfAttention<double>;
template struct Lstm<float>;
template struct Lstm<double>;

}  // namespace ppgauth::nn

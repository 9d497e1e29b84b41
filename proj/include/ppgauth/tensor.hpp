#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// A Tensor is a shared handle to a graph node. Primitives record a backward
// closure on their result whenever gradient recording is enabled and at
// least one input requires gradients. Calling backward() on a scalar walks
// the recorded graph in reverse topological order.
//
// Image-like tensors are channels-last: [N, H, W, C]. Token sequences are
// [N, T, D]. Both precisions (float, double) are instantiated.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ppgauth::ag {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until a gradient flows here
  bool requires_grad = false;
  std::string op;  // "leaf" for user-created tensors
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return parents.empty(); }
  std::vector<T>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

// Gradient recording is on by default. While a guard is alive on the current
// thread, primitives produce detached results.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

  static bool grad_enabled();

 private:
  bool previous_;
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor scalar(T v, bool requires_grad = false) { return Tensor(Shape{}, std::vector<T>{v}, requires_grad); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<T> data() { return node_->value; }
  std::span<const T> data() const { return node_->value; }
  std::vector<T>& values() { return node_->value; }
  const std::vector<T>& values() const { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> grad() { return node_->ensure_grad(); }
  void zero_grad();

  T item() const;
  const std::string& op() const { return node_->op; }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

  // New leaf holding a copy of the values.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  // Reverse pass from this scalar. Leaf gradients accumulate across calls;
  // intermediate gradients are released afterwards.
  void backward() const;

 private:
  std::shared_ptr<Node<T>> node_;
};

// Reverse-topological record of the graph reachable from a root.
template <typename T>
class Tape {
 public:
  // Nodes ordered so every node appears after all of its parents.
  static Tape record(const Tensor<T>& root);

  const std::vector<Node<T>*>& nodes() const { return order_; }
  std::size_t size() const { return order_.size(); }

  // Seeds d(root)/d(root) = 1 and runs every backward closure in reverse.
  void run_backward();

 private:
  std::vector<Node<T>*> order_;
};

template <typename T>
struct BatchNormStats {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  explicit BatchNormStats(std::size_t channels = 0)
      : running_mean(channels, T(0)), running_var(channels, T(1)) {}
};

namespace detail {

// Primitive implementations; instantiated for float and double.
template <typename T>
struct Ops {
  using Tn = Tensor<T>;
  static Tn add(const Tn& a, const Tn& b);
  static Tn sub(const Tn& a, const Tn& b);
  static Tn mul(const Tn& a, const Tn& b);
  static Tn scale(const Tn& a, T c);
  static Tn matmul(const Tn& a, const Tn& b);
  static Tn conv2d(const Tn& x, const Tn& w, std::size_t stride, std::size_t padding);
  static Tn depthwise_conv2d(const Tn& x, const Tn& w, std::size_t stride, std::size_t padding);
  static Tn transpose(const Tn& a);
  static Tn reshape(const Tn& a, Shape shape);
  static Tn slice(const Tn& a, std::size_t axis, std::size_t begin, std::size_t end);
  static Tn concat(const std::vector<Tn>& parts, std::size_t axis);
  static Tn mean_pool_global(const Tn& x);
  static Tn softmax_rows(const Tn& x);
  static Tn sigmoid(const Tn& x);
  static Tn tanh(const Tn& x);
  static Tn gelu(const Tn& x);
  static Tn batchnorm(const Tn& x, const Tn& gamma, const Tn& beta, BatchNormStats<T>& stats, bool training);
  static Tn attention(const Tn& q, const Tn& k, const Tn& v, std::size_t heads);
  static Tn sum(const Tn& x);
  static Tn mean(const Tn& x);
  static Tn cross_entropy(const Tn& logits, std::span<const int> labels);
};

}  // namespace detail

// Elementwise; b must have a's shape or a suffix of it (broadcast over the
// leading axes of a).
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return detail::Ops<T>::add(a, b); }
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return detail::Ops<T>::sub(a, b); }
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return detail::Ops<T>::mul(a, b); }
template <typename T> Tensor<T> scale(const Tensor<T>& a, T c) { return detail::Ops<T>::scale(a, c); }

// a: [..., K], b: [K, N] -> [..., N]
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) { return detail::Ops<T>::matmul(a, b); }

// x: [N, H, W, Cin], w: [KH, KW, Cin, Cout] -> [N, Ho, Wo, Cout]
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride, std::size_t padding) {
  return detail::Ops<T>::conv2d(x, w, stride, padding);
}

// x: [N, H, W, C], w: [KH, KW, C] -> [N, Ho, Wo, C]
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride, std::size_t padding) {
  return detail::Ops<T>::depthwise_conv2d(x, w, stride, padding);
}

// Swaps the last two axes.
template <typename T> Tensor<T> transpose(const Tensor<T>& a) { return detail::Ops<T>::transpose(a); }
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape) { return detail::Ops<T>::reshape(a, std::move(shape)); }
// Half-open range [begin, end) along one axis.
template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t begin, std::size_t end) {
  return detail::Ops<T>::slice(a, axis, begin, end);
}
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  return detail::Ops<T>::concat(parts, axis);
}
// Mean over the second-to-last axis: [..., T, D] -> [..., D]
template <typename T> Tensor<T> mean_pool_global(const Tensor<T>& x) { return detail::Ops<T>::mean_pool_global(x); }
// Softmax over the last axis.
template <typename T> Tensor<T> softmax_rows(const Tensor<T>& x) { return detail::Ops<T>::softmax_rows(x); }
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x) { return detail::Ops<T>::sigmoid(x); }
template <typename T> Tensor<T> tanh(const Tensor<T>& x) { return detail::Ops<T>::tanh(x); }
// Exact GELU: x * Phi(x).
template <typename T> Tensor<T> gelu(const Tensor<T>& x) { return detail::Ops<T>::gelu(x); }

// Normalises every channel (last axis) over all remaining axes. In training
// mode batch statistics are used and the running estimates updated; in eval
// mode the running estimates are used and the op is affine.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, BatchNormStats<T>& stats,
                    bool training) {
  return detail::Ops<T>::batchnorm(x, gamma, beta, stats, training);
}

// x: [N, T, D] plus a learned table [T, D].
template <typename T> Tensor<T> embedding_add(const Tensor<T>& x, const Tensor<T>& table) {
  return detail::Ops<T>::add(x, table);
}

// Multi-head scaled dot-product attention on pre-projected q, k, v of shape
// [N, T, D]; D must be divisible by heads. Scores are scaled by
// 1/sqrt(D/heads). Attention weights are recomputed in the backward pass.
template <typename T>
Tensor<T> scaled_dot_product_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                       std::size_t heads) {
  return detail::Ops<T>::attention(q, k, v, heads);
}

template <typename T> Tensor<T> sum(const Tensor<T>& x) { return detail::Ops<T>::sum(x); }
template <typename T> Tensor<T> mean(const Tensor<T>& x) { return detail::Ops<T>::mean(x); }

// Mean negative log-likelihood of softmax(logits) at the given labels.
template <typename T> Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  return detail::Ops<T>::cross_entropy(logits, labels);
}

// Central-difference gradient check of a scalar-valued f at x.
// Returns max_i |analytic - numeric| / max(1e-12, |analytic| + |numeric|).
template <typename T>
double grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Tensor<T>& x, double eps = 1e-5);

// Same check against every tensor in params for a closure that reads them.
// Returns one error per parameter, in order.
template <typename T>
std::vector<double> grad_check_params(const std::function<Tensor<T>()>& f, std::vector<Tensor<T>> params,
                                      double eps = 1e-5);

}  // namespace ppgauth::ag

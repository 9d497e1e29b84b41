#include "ppgauth/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <unordered_set>

#include "ppgauth/error.hpp"

namespace ppgauth::ag {

namespace {

thread_local bool g_grad_enabled = true;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const RowMat<T>>;
// Column block of a row-major matrix with a wider row pitch.
template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, const char* op, std::vector<NodePtr<T>> inputs,
                      std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  const bool needs = NoGradGuard::grad_enabled() &&
                     std::any_of(inputs.begin(), inputs.end(), [](const NodePtr<T>& p) { return p->requires_grad; });
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

void require(bool cond, const std::string& what) {
  if (!cond) throw ShapeError(what);
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool NoGradGuard::grad_enabled() { return g_grad_enabled; }

// ---------------------------------------------------------------- Tensor

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
  node_->value.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
  node_->op = "leaf";
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
  if (values.size() != shape_numel(shape)) {
    throw ShapeError("Tensor: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->op = "leaf";
  node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  if (!node_->is_leaf()) throw InvalidArgument("set_requires_grad: only leaf tensors can be toggled");
  node_->requires_grad = on;
  return *this;
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw InvalidArgument("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  return node_->value[0];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(node_->shape, node_->value, false);
}

template <typename T>
void Tensor<T>::backward() const {
  if (numel() != 1) throw InvalidArgument("backward: loss must be a scalar, got " + shape_str(shape()));
  if (!node_->requires_grad) throw Error("backward: loss is not connected to any tensor requiring gradients");
  Tape<T>::record(*this).run_backward();
}

// ---------------------------------------------------------------- Tape

template <typename T>
Tape<T> Tape<T>::record(const Tensor<T>& root) {
  Tape tape;
  std::unordered_set<const Node<T>*> visited;
  // Iterative post-order DFS; deep recurrent graphs would overflow recursion.
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      tape.order_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

template <typename T>
void Tape<T>::run_backward() {
  if (order_.empty()) return;
  for (Node<T>* n : order_) {
    if (!n->is_leaf()) n->grad.assign(n->value.size(), T(0));
  }
  Node<T>* root = order_.back();
  for (T& g : root->ensure_grad()) g += T(1);
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward) n->backward(*n);
  }
  for (Node<T>* n : order_) {
    if (!n->is_leaf()) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

// ---------------------------------------------------------------- primitives

namespace detail {

template <typename T>
Tensor<T> Ops<T>::add(const Tn& a, const Tn& b) {
  require(is_suffix(b.shape(), a.shape()),
          "add: shape " + shape_str(b.shape()) + " does not broadcast to " + shape_str(a.shape()));
  const std::size_t inner = b.numel();
  const std::size_t outer = a.numel() / inner;
  std::vector<T> out(a.values());
  const auto& bv = b.values();
  for (std::size_t o = 0; o < outer; ++o) {
    T* dst = out.data() + o * inner;
    for (std::size_t i = 0; i < inner; ++i) dst[i] += bv[i];
  }
  return make_result<T>(a.shape(), std::move(out), "add", {a.node_ptr(), b.node_ptr()},
                        [outer, inner](Node<T>& self) {
                          auto& pa = self.parents[0];
                          auto& pb = self.parents[1];
                          if (pa->requires_grad) {
                            auto& g = pa->ensure_grad();
                            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                          }
                          if (pb->requires_grad) {
                            auto& g = pb->ensure_grad();
                            for (std::size_t o = 0; o < outer; ++o) {
                              const T* src = self.grad.data() + o * inner;
                              for (std::size_t i = 0; i < inner; ++i) g[i] += src[i];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> Ops<T>::sub(const Tn& a, const Tn& b) {
  return add(a, scale(b, T(-1)));
}

template <typename T>
Tensor<T> Ops<T>::mul(const Tn& a, const Tn& b) {
  require(is_suffix(b.shape(), a.shape()),
          "mul: shape " + shape_str(b.shape()) + " does not broadcast to " + shape_str(a.shape()));
  const std::size_t inner = b.numel();
  const std::size_t outer = a.numel() / inner;
  std::vector<T> out(a.numel());
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] = av[o * inner + i] * bv[i];
  }
  return make_result<T>(a.shape(), std::move(out), "mul", {a.node_ptr(), b.node_ptr()},
                        [outer, inner](Node<T>& self) {
                          auto& pa = self.parents[0];
                          auto& pb = self.parents[1];
                          if (pa->requires_grad) {
                            auto& g = pa->ensure_grad();
                            for (std::size_t o = 0; o < outer; ++o) {
                              for (std::size_t i = 0; i < inner; ++i) {
                                g[o * inner + i] += self.grad[o * inner + i] * pb->value[i];
                              }
                            }
                          }
                          if (pb->requires_grad) {
                            auto& g = pb->ensure_grad();
                            for (std::size_t o = 0; o < outer; ++o) {
                              for (std::size_t i = 0; i < inner; ++i) {
                                g[i] += self.grad[o * inner + i] * pa->value[o * inner + i];
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> Ops<T>::scale(const Tn& a, T c) {
  std::vector<T> out(a.values());
  for (T& v : out) v *= c;
  return make_result<T>(a.shape(), std::move(out), "scale", {a.node_ptr()}, [c](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * self.grad[i];
  });
}

template <typename T>
Tensor<T> Ops<T>::matmul(const Tn& a, const Tn& b) {
  require(a.rank() >= 1 && b.rank() == 2, "matmul: need a of rank >= 1 and b of rank 2");
  const std::size_t k = a.shape().back();
  require(b.size(0) == k, "matmul: inner dimensions differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.numel() / k;
  const std::size_t n = b.size(1);
  Shape out_shape = a.shape();
  out_shape.back() = n;

  std::vector<T> out(m * n);
  MatMap<T>(out.data(), m, n).noalias() = CMatMap<T>(a.values().data(), m, k) * CMatMap<T>(b.values().data(), k, n);
  return make_result<T>(std::move(out_shape), std::move(out), "matmul", {a.node_ptr(), b.node_ptr()},
                        [m, k, n](Node<T>& self) {
                          auto& pa = self.parents[0];
                          auto& pb = self.parents[1];
                          CMatMap<T> dc(self.grad.data(), m, n);
                          if (pa->requires_grad) {
                            MatMap<T>(pa->ensure_grad().data(), m, k).noalias() +=
                                dc * CMatMap<T>(pb->value.data(), k, n).transpose();
                          }
                          if (pb->requires_grad) {
                            MatMap<T>(pb->ensure_grad().data(), k, n).noalias() +=
                                CMatMap<T>(pa->value.data(), m, k).transpose() * dc;
                          }
                        });
}

namespace {

struct ConvGeom {
  std::size_t n, h, w, c, kh, kw, co, stride, pad, ho, wo;
};

ConvGeom conv_geometry(const Shape& xs, std::size_t kh, std::size_t kw, std::size_t co, std::size_t stride,
                       std::size_t pad, const char* op) {
  require(xs.size() == 4, std::string(op) + ": input must be [N, H, W, C], got " + shape_str(xs));
  if (stride == 0) throw InvalidArgument(std::string(op) + ": stride must be positive");
  ConvGeom g{xs[0], xs[1], xs[2], xs[3], kh, kw, co, stride, pad, 0, 0};
  if (g.h + 2 * pad < kh || g.w + 2 * pad < kw) {
    throw InvalidArgument(std::string(op) + ": kernel larger than padded input");
  }
  if (pad >= kh || pad >= kw) throw InvalidArgument(std::string(op) + ": padding must be smaller than the kernel");
  g.ho = (g.h + 2 * pad - kh) / stride + 1;
  g.wo = (g.w + 2 * pad - kw) / stride + 1;
  return g;
}

// cols: [ho*wo, kh*kw*c] for sample n.
template <typename T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
  const std::size_t row_len = g.kh * g.kw * g.c;
  for (std::size_t oy = 0; oy < g.ho; ++oy) {
    for (std::size_t ox = 0; ox < g.wo; ++ox) {
      T* dst = cols + (oy * g.wo + ox) * row_len;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const std::ptrdiff_t ix =
              static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
          T* d = dst + (ky * g.kw + kx) * g.c;
          if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.h) || ix >= static_cast<std::ptrdiff_t>(g.w)) {
            std::fill(d, d + g.c, T(0));
          } else {
            const T* s = x + (static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)) * g.c;
            std::copy(s, s + g.c, d);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeom& g, T* dx) {
  const std::size_t row_len = g.kh * g.kw * g.c;
  for (std::size_t oy = 0; oy < g.ho; ++oy) {
    for (std::size_t ox = 0; ox < g.wo; ++ox) {
      const T* src = cols + (oy * g.wo + ox) * row_len;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const std::ptrdiff_t ix =
              static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
          const T* s = src + (ky * g.kw + kx) * g.c;
          T* d = dx + (static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)) * g.c;
          for (std::size_t c = 0; c < g.c; ++c) d[c] += s[c];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> Ops<T>::conv2d(const Tn& x, const Tn& w, std::size_t stride, std::size_t padding) {
  require(w.rank() == 4, "conv2d: weight must be [KH, KW, Cin, Cout], got " + shape_str(w.shape()));
  const ConvGeom g = conv_geometry(x.shape(), w.size(0), w.size(1), w.size(3), stride, padding, "conv2d");
  require(w.size(2) == g.c, "conv2d: weight expects " + std::to_string(w.size(2)) + " input channels, input has " +
                                std::to_string(g.c));

  const std::size_t rows = g.ho * g.wo;
  const std::size_t k = g.kh * g.kw * g.c;
  const std::size_t in_stride = g.h * g.w * g.c;
  const std::size_t out_stride = rows * g.co;
  std::vector<T> out(g.n * out_stride);
  std::vector<T> cols(rows * k);
  CMatMap<T> wm(w.values().data(), k, g.co);
  for (std::size_t s = 0; s < g.n; ++s) {
    im2col(x.values().data() + s * in_stride, g, cols.data());
    MatMap<T>(out.data() + s * out_stride, rows, g.co).noalias() = CMatMap<T>(cols.data(), rows, k) * wm;
  }

  return make_result<T>(Shape{g.n, g.ho, g.wo, g.co}, std::move(out), "conv2d", {x.node_ptr(), w.node_ptr()},
                        [g, rows, k, in_stride, out_stride](Node<T>& self) {
                          auto& px = self.parents[0];
                          auto& pw = self.parents[1];
                          std::vector<T> cols(rows * k);
                          CMatMap<T> wm(pw->value.data(), k, g.co);
                          for (std::size_t s = 0; s < g.n; ++s) {
                            CMatMap<T> dy(self.grad.data() + s * out_stride, rows, g.co);
                            if (pw->requires_grad) {
                              im2col(px->value.data() + s * in_stride, g, cols.data());
                              MatMap<T>(pw->ensure_grad().data(), k, g.co).noalias() +=
                                  CMatMap<T>(cols.data(), rows, k).transpose() * dy;
                            }
                            if (px->requires_grad) {
                              MatMap<T>(cols.data(), rows, k).noalias() = dy * wm.transpose();
                              col2im_add(cols.data(), g, px->ensure_grad().data() + s * in_stride);
                            }
                          }
                        });
}

template <typename T>
Tensor<T> Ops<T>::depthwise_conv2d(const Tn& x, const Tn& w, std::size_t stride, std::size_t padding) {
  require(w.rank() == 3, "depthwise_conv2d: weight must be [KH, KW, C], got " + shape_str(w.shape()));
  const ConvGeom g = conv_geometry(x.shape(), w.size(0), w.size(1), x.rank() == 4 ? x.size(3) : 0, stride, padding,
                                   "depthwise_conv2d");
  require(w.size(2) == g.c, "depthwise_conv2d: channel count mismatch");

  std::vector<T> out(g.n * g.ho * g.wo * g.c, T(0));
  const T* xv = x.values().data();
  const T* wv = w.values().data();
  // Visits every (output pixel, kernel tap) pair that lands inside the input.
  auto for_each_tap = [g](auto&& fn) {
    for (std::size_t s = 0; s < g.n; ++s) {
      for (std::size_t oy = 0; oy < g.ho; ++oy) {
        for (std::size_t ox = 0; ox < g.wo; ++ox) {
          const std::size_t o = ((s * g.ho + oy) * g.wo + ox) * g.c;
          for (std::size_t ky = 0; ky < g.kh; ++ky) {
            const std::ptrdiff_t iy =
                static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
              const std::ptrdiff_t ix =
                  static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
              const std::size_t i =
                  ((s * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)) * g.c;
              fn(o, i, (ky * g.kw + kx) * g.c);
            }
          }
        }
      }
    }
  };
  for_each_tap([&](std::size_t o, std::size_t i, std::size_t t) {
    for (std::size_t c = 0; c < g.c; ++c) out[o + c] += xv[i + c] * wv[t + c];
  });

  return make_result<T>(Shape{g.n, g.ho, g.wo, g.c}, std::move(out), "depthwise_conv2d",
                        {x.node_ptr(), w.node_ptr()}, [g, for_each_tap](Node<T>& self) {
                          auto& px = self.parents[0];
                          auto& pw = self.parents[1];
                          const T* dy = self.grad.data();
                          if (px->requires_grad) {
                            T* dx = px->ensure_grad().data();
                            const T* wv = pw->value.data();
                            for_each_tap([&](std::size_t o, std::size_t i, std::size_t t) {
                              for (std::size_t c = 0; c < g.c; ++c) dx[i + c] += dy[o + c] * wv[t + c];
                            });
                          }
                          if (pw->requires_grad) {
                            T* dw = pw->ensure_grad().data();
                            const T* xv = px->value.data();
                            for_each_tap([&](std::size_t o, std::size_t i, std::size_t t) {
                              for (std::size_t c = 0; c < g.c; ++c) dw[t + c] += dy[o + c] * xv[i + c];
                            });
                          }
                        });
}

template <typename T>
Tensor<T> Ops<T>::transpose(const Tn& a) {
  require(a.rank() >= 2, "transpose: need rank >= 2");
  const std::size_t r = a.shape()[a.rank() - 2];
  const std::size_t c = a.shape()[a.rank() - 1];
  const std::size_t batch = a.numel() / (r * c);
  Shape out_shape = a.shape();
  std::swap(out_shape[a.rank() - 2], out_shape[a.rank() - 1]);
  std::vector<T> out(a.numel());
  for (std::size_t b = 0; b < batch; ++b) {
    MatMap<T>(out.data() + b * r * c, c, r) = CMatMap<T>(a.values().data() + b * r * c, r, c).transpose();
  }
  return make_result<T>(std::move(out_shape), std::move(out), "transpose", {a.node_ptr()},
                        [batch, r, c](Node<T>& self) {
                          auto& g = self.parents[0]->ensure_grad();
                          for (std::size_t b = 0; b < batch; ++b) {
                            MatMap<T>(g.data() + b * r * c, r, c) +=
                                CMatMap<T>(self.grad.data() + b * r * c, c, r).transpose();
                          }
                        });
}

template <typename T>
Tensor<T> Ops<T>::reshape(const Tn& a, Shape shape) {
  require(shape_numel(shape) == a.numel(),
          "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  return make_result<T>(std::move(shape), a.values(), "reshape", {a.node_ptr()}, [](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> Ops<T>::slice(const Tn& a, std::size_t axis, std::size_t begin, std::size_t end) {
  require(axis < a.rank(), "slice: axis out of range");
  const std::size_t len = a.size(axis);
  require(begin < end && end <= len, "slice: bad range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                         ") for axis of length " + std::to_string(len));
  const Shape& s = a.shape();
  const std::size_t outer = shape_numel(Shape(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(axis)));
  const std::size_t inner = shape_numel(Shape(s.begin() + static_cast<std::ptrdiff_t>(axis) + 1, s.end()));
  const std::size_t width = end - begin;
  Shape out_shape = s;
  out_shape[axis] = width;
  std::vector<T> out(outer * width * inner);
  for (std::size_t o = 0; o < outer; ++o) {
    const T* src = a.values().data() + (o * len + begin) * inner;
    std::copy(src, src + width * inner, out.data() + o * width * inner);
  }
  return make_result<T>(std::move(out_shape), std::move(out), "slice", {a.node_ptr()},
                        [outer, len, begin, width, inner](Node<T>& self) {
                          auto& g = self.parents[0]->ensure_grad();
                          for (std::size_t o = 0; o < outer; ++o) {
                            T* dst = g.data() + (o * len + begin) * inner;
                            const T* src = self.grad.data() + o * width * inner;
                            for (std::size_t i = 0; i < width * inner; ++i) dst[i] += src[i];
                          }
                        });
}

template <typename T>
Tensor<T> Ops<T>::concat(const std::vector<Tn>& parts, std::size_t axis) {
  require(!parts.empty(), "concat: no inputs");
  const Shape& s0 = parts[0].shape();
  require(axis < s0.size(), "concat: axis out of range");
  std::vector<std::size_t> widths;
  std::vector<NodePtr<T>> inputs;
  Shape out_shape = s0;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    require(p.rank() == s0.size(), "concat: rank mismatch");
    for (std::size_t d = 0; d < s0.size(); ++d) {
      require(d == axis || p.size(d) == s0[d],
              "concat: incompatible shapes " + shape_str(s0) + " and " + shape_str(p.shape()));
    }
    widths.push_back(p.size(axis));
    out_shape[axis] += p.size(axis);
    inputs.push_back(p.node_ptr());
  }
  const std::size_t outer = shape_numel(Shape(s0.begin(), s0.begin() + static_cast<std::ptrdiff_t>(axis)));
  const std::size_t inner = shape_numel(Shape(s0.begin() + static_cast<std::ptrdiff_t>(axis) + 1, s0.end()));
  const std::size_t total = out_shape[axis];
  std::vector<T> out(outer * total * inner);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const std::size_t w = widths[p];
    for (std::size_t o = 0; o < outer; ++o) {
      const T* src = parts[p].values().data() + o * w * inner;
      std::copy(src, src + w * inner, out.data() + (o * total + offset) * inner);
    }
    offset += w;
  }
  return make_result<T>(std::move(out_shape), std::move(out), "concat", std::move(inputs),
                        [widths, outer, inner, total](Node<T>& self) {
                          std::size_t off = 0;
                          for (std::size_t p = 0; p < widths.size(); ++p) {
                            const std::size_t w = widths[p];
                            auto& parent = self.parents[p];
                            if (parent->requires_grad) {
                              auto& g = parent->ensure_grad();
                              for (std::size_t o = 0; o < outer; ++o) {
                                const T* src = self.grad.data() + (o * total + off) * inner;
                                T* dst = g.data() + o * w * inner;
                                for (std::size_t i = 0; i < w * inner; ++i) dst[i] += src[i];
                              }
                            }
                            off += w;
                          }
                        });
}

template <typename T>
Tensor<T> Ops<T>::mean_pool_global(const Tn& x) {
  require(x.rank() >= 2, "mean_pool_global: need [..., T, D]");
  const std::size_t d = x.shape().back();
  const std::size_t t = x.shape()[x.rank() - 2];
  const std::size_t outer = x.numel() / (t * d);
  Shape out_shape(x.shape().begin(), x.shape().end() - 2);
  out_shape.push_back(d);
  std::vector<T> out(outer * d, T(0));
  const T inv = T(1) / static_cast<T>(t);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < t; ++i) {
      const T* src = x.values().data() + (o * t + i) * d;
      for (std::size_t j = 0; j < d; ++j) out[o * d + j] += src[j];
    }
    for (std::size_t j = 0; j < d; ++j) out[o * d + j] *= inv;
  }
  return make_result<T>(std::move(out_shape), std::move(out), "mean_pool_global", {x.node_ptr()},
                        [outer, t, d, inv](Node<T>& self) {
                          auto& g = self.parents[0]->ensure_grad();
                          for (std::size_t o = 0; o < outer; ++o) {
                            for (std::size_t i = 0; i < t; ++i) {
                              T* dst = g.data() + (o * t + i) * d;
                              for (std::size_t j = 0; j < d; ++j) dst[j] += self.grad[o * d + j] * inv;
                            }
                          }
                        });
}

namespace {
template <typename T>
void softmax_inplace(T* row, std::size_t n) {
  const T mx = *std::max_element(row, row + n);
  T total = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    row[i] = std::exp(row[i] - mx);
    total += row[i];
  }
  const T inv = T(1) / total;
  for (std::size_t i = 0; i < n; ++i) row[i] *= inv;
}
constexpr std::size_t kAttnBlock = 32;

// Row-wise softmax of a dense matrix, vectorised through Eigen.
template <typename T>
void softmax_matrix(RowMat<T>& m) {
  const auto row_max = m.rowwise().maxCoeff().eval();
  m = (m.colwise() - row_max).array().exp().matrix();
  const auto inv_sum = m.rowwise().sum().cwiseInverse().eval();
  m = inv_sum.asDiagonal() * m;
}
}  // namespace

template <typename T>
Tensor<T> Ops<T>::softmax_rows(const Tn& x) {
  require(x.rank() >= 1, "softmax_rows: need rank >= 1");
  const std::size_t c = x.shape().back();
  const std::size_t rows = x.numel() / c;
  std::vector<T> out(x.values());
  for (std::size_t r = 0; r < rows; ++r) softmax_inplace(out.data() + r * c, c);
  return make_result<T>(x.shape(), std::move(out), "softmax_rows", {x.node_ptr()}, [rows, c](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.value.data() + r * c;
      const T* dy = self.grad.data() + r * c;
      T dot = T(0);
      for (std::size_t i = 0; i < c; ++i) dot += y[i] * dy[i];
      for (std::size_t i = 0; i < c; ++i) g[r * c + i] += y[i] * (dy[i] - dot);
    }
  });
}

template <typename T>
Tensor<T> Ops<T>::sigmoid(const Tn& x) {
  std::vector<T> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = xv[i];
    if (v >= T(0)) {
      out[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out[i] = e / (T(1) + e);
    }
  }
  return make_result<T>(x.shape(), std::move(out), "sigmoid", {x.node_ptr()}, [](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T y = self.value[i];
      g[i] += self.grad[i] * y * (T(1) - y);
    }
  });
}

template <typename T>
Tensor<T> Ops<T>::tanh(const Tn& x) {
  std::vector<T> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xv[i]);
  return make_result<T>(x.shape(), std::move(out), "tanh", {x.node_ptr()}, [](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T y = self.value[i];
      g[i] += self.grad[i] * (T(1) - y * y);
    }
  });
}

template <typename T>
Tensor<T> Ops<T>::gelu(const Tn& x) {
  const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  std::vector<T> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(0.5) * xv[i] * (T(1) + std::erf(xv[i] * inv_sqrt2));
  return make_result<T>(x.shape(), std::move(out), "gelu", {x.node_ptr()}, [inv_sqrt2](Node<T>& self) {
    const T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
    auto& p = self.parents[0];
    auto& g = p->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = p->value[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      g[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

template <typename T>
Tensor<T> Ops<T>::batchnorm(const Tn& x, const Tn& gamma, const Tn& beta, BatchNormStats<T>& stats, bool training) {
  const std::size_t c = x.shape().back();
  require(gamma.numel() == c && beta.numel() == c, "batchnorm: gamma/beta must have one entry per channel");
  require(stats.running_mean.size() == c && stats.running_var.size() == c, "batchnorm: running stats size mismatch");
  const std::size_t m = x.numel() / c;
  const auto& xv = x.values();

  std::vector<T> mean(c, T(0)), inv_std(c);
  if (training) {
    if (m < 2) throw InvalidArgument("batchnorm: training mode needs at least 2 values per channel");
    std::vector<T> var(c, T(0));
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t j = 0; j < c; ++j) mean[j] += xv[r * c + j];
    }
    for (T& v : mean) v /= static_cast<T>(m);
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t j = 0; j < c; ++j) {
        const T d = xv[r * c + j] - mean[j];
        var[j] += d * d;
      }
    }
    for (std::size_t j = 0; j < c; ++j) {
      const T biased = var[j] / static_cast<T>(m);
      inv_std[j] = T(1) / std::sqrt(biased + stats.eps);
      const T unbiased = var[j] / static_cast<T>(m - 1);
      stats.running_mean[j] = (T(1) - stats.momentum) * stats.running_mean[j] + stats.momentum * mean[j];
      stats.running_var[j] = (T(1) - stats.momentum) * stats.running_var[j] + stats.momentum * unbiased;
    }
  } else {
    mean = stats.running_mean;
    for (std::size_t j = 0; j < c; ++j) inv_std[j] = T(1) / std::sqrt(stats.running_var[j] + stats.eps);
  }

  std::vector<T> xhat(x.numel()), out(x.numel());
  const auto& gv = gamma.values();
  const auto& bv = beta.values();
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t j = 0; j < c; ++j) {
      const std::size_t i = r * c + j;
      xhat[i] = (xv[i] - mean[j]) * inv_std[j];
      out[i] = gv[j] * xhat[i] + bv[j];
    }
  }

  return make_result<T>(x.shape(), std::move(out), training ? "batchnorm_train" : "batchnorm_eval",
                        {x.node_ptr(), gamma.node_ptr(), beta.node_ptr()},
                        [m, c, training, xhat = std::move(xhat), inv_std](Node<T>& self) {
                          auto& px = self.parents[0];
                          auto& pg = self.parents[1];
                          auto& pb = self.parents[2];
                          const T* dy = self.grad.data();
                          std::vector<T> sum_dy(c, T(0)), sum_dy_xhat(c, T(0));
                          for (std::size_t r = 0; r < m; ++r) {
                            for (std::size_t j = 0; j < c; ++j) {
                              sum_dy[j] += dy[r * c + j];
                              sum_dy_xhat[j] += dy[r * c + j] * xhat[r * c + j];
                            }
                          }
                          if (pg->requires_grad) {
                            auto& g = pg->ensure_grad();
                            for (std::size_t j = 0; j < c; ++j) g[j] += sum_dy_xhat[j];
                          }
                          if (pb->requires_grad) {
                            auto& g = pb->ensure_grad();
                            for (std::size_t j = 0; j < c; ++j) g[j] += sum_dy[j];
                          }
                          if (px->requires_grad) {
                            auto& g = px->ensure_grad();
                            const auto& gam = pg->value;
                            const T inv_m = T(1) / static_cast<T>(m);
                            for (std::size_t r = 0; r < m; ++r) {
                              for (std::size_t j = 0; j < c; ++j) {
                                const std::size_t i = r * c + j;
                                if (training) {
                                  g[i] += gam[j] * inv_std[j] *
                                          (dy[i] - inv_m * sum_dy[j] - xhat[i] * inv_m * sum_dy_xhat[j]);
                                } else {
                                  g[i] += gam[j] * inv_std[j] * dy[i];
                                }
                              }
                            }
                          }
                        });
}

template <typename T>
Tensor<T> Ops<T>::attention(const Tn& q, const Tn& k, const Tn& v, std::size_t heads) {
  require(q.rank() == 3, "attention: inputs must be [N, T, D], got " + shape_str(q.shape()));
  require(k.shape() == q.shape() && v.shape() == q.shape(), "attention: q, k, v shapes differ");
  const std::size_t n = q.size(0), t = q.size(1), d = q.size(2);
  if (heads == 0 || d % heads != 0) {
    throw InvalidArgument("attention: " + std::to_string(heads) + " heads do not divide embedding dim " +
                          std::to_string(d));
  }
  const std::size_t dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(d));

  std::vector<T> out(q.numel());
  RowMat<T> qh(t, dh), kh(t, dh), vh(t, dh), oh(t, dh), probs;
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = s * t * d + h * dh;
      qh = CStridedMap<T>(q.values().data() + off, t, dh, stride);
      kh = CStridedMap<T>(k.values().data() + off, t, dh, stride);
      vh = CStridedMap<T>(v.values().data() + off, t, dh, stride);
      // Row blocks keep the score tile cache resident.
      for (std::size_t r0 = 0; r0 < t; r0 += kAttnBlock) {
        const std::size_t rb = std::min(kAttnBlock, t - r0);
        probs.noalias() = (qh.middleRows(r0, rb) * kh.transpose()) * scale;
        softmax_matrix(probs);
        oh.middleRows(r0, rb).noalias() = probs * vh;
      }
      StridedMap<T>(out.data() + off, t, dh, stride) = oh;
    }
  }

  return make_result<T>(q.shape(), std::move(out), "attention", {q.node_ptr(), k.node_ptr(), v.node_ptr()},
                        [n, t, d, heads, dh, scale](Node<T>& self) {
                          auto& pq = self.parents[0];
                          auto& pk = self.parents[1];
                          auto& pv = self.parents[2];
                          const Eigen::OuterStride<> stride(static_cast<Eigen::Index>(d));
                          RowMat<T> qh(t, dh), kh(t, dh), vh(t, dh), dout(t, dh);
                          RowMat<T> dq(t, dh), dk(t, dh), dv(t, dh);
                          RowMat<T> probs, dprobs;
                          for (std::size_t s = 0; s < n; ++s) {
                            for (std::size_t h = 0; h < heads; ++h) {
                              const std::size_t off = s * t * d + h * dh;
                              qh = CStridedMap<T>(pq->value.data() + off, t, dh, stride);
                              kh = CStridedMap<T>(pk->value.data() + off, t, dh, stride);
                              vh = CStridedMap<T>(pv->value.data() + off, t, dh, stride);
                              dout = CStridedMap<T>(self.grad.data() + off, t, dh, stride);
                              dq.setZero();
                              dk.setZero();
                              dv.setZero();
                              for (std::size_t r0 = 0; r0 < t; r0 += kAttnBlock) {
                                const std::size_t rb = std::min(kAttnBlock, t - r0);
                                probs.noalias() = (qh.middleRows(r0, rb) * kh.transpose()) * scale;
                                softmax_matrix(probs);
                                dv.noalias() += probs.transpose() * dout.middleRows(r0, rb);
                                dprobs.noalias() = dout.middleRows(r0, rb) * vh.transpose();
                                // Softmax backward, then fold in the score scale.
                                const auto dot = dprobs.cwiseProduct(probs).rowwise().sum().eval();
                                dprobs = (probs.array() * (dprobs.colwise() - dot).array() * scale).matrix();
                                dq.middleRows(r0, rb).noalias() = dprobs * kh;
                                dk.noalias() += dprobs.transpose() * qh.middleRows(r0, rb);
                              }
                              if (pq->requires_grad) StridedMap<T>(pq->ensure_grad().data() + off, t, dh, stride) += dq;
                              if (pk->requires_grad) StridedMap<T>(pk->ensure_grad().data() + off, t, dh, stride) += dk;
                              if (pv->requires_grad) StridedMap<T>(pv->ensure_grad().data() + off, t, dh, stride) += dv;
                            }
                          }
                        });
}

template <typename T>
Tensor<T> Ops<T>::sum(const Tn& x) {
  T total = T(0);
  for (T v : x.values()) total += v;
  return make_result<T>(Shape{}, std::vector<T>{total}, "sum", {x.node_ptr()}, [](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (T& v : g) v += self.grad[0];
  });
}

template <typename T>
Tensor<T> Ops<T>::mean(const Tn& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> Ops<T>::cross_entropy(const Tn& logits, std::span<const int> labels) {
  require(logits.rank() == 2, "cross_entropy: logits must be [N, C]");
  const std::size_t n = logits.size(0), c = logits.size(1);
  require(labels.size() == n, "cross_entropy: one label per row required");
  std::vector<int> lab(labels.begin(), labels.end());
  for (int l : lab) {
    if (l < 0 || static_cast<std::size_t>(l) >= c) throw InvalidArgument("cross_entropy: label out of range");
  }
  std::vector<T> probs(logits.values());
  T loss = T(0);
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = logits.values().data() + r * c;
    const T mx = *std::max_element(row, row + c);
    T total = T(0);
    for (std::size_t j = 0; j < c; ++j) total += std::exp(row[j] - mx);
    loss += (std::log(total) + mx) - row[lab[r]];
    softmax_inplace(probs.data() + r * c, c);
  }
  loss /= static_cast<T>(n);
  return make_result<T>(Shape{}, std::vector<T>{loss}, "cross_entropy", {logits.node_ptr()},
                        [n, c, lab = std::move(lab), probs = std::move(probs)](Node<T>& self) {
                          auto& g = self.parents[0]->ensure_grad();
                          const T up = self.grad[0] / static_cast<T>(n);
                          for (std::size_t r = 0; r < n; ++r) {
                            for (std::size_t j = 0; j < c; ++j) {
                              const T onehot = static_cast<std::size_t>(lab[r]) == j ? T(1) : T(0);
                              g[r * c + j] += up * (probs[r * c + j] - onehot);
                            }
                          }
                        });
}

template struct Ops<float>;
template struct Ops<double>;

}  // namespace detail

// ---------------------------------------------------------------- grad check

namespace {
double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-12, std::abs(analytic) + std::abs(numeric));
}
}  // namespace

template <typename T>
double grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Tensor<T>& x, double eps) {
  Tensor<T> leaf = x.detach();
  leaf.set_requires_grad(true);
  Tensor<T> y = f(leaf);
  if (y.numel() != 1) throw InvalidArgument("grad_check: f must be scalar-valued");
  std::vector<T> analytic(leaf.numel(), T(0));
  if (y.requires_grad()) {
    y.backward();
    if (leaf.has_grad()) analytic.assign(leaf.grad().begin(), leaf.grad().end());
  }

  NoGradGuard no_grad;
  double worst = 0.0;
  auto& v = leaf.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const T saved = v[i];
    v[i] = static_cast<T>(saved + eps);
    const double fp = static_cast<double>(f(leaf).item());
    v[i] = static_cast<T>(saved - eps);
    const double fm = static_cast<double>(f(leaf).item());
    v[i] = saved;
    worst = std::max(worst, rel_error(static_cast<double>(analytic[i]), (fp - fm) / (2.0 * eps)));
  }
  return worst;
}

template <typename T>
std::vector<double> grad_check_params(const std::function<Tensor<T>()>& f, std::vector<Tensor<T>> params,
                                      double eps) {
  for (auto& p : params) {
    if (p.has_grad()) p.zero_grad();
  }
  Tensor<T> y = f();
  if (y.numel() != 1) throw InvalidArgument("grad_check_params: f must be scalar-valued");
  std::vector<std::vector<T>> analytic;
  if (y.requires_grad()) y.backward();
  for (auto& p : params) {
    analytic.emplace_back(p.has_grad() ? std::vector<T>(p.grad().begin(), p.grad().end())
                                       : std::vector<T>(p.numel(), T(0)));
  }

  NoGradGuard no_grad;
  std::vector<double> errors;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& v = params[pi].values();
    double worst = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const T saved = v[i];
      v[i] = static_cast<T>(saved + eps);
      const double fp = static_cast<double>(f().item());
      v[i] = static_cast<T>(saved - eps);
      const double fm = static_cast<double>(f().item());
      v[i] = saved;
      worst = std::max(worst, rel_error(static_cast<double>(analytic[pi][i]), (fp - fm) / (2.0 * eps)));
    }
    errors.push_back(worst);
  }
  return errors;
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template double grad_check<float>(const std::function<Tensor<float>(const Tensor<float>&)>&, const Tensor<float>&,
                                  double);
template double grad_check<double>(const std::function<Tensor<double>(const Tensor<double>&)>&,
                                   const Tensor<double>&, double);
template std::vector<double> grad_check_params<float>(const std::function<Tensor<float>()>&,
                                                      std::vector<Tensor<float>>, double);
template std::vector<double> grad_check_params<double>(const std::function<Tensor<double>()>&,
                                                       std::vector<Tensor<double>>, double);

}  // namespace ppgauth::ag

// Copyright 2026 The ConVQG Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================

// Minimal tape-based reverse-mode automatic differentiation.
//
// A Graph owns every intermediate value of one forward pass. Nodes are
// appended in evaluation order, so the append order is a topological order and
// backward() simply walks it in reverse. Parameters live outside the graph and
// receive accumulated gradients when backward() reaches their leaf node.
//
// Only the handful of operations needed by the question generator are
// provided. There is no general broadcasting: bias-add and row-wise affine
// (layer_norm) are the only shape-changing element-wise forms.

#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <deque>
#include <concepts>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "convqg/errors.hpp"

namespace convqg::grad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

// Dense row-major tensor. Invariant: product(shape) == data.size().
template <std::floating_point T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : shape_{1}, data_(1, T(0)) {}

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(numel(shape_), T(0));
  }

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (numel(shape_) != data_.size()) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + grad::to_string(shape_));
    }
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const { return rank() == 1 ? 1 : shape_[0]; }
  std::size_t cols() const { return shape_.back(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  T item() const {
    if (data_.size() != 1) {
      throw DimensionError("item() on tensor of shape " + grad::to_string(shape_));
    }
    return data_[0];
  }

  template <std::floating_point U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(),
                       [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  void validate_shape() const {
    if (shape_.empty()) throw DimensionError("tensor shape must have rank >= 1");
    for (std::size_t d : shape_) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive");
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

// A trainable tensor plus its gradient accumulator.
template <std::floating_point T>
struct Parameter {
  Tensor<T> value;
  std::vector<T> grad;

  Parameter() = default;
  explicit Parameter(Tensor<T> v) : value(std::move(v)), grad(value.size(), T(0)) {}

  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

template <std::floating_point T>
class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
template <std::floating_point T>
class Var {
 public:
  Var() = default;

  const Tensor<T>& value() const;
  std::span<const T> grad() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  Graph<T>& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph<T>;
  Var(Graph<T>* g, std::size_t id) : graph_(g), id_(id) {}

  Graph<T>* graph_ = nullptr;
  std::size_t id_ = 0;
};

template <std::floating_point T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  // A non-recording graph never stores backward closures; used for inference.
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Var<T> constant(Tensor<T> value) {
    return push("constant", std::move(value), nullptr, {}, false, nullptr);
  }

  Var<T> leaf(Tensor<T> value) {
    return push("leaf", std::move(value), nullptr, {}, record_, nullptr);
  }

  // The parameter value is referenced, not copied; the parameter must outlive
  // the graph and stay unchanged until backward() has run.
  Var<T> param(Parameter<T>& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) {
      return Var<T>(this, it->second);
    }
    Var<T> v = push("param", Tensor<T>(), &p.value, {}, record_, nullptr);
    nodes_[v.id()].param = &p;
    param_nodes_.emplace(&p, v.id());
    return v;
  }

  // Appends an op result. `fn` is kept only if some input needs a gradient.
  Var<T> emplace(std::string_view op, Tensor<T> value,
                 std::vector<std::size_t> inputs, BackwardFn fn) {
    bool needs = false;
    if (record_) {
      for (std::size_t id : inputs) needs = needs || nodes_[id].requires_grad;
    }
#ifndef NDEBUG
    if (!value.all_finite()) {
      bool inputs_finite = true;
      for (std::size_t id : inputs) inputs_finite = inputs_finite && this->value(id).all_finite();
      if (inputs_finite) {
        throw std::domain_error("non-finite output from op " + std::string(op));
      }
    }
#endif
    if (!needs) {
      inputs.clear();
      fn = nullptr;
    }
    return push(op, std::move(value), nullptr, std::move(inputs), needs, std::move(fn));
  }

  const Tensor<T>& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.ref ? *n.ref : n.value;
  }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::vector<T>& grad(std::size_t id) { return nodes_[id].grad; }
  const std::vector<T>& grad(std::size_t id) const { return nodes_[id].grad; }
  std::string_view op(std::size_t id) const { return nodes_[id].op; }

  // Runs reverse accumulation from a scalar loss. Parameter gradients are
  // added to Parameter::grad; leaf gradients stay readable via Var::grad().
  void backward(Var<T> loss) {
    if (loss.graph_ != this) throw GraphError("loss does not belong to this graph");
    if (consumed_) throw GraphError("backward called twice on the same graph");
    if (value(loss.id()).size() != 1) {
      throw GraphError("backward requires a scalar loss, got shape " +
                       to_string(value(loss.id()).shape()));
    }
    consumed_ = true;
    if (!nodes_[loss.id()].requires_grad) return;
    nodes_[loss.id()].grad[0] += T(1);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param != nullptr) {
        for (std::size_t k = 0; k < n.grad.size(); ++k) n.param->grad[k] += n.grad[k];
      }
    }
  }

 private:
  struct Node {
    std::string_view op;
    Tensor<T> value;
    const Tensor<T>* ref = nullptr;
    std::vector<std::size_t> inputs;
    bool requires_grad = false;
    std::vector<T> grad;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
  };

  Var<T> push(std::string_view op, Tensor<T> value, const Tensor<T>* ref,
              std::vector<std::size_t> inputs, bool requires_grad, BackwardFn fn) {
    Node n;
    n.op = op;
    n.value = std::move(value);
    n.ref = ref;
    n.inputs = std::move(inputs);
    n.requires_grad = requires_grad;
    if (requires_grad) n.grad.assign((ref ? *ref : n.value).size(), T(0));
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var<T>(this, nodes_.size() - 1);
  }

  bool record_;
  bool consumed_ = false;
  std::deque<Node> nodes_;  // stable references across appends
  std::unordered_map<const Parameter<T>*, std::size_t> param_nodes_;
};

template <std::floating_point T>
const Tensor<T>& Var<T>::value() const {
  return graph_->value(id_);
}

template <std::floating_point T>
std::span<const T> Var<T>::grad() const {
  return graph_->grad(id_);
}

template <std::floating_point T>
bool Var<T>::requires_grad() const {
  return graph_->requires_grad(id_);
}

template <std::floating_point T>
void backward(Var<T> loss) {
  loss.graph().backward(loss);
}

namespace detail {

// C[m x n] += A[m x k] * B[k x n]
template <class T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T
template <class T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* bj = b + j * k;
      T acc = T(0);
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      c[i * n + j] += acc;
    }
  }
}

// C[k x n] += A[m x k]^T * B[m x n]
template <class T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      T* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

template <class T>
void require_same_graph(const Var<T>& a, const Var<T>& b) {
  if (&a.graph() != &b.graph()) throw GraphError("operands belong to different graphs");
}

template <class T>
void require_matrix(const Var<T>& a, std::string_view op) {
  if (a.shape().size() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got " + to_string(a.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

// a[m x k] * b[k x n]
template <std::floating_point T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::require_same_graph(a, b);
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul inner dimensions differ: " + to_string(a.shape()) +
                         " x " + to_string(b.shape()));
  }
  Tensor<T> out({m, n});
  detail::gemm_nn(m, k, n, a.value().data().data(), b.value().data().data(),
                  out.data().data());
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().emplace("matmul", std::move(out), {ia, ib},
                           [=](Graph<T>& g, std::size_t self) {
                             const T* dc = g.grad(self).data();
                             if (g.requires_grad(ia)) {
                               detail::gemm_nt(m, n, k, dc, g.value(ib).data().data(),
                                               g.grad(ia).data());
                             }
                             if (g.requires_grad(ib)) {
                               detail::gemm_tn(m, k, n, g.value(ia).data().data(), dc,
                                               g.grad(ib).data());
                             }
                           });
}

// a[m x k] * b[n x k]^T, used for attention scores.
template <std::floating_point T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  detail::require_same_graph(a, b);
  detail::require_matrix(a, "matmul_nt");
  detail::require_matrix(b, "matmul_nt");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  if (b.shape()[1] != k) {
    throw DimensionError("matmul_nt inner dimensions differ: " + to_string(a.shape()) +
                         " x " + to_string(b.shape()) + "^T");
  }
  Tensor<T> out({m, n});
  detail::gemm_nt(m, k, n, a.value().data().data(), b.value().data().data(),
                  out.data().data());
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().emplace("matmul_nt", std::move(out), {ia, ib},
                           [=](Graph<T>& g, std::size_t self) {
                             const T* dc = g.grad(self).data();
                             // dA = dC * B, dB = dC^T * A
                             if (g.requires_grad(ia)) {
                               detail::gemm_nn(m, n, k, dc, g.value(ib).data().data(),
                                               g.grad(ia).data());
                             }
                             if (g.requires_grad(ib)) {
                               detail::gemm_tn(m, n, k, dc, g.value(ia).data().data(),
                                               g.grad(ib).data());
                             }
                           });
}

template <std::floating_point T>
Var<T> transpose(Var<T> a) {
  detail::require_matrix(a, "transpose");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  Tensor<T> out({n, m});
  const auto& x = a.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = x.at(i, j);
  const std::size_t ia = a.id();
  return a.graph().emplace("transpose", std::move(out), {ia},
                           [=](Graph<T>& g, std::size_t self) {
                             const auto& dy = g.grad(self);
                             auto& dx = g.grad(ia);
                             for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t j = 0; j < n; ++j)
                                 dx[i * n + j] += dy[j * m + i];
                           });
}

// ---------------------------------------------------------------------------
// Element-wise arithmetic
// ---------------------------------------------------------------------------

template <std::floating_point T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::require_same_graph(a, b);
  if (a.shape() != b.shape()) {
    throw DimensionError("add shapes differ: " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
  Tensor<T> out = a.value();
  const auto& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().emplace("add", std::move(out), {ia, ib},
                           [=](Graph<T>& g, std::size_t self) {
                             const auto& dy = g.grad(self);
                             for (std::size_t in : {ia, ib}) {
                               if (!g.requires_grad(in)) continue;
                               auto& dx = g.grad(in);
                               for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
                             }
                           });
}

template <std::floating_point T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::require_same_graph(a, b);
  if (a.shape() != b.shape()) {
    throw DimensionError("sub shapes differ: " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
  Tensor<T> out = a.value();
  const auto& y = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().emplace("sub", std::move(out), {ia, ib},
                           [=](Graph<T>& g, std::size_t self) {
                             const auto& dy = g.grad(self);
                             if (g.requires_grad(ia)) {
                               auto& dx = g.grad(ia);
                               for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
                             }
                             if (g.requires_grad(ib)) {
                               auto& dx = g.grad(ib);
                               for (std::size_t i = 0; i < dx.size(); ++i) dx[i] -= dy[i];
                             }
                           });
}

// x[m x n] + bias[n], bias broadcast over rows.
template <std::floating_point T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  detail::require_same_graph(x, bias);
  const std::size_t n = x.shape().back();
  const std::size_t m = x.value().size() / n;
  if (bias.value().size() != n) {
    throw DimensionError("add_bias: bias " + to_string(bias.shape()) +
                         " does not match rows of " + to_string(x.shape()));
  }
  Tensor<T> out = x.value();
  const auto& b = bias.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += b[j];
  const std::size_t ix = x.id(), ib = bias.id();
  return x.graph().emplace("add_bias", std::move(out), {ix, ib},
                           [=](Graph<T>& g, std::size_t self) {
                             const auto& dy = g.grad(self);
                             if (g.requires_grad(ix)) {
                               auto& dx = g.grad(ix);
                               for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
                             }
                             if (g.requires_grad(ib)) {
                               auto& db = g.grad(ib);
                               for (std::size_t i = 0; i < m; ++i)
                                 for (std::size_t j = 0; j < n; ++j) db[j] += dy[i * n + j];
                             }
                           });
}

template <std::floating_point T>
Var<T> scale(Var<T> x, T factor) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v *= factor;
  const std::size_t ix = x.id();
  return x.graph().emplace("scale", std::move(out), {ix},
                           [=](Graph<T>& g, std::size_t self) {
                             const auto& dy = g.grad(self);
                             auto& dx = g.grad(ix);
                             for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += factor * dy[i];
                           });
}

template <std::floating_point T>
Var<T> sum(Var<T> x) {
  T acc = T(0);
  for (T v : x.value().data()) acc += v;
  const std::size_t ix = x.id();
  return x.graph().emplace("sum", Tensor<T>::scalar(acc), {ix},
                           [=](Graph<T>& g, std::size_t self) {
                             const T d = g.grad(self)[0];
                             for (auto& v : g.grad(ix)) v += d;
                           });
}

template <std::floating_point T>
Var<T> reshape(Var<T> x, Shape shape) {
  if (numel(shape) != x.value().size()) {
    throw DimensionError("reshape " + to_string(x.shape()) + " to " + to_string(shape));
  }
  Tensor<T> out(std::move(shape), x.value().storage());
  const std::size_t ix = x.id();
  return x.graph().emplace("reshape", std::move(out), {ix},
                           [=](Graph<T>& g, std::size_t self) {
                             const auto& dy = g.grad(self);
                             auto& dx = g.grad(ix);
                             for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
                           });
}

// Exact GELU, 0.5 x (1 + erf(x / sqrt 2)).
template <std::floating_point T>
Var<T> gelu(Var<T> x) {
  Tensor<T> out = x.value();
  const T inv_sqrt2 = T(0.70710678118654752440);
  for (auto& v : out.data()) v = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  const std::size_t ix = x.id();
  return x.graph().emplace("gelu", std::move(out), {ix},
                           [=](Graph<T>& g, std::size_t self) {
                             const T inv_sqrt_2pi = T(0.39894228040143267794);
                             const auto& in = g.value(ix);
                             const auto& dy = g.grad(self);
                             auto& dx = g.grad(ix);
                             for (std::size_t i = 0; i < dx.size(); ++i) {
                               const T v = in[i];
                               const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
                               const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
                               dx[i] += dy[i] * (cdf + v * pdf);
                             }
                           });
}

// max(x, 0); derivative 0 at the kink.
template <std::floating_point T>
Var<T> relu(Var<T> x) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = v > T(0) ? v : T(0);
  const std::size_t ix = x.id();
  return x.graph().emplace("relu", std::move(out), {ix},
                           [=](Graph<T>& g, std::size_t self) {
                             const auto& in = g.value(ix);
                             const auto& dy = g.grad(self);
                             auto& dx = g.grad(ix);
                             for (std::size_t i = 0; i < dx.size(); ++i) {
                               if (in[i] > T(0)) dx[i] += dy[i];
                             }
                           });
}

// The max(., 0) envelope of the margin losses. Scalar only.
template <std::floating_point T>
Var<T> relu_hinge(Var<T> x) {
  if (x.value().size() != 1) {
    throw DimensionError("relu_hinge expects a scalar, got " + to_string(x.shape()));
  }
  return relu(x);
}

// ---------------------------------------------------------------------------
// Normalisation
// ---------------------------------------------------------------------------

// Softmax along `axis`, max-subtracted.
template <std::floating_point T>
Var<T> softmax(Var<T> x, std::size_t axis) {
  const Shape& shape = x.shape();
  if (axis >= shape.size()) {
    throw DimensionError("softmax axis " + std::to_string(axis) + " out of range for " +
                         to_string(shape));
  }
  const std::size_t len = shape[axis];
  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];
  const std::size_t outer = x.value().size() / (len * inner);

  Tensor<T> out = x.value();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = out[base];
      for (std::size_t k = 1; k < len; ++k) mx = std::max(mx, out[base + k * inner]);
      T z = T(0);
      for (std::size_t k = 0; k < len; ++k) {
        T& v = out[base + k * inner];
        v = std::exp(v - mx);
        z += v;
      }
      for (std::size_t k = 0; k < len; ++k) out[base + k * inner] /= z;
    }
  }
  const std::size_t ix = x.id();
  return x.graph().emplace(
      "softmax", std::move(out), {ix}, [=](Graph<T>& g, std::size_t self) {
        const auto& y = g.value(self);
        const auto& dy = g.grad(self);
        auto& dx = g.grad(ix);
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            T dot = T(0);
            for (std::size_t k = 0; k < len; ++k) {
              dot += y[base + k * inner] * dy[base + k * inner];
            }
            for (std::size_t k = 0; k < len; ++k) {
              const std::size_t i = base + k * inner;
              dx[i] += y[i] * (dy[i] - dot);
            }
          }
        }
      });
}

// Row softmax of a square-or-wider score matrix where row i may only see
// columns 0..i. Masked entries are exactly zero.
template <std::floating_point T>
Var<T> causal_softmax(Var<T> x) {
  detail::require_matrix(x, "causal_softmax");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (n < m) throw DimensionError("causal_softmax needs cols >= rows");
  Tensor<T> out({m, n});
  const auto& in = x.value();
  for (std::size_t i = 0; i < m; ++i) {
    T mx = in.at(i, 0);
    for (std::size_t j = 1; j <= i; ++j) mx = std::max(mx, in.at(i, j));
    T z = T(0);
    for (std::size_t j = 0; j <= i; ++j) {
      out.at(i, j) = std::exp(in.at(i, j) - mx);
      z += out.at(i, j);
    }
    for (std::size_t j = 0; j <= i; ++j) out.at(i, j) /= z;
  }
  const std::size_t ix = x.id();
  return x.graph().emplace("causal_softmax", std::move(out), {ix},
                           [=](Graph<T>& g, std::size_t self) {
                             const auto& y = g.value(self);
                             const auto& dy = g.grad(self);
                             auto& dx = g.grad(ix);
                             for (std::size_t i = 0; i < m; ++i) {
                               T dot = T(0);
                               for (std::size_t j = 0; j <= i; ++j) dot += y[i * n + j] * dy[i * n + j];
                               for (std::size_t j = 0; j <= i; ++j) {
                                 dx[i * n + j] += y[i * n + j] * (dy[i * n + j] - dot);
                               }
                             }
                           });
}

// Per-row standardisation over the last dimension followed by gain/bias.
template <std::floating_point T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5)) {
  detail::require_same_graph(x, gain);
  detail::require_same_graph(x, bias);
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.value().size() / d;
  if (gain.value().size() != d || bias.value().size() != d) {
    throw DimensionError("layer_norm gain/bias must have " + std::to_string(d) + " entries");
  }
  if (!(eps > T(0))) throw ValueError("layer_norm eps must be positive");

  Tensor<T> out(x.shape());
  std::vector<T> xhat(x.value().size());
  std::vector<T> inv_std(rows);
  const auto& in = x.value();
  const auto& gv = gain.value();
  const auto& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    T mean = T(0);
    for (std::size_t j = 0; j < d; ++j) mean += in[r * d + j];
    mean /= T(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) {
      const T c = in[r * d + j] - mean;
      var += c * c;
    }
    var /= T(d);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      const std::size_t i = r * d + j;
      xhat[i] = (in[i] - mean) * inv_std[r];
      out[i] = xhat[i] * gv[j] + bv[j];
    }
  }
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return x.graph().emplace(
      "layer_norm", std::move(out), {ix, ig, ib},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph<T>& g, std::size_t self) {
        const auto& dy = g.grad(self);
        const auto& gv = g.value(ig);
        if (g.requires_grad(ig)) {
          auto& dg = g.grad(ig);
          for (std::size_t i = 0; i < dy.size(); ++i) dg[i % d] += dy[i] * xhat[i];
        }
        if (g.requires_grad(ib)) {
          auto& db = g.grad(ib);
          for (std::size_t i = 0; i < dy.size(); ++i) db[i % d] += dy[i];
        }
        if (g.requires_grad(ix)) {
          auto& dx = g.grad(ix);
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_dxhat = T(0), mean_dxhat_xhat = T(0);
            for (std::size_t j = 0; j < d; ++j) {
              const std::size_t i = r * d + j;
              const T dxh = dy[i] * gv[j];
              mean_dxhat += dxh;
              mean_dxhat_xhat += dxh * xhat[i];
            }
            mean_dxhat /= T(d);
            mean_dxhat_xhat /= T(d);
            for (std::size_t j = 0; j < d; ++j) {
              const std::size_t i = r * d + j;
              const T dxh = dy[i] * gv[j];
              dx[i] += inv_std[r] * (dxh - mean_dxhat - xhat[i] * mean_dxhat_xhat);
            }
          }
        }
      });
}

// x / ||x||_2 over the whole tensor.
template <std::floating_point T>
Var<T> l2_normalize(Var<T> x) {
  T ss = T(0);
  for (T v : x.value().data()) ss += v * v;
  const T norm = std::max(std::sqrt(ss), T(1e-12));
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v /= norm;
  const std::size_t ix = x.id();
  return x.graph().emplace("l2_normalize", std::move(out), {ix},
                           [=](Graph<T>& g, std::size_t self) {
                             const auto& y = g.value(self);
                             const auto& dy = g.grad(self);
                             auto& dx = g.grad(ix);
                             T dot = T(0);
                             for (std::size_t i = 0; i < y.size(); ++i) dot += y[i] * dy[i];
                             for (std::size_t i = 0; i < y.size(); ++i) {
                               dx[i] += (dy[i] - y[i] * dot) / norm;
                             }
                           });
}

// ---------------------------------------------------------------------------
// Distances and losses
// ---------------------------------------------------------------------------

// ||a - b||_2 as a scalar. The gradient at a == b is defined as zero.
template <std::floating_point T>
Var<T> l2_distance(Var<T> a, Var<T> b) {
  detail::require_same_graph(a, b);
  if (a.value().size() != b.value().size()) {
    throw DimensionError("l2_distance dims differ: " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  }
  const auto& x = a.value();
  const auto& y = b.value();
  T ss = T(0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T d = x[i] - y[i];
    ss += d * d;
  }
  const T dist = std::sqrt(ss);
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().emplace("l2_distance", Tensor<T>::scalar(dist), {ia, ib},
                           [=](Graph<T>& g, std::size_t self) {
                             if (dist == T(0)) return;
                             const T up = g.grad(self)[0] / dist;
                             const auto& x = g.value(ia);
                             const auto& y = g.value(ib);
                             if (g.requires_grad(ia)) {
                               auto& dx = g.grad(ia);
                               for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += up * (x[i] - y[i]);
                             }
                             if (g.requires_grad(ib)) {
                               auto& dy = g.grad(ib);
                               for (std::size_t i = 0; i < dy.size(); ++i) dy[i] -= up * (x[i] - y[i]);
                             }
                           });
}

// Mean over non-pad rows of -log softmax(logits)[target].
// `pad[t]` true means position t is ignored.
template <std::floating_point T>
Var<T> cross_entropy_tokens(Var<T> logits, std::span<const int> targets,
                            std::span<const bool> pad) {
  detail::require_matrix(logits, "cross_entropy_tokens");
  const std::size_t rows = logits.shape()[0], vocab = logits.shape()[1];
  if (targets.size() != rows || pad.size() != rows) {
    throw DimensionError("cross_entropy_tokens: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(rows) + " logit rows");
  }
  std::size_t active = 0;
  for (std::size_t t = 0; t < rows; ++t) {
    if (pad[t]) continue;
    if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= vocab) {
      throw ValueError("cross_entropy_tokens: target " + std::to_string(targets[t]) +
                       " outside vocabulary of " + std::to_string(vocab));
    }
    ++active;
  }
  if (active == 0) throw ValueError("cross_entropy_tokens: every position is padded");

  const auto& z = logits.value();
  std::vector<T> probs(z.size(), T(0));
  T loss = T(0);
  for (std::size_t t = 0; t < rows; ++t) {
    if (pad[t]) continue;
    const T* row = z.data().data() + t * vocab;
    const std::size_t arg = static_cast<std::size_t>(std::max_element(row, row + vocab) - row);
    const T mx = row[arg];
    // sum_exp = 1 + rest; log1p keeps precision for confident rows.
    T rest = T(0);
    for (std::size_t v = 0; v < vocab; ++v) {
      probs[t * vocab + v] = std::exp(row[v] - mx);
      if (v != arg) rest += probs[t * vocab + v];
    }
    const T sum_exp = T(1) + rest;
    for (std::size_t v = 0; v < vocab; ++v) probs[t * vocab + v] /= sum_exp;
    loss += (mx - row[targets[t]]) + std::log1p(rest);
  }
  const T inv = T(1) / T(active);
  loss *= inv;
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<bool> pd(pad.begin(), pad.end());
  const std::size_t il = logits.id();
  return logits.graph().emplace(
      "cross_entropy_tokens", Tensor<T>::scalar(loss), {il},
      [=, probs = std::move(probs)](Graph<T>& g, std::size_t self) {
        const T up = g.grad(self)[0] * inv;
        auto& dz = g.grad(il);
        for (std::size_t t = 0; t < rows; ++t) {
          if (pd[t]) continue;
          for (std::size_t v = 0; v < vocab; ++v) dz[t * vocab + v] += up * probs[t * vocab + v];
          dz[t * vocab + tgt[t]] -= up;
        }
      });
}

// ---------------------------------------------------------------------------
// Indexing
// ---------------------------------------------------------------------------

// Rows of table[V x d] selected by ids -> [len(ids) x d].
template <std::floating_point T>
Var<T> embedding(Var<T> table, std::span<const int> ids) {
  detail::require_matrix(table, "embedding");
  const std::size_t vocab = table.shape()[0], d = table.shape()[1];
  if (ids.empty()) throw DimensionError("embedding: empty id list");
  Tensor<T> out({ids.size(), d});
  const auto& tv = table.value();
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] < 0 || static_cast<std::size_t>(ids[t]) >= vocab) {
      throw ValueError("embedding: id " + std::to_string(ids[t]) + " outside table of " +
                       std::to_string(vocab));
    }
    std::copy_n(tv.data().begin() + ids[t] * d, d, out.data().begin() + t * d);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  const std::size_t it = table.id();
  return table.graph().emplace("embedding", std::move(out), {it},
                               [=](Graph<T>& g, std::size_t self) {
                                 const auto& dy = g.grad(self);
                                 auto& dt = g.grad(it);
                                 for (std::size_t t = 0; t < idv.size(); ++t)
                                   for (std::size_t j = 0; j < d; ++j)
                                     dt[idv[t] * d + j] += dy[t * d + j];
                               });
}

// Leading `count` rows of x.
template <std::floating_point T>
Var<T> take_rows(Var<T> x, std::size_t count) {
  detail::require_matrix(x, "take_rows");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (count == 0 || count > m) throw DimensionError("take_rows: count out of range");
  Tensor<T> out({count, n},
                std::vector<T>(x.value().data().begin(), x.value().data().begin() + count * n));
  const std::size_t ix = x.id();
  return x.graph().emplace("take_rows", std::move(out), {ix},
                           [=](Graph<T>& g, std::size_t self) {
                             const auto& dy = g.grad(self);
                             auto& dx = g.grad(ix);
                             for (std::size_t i = 0; i < count * n; ++i) dx[i] += dy[i];
                           });
}

// Columns [begin, end) of x.
template <std::floating_point T>
Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t end) {
  detail::require_matrix(x, "slice_cols");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (begin >= end || end > n) throw DimensionError("slice_cols: bad column range");
  const std::size_t w = end - begin;
  Tensor<T> out({m, w});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out.at(i, j) = x.value().at(i, begin + j);
  const std::size_t ix = x.id();
  return x.graph().emplace("slice_cols", std::move(out), {ix},
                           [=](Graph<T>& g, std::size_t self) {
                             const auto& dy = g.grad(self);
                             auto& dx = g.grad(ix);
                             for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t j = 0; j < w; ++j)
                                 dx[i * n + begin + j] += dy[i * w + j];
                           });
}

template <std::floating_point T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  const std::size_t m = parts[0].shape()[0];
  std::size_t n = 0;
  std::vector<std::size_t> ids, widths;
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat_cols");
    detail::require_same_graph(parts[0], p);
    if (p.shape()[0] != m) throw DimensionError("concat_cols: row counts differ");
    ids.push_back(p.id());
    widths.push_back(p.shape()[1]);
    n += p.shape()[1];
  }
  Tensor<T> out({m, n});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) out.at(i, off + j) = v.at(i, j);
    off += widths[k];
  }
  return parts[0].graph().emplace("concat_cols", std::move(out), ids,
                                  [=](Graph<T>& g, std::size_t self) {
                                    const auto& dy = g.grad(self);
                                    std::size_t off = 0;
                                    for (std::size_t k = 0; k < ids.size(); ++k) {
                                      if (g.requires_grad(ids[k])) {
                                        auto& dx = g.grad(ids[k]);
                                        for (std::size_t i = 0; i < m; ++i)
                                          for (std::size_t j = 0; j < widths[k]; ++j)
                                            dx[i * widths[k] + j] += dy[i * n + off + j];
                                      }
                                      off += widths[k];
                                    }
                                  });
}

// Mean of the rows where keep[r] is true -> [1 x d].
template <std::floating_point T>
Var<T> mean_rows(Var<T> x, std::span<const bool> keep) {
  detail::require_matrix(x, "mean_rows");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  if (keep.size() != m) throw DimensionError("mean_rows: mask length mismatch");
  const std::size_t count = static_cast<std::size_t>(std::count(keep.begin(), keep.end(), true));
  if (count == 0) throw ValueError("mean_rows: no rows selected");
  Tensor<T> out({1, n});
  for (std::size_t i = 0; i < m; ++i) {
    if (!keep[i]) continue;
    for (std::size_t j = 0; j < n; ++j) out[j] += x.value().at(i, j);
  }
  const T inv = T(1) / T(count);
  for (auto& v : out.data()) v *= inv;
  std::vector<bool> kv(keep.begin(), keep.end());
  const std::size_t ix = x.id();
  return x.graph().emplace("mean_rows", std::move(out), {ix},
                           [=](Graph<T>& g, std::size_t self) {
                             const auto& dy = g.grad(self);
                             auto& dx = g.grad(ix);
                             for (std::size_t i = 0; i < m; ++i) {
                               if (!kv[i]) continue;
                               for (std::size_t j = 0; j < n; ++j) dx[i * n + j] += inv * dy[j];
                             }
                           });
}

}  // namespace convqg::grad

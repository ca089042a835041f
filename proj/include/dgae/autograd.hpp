// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode automatic differentiation over dense tensors.
//
// A Tape records every value produced during a forward pass together with a
// closure that pushes the output gradient back to its inputs. Var is a light
// handle (tape, node id). Operations whose inputs do not require gradients
// drop their closure, so inference on a tape costs nothing extra beyond the
// stored activations.
#pragma once

#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "dgae/tensor.hpp"

namespace dgae::ag {

template <typename T>
class Tape;

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return tape->value(id).shape(); }
  std::int64_t dim(int i) const { return shape()[static_cast<std::size_t>(i < 0 ? shape().size() + i : i)]; }
  bool requires_grad() const { return tape->requires_grad(id); }
};

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, {}});
    return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
  }

  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  /// Appends an op result. The closure is kept only if some parent needs a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> parents, BackwardFn fn) {
    bool rg = false;
    for (const auto& p : parents) rg = rg || (p.valid() && requires_grad(p.id));
    nodes_.push_back(Node{std::move(value), {}, rg, rg ? std::move(fn) : BackwardFn{}});
    return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor<T>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  bool has_grad(int id) const { return !nodes_[static_cast<std::size_t>(id)].grad.empty(); }

  /// Gradient buffer of a node, allocated as zeros on first access.
  Tensor<T>& grad(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape(), T(0));
    return n.grad;
  }

  /// Reverse sweep from a scalar root. Intermediate values and gradients are
  /// released as soon as they are no longer reachable; leaf gradients stay.
  void backward(Var<T> root) {
    if (numel(value(root.id).shape()) != 1) throw ShapeError("backward: root must be a scalar");
    if (!requires_grad(root.id)) return;
    grad(root.id).fill(T(1));
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.backward) continue;
      if (!n.grad.empty()) n.backward(*this, n.grad);
      n.backward = {};
      n.grad = Tensor<T>();
      if (i != root.id) n.value = Tensor<T>();
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;
};

// Elementwise ---------------------------------------------------------------
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T s);
template <typename T> Var<T> add_scalar(Var<T> a, T s);
template <typename T> Var<T> silu(Var<T> a);
template <typename T> Var<T> relu(Var<T> a);
template <typename T> Var<T> leaky_relu(Var<T> a, T slope);
template <typename T> Var<T> tanh(Var<T> a);
/// Clamp; gradient passes only where lo < a < hi.
template <typename T> Var<T> clamp(Var<T> a, T lo, T hi);
/// x[n, ...] * s[n] with s a constant per-sample vector.
template <typename T> Var<T> mul_per_sample(Var<T> x, std::span<const T> s);
/// mu + exp(0.5 * logvar) * noise, noise constant.
template <typename T> Var<T> reparameterize(Var<T> mu, Var<T> logvar, const Tensor<T>& noise);

// Structural ----------------------------------------------------------------
template <typename T> Var<T> reshape(Var<T> a, Shape s);
template <typename T> Var<T> concat_channels(Var<T> a, Var<T> b);
template <typename T> Var<T> slice_channels(Var<T> a, std::int64_t start, std::int64_t count);
template <typename T> Var<T> upsample_nearest(Var<T> x, std::int64_t factor);
/// x[N,C,H,W] + e[N,C] broadcast over space.
template <typename T> Var<T> add_channel_vector(Var<T> x, Var<T> e);
/// Mean over H, W: [N,C,H,W] -> [N,C].
template <typename T> Var<T> mean_spatial(Var<T> x);

// Layers --------------------------------------------------------------------
/// 2-D convolution, weight [Cout, Cin, K, K]; pass an invalid Var for no bias.
template <typename T> Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int stride, int pad);
/// x[N, in] W[out, in]^T + b[out].
template <typename T> Var<T> linear(Var<T> x, Var<T> w, Var<T> b);
template <typename T> Var<T> group_norm(Var<T> x, Var<T> gamma, Var<T> beta, int groups, T eps = T(1e-6));
/// Normalization over the last dimension of [N, D].
template <typename T> Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-6));
/// Each (n, c) spatial map divided by its L2 norm.
template <typename T> Var<T> normalize_spatial(Var<T> x, T eps = T(1e-10));

// Reductions (all return shape [1]) -------------------------------------------
template <typename T> Var<T> mean(Var<T> a);
template <typename T> Var<T> mse(Var<T> a, Var<T> b);
/// mean_n( w[n] * mean_{c,h,w} (a - b)^2 ).
template <typename T> Var<T> weighted_mse_per_sample(Var<T> a, Var<T> b, std::span<const T> w);
/// Batch mean of 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar).
template <typename T> Var<T> kl_standard_normal(Var<T> mu, Var<T> logvar);
template <typename T> Var<T> softmax_cross_entropy(Var<T> logits, std::span<const int> labels);

}  // namespace dgae::ag

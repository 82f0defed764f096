// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensor with a reverse-mode tape. Every op that has at least
// one input with requires_grad set records a node holding its inputs and a
// backward rule; Tensor::backward() walks those nodes once each in reverse
// topological order.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "gridtst/rng.hpp"

namespace gridtst {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;  // reads this->grad, accumulates into inputs

  void ensure_grad();
  bool is_leaf() const { return !backward; }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Direct write access; callers must not mutate tensors that feed a live tape.
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  // Zeros when no gradient has been accumulated yet.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Accumulates d(this)/d(leaf) into every requires_grad leaf reachable from
  // this scalar. Intermediate gradients are reset at the start of each call.
  void backward() const;

  // Same buffer, no tape connection.
  Tensor detach() const;
  Tensor clone() const;

  const char* op_name() const;

  // Internal: used by ops to build graph nodes.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Disables tape recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// ---- ops -----------------------------------------------------------------

// a [..., r, k] x b [..., k, c]. Leading batch axes must be equal, or one side
// must be a plain matrix that is broadcast across the other's batch.
Tensor matmul(const Tensor& a, const Tensor& b);

// Elementwise with suffix broadcasting: b's shape must equal a's shape or a
// trailing slice of it (e.g. a bias [D] against [..., D]).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Numerically stable softmax along `axis`. Throws NumericError on NaN input.
Tensor softmax(const Tensor& x, std::size_t axis);

// tanh approximation.
Tensor gelu(const Tensor& x);
double gelu_scalar(double x);

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor reshape(const Tensor& x, Shape new_shape);
// Swaps the last two axes.
Tensor transpose_last(const Tensor& x);

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  static BatchNormState identity(std::size_t features, double momentum = 0.1, double eps = 1e-5);
};

// Normalizes the last axis (features) using statistics over all other axes.
// Training mode uses batch statistics (biased variance) and updates the running
// estimates (unbiased variance); inference mode uses the running estimates.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  bool training);

// Per-row normalization over the last axis, then gamma/beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Inverted dropout. Identity when !training or p == 0.
Tensor dropout(const Tensor& x, double p, Rng& rng, bool training);

// Mean squared error against a constant target of identical shape.
Tensor mse_loss(const Tensor& prediction, const Tensor& target);

// ---- finite differences --------------------------------------------------

// max over coordinates of |analytic - numeric| / max(1, |numeric|), using
// central differences of step eps on every element of every input.
double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                  std::vector<Tensor> inputs, double eps = 1e-4);

}  // namespace gridtst

// SPDX-License-Identifier: Apache-2.0

#include "gridtst/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "gridtst/error.hpp"

namespace gridtst {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void Node::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

namespace {

thread_local bool t_grad_enabled = true;

void check_shape(const Shape& shape) {
  for (auto e : shape) {
    if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
}

NodePtr make_leaf(Shape shape, std::vector<double> data, bool requires_grad) {
  check_shape(shape);
  if (numel(shape) != data.size()) {
    throw ShapeError("shape " + shape_str(shape) + " holds " + std::to_string(numel(shape)) +
                     " elements but " + std::to_string(data.size()) + " values were given");
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return node;
}

// Builds the result node of an op. The backward rule is only attached when
// recording is on and some input needs a gradient.
Tensor make_result(Shape shape, std::vector<double> data, const char* op,
                   std::vector<NodePtr> inputs, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  const bool needs =
      t_grad_enabled && std::any_of(inputs.begin(), inputs.end(),
                                    [](const NodePtr& n) { return n->requires_grad; });
  if (needs) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

const NodePtr& require(const Tensor& t, const char* what) {
  if (!t.defined()) throw ShapeError(std::string(what) + ": undefined tensor");
  return t.node();
}

// Number of elements in `a` per element of the suffix-broadcast operand `b`.
std::size_t broadcast_outer(const Shape& a, const Shape& b, const char* op) {
  bool ok = b.size() <= a.size();
  for (std::size_t i = 0; ok && i < b.size(); ++i) {
    ok = a[a.size() - b.size() + i] == b[i];
  }
  if (!ok) {
    throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(b) + " onto " +
                     shape_str(a));
  }
  return numel(a) / numel(b);
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = gridtst::numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = gridtst::numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(make_leaf({1}, {value}, requires_grad));
}

const Shape& Tensor::shape() const { return require(*this, "shape")->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return require(*this, "numel")->data.size(); }

std::span<const double> Tensor::data() const { return require(*this, "data")->data; }

std::span<double> Tensor::mutable_data() { return require(*this, "data")->data; }

double Tensor::item() const {
  const auto& n = require(*this, "item");
  if (n->data.size() != 1) {
    throw ShapeError("item() needs a single-element tensor, got " + shape_str(n->shape));
  }
  return n->data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& n = require(*this, "at");
  if (index.size() != n->shape.size()) throw ShapeError("at(): index rank mismatch");
  std::size_t off = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= n->shape[axis]) throw ShapeError("at(): index out of range");
    off = off * n->shape[axis] + i;
    ++axis;
  }
  return n->data[off];
}

bool Tensor::requires_grad() const { return require(*this, "requires_grad")->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
  auto& n = require(*this, "set_requires_grad");
  if (!n->is_leaf()) throw Error("requires_grad can only be changed on leaf tensors");
  n->requires_grad = flag;
}

bool Tensor::has_grad() const { return !require(*this, "grad")->grad.empty(); }

std::span<const double> Tensor::grad() const {
  auto& n = require(*this, "grad");
  n->ensure_grad();
  return n->grad;
}

std::span<double> Tensor::mutable_grad() {
  auto& n = require(*this, "grad");
  n->ensure_grad();
  return n->grad;
}

void Tensor::zero_grad() {
  auto& n = require(*this, "zero_grad");
  std::fill(n->grad.begin(), n->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  const auto& n = require(*this, "detach");
  return Tensor(make_leaf(n->shape, n->data, false));
}

Tensor Tensor::clone() const {
  const auto& n = require(*this, "clone");
  return Tensor(make_leaf(n->shape, n->data, n->requires_grad));
}

const char* Tensor::op_name() const { return require(*this, "op")->op; }

void Tensor::backward() const {
  const auto& root = require(*this, "backward");
  if (root->data.size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(root->shape));
  }
  if (!root->requires_grad) return;

  // Iterative post-order DFS; `order` ends up topologically sorted (inputs first).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->data.size(), 0.0);
  }
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (!(*it)->is_leaf()) (*it)->backward(**it);
  }
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

// ---- matmul ----------------------------------------------------------------

namespace {

// c[r, c] += a[r, k] * b[k, c]
void gemm_nn(const double* a, const double* b, double* c, std::size_t rows, std::size_t inner,
             std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    double* crow = c + i * cols;
    for (std::size_t k = 0; k < inner; ++k) {
      const double aik = a[i * inner + k];
      if (aik == 0.0) continue;
      const double* brow = b + k * cols;
      for (std::size_t j = 0; j < cols; ++j) crow[j] += aik * brow[j];
    }
  }
}

// da[r, k] += dc[r, c] * b[k, c]
void gemm_nt(const double* dc, const double* b, double* da, std::size_t rows, std::size_t inner,
             std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* drow = dc + i * cols;
    for (std::size_t k = 0; k < inner; ++k) {
      const double* brow = b + k * cols;
      double acc = 0.0;
      for (std::size_t j = 0; j < cols; ++j) acc += drow[j] * brow[j];
      da[i * inner + k] += acc;
    }
  }
}

// db[k, c] += a[r, k] * dc[r, c]
void gemm_tn(const double* a, const double* dc, double* db, std::size_t rows, std::size_t inner,
             std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* drow = dc + i * cols;
    for (std::size_t k = 0; k < inner; ++k) {
      const double aik = a[i * inner + k];
      if (aik == 0.0) continue;
      double* dbrow = db + k * cols;
      for (std::size_t j = 0; j < cols; ++j) dbrow[j] += aik * drow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& na = require(a, "matmul");
  const auto& nb = require(b, "matmul");
  const Shape& sa = na->shape;
  const Shape& sb = nb->shape;
  if (sa.size() < 2 || sb.size() < 2 || sa[sa.size() - 1] != sb[sb.size() - 2]) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
  }
  const Shape batch_a(sa.begin(), sa.end() - 2);
  const Shape batch_b(sb.begin(), sb.end() - 2);
  if (!batch_a.empty() && !batch_b.empty() && batch_a != batch_b) {
    throw ShapeError("matmul: batch axes of " + shape_str(sa) + " and " + shape_str(sb) +
                     " do not broadcast");
  }
  const std::size_t rows = sa[sa.size() - 2];
  const std::size_t inner = sa.back();
  const std::size_t cols = sb.back();
  const Shape& batch = batch_a.empty() ? batch_b : batch_a;
  const std::size_t nbatch = numel(batch);
  const std::size_t stride_a = batch_a.empty() ? 0 : rows * inner;
  const std::size_t stride_b = batch_b.empty() ? 0 : inner * cols;

  Shape out_shape = batch;
  out_shape.push_back(rows);
  out_shape.push_back(cols);
  std::vector<double> out(nbatch * rows * cols, 0.0);
  for (std::size_t i = 0; i < nbatch; ++i) {
    gemm_nn(na->data.data() + i * stride_a, nb->data.data() + i * stride_b,
            out.data() + i * rows * cols, rows, inner, cols);
  }

  return make_result(std::move(out_shape), std::move(out), "matmul", {na, nb},
                     [=](Node& self) {
                       Node& A = *self.inputs[0];
                       Node& B = *self.inputs[1];
                       if (A.requires_grad) {
                         A.ensure_grad();
                         for (std::size_t i = 0; i < nbatch; ++i) {
                           gemm_nt(self.grad.data() + i * rows * cols, B.data.data() + i * stride_b,
                                   A.grad.data() + i * stride_a, rows, inner, cols);
                         }
                       }
                       if (B.requires_grad) {
                         B.ensure_grad();
                         for (std::size_t i = 0; i < nbatch; ++i) {
                           gemm_tn(A.data.data() + i * stride_a, self.grad.data() + i * rows * cols,
                                   B.grad.data() + i * stride_b, rows, inner, cols);
                         }
                       }
                     });
}

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  const auto& na = require(a, "add");
  const auto& nb = require(b, "add");
  const std::size_t outer = broadcast_outer(na->shape, nb->shape, "add");
  const std::size_t inner = nb->data.size();
  std::vector<double> out(na->data);
  for (std::size_t o = 0; o < outer; ++o) {
    double* dst = out.data() + o * inner;
    for (std::size_t i = 0; i < inner; ++i) dst[i] += nb->data[i];
  }
  return make_result(na->shape, std::move(out), "add", {na, nb}, [=](Node& self) {
    Node& A = *self.inputs[0];
    Node& B = *self.inputs[1];
    if (A.requires_grad) {
      A.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad[i] += self.grad[i];
    }
    if (B.requires_grad) {
      B.ensure_grad();
      for (std::size_t o = 0; o < outer; ++o) {
        const double* g = self.grad.data() + o * inner;
        for (std::size_t i = 0; i < inner; ++i) B.grad[i] += g[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const auto& na = require(a, "sub");
  const auto& nb = require(b, "sub");
  const std::size_t outer = broadcast_outer(na->shape, nb->shape, "sub");
  const std::size_t inner = nb->data.size();
  std::vector<double> out(na->data);
  for (std::size_t o = 0; o < outer; ++o) {
    double* dst = out.data() + o * inner;
    for (std::size_t i = 0; i < inner; ++i) dst[i] -= nb->data[i];
  }
  return make_result(na->shape, std::move(out), "sub", {na, nb}, [=](Node& self) {
    Node& A = *self.inputs[0];
    Node& B = *self.inputs[1];
    if (A.requires_grad) {
      A.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) A.grad[i] += self.grad[i];
    }
    if (B.requires_grad) {
      B.ensure_grad();
      for (std::size_t o = 0; o < outer; ++o) {
        const double* g = self.grad.data() + o * inner;
        for (std::size_t i = 0; i < inner; ++i) B.grad[i] -= g[i];
      }
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const auto& na = require(a, "mul");
  const auto& nb = require(b, "mul");
  const std::size_t outer = broadcast_outer(na->shape, nb->shape, "mul");
  const std::size_t inner = nb->data.size();
  std::vector<double> out(na->data);
  for (std::size_t o = 0; o < outer; ++o) {
    double* dst = out.data() + o * inner;
    for (std::size_t i = 0; i < inner; ++i) dst[i] *= nb->data[i];
  }
  return make_result(na->shape, std::move(out), "mul", {na, nb}, [=](Node& self) {
    Node& A = *self.inputs[0];
    Node& B = *self.inputs[1];
    if (A.requires_grad) {
      A.ensure_grad();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
          A.grad[o * inner + i] += self.grad[o * inner + i] * B.data[i];
        }
      }
    }
    if (B.requires_grad) {
      B.ensure_grad();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) {
          B.grad[i] += self.grad[o * inner + i] * A.data[o * inner + i];
        }
      }
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  const auto& nx = require(x, "scale");
  std::vector<double> out(nx->data);
  for (auto& v : out) v *= factor;
  return make_result(nx->shape, std::move(out), "scale", {nx}, [factor](Node& self) {
    Node& X = *self.inputs[0];
    X.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) X.grad[i] += factor * self.grad[i];
  });
}

Tensor sum(const Tensor& x) {
  const auto& nx = require(x, "sum");
  double s = 0.0;
  for (double v : nx->data) s += v;
  return make_result({1}, {s}, "sum", {nx}, [](Node& self) {
    Node& X = *self.inputs[0];
    X.ensure_grad();
    const double g = self.grad[0];
    for (auto& v : X.grad) v += g;
  });
}

Tensor mean(const Tensor& x) {
  const auto& nx = require(x, "mean");
  double s = 0.0;
  for (double v : nx->data) s += v;
  const double n = static_cast<double>(nx->data.size());
  return make_result({1}, {s / n}, "mean", {nx}, [n](Node& self) {
    Node& X = *self.inputs[0];
    X.ensure_grad();
    const double g = self.grad[0] / n;
    for (auto& v : X.grad) v += g;
  });
}

// ---- softmax ---------------------------------------------------------------

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto& nx = require(x, "softmax");
  const Shape& s = nx->shape;
  if (axis >= s.size()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  const std::size_t n = s[axis];
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t outer = nx->data.size() / (n * inner);

  std::vector<double> out(nx->data.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * n * inner + i;
      double mx = -INFINITY;
      for (std::size_t k = 0; k < n; ++k) {
        const double v = nx->data[base + k * inner];
        if (std::isnan(v)) throw NumericError("softmax: NaN in input");
        mx = std::max(mx, v);
      }
      double z = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double e = std::exp(nx->data[base + k * inner] - mx);
        out[base + k * inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < n; ++k) out[base + k * inner] /= z;
    }
  }

  return make_result(s, std::move(out), "softmax", {nx}, [=](Node& self) {
    Node& X = *self.inputs[0];
    X.ensure_grad();
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * n * inner + i;
        double dot = 0.0;
        for (std::size_t k = 0; k < n; ++k) dot += g[base + k * inner] * y[base + k * inner];
        for (std::size_t k = 0; k < n; ++k) {
          const std::size_t idx = base + k * inner;
          X.grad[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

// ---- gelu ------------------------------------------------------------------

namespace {
constexpr double kGeluC = 0.044715;
const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);
}  // namespace

double gelu_scalar(double x) {
  return 0.5 * x * (1.0 + std::tanh(kSqrt2OverPi * (x + kGeluC * x * x * x)));
}

Tensor gelu(const Tensor& x) {
  const auto& nx = require(x, "gelu");
  std::vector<double> out(nx->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_scalar(nx->data[i]);
  return make_result(nx->shape, std::move(out), "gelu", {nx}, [](Node& self) {
    Node& X = *self.inputs[0];
    X.ensure_grad();
    for (std::size_t i = 0; i < X.data.size(); ++i) {
      const double v = X.data[i];
      const double t = std::tanh(kSqrt2OverPi * (v + kGeluC * v * v * v));
      const double dt = (1.0 - t * t) * kSqrt2OverPi * (1.0 + 3.0 * kGeluC * v * v);
      X.grad[i] += self.grad[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
    }
  });
}

// ---- layout ----------------------------------------------------------------

namespace {

// For each output linear index, the matching input linear index.
std::vector<std::size_t> permute_index(const Shape& in_shape, const std::vector<std::size_t>& axes) {
  const std::size_t rank = in_shape.size();
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  Shape out_shape(rank);
  std::vector<std::size_t> src_stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in_shape[axes[i]];
    src_stride[i] = in_strides[axes[i]];
  }
  const std::size_t total = numel(in_shape);
  std::vector<std::size_t> index(total);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t src = 0;
  for (std::size_t lin = 0; lin < total; ++lin) {
    index[lin] = src;
    for (std::size_t d = rank; d-- > 0;) {
      if (++counter[d] < out_shape[d]) {
        src += src_stride[d];
        break;
      }
      src -= src_stride[d] * (out_shape[d] - 1);
      counter[d] = 0;
    }
  }
  return index;
}

}  // namespace

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const auto& nx = require(x, "permute");
  const Shape& s = nx->shape;
  std::vector<bool> used(s.size(), false);
  bool valid = axes.size() == s.size();
  for (std::size_t i = 0; valid && i < axes.size(); ++i) {
    valid = axes[i] < s.size() && !used[axes[i]];
    if (valid) used[axes[i]] = true;
  }
  if (!valid) throw ShapeError("permute: invalid axis permutation for " + shape_str(s));

  Shape out_shape(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out_shape[i] = s[axes[i]];
  auto index = std::make_shared<std::vector<std::size_t>>(permute_index(s, axes));
  std::vector<double> out(nx->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = nx->data[(*index)[i]];

  return make_result(std::move(out_shape), std::move(out), "permute", {nx},
                     [index](Node& self) {
                       Node& X = *self.inputs[0];
                       X.ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i) {
                         X.grad[(*index)[i]] += self.grad[i];
                       }
                     });
}

Tensor transpose_last(const Tensor& x) {
  const auto r = x.rank();
  if (r < 2) throw ShapeError("transpose_last: rank must be at least 2");
  std::vector<std::size_t> axes(r);
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[r - 1], axes[r - 2]);
  return permute(x, axes);
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  const auto& nx = require(x, "reshape");
  check_shape(new_shape);
  if (numel(new_shape) != nx->data.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(nx->shape) + " as " +
                     shape_str(new_shape));
  }
  return make_result(std::move(new_shape), nx->data, "reshape", {nx}, [](Node& self) {
    Node& X = *self.inputs[0];
    X.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) X.grad[i] += self.grad[i];
  });
}

// ---- batch norm ------------------------------------------------------------

BatchNormState BatchNormState::identity(std::size_t features, double momentum, double eps) {
  BatchNormState s;
  s.running_mean.assign(features, 0.0);
  s.running_var.assign(features, 1.0);
  s.momentum = momentum;
  s.eps = eps;
  return s;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                  bool training) {
  const auto& nx = require(x, "batch_norm");
  const auto& ng = require(gamma, "batch_norm");
  const auto& nb = require(beta, "batch_norm");
  const std::size_t features = nx->shape.back();
  if (ng->data.size() != features || nb->data.size() != features ||
      state.running_mean.size() != features || state.running_var.size() != features) {
    throw ShapeError("batch_norm: parameters do not match feature extent of " +
                     shape_str(nx->shape));
  }
  const std::size_t rows = nx->data.size() / features;
  const auto& xd = nx->data;

  std::vector<double> mu(features, 0.0);
  std::vector<double> var(features, 0.0);
  if (training) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t f = 0; f < features; ++f) mu[f] += xd[r * features + f];
    }
    for (auto& m : mu) m /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t f = 0; f < features; ++f) {
        const double d = xd[r * features + f] - mu[f];
        var[f] += d * d;
      }
    }
    for (auto& v : var) v /= static_cast<double>(rows);
    const double unbias =
        rows > 1 ? static_cast<double>(rows) / static_cast<double>(rows - 1) : 1.0;
    for (std::size_t f = 0; f < features; ++f) {
      state.running_mean[f] = (1.0 - state.momentum) * state.running_mean[f] + state.momentum * mu[f];
      state.running_var[f] =
          (1.0 - state.momentum) * state.running_var[f] + state.momentum * var[f] * unbias;
    }
  } else {
    mu = state.running_mean;
    var = state.running_var;
  }

  auto inv_std = std::make_shared<std::vector<double>>(features);
  for (std::size_t f = 0; f < features; ++f) (*inv_std)[f] = 1.0 / std::sqrt(var[f] + state.eps);
  auto xhat = std::make_shared<std::vector<double>>(xd.size());
  std::vector<double> out(xd.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t f = 0; f < features; ++f) {
      const std::size_t i = r * features + f;
      (*xhat)[i] = (xd[i] - mu[f]) * (*inv_std)[f];
      out[i] = ng->data[f] * (*xhat)[i] + nb->data[f];
    }
  }

  return make_result(nx->shape, std::move(out), "batch_norm", {nx, ng, nb},
                     [=](Node& self) {
                       Node& X = *self.inputs[0];
                       Node& G = *self.inputs[1];
                       Node& B = *self.inputs[2];
                       const auto& dy = self.grad;
                       std::vector<double> sum_dy(features, 0.0);
                       std::vector<double> sum_dy_xhat(features, 0.0);
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t f = 0; f < features; ++f) {
                           const std::size_t i = r * features + f;
                           sum_dy[f] += dy[i];
                           sum_dy_xhat[f] += dy[i] * (*xhat)[i];
                         }
                       }
                       if (G.requires_grad) {
                         G.ensure_grad();
                         for (std::size_t f = 0; f < features; ++f) G.grad[f] += sum_dy_xhat[f];
                       }
                       if (B.requires_grad) {
                         B.ensure_grad();
                         for (std::size_t f = 0; f < features; ++f) B.grad[f] += sum_dy[f];
                       }
                       if (!X.requires_grad) return;
                       X.ensure_grad();
                       const double n = static_cast<double>(rows);
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t f = 0; f < features; ++f) {
                           const std::size_t i = r * features + f;
                           const double scale_f = G.data[f] * (*inv_std)[f];
                           if (training) {
                             X.grad[i] += scale_f * (dy[i] - sum_dy[f] / n -
                                                     (*xhat)[i] * sum_dy_xhat[f] / n);
                           } else {
                             X.grad[i] += scale_f * dy[i];
                           }
                         }
                       }
                     });
}

// ---- layer norm ------------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const auto& nx = require(x, "layer_norm");
  const auto& ng = require(gamma, "layer_norm");
  const auto& nb = require(beta, "layer_norm");
  const std::size_t features = nx->shape.back();
  if (ng->data.size() != features || nb->data.size() != features) {
    throw ShapeError("layer_norm: parameters do not match feature extent of " +
                     shape_str(nx->shape));
  }
  const std::size_t rows = nx->data.size() / features;
  const double n = static_cast<double>(features);
  auto xhat = std::make_shared<std::vector<double>>(nx->data.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(nx->data.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = nx->data.data() + r * features;
    double mu = 0.0;
    for (std::size_t f = 0; f < features; ++f) mu += row[f];
    mu /= n;
    double var = 0.0;
    for (std::size_t f = 0; f < features; ++f) var += (row[f] - mu) * (row[f] - mu);
    var /= n;
    (*inv_std)[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t f = 0; f < features; ++f) {
      const std::size_t i = r * features + f;
      (*xhat)[i] = (row[f] - mu) * (*inv_std)[r];
      out[i] = ng->data[f] * (*xhat)[i] + nb->data[f];
    }
  }
  return make_result(nx->shape, std::move(out), "layer_norm", {nx, ng, nb}, [=](Node& self) {
    Node& X = *self.inputs[0];
    Node& G = *self.inputs[1];
    Node& B = *self.inputs[2];
    const auto& dy = self.grad;
    if (G.requires_grad) G.ensure_grad();
    if (B.requires_grad) B.ensure_grad();
    if (X.requires_grad) X.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      double sum_g = 0.0;
      double sum_gx = 0.0;
      for (std::size_t f = 0; f < features; ++f) {
        const std::size_t i = r * features + f;
        if (G.requires_grad) G.grad[f] += dy[i] * (*xhat)[i];
        if (B.requires_grad) B.grad[f] += dy[i];
        const double g = dy[i] * G.data[f];
        sum_g += g;
        sum_gx += g * (*xhat)[i];
      }
      if (!X.requires_grad) continue;
      for (std::size_t f = 0; f < features; ++f) {
        const std::size_t i = r * features + f;
        const double g = dy[i] * G.data[f];
        X.grad[i] += (*inv_std)[r] * (g - sum_g / n - (*xhat)[i] * sum_gx / n);
      }
    }
  });
}

// ---- dropout ---------------------------------------------------------------

Tensor dropout(const Tensor& x, double p, Rng& rng, bool training) {
  const auto& nx = require(x, "dropout");
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: rate must be in [0, 1)");
  if (!training || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  auto mask = std::make_shared<std::vector<double>>(nx->data.size());
  std::vector<double> out(nx->data.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = rng.uniform() < p ? 0.0 : keep_scale;
    out[i] = nx->data[i] * (*mask)[i];
  }
  return make_result(nx->shape, std::move(out), "dropout", {nx}, [mask](Node& self) {
    Node& X = *self.inputs[0];
    X.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) X.grad[i] += self.grad[i] * (*mask)[i];
  });
}

// ---- loss ------------------------------------------------------------------

Tensor mse_loss(const Tensor& prediction, const Tensor& target) {
  const auto& np = require(prediction, "mse_loss");
  const auto& nt = require(target, "mse_loss");
  if (np->shape != nt->shape) {
    throw ShapeError("mse_loss: prediction " + shape_str(np->shape) + " vs target " +
                     shape_str(nt->shape));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < np->data.size(); ++i) {
    const double d = np->data[i] - nt->data[i];
    s += d * d;
  }
  const double n = static_cast<double>(np->data.size());
  return make_result({1}, {s / n}, "mse_loss", {np, nt}, [n](Node& self) {
    Node& P = *self.inputs[0];
    Node& T = *self.inputs[1];
    const double g = self.grad[0] * 2.0 / n;
    if (P.requires_grad) {
      P.ensure_grad();
      for (std::size_t i = 0; i < P.data.size(); ++i) P.grad[i] += g * (P.data[i] - T.data[i]);
    }
    if (T.requires_grad) {
      T.ensure_grad();
      for (std::size_t i = 0; i < T.data.size(); ++i) T.grad[i] -= g * (P.data[i] - T.data[i]);
    }
  });
}

// ---- gradient check --------------------------------------------------------

double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                  std::vector<Tensor> inputs, double eps) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  f(inputs).backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (const auto& t : inputs) analytic.emplace_back(t.grad().begin(), t.grad().end());

  NoGradGuard no_grad;
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto values = inputs[k].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double plus = f(inputs).item();
      values[i] = saved - eps;
      const double minus = f(inputs).item();
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double err = std::abs(analytic[k][i] - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace gridtst

#include "wwf/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace wwf::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

[[noreturn]] void shape_fail(const char* op, std::initializer_list<Shape> shapes,
                             const std::string& detail = {}) {
  std::ostringstream os;
  os << op << ": incompatible shapes";
  bool first = true;
  for (const auto& s : shapes) {
    os << (first ? " " : " and ") << shape_str(s);
    first = false;
  }
  if (!detail.empty()) os << " (" << detail << ")";
  throw ShapeError(os.str());
}

thread_local bool g_grad_enabled = true;

// Builds an output node. Inputs and the backward rule are only retained when
// at least one input participates in differentiation.
Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::vector<std::shared_ptr<Node>> inputs, std::function<void(Node&)> rule) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  node->requires_grad = g_grad_enabled && std::any_of(inputs.begin(), inputs.end(),
                                                      [](const auto& n) { return n->requires_grad; });
  if (node->requires_grad) {
    node->inputs = std::move(inputs);
    node->backward = std::move(rule);
  }
  return Tensor(std::move(node));
}

bool is_scalar_shape(const Shape& s) { return numel(s) == 1 && s.size() <= 1; }

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Size of the repeating block of `b` inside `a`, or throws.
std::size_t broadcast_inner(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return a.size();
  if (is_scalar_shape(b.shape())) return 1;
  if (!b.shape().empty() && is_suffix(b.shape(), a.shape())) return b.size();
  shape_fail(op, {a.shape(), b.shape()}, "only scalar and bias-add broadcasting supported");
}

template <class Fn, class DerivFn>
Tensor unary(const char* op, const Tensor& a, Fn f, DerivFn dfdx) {
  const auto& x = a.node()->value;
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return make_result(op, a.shape(), std::move(y), {a.node()}, [dfdx](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += self.grad[i] * dfdx(in.value[i], self.value[i]);
  });
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::vector<double>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = numel(shape);
  return from_values(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  if (numel(shape) != values.size())
    throw ShapeError("tensor: shape " + shape_str(shape) + " does not match buffer length " +
                     std::to_string(values.size()));
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from_values({}, {value}, requires_grad); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank())
    throw ShapeError("dim: axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return shape()[axis];
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor " + shape_str(shape()) + " is not a scalar");
  return node_->value[0];
}

Tensor Tensor::detach() const { return from_values(shape(), node_->value, false); }

Tape Tape::record(const Tensor& root) {
  Tape tape;
  if (!root.defined()) return tape;
  // Iterative post-order DFS; a node is emitted after all of its inputs.
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && !child->is_leaf() && visited.insert(child).second)
        stack.emplace_back(child, 0);
      continue;
    }
    if (!node->is_leaf()) tape.ops_.push_back(node);
    stack.pop_back();
  }
  tape.keep_alive_.push_back(root.node());
  return tape;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw ShapeError("backward: loss must be a scalar, got " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  if (!loss.requires_grad()) return;
  auto tape = Tape::record(loss);
  auto& seed = loss.node()->grad_buffer();
  seed[0] += 1.0;
  const auto& ops = tape.ops();
  for (auto it = ops.rbegin(); it != ops.rend(); ++it) {
    Node* node = *it;
    if (node->grad.empty()) continue;
    node->backward(*node);
  }
}

Mask Mask::causal(std::size_t rows, std::size_t cols) {
  Mask m{rows, cols, std::vector<std::uint8_t>(rows * cols, 0)};
  const std::ptrdiff_t offset = static_cast<std::ptrdiff_t>(cols) - static_cast<std::ptrdiff_t>(rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      m.allowed[r * cols + c] = static_cast<std::ptrdiff_t>(c) <= static_cast<std::ptrdiff_t>(r) + offset;
  return m;
}

Tensor add(const Tensor& a, const Tensor& b) {
  const std::size_t inner = broadcast_inner("add", a, b);
  const auto& x = a.node()->value;
  const auto& y = b.node()->value;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i % inner];
  return make_result("add", a.shape(), std::move(out), {a.node(), b.node()}, [inner](Node& self) {
    Node& ia = *self.inputs[0];
    Node& ib = *self.inputs[1];
    if (ia.requires_grad) {
      auto& g = ia.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (ib.requires_grad) {
      auto& g = ib.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % inner] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const std::size_t inner = broadcast_inner("sub", a, b);
  const auto& x = a.node()->value;
  const auto& y = b.node()->value;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i % inner];
  return make_result("sub", a.shape(), std::move(out), {a.node(), b.node()}, [inner](Node& self) {
    Node& ia = *self.inputs[0];
    Node& ib = *self.inputs[1];
    if (ia.requires_grad) {
      auto& g = ia.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (ib.requires_grad) {
      auto& g = ib.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % inner] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const std::size_t inner = broadcast_inner("multiply", a, b);
  const auto& x = a.node()->value;
  const auto& y = b.node()->value;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i % inner];
  return make_result("multiply", a.shape(), std::move(out), {a.node(), b.node()}, [inner](Node& self) {
    Node& ia = *self.inputs[0];
    Node& ib = *self.inputs[1];
    if (ia.requires_grad) {
      auto& g = ia.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * ib.value[i % inner];
    }
    if (ib.requires_grad) {
      auto& g = ib.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % inner] += self.grad[i] * ia.value[i];
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary("scale", a, [factor](double x) { return x * factor; },
               [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double offset) {
  return unary("add_scalar", a, [offset](double x) { return x + offset; },
               [](double, double) { return 1.0; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0])
    shape_fail("matmul", {a.shape(), b.shape()});
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(m * n);
  MutMap(out.data(), m, n).noalias() =
      ConstMap(a.node()->value.data(), m, k) * ConstMap(b.node()->value.data(), k, n);
  return make_result("matmul", {m, n}, std::move(out), {a.node(), b.node()}, [m, k, n](Node& self) {
    Node& ia = *self.inputs[0];
    Node& ib = *self.inputs[1];
    ConstMap gy(self.grad.data(), m, n);
    if (ia.requires_grad)
      MutMap(ia.grad_buffer().data(), m, k).noalias() += gy * ConstMap(ib.value.data(), k, n).transpose();
    if (ib.requires_grad)
      MutMap(ib.grad_buffer().data(), k, n).noalias() += ConstMap(ia.value.data(), m, k).transpose() * gy;
  });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.shape()[0] != b.shape()[0] || a.shape()[2] != b.shape()[1])
    shape_fail("bmm", {a.shape(), b.shape()});
  const std::size_t bs = a.shape()[0], m = a.shape()[1], k = a.shape()[2], n = b.shape()[2];
  std::vector<double> out(bs * m * n);
  for (std::size_t i = 0; i < bs; ++i)
    MutMap(out.data() + i * m * n, m, n).noalias() =
        ConstMap(a.node()->value.data() + i * m * k, m, k) * ConstMap(b.node()->value.data() + i * k * n, k, n);
  return make_result("bmm", {bs, m, n}, std::move(out), {a.node(), b.node()}, [bs, m, k, n](Node& self) {
    Node& ia = *self.inputs[0];
    Node& ib = *self.inputs[1];
    for (std::size_t i = 0; i < bs; ++i) {
      ConstMap gy(self.grad.data() + i * m * n, m, n);
      if (ia.requires_grad)
        MutMap(ia.grad_buffer().data() + i * m * k, m, k).noalias() +=
            gy * ConstMap(ib.value.data() + i * k * n, k, n).transpose();
      if (ib.requires_grad)
        MutMap(ib.grad_buffer().data() + i * k * n, k, n).noalias() +=
            ConstMap(ia.value.data() + i * m * k, m, k).transpose() * gy;
    }
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2 && a.rank() != 3) shape_fail("transpose", {a.shape()}, "rank 2 or 3 required");
  const std::size_t bs = a.rank() == 3 ? a.shape()[0] : 1;
  const std::size_t r = a.shape()[a.rank() - 2], c = a.shape()[a.rank() - 1];
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < bs; ++i)
    MutMap(out.data() + i * r * c, c, r) = ConstMap(a.node()->value.data() + i * r * c, r, c).transpose();
  Shape s = a.shape();
  std::swap(s[s.size() - 1], s[s.size() - 2]);
  return make_result("transpose", std::move(s), std::move(out), {a.node()}, [bs, r, c](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < bs; ++i)
      MutMap(g.data() + i * r * c, r, c) += ConstMap(self.grad.data() + i * r * c, c, r).transpose();
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) shape_fail("reshape", {a.shape(), shape});
  return make_result("reshape", std::move(shape), a.node()->value, {a.node()}, [](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor relu(const Tensor& a) {
  // NaN passes through so divergence stays visible downstream.
  return unary("relu", a, [](double x) { return x > 0.0 || std::isnan(x) ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor elu(const Tensor& a, double alpha) {
  return unary("elu", a, [alpha](double x) { return x > 0.0 ? x : alpha * std::expm1(x); },
               [alpha](double x, double y) { return x > 0.0 ? 1.0 : y + alpha; });
}

Tensor sigmoid(const Tensor& a) {
  return unary("sigmoid", a,
               [](double x) {
                 if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
                 const double e = std::exp(x);
                 return e / (1.0 + e);
               },
               [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary("tanh", a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor softmax(const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) shape_fail("softmax", {a.shape()}, "axis " + std::to_string(axis) + " out of range");
  const auto sp = split_axis(a.shape(), axis);
  const auto& x = a.node()->value;
  std::vector<double> y(x.size());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.n * sp.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < sp.n; ++j) mx = std::max(mx, x[base + j * sp.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < sp.n; ++j) {
        const double e = std::exp(x[base + j * sp.inner] - mx);
        y[base + j * sp.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < sp.n; ++j) y[base + j * sp.inner] /= total;
    }
  return make_result("softmax", a.shape(), std::move(y), {a.node()}, [sp](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = o * sp.n * sp.inner + i;
        double dot = 0.0;
        for (std::size_t j = 0; j < sp.n; ++j) dot += self.grad[base + j * sp.inner] * self.value[base + j * sp.inner];
        for (std::size_t j = 0; j < sp.n; ++j) {
          const std::size_t idx = base + j * sp.inner;
          g[idx] += self.value[idx] * (self.grad[idx] - dot);
        }
      }
  });
}

Tensor masked_softmax(const Tensor& a, const Mask& mask) {
  if (a.rank() < 2 || a.shape()[a.rank() - 2] != mask.rows || a.shape()[a.rank() - 1] != mask.cols ||
      mask.allowed.size() != mask.rows * mask.cols)
    shape_fail("masked_softmax", {a.shape(), Shape{mask.rows, mask.cols}}, "mask shape mismatch");
  const std::size_t cols = mask.cols;
  const std::size_t block = mask.rows * cols;
  const auto& x = a.node()->value;
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t row = 0; row < x.size() / cols; ++row) {
    const std::size_t base = row * cols;
    const std::uint8_t* allow = mask.allowed.data() + (base % block);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < cols; ++j)
      if (allow[j]) mx = std::max(mx, x[base + j]);
    if (!std::isfinite(mx)) continue;
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j)
      if (allow[j]) total += (y[base + j] = std::exp(x[base + j] - mx));
    for (std::size_t j = 0; j < cols; ++j) y[base + j] /= total;
  }
  return make_result("masked_softmax", a.shape(), std::move(y), {a.node()}, [cols](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.grad_buffer();
    for (std::size_t base = 0; base < self.value.size(); base += cols) {
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += self.grad[base + j] * self.value[base + j];
      // Masked entries have value 0, so their gradient is exactly 0.
      for (std::size_t j = 0; j < cols; ++j) g[base + j] += self.value[base + j] * (self.grad[base + j] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() < 1 || gain.shape() != Shape{x.shape().back()} || bias.shape() != gain.shape())
    shape_fail("layer_norm", {x.shape(), gain.shape(), bias.shape()});
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.size() / d;
  const auto& xv = x.node()->value;
  const auto& gv = gain.node()->value;
  const auto& bv = bias.node()->value;
  std::vector<double> y(xv.size());
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * is;
      (*xhat)[r * d + j] = h;
      y[r * d + j] = gv[j] * h + bv[j];
    }
  }
  return make_result("layer_norm", x.shape(), std::move(y), {x.node(), gain.node(), bias.node()},
                     [d, rows, xhat, inv_std](Node& self) {
                       Node& ix = *self.inputs[0];
                       Node& ig = *self.inputs[1];
                       Node& ib = *self.inputs[2];
                       const auto& gy = self.grad;
                       if (ig.requires_grad || ib.requires_grad) {
                         auto* gg = ig.requires_grad ? ig.grad_buffer().data() : nullptr;
                         auto* gb = ib.requires_grad ? ib.grad_buffer().data() : nullptr;
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t j = 0; j < d; ++j) {
                             if (gg) gg[j] += gy[r * d + j] * (*xhat)[r * d + j];
                             if (gb) gb[j] += gy[r * d + j];
                           }
                       }
                       if (!ix.requires_grad) return;
                       auto& gx = ix.grad_buffer();
                       const double inv_d = 1.0 / static_cast<double>(d);
                       for (std::size_t r = 0; r < rows; ++r) {
                         double m1 = 0.0, m2 = 0.0;
                         for (std::size_t j = 0; j < d; ++j) {
                           const double gh = gy[r * d + j] * ig.value[j];
                           m1 += gh;
                           m2 += gh * (*xhat)[r * d + j];
                         }
                         m1 *= inv_d;
                         m2 *= inv_d;
                         for (std::size_t j = 0; j < d; ++j) {
                           const double gh = gy[r * d + j] * ig.value[j];
                           gx[r * d + j] += (*inv_std)[r] * (gh - m1 - (*xhat)[r * d + j] * m2);
                         }
                       }
                     });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, bool train, double momentum, double eps) {
  if ((x.rank() != 2 && x.rank() != 3) || gamma.shape() != Shape{x.shape()[1]} || beta.shape() != gamma.shape() ||
      running_mean.shape() != gamma.shape() || running_var.shape() != gamma.shape())
    shape_fail("batch_norm", {x.shape(), gamma.shape(), beta.shape()});
  const std::size_t batch = x.shape()[0];
  const std::size_t channels = x.shape()[1];
  const std::size_t inner = x.rank() == 3 ? x.shape()[2] : 1;
  const std::size_t count = batch * inner;
  const auto& xv = x.node()->value;
  auto idx = [channels, inner](std::size_t b, std::size_t c, std::size_t t) {
    return (b * channels + c) * inner + t;
  };

  std::vector<double> mu(channels), is(channels);
  if (train) {
    if (count < 2) shape_fail("batch_norm", {x.shape()}, "train mode needs at least 2 values per channel");
    auto rm = running_mean.values_mut();
    auto rv = running_var.values_mut();
    for (std::size_t c = 0; c < channels; ++c) {
      double s = 0.0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < inner; ++t) s += xv[idx(b, c, t)];
      const double m = s / static_cast<double>(count);
      double v = 0.0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < inner; ++t) v += (xv[idx(b, c, t)] - m) * (xv[idx(b, c, t)] - m);
      mu[c] = m;
      is[c] = 1.0 / std::sqrt(v / static_cast<double>(count) + eps);
      rm[c] = (1.0 - momentum) * rm[c] + momentum * m;
      rv[c] = (1.0 - momentum) * rv[c] + momentum * v / static_cast<double>(count - 1);
    }
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      mu[c] = running_mean.value(c);
      is[c] = 1.0 / std::sqrt(running_var.value(c) + eps);
    }
  }

  const auto& gv = gamma.node()->value;
  const auto& bv = beta.node()->value;
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  std::vector<double> y(xv.size());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t t = 0; t < inner; ++t) {
        const auto i = idx(b, c, t);
        (*xhat)[i] = (xv[i] - mu[c]) * is[c];
        y[i] = gv[c] * (*xhat)[i] + bv[c];
      }

  return make_result(
      "batch_norm", x.shape(), std::move(y), {x.node(), gamma.node(), beta.node()},
      [=, is = std::move(is)](Node& self) {
        Node& ix = *self.inputs[0];
        Node& ig = *self.inputs[1];
        Node& ib = *self.inputs[2];
        const auto& gy = self.grad;
        std::vector<double> sum_g(channels, 0.0), sum_gh(channels, 0.0);
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t t = 0; t < inner; ++t) {
              const auto i = idx(b, c, t);
              sum_g[c] += gy[i];
              sum_gh[c] += gy[i] * (*xhat)[i];
            }
        if (ig.requires_grad) {
          auto& g = ig.grad_buffer();
          for (std::size_t c = 0; c < channels; ++c) g[c] += sum_gh[c];
        }
        if (ib.requires_grad) {
          auto& g = ib.grad_buffer();
          for (std::size_t c = 0; c < channels; ++c) g[c] += sum_g[c];
        }
        if (!ix.requires_grad) return;
        auto& gx = ix.grad_buffer();
        const double inv_n = 1.0 / static_cast<double>(count);
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t c = 0; c < channels; ++c) {
            const double scale_c = ig.value[c] * is[c];
            for (std::size_t t = 0; t < inner; ++t) {
              const auto i = idx(b, c, t);
              if (train)
                gx[i] += scale_c * (gy[i] - sum_g[c] * inv_n - (*xhat)[i] * sum_gh[c] * inv_n);
              else
                gx[i] += scale_c * gy[i];
            }
          }
      });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& ref = parts[0].shape();
  if (axis >= ref.size()) shape_fail("concat", {ref}, "axis out of range");
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    bool ok = p.rank() == ref.size();
    for (std::size_t i = 0; ok && i < ref.size(); ++i) ok = (i == axis) || p.shape()[i] == ref[i];
    if (!ok) shape_fail("concat", {ref, p.shape()}, "axis " + std::to_string(axis));
    out_shape[axis] += p.shape()[axis];
  }
  const auto sp = split_axis(out_shape, axis);
  std::vector<std::size_t> widths;  // contiguous chunk per outer index
  std::vector<std::shared_ptr<Node>> inputs;
  for (const auto& p : parts) {
    widths.push_back(p.shape()[axis] * sp.inner);
    inputs.push_back(p.node());
  }
  const std::size_t row = sp.n * sp.inner;
  std::vector<double> out(numel(out_shape));
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const double* src = parts[k].node()->value.data() + o * widths[k];
      std::copy(src, src + widths[k], out.data() + o * row + off);
      off += widths[k];
    }
  }
  return make_result("concat", std::move(out_shape), std::move(out), std::move(inputs),
                     [widths, row, outer = sp.outer](Node& self) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                         Node& in = *self.inputs[k];
                         if (in.requires_grad) {
                           auto& g = in.grad_buffer();
                           for (std::size_t o = 0; o < outer; ++o)
                             for (std::size_t j = 0; j < widths[k]; ++j)
                               g[o * widths[k] + j] += self.grad[o * row + off + j];
                         }
                         off += widths[k];
                       }
                     });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= a.rank() || start + length > a.shape()[axis] || length == 0)
    shape_fail("slice", {a.shape()},
               "axis " + std::to_string(axis) + " range [" + std::to_string(start) + "," +
                   std::to_string(start + length) + ")");
  const auto sp = split_axis(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  const std::size_t chunk = length * sp.inner;
  const std::size_t row = sp.n * sp.inner;
  const std::size_t off = start * sp.inner;
  std::vector<double> out(sp.outer * chunk);
  const auto& x = a.node()->value;
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy(x.data() + o * row + off, x.data() + o * row + off + chunk, out.data() + o * chunk);
  return make_result("slice", std::move(out_shape), std::move(out), {a.node()},
                     [outer = sp.outer, chunk, row, off](Node& self) {
                       Node& in = *self.inputs[0];
                       if (!in.requires_grad) return;
                       auto& g = in.grad_buffer();
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t j = 0; j < chunk; ++j) g[o * row + off + j] += self.grad[o * chunk + j];
                     });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices) {
  if (table.rank() != 2) shape_fail("embedding", {table.shape()}, "table must be rank 2");
  const std::size_t rows = table.shape()[0], width = table.shape()[1];
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  std::vector<double> out(idx.size() * width);
  const auto& t = table.node()->value;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= rows)
      shape_fail("embedding", {table.shape()}, "index " + std::to_string(idx[i]) + " out of range");
    std::copy(t.data() + idx[i] * width, t.data() + (idx[i] + 1) * width, out.data() + i * width);
  }
  const std::size_t n = idx.size();
  return make_result("embedding", {n, width}, std::move(out), {table.node()},
                     [idx = std::move(idx), width](Node& self) {
                       Node& in = *self.inputs[0];
                       if (!in.requires_grad) return;
                       auto& g = in.grad_buffer();
                       for (std::size_t i = 0; i < idx.size(); ++i)
                         for (std::size_t j = 0; j < width; ++j) g[idx[i] * width + j] += self.grad[i * width + j];
                     });
}

Tensor dropout(const Tensor& a, double p, bool train, std::mt19937_64& rng) {
  if (!train || p <= 0.0) return a;
  if (p >= 1.0) throw ConfigError("dropout: probability must be < 1");
  std::bernoulli_distribution keep(1.0 - p);
  const double s = 1.0 / (1.0 - p);
  std::vector<double> mask(a.size());
  for (auto& m : mask) m = keep(rng) ? s : 0.0;
  const auto& x = a.node()->value;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * mask[i];
  return make_result("dropout", a.shape(), std::move(out), {a.node()}, [mask = std::move(mask)](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t dilation) {
  if (x.rank() != 3 || weight.rank() != 3 || weight.shape()[1] != x.shape()[1] ||
      bias.shape() != Shape{weight.shape()[0]} || dilation == 0)
    shape_fail("conv1d", {x.shape(), weight.shape(), bias.shape()});
  const std::size_t batch = x.shape()[0], cin = x.shape()[1], len = x.shape()[2];
  const std::size_t cout = weight.shape()[0], ksize = weight.shape()[2];
  const std::size_t patch = cin * ksize;
  // im2col: cols[b] is [Cin*K, T]; column t holds the causal receptive patch.
  auto cols = std::make_shared<std::vector<double>>(batch * patch * len, 0.0);
  const auto& xv = x.node()->value;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < cin; ++c)
      for (std::size_t j = 0; j < ksize; ++j) {
        const std::size_t shift = (ksize - 1 - j) * dilation;
        double* dst = cols->data() + (b * patch + c * ksize + j) * len;
        const double* src = xv.data() + (b * cin + c) * len;
        for (std::size_t t = shift; t < len; ++t) dst[t] = src[t - shift];
      }
  std::vector<double> out(batch * cout * len);
  ConstMap w(weight.node()->value.data(), cout, patch);
  const auto& bv = bias.node()->value;
  for (std::size_t b = 0; b < batch; ++b) {
    MutMap y(out.data() + b * cout * len, cout, len);
    y.noalias() = w * ConstMap(cols->data() + b * patch * len, patch, len);
    for (std::size_t o = 0; o < cout; ++o) y.row(o).array() += bv[o];
  }
  return make_result("conv1d", {batch, cout, len}, std::move(out), {x.node(), weight.node(), bias.node()},
                     [=](Node& self) {
                       Node& ix = *self.inputs[0];
                       Node& iw = *self.inputs[1];
                       Node& ib = *self.inputs[2];
                       ConstMap wm(iw.value.data(), cout, patch);
                       RowMat gcol(patch, len);
                       for (std::size_t b = 0; b < batch; ++b) {
                         ConstMap gy(self.grad.data() + b * cout * len, cout, len);
                         ConstMap col(cols->data() + b * patch * len, patch, len);
                         if (iw.requires_grad)
                           MutMap(iw.grad_buffer().data(), cout, patch).noalias() += gy * col.transpose();
                         if (ib.requires_grad) {
                           auto& g = ib.grad_buffer();
                           for (std::size_t o = 0; o < cout; ++o) g[o] += gy.row(o).sum();
                         }
                         if (ix.requires_grad) {
                           gcol.noalias() = wm.transpose() * gy;
                           auto& gx = ix.grad_buffer();
                           for (std::size_t c = 0; c < cin; ++c)
                             for (std::size_t j = 0; j < ksize; ++j) {
                               const std::size_t shift = (ksize - 1 - j) * dilation;
                               const double* src = gcol.data() + (c * ksize + j) * len;
                               double* dst = gx.data() + (b * cin + c) * len;
                               for (std::size_t t = shift; t < len; ++t) dst[t - shift] += src[t];
                             }
                         }
                       }
                     });
}

Tensor sum(const Tensor& a) {
  const auto& x = a.node()->value;
  const double s = std::accumulate(x.begin(), x.end(), 0.0);
  return make_result("sum", {}, {s}, {a.node()}, [](Node& self) {
    Node& in = *self.inputs[0];
    if (!in.requires_grad) return;
    auto& g = in.grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::add: return "add";
    case OpKind::multiply: return "multiply";
    case OpKind::matmul: return "matmul";
    case OpKind::conv1d: return "conv1d";
    case OpKind::relu: return "relu";
    case OpKind::elu: return "elu";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::tanh: return "tanh";
    case OpKind::softmax: return "softmax";
    case OpKind::layer_norm: return "layer_norm";
    case OpKind::batch_norm: return "batch_norm";
    case OpKind::concat: return "concat";
    case OpKind::slice: return "slice";
    case OpKind::embedding: return "embedding";
    case OpKind::dropout: return "dropout";
  }
  return "unknown";
}

Tensor forward_op(OpKind kind, std::span<const Tensor> in, OpParams& params) {
  auto need = [&](std::size_t n) {
    if (in.size() != n)
      throw ShapeError(std::string(op_name(kind)) + ": expected " + std::to_string(n) + " inputs, got " +
                       std::to_string(in.size()));
  };
  switch (kind) {
    case OpKind::add: need(2); return add(in[0], in[1]);
    case OpKind::multiply: need(2); return mul(in[0], in[1]);
    case OpKind::matmul: need(2); return matmul(in[0], in[1]);
    case OpKind::conv1d: need(3); return conv1d(in[0], in[1], in[2], params.dilation);
    case OpKind::relu: need(1); return relu(in[0]);
    case OpKind::elu: need(1); return elu(in[0]);
    case OpKind::sigmoid: need(1); return sigmoid(in[0]);
    case OpKind::tanh: need(1); return tanh(in[0]);
    case OpKind::softmax: need(1); return softmax(in[0], params.axis);
    case OpKind::layer_norm: need(3); return layer_norm(in[0], in[1], in[2]);
    case OpKind::batch_norm:
      need(3);
      if (!params.running_mean.defined()) {
        params.running_mean = Tensor::zeros({in[0].dim(1)});
        params.running_var = Tensor::full({in[0].dim(1)}, 1.0);
      }
      return batch_norm(in[0], in[1], in[2], params.running_mean, params.running_var, params.train);
    case OpKind::concat: return concat(std::vector<Tensor>(in.begin(), in.end()), params.axis);
    case OpKind::slice: need(1); return slice(in[0], params.axis, params.start, params.length);
    case OpKind::embedding: need(1); return gather_rows(in[0], params.indices);
    case OpKind::dropout: {
      need(1);
      if (params.train && params.p > 0.0 && params.rng == nullptr)
        throw ConfigError("dropout: train mode requires an RNG");
      std::mt19937_64 unused;
      return dropout(in[0], params.p, params.train, params.rng ? *params.rng : unused);
    }
  }
  throw ShapeError("forward_op: unknown op kind");
}

}  // namespace wwf::ad

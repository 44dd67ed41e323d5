#pragma once

// Dense float64 tensors with reverse-mode automatic differentiation.
//
// Every op returns a new Tensor. When any input requires a gradient the
// output node keeps references to its inputs together with a backward rule,
// so the recorded graph is implicitly a tape: `Tape::record` linearises it
// into topological order and `backward` replays it in reverse.
//
// Broadcasting is limited to scalar-with-tensor and bias-add (the second
// operand's shape is a suffix of the first). Everything else needs an
// explicit reshape.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "wwf/error.hpp"

namespace wwf::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }
  // Zero-initialised on first use.
  std::vector<double>& grad_buffer();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  // Direct write access; intended for leaves (parameters, buffers).
  std::span<double> values_mut() { return node_->value; }
  double item() const;
  double value(std::size_t flat_index) const { return node_->value[flat_index]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> grad_mut() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad.clear(); }

  // New leaf holding a copy of the values, detached from any graph.
  Tensor detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Topologically ordered list of the recorded operations reachable from a root.
// Inputs of every op appear before the op itself.
class Tape {
 public:
  static Tape record(const Tensor& root);
  const std::vector<Node*>& ops() const { return ops_; }
  std::size_t size() const { return ops_.size(); }

 private:
  std::vector<Node*> ops_;
  std::vector<std::shared_ptr<Node>> keep_alive_;
};

// While alive on the current thread, ops record nothing (inference mode).
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

// Accumulates d(loss)/d(leaf) into every requires-grad leaf reachable from
// `loss`. Throws ShapeError for a non-scalar loss.
void backward(const Tensor& loss);

// Attention-style mask over the last two axes; allowed[r * cols + c] != 0
// marks a visible entry.
struct Mask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> allowed;

  // Query row r may see key column c iff c <= r + (cols - rows).
  static Mask causal(std::size_t rows, std::size_t cols);
};

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);

Tensor matmul(const Tensor& a, const Tensor& b);
// [B,M,K] x [B,K,N] -> [B,M,N]
Tensor bmm(const Tensor& a, const Tensor& b);
// Swaps the last two axes of a rank-2 or rank-3 tensor.
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor relu(const Tensor& a);
Tensor elu(const Tensor& a, double alpha = 1.0);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);

Tensor softmax(const Tensor& a, std::size_t axis);
// Softmax over the last axis; masked entries are exactly zero. A fully masked
// row produces all zeros.
Tensor masked_softmax(const Tensor& a, const Mask& mask);

// Normalises over the last axis, then applies per-feature gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Per-channel normalisation of [N,C] or [B,C,T]. In train mode uses batch
// statistics and updates the running buffers in place; eval mode uses the
// running buffers.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, bool train, double momentum = 0.1, double eps = 1e-5);

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);

// Row lookup: table [V,E], indices -> [n,E]. Gradients scatter-add.
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices);

// Inverted dropout. Identity when !train or p == 0.
Tensor dropout(const Tensor& a, double p, bool train, std::mt19937_64& rng);

// Causal dilated 1-D convolution. x [B,Cin,T], weight [Cout,Cin,K], bias [Cout].
// Inputs are left-padded with (K-1)*dilation zeros so the output keeps length T.
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t dilation);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Generic entry point over the primitive op kinds, used by the gradient-check
// harness to sweep every kind uniformly.
enum class OpKind {
  add,
  multiply,
  matmul,
  conv1d,
  relu,
  elu,
  sigmoid,
  tanh,
  softmax,
  layer_norm,
  batch_norm,
  concat,
  slice,
  embedding,
  dropout,
};

struct OpParams {
  std::size_t axis = 0;
  std::size_t start = 0;
  std::size_t length = 0;
  std::size_t dilation = 1;
  double p = 0.1;
  bool train = true;
  std::vector<std::size_t> indices;
  Tensor running_mean;
  Tensor running_var;
  std::mt19937_64* rng = nullptr;
};

const char* op_name(OpKind kind);
Tensor forward_op(OpKind kind, std::span<const Tensor> inputs, OpParams& params);

}  // namespace wwf::ad

#pragma once

#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "touchfuse/tensor.hpp"

namespace touchfuse {

class Tape;

// One recorded operation result. Parameter leaves reference storage owned by
// the caller (ParameterSet) so recording a graph never copies weights.
struct Node {
  Tensor owned;
  const Tensor* external = nullptr;
  std::vector<double> grad;  // allocated on demand, same length as value
  bool needs_grad = false;
  const char* op = "";
  std::function<void(const Node&)> backward;

  const Tensor& value() const { return external ? *external : owned; }
  void ensure_grad() {
    if (grad.size() != value().numel()) grad.assign(value().numel(), 0.0);
  }
};

// Lightweight handle into a tape.
class Var {
 public:
  Var() = default;
  Var(Node* n, Tape* t) : node_(n), tape_(t) {}
  const Tensor& value() const { return node_->value(); }
  const Shape& shape() const { return node_->value().shape; }
  std::size_t numel() const { return node_->value().numel(); }
  double scalar() const { return node_->value().data[0]; }
  Node* node() const { return node_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return node_ != nullptr; }
  // Gradient of the last backward() w.r.t. this node (zeros if detached).
  std::vector<double> grad() const {
    if (node_->grad.empty()) return std::vector<double>(numel(), 0.0);
    return node_->grad;
  }

 private:
  Node* node_ = nullptr;
  Tape* tape_ = nullptr;
};

// Records a forward pass (define-by-run) and replays it in reverse for
// gradients. A tape instance is confined to one worker; run forward again by
// building a fresh tape.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  // Leaf holding its own data (inputs, constants, labels).
  Var input(Tensor t, bool requires_grad = false, bool check_finite = true);
  // Leaf referencing parameter storage that outlives the tape.
  Var param(const Tensor& stored);
  // Computed node; backward closure is dropped when gradients are off.
  Var make(const char* op, Tensor value, std::vector<Var> parents,
           std::function<void(const Node&)> backward);

  // Seeds d(out)/d(out) = 1 and accumulates gradients into every node that
  // needs them. A second call without a new forward pass is rejected.
  void backward(const Var& scalar_out);

  std::size_t size() const { return nodes_.size(); }

 private:
  std::deque<Node> nodes_;
  bool grad_enabled_ = true;
  bool ran_backward_ = false;
};

// ---- primitives -----------------------------------------------------------
// Shape errors throw std::invalid_argument naming the operation.

Var dense(Var x, Var w, Var b);  // x:[n] w:[m,n] b:[m] -> [m]
// SAME zero padding; stride >= 1. x:[IC,H,W] k:[OC,IC,KH,KW] b:[OC]
Var conv2d(Var x, Var k, Var b, int stride);
// Left (causal) zero padding; receptive field of output t ends at input
// t*stride + stride - 1. x:[IC,L] k:[OC,IC,K] b:[OC]
Var causal_conv1d(Var x, Var k, Var b, int stride);

Var relu(Var x);
Var leaky_relu(Var x, double slope = 0.1);
Var sigmoid(Var x);
Var tanh_v(Var x);
Var softplus(Var x);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_scalar(Var a, double s);
Var mul_scalar(Var a, double s);
Var reciprocal(Var x);  // x must be nonzero
Var log_v(Var x);       // x must be > 0
Var sqrt_v(Var x);      // x must be > 0
Var square(Var x);
Var clamp(Var x, double lo, double hi);

Var upsample2x(Var x);           // nearest neighbor; x:[C,H,W] -> [C,2H,2W]
Var concat(std::vector<Var> xs);  // along dim 0; trailing dims must match
Var reshape(Var x, Shape s);
Var slice(Var x, std::size_t begin, std::size_t len);  // flat contiguous

Var sum(Var x);   // -> [1]
Var mean(Var x);  // -> [1]

// Loss kernels (targets are plain tensors, not differentiated).
Var mse_loss(Var pred, const Tensor& target);
// Binary cross entropy on probabilities; clamps p into [1e-7, 1-1e-7].
Var bce_loss(Var prob, const Tensor& label);
// Mean endpoint error over pixels; pred/target are [2,H,W] flow fields.
Var epe_loss(Var flow, const Tensor& target);

}  // namespace touchfuse

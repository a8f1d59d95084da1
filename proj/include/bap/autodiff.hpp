#pragma once

// Tape-based reverse-mode differentiation.
//
// A Tape owns every intermediate value produced while it is active. Ops append
// nodes in construction order, so reverse iteration over the node list is a
// valid topological order for the backward sweep; each node is visited once.
// Trainable parameters enter the tape by reference and receive their gradient
// in Parameter::grad when backward() runs.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "bap/tensor.hpp"

namespace bap {

// Norm below which normalization refuses to run (and to differentiate).
inline constexpr double kMinNorm = 1e-8;

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;  // same shape as value once backward() has touched it

  void zero_grad();
};

class Tape;

// Lightweight handle to a node on a tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backprop = std::function<void(Tape&, std::size_t self)>;

  // With grad disabled nothing is differentiable and no closures are kept.
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor value);
  // Borrowed constant; `value` must outlive the tape's use of it.
  Var constant_view(const Tensor& value);
  // Trainable leaf. Falls back to a constant view when grad is disabled.
  Var parameter(Parameter& param);

  // Runs the backward sweep from a scalar loss, accumulates into parameter
  // gradients, then clears the tape.
  void backward(Var loss);

  void clear();
  std::size_t size() const { return nodes_.size(); }

  // --- used by op implementations ---
  Var record(Tensor value, std::span<const std::size_t> inputs, Backprop backprop);
  const Tensor& value(std::size_t id) const;
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  // Gradient buffer for node `id`, zero-initialized on first access.
  Tensor& grad(std::size_t id);
  bool has_grad(std::size_t id) const { return !nodes_[id].grad.empty(); }

 private:
  struct Node {
    Tensor owned;
    const Tensor* borrowed = nullptr;
    Tensor grad;
    bool needs_grad = false;
    Parameter* param = nullptr;
    Backprop backprop;
  };

  Var push(Node node);

  bool grad_enabled_;
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Differentiable primitives. Shapes use row-major conventions; images are
// batched as [B x H x W x C].

Var matmul(Var a, Var b);                 // [m x k] * [k x n]
Var linear(Var x, Var weight);            // x[B x in] * weight[out x in]^T
Var add_bias(Var x, Var bias);            // rows of x[B x n] plus bias[n]
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);                    // elementwise
Var scale(Var a, float s);
Var square(Var a);
Var gelu(Var a);
Var sum(Var a);                           // -> [1]
Var mean(Var a);                          // -> [1]
Var reshape(Var a, Shape shape);
Var avg_pool(Var x, std::size_t k);       // [B x H x W x C] -> [B x H/k x W/k x C]

// weight is [Cout x (kh*kw*Cin)] with (ky, kx, cin) ordering, bias is [Cout].
Var conv2d(Var x, Var weight, Var bias, std::size_t kernel, std::size_t stride, std::size_t pad);

// Row-wise unit-L2 normalization of [B x d]; rows under kMinNorm raise
// DegenerateInputError.
Var l2_normalize_rows(Var x);

// Row-wise dot product of [B x d] with a constant [B x d] -> [B].
Var row_dot(Var x, const Tensor& targets);

// Weighted mean softmax cross-entropy: sum_i w[y_i] * ce_i / sum_i w[y_i].
// Empty `class_weights` means uniform.
Var softmax_cross_entropy(Var logits, std::span<const std::uint32_t> labels,
                          std::span<const float> class_weights = {});

}  // namespace bap

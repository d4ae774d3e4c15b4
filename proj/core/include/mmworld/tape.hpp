#pragma once

#include <functional>
#include <vector>

#include "mmworld/tensor.hpp"

namespace mmw {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool ok() const { return tape != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Reverse-mode tape: one graph per training step, confined to one thread.
/// Nodes are appended in topological order; backward() walks them in reverse.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Seeds d(loss)/d(loss)=1 and runs the chain rule. `loss` must be scalar.
  void backward(Var loss);

  const Tensor& value(Var v) const { return nodes_[static_cast<size_t>(v.id)].value; }
  bool requires_grad(Var v) const { return nodes_[static_cast<size_t>(v.id)].requires_grad; }
  /// Null until backward() has deposited a gradient for this node.
  const Tensor* grad(Var v) const;
  size_t size() const { return nodes_.size(); }

  // -- used by op implementations --
  Var make(Tensor value, bool requires_grad, std::function<void()> back);
  void accumulate(int id, const Tensor& contribution);
  Tensor& grad_ref(int id);

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // empty until first contribution
    bool requires_grad = false;
    bool grad_set = false;
    std::function<void()> back;  // empty for leaves/constants
  };
  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

// Differentiable mirrors of the tensor ops. Broadcast gradients are summed
// back to the parent shapes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div_(Var a, Var b);
Var neg(Var a);
Var exp_(Var a);
Var log_(Var a);
Var tanh_(Var a);
Var abs_(Var a);
Var gelu(Var a);
Var clamp(Var a, double lo, double hi);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var matmul(Var a, Var b);
Var softmax(Var a, int axis);
Var layernorm(Var x, Var gamma, Var beta, int axis = -1, double eps = 1e-5);
Var reshape(Var a, Shape shape);
Var permute(Var a, const std::vector<int>& axes);
Var slice(Var a, int axis, int64_t start, int64_t len);
Var concat(const std::vector<Var>& parts, int axis);
Var patch_project(Var x, int pt, int ph, int pw, Var w, Var b);
Var patch_unproject(Var x, int pt, int ph, int pw, Var w, Var b);
Var conv3d_same(Var x, Var w, Var b);
Var nn_upsample(Var x, int ft, int fh, int fw, bool causal_t);
Var avg_pool_hw(Var x, int f);
Var embed_rows(Var table, std::vector<int64_t> ids);
Var rotate_half(Var a);
Var sum_all(Var a);
Var mean_all(Var a);

/// Central-difference check of analytic gradients for a scalar-valued graph.
/// Builds the graph via `f` with the given parameter tensors as grad leaves,
/// then compares each analytic gradient entry against
/// (f(p+eps e) - f(p-eps e)) / (2 eps), relative to max(|a|,|n|,1e-8).
/// When max_checks_per_param > 0, a seeded random subset of coordinates is
/// checked per parameter. Returns the maximum relative error seen.
double grad_check(const std::function<Var(Tape&, const std::vector<Var>&)>& f,
                  const std::vector<Tensor>& params, double eps = 1e-3,
                  int max_checks_per_param = -1, uint64_t seed = 0);

}  // namespace mmw

#pragma once

// Define-by-run reverse-mode differentiation over dense double tensors.
//
// Every op evaluates eagerly and records a node holding its value, its
// parents and a closure that pushes the node's gradient into the parents.
// Gradients are only propagated into nodes that require them, so constant
// inputs (mixture waveforms, fixed filterbanks) never allocate a gradient.
// A graph is owned by the Var handles that reference it and is confined to
// one thread; Parameters may be shared read-only between graphs.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "aetsep/tensor.hpp"

namespace aetsep::ad {

// Guard added to the denominator of div_guarded.
inline constexpr double kDivEpsilon = 1e-8;

struct Node {
  Tensor value;
  Tensor grad;  // empty until something flows into it
  std::string op;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;
  bool requires_grad = false;

  Tensor& ensure_grad();
  bool has_grad() const { return !grad.empty(); }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  // Zero-filled copy of the value shape if no gradient reached this node.
  Tensor grad() const;
  bool requires_grad() const { return node_->requires_grad; }
  const std::string& op() const { return node_->op; }
  const Tensor::Shape& shape() const { return node_->value.shape(); }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

// Leaf holding a fixed value; never receives a gradient.
Var constant(Tensor value);
// Leaf that accumulates gradients across backward calls.
Var variable(Tensor value);

// Builds a node for a custom op. `backward` is invoked with the finished
// node once its gradient is known and must accumulate into the parents'
// ensure_grad() for parents that require a gradient. Throws NumericError if
// `value` is not finite.
Var make_op(std::string op, Tensor value, std::vector<Var> parents,
            std::function<void(Node&)> backward);

// Named trainable (or frozen) tensor persisting across graph rebuilds.
class Parameter {
 public:
  Parameter(std::string name, Tensor value, bool trainable);

  const std::string& name() const { return name_; }
  bool trainable() const { return trainable_; }
  Var var() const { return var_; }
  Tensor& value() { return var_.node()->value; }
  const Tensor& value() const { return var_.node()->value; }
  // Accumulated gradient; empty for frozen parameters.
  const Tensor& grad() const { return var_.node()->grad; }
  Tensor& mutable_grad() { return var_.node()->ensure_grad(); }
  void zero_grad();

 private:
  std::string name_;
  bool trainable_;
  Var var_;
};

using ParameterPtr = std::shared_ptr<Parameter>;

// Reverse pass from a scalar root. Gradients of intermediate nodes are
// recomputed from scratch; leaf gradients accumulate.
void backward(const Var& root);

// ---- operators -----------------------------------------------------------

// signal: [L], filters: [K x N] -> [T x K], T = (L - N) / stride + 1.
// out[n, k] = sum_t signal[n * stride + t] * filters[k, t].
Var conv1d(const Var& signal, const Var& filters, std::size_t stride);

// grid: [T x K], filters: [K x N] -> [(T - 1) * stride + N] by overlap-add.
// Exact adjoint of conv1d in its signal argument.
Var transposed_conv1d(const Var& grid, const Var& filters, std::size_t stride);

// Per-channel causal filtering along frames.
// grid: [T x K], filters: [K x Ls]; out[n, k] = sum_j filters[k, j] *
// grid[n - j, k], frames before 0 read as zero.
Var causal_depthwise_conv(const Var& grid, const Var& filters);

// out = input * weight + bias (bias broadcast over rows).
// input: [T x Din], weight: [Din x Dout], bias: [Dout].
Var dense(const Var& input, const Var& weight, const Var& bias);
Var matmul(const Var& a, const Var& b);

Var abs(const Var& a);  // subgradient 0 at exactly 0
Var softplus(const Var& a);
Var sigmoid(const Var& a);
Var square(const Var& a);
Var sqrt(const Var& a);  // backward is 0 where the input is exactly 0
Var neg(const Var& a);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
// a / (b + eps)
Var div_guarded(const Var& a, const Var& b, double eps = kDivEpsilon);
// max(a, floor) elementwise; gradient passes where a > floor.
Var clamp_min(const Var& a, double floor);

Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);

Var reduce_sum(const Var& a);
Var mean(const Var& a);
Var dot(const Var& a, const Var& b);

// Columns [begin, end) of a rank-2 tensor.
Var slice_cols(const Var& a, std::size_t begin, std::size_t end);
// [T x K] -> [T x 2K] with both halves equal to the input.
Var duplicate_cols(const Var& a);

// ---- gradient checking ---------------------------------------------------

struct GradCheckOptions {
  double delta = 1e-6;
  double tolerance = 1e-5;
  // Denominator floor for relative error: |a - n| / max(|a|, |n|, floor).
  double scale_floor = 1e-8;
  // 0 probes every element; otherwise an evenly spaced subset.
  std::size_t max_probes_per_parameter = 0;
  // Returns true for elements that must not be probed (nondifferentiable
  // points). Receives the parameter index, element index and current value.
  std::function<bool(std::size_t, std::size_t, double)> exclude;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t probed = 0;
  std::size_t excluded = 0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool passed() const;
  double max_rel_error() const;
};

// Compares reverse-mode gradients of the scalar built by `f` against central
// differences (f(p + d) - f(p - d)) / 2d. `f` must rebuild its graph from the
// parameters' current values on every call.
GradCheckReport grad_check(const std::function<Var()>& f,
                           std::span<const ParameterPtr> params,
                           const GradCheckOptions& options = {});

}  // namespace aetsep::ad

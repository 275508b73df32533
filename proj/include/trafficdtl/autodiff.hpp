#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape records every operation applied to Vars created from it. Node ids are
// assigned in creation order, which is a topological order of the DAG, so the
// backward pass is a single reverse sweep over the tape.

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "trafficdtl/tensor.hpp"

namespace trafficdtl {

/// Named trainable tensor owned by a layer.
struct Parameter {
  std::string name;
  Tensor value;
};

using GradientMap = std::unordered_map<const Parameter*, Tensor>;

enum class OpKind {
  constant,
  variable,
  parameter,
  matmul,
  add,
  sub,
  mul,
  scale,
  sigmoid,
  tanh,
  leaky_relu,
  conv2d_same,
  avgpool2d,
  concat,
  slice,
  reshape,
  swap01,
  select_columns,
  sum,
  mean,
};

const char* op_name(OpKind kind);

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }
  void set_check_finite(bool on) noexcept { check_finite_ = on; }

  /// Leaf that never receives a gradient.
  Var constant(Tensor value);
  /// Leaf whose gradient is retained and readable via grad().
  Var variable(Tensor value);
  /// Leaf bound to a layer parameter. Untrainable parameters behave as constants.
  Var parameter(const Parameter& param, bool trainable = true);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  OpKind kind(Var v) const { return nodes_.at(v.id).kind; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient of the last backward() target with respect to v (zeros if unreached).
  Tensor grad(Var v) const;

  /// Runs the reverse sweep from a scalar loss. Returns d(loss)/d(param) for every
  /// trainable parameter reached; also retained per node for grad().
  GradientMap backward(Var loss);

  // Internal API used by the op implementations.
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;
  Var push(OpKind kind, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward,
           std::vector<Tensor> cache = {});
  bool any_requires_grad(std::initializer_list<Var> vars) const;
  bool any_requires_grad(const std::vector<Var>& vars) const;
  /// Gradient buffer of a node, zero-initialized on first access.
  Tensor& grad_buffer(std::size_t id);
  const Tensor& node_value(std::size_t id) const { return nodes_[id].value; }
  const std::vector<Tensor>& node_cache(std::size_t id) const { return nodes_[id].cache; }
  const std::vector<std::size_t>& node_inputs(std::size_t id) const { return nodes_[id].inputs; }
  bool node_requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    OpKind kind;
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    std::vector<Tensor> cache;
    BackwardFn backward;
    const Parameter* param = nullptr;
    bool requires_grad = false;
  };

  bool grad_enabled_;
  bool check_finite_ = true;
  std::deque<Node> nodes_;  // stable element addresses across push
};

// --- operations -----------------------------------------------------------
//
// Shape rules:
//   matmul:      [n,k] x [k,m] -> [n,m]; with transpose_b, b is [m,k]
//   add:         equal shapes, or b equal to the trailing dims of a (bias)
//   sub, mul:    equal shapes
//   conv2d_same: [B,h,w,cin] (or [h,w,cin]) with filters [f,kh,kw,cin], bias [f]
//   avgpool2d:   [B,h,w,c] (or [h,w,c]) -> floor(h/ph), floor(w/pw)
//   concat:      equal shapes except along axis
//   swap01:      exchanges the two leading axes
//   select_columns: gathers indices along the last axis

Var matmul(Var a, Var b, bool transpose_b = false);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var sigmoid(Var a);
Var tanh(Var a);
Var leaky_relu(Var a, double negative_slope = 0.01);
Var conv2d_same(Var input, Var filters, Var bias);
Var avgpool2d(Var input, std::size_t pool_h, std::size_t pool_w);
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(Var a, std::size_t axis, std::size_t start, std::size_t length);
Var reshape(Var a, Shape shape);
Var swap01(Var a);
Var select_columns(Var a, std::vector<std::size_t> columns);
Var sum(Var a);
Var mean(Var a);

/// mean((y - t)^2)
Var mse_loss(Var prediction, Var target);

// Plain-value helpers shared by layers and attribution code.
namespace detail {
struct ConvGeometry {
  std::size_t batch, h, w, cin, filters, kh, kw, pad_top, pad_left;
  std::size_t rows() const { return batch * h * w; }
  std::size_t patch() const { return kh * kw * cin; }
};
ConvGeometry conv_geometry(const Shape& input, const Shape& filters);
/// Patch matrix [B*h*w, kh*kw*cin] of the zero-padded input.
Tensor im2col(const Tensor& input, const ConvGeometry& g);
/// Scatter-add of a patch matrix back onto the input grid.
void col2im_add(const Tensor& cols, const ConvGeometry& g, std::span<double> out);
}  // namespace detail

}  // namespace trafficdtl

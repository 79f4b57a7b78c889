#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <vector>

#include "rvp/tensor.hpp"

namespace rvp {

/// Handle to a value recorded on a Tape.
struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const { return id != npos; }
};

/// Reverse-mode tape. Values are recorded in evaluation order; backward()
/// replays the pullbacks in reverse. A tape is single-use: after backward()
/// it must be discarded and a new computation recorded.
class Tape {
 public:
  using Pullback = std::function<void(Tape&, std::size_t self)>;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  const Tensor& value(Var v) const;
  bool needs_grad(Var v) const;

  /// Gradient accumulated by backward(); zeros when the node received none.
  Tensor grad(Var v) const;

  void backward(Var loss);
  bool consumed() const { return consumed_; }
  std::size_t size() const { return nodes_.size(); }

  // Op construction interface.
  Var record(Tensor value, std::vector<Var> inputs, Pullback pullback);
  const Tensor& out_grad(std::size_t self) const { return nodes_[self].grad; }
  /// Mutable gradient buffer of `v`, allocated as zeros on first use.
  Tensor& grad_buffer(Var v);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    Pullback pullback;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

/// Differentiable operations. Every op records onto the tape owning its inputs.
namespace ad {

Var conv2d(Tape& t, Var input, Var kernel, PaddingMode pad = PaddingMode::circular);
Var conv2d_adjoint(Tape& t, Var input, Var kernel, PaddingMode pad = PaddingMode::circular);
Var bias_add(Tape& t, Var x, Var bias);
Var relu(Tape& t, Var x);
Var concat_channels(Tape& t, Var a, Var b);

/// a + b; b may be a single-element tensor (broadcast).
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
/// a * b; b may be a single-element tensor (broadcast).
Var mul(Tape& t, Var a, Var b);
/// a / s with s a single-element tensor.
Var div(Tape& t, Var a, Var s);
Var scale(Tape& t, Var a, float c);
Var add_const(Tape& t, Var a, float c);
Var sqrt(Tape& t, Var a);

Var dot(Tape& t, Var a, Var b);
Var l2_norm(Tape& t, Var a);
Var mse(Tape& t, Var a, Var b);
/// |y[floor(h/2), floor(w/2), 0]|
Var l1_center_pixel(Tape& t, Var y);

}  // namespace ad

// Plain (untaped) versions of the scalar losses.
Tensor relu(const Tensor& t);
double mse(const Tensor& a, const Tensor& b);
double l1_center_pixel(const Tensor& y);

}  // namespace rvp

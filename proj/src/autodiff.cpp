#include "rvp/autodiff.hpp"

#include <cmath>

#include "rvp/conv.hpp"

namespace rvp {

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

const Tensor& Tape::value(Var v) const {
  require(v.id < nodes_.size(), "tape: invalid variable");
  return nodes_[v.id].value;
}

bool Tape::needs_grad(Var v) const {
  require(v.id < nodes_.size(), "tape: invalid variable");
  return nodes_[v.id].needs_grad;
}

Tensor Tape::grad(Var v) const {
  require(v.id < nodes_.size(), "tape: invalid variable");
  const Node& n = nodes_[v.id];
  if (n.grad.empty() && !n.value.empty()) return Tensor::zeros(n.value.shape());
  return n.grad;
}

Tensor& Tape::grad_buffer(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.size() != n.value.size()) n.grad = Tensor::zeros(n.value.shape());
  return n.grad;
}

Var Tape::record(Tensor value, std::vector<Var> inputs, Pullback pullback) {
  require(!consumed_, "tape: cannot record after backward(); start a new tape");
  bool ng = false;
  for (Var in : inputs) ng = ng || needs_grad(in);
  Node n;
  n.value = std::move(value);
  n.needs_grad = ng;
  if (ng) n.pullback = std::move(pullback);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

void Tape::backward(Var loss) {
  require(!consumed_, "tape: backward() called twice on the same recording");
  require(value(loss).size() == 1, "tape: backward() needs a scalar loss, got shape " +
                                       shape_str(value(loss).shape()));
  consumed_ = true;
  grad_buffer(loss)[0] = 1.0f;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || !n.pullback || n.grad.empty()) continue;
    n.pullback(*this, i);
  }
}

namespace ad {
namespace {

bool is_scalar(const Tensor& t) { return t.size() == 1; }

ConvGeometry geometry_of(const Tensor& x, const Tensor& k, PaddingMode pad, bool adjoint) {
  require(k.rank() == 4, "conv: kernel must be rank 4, got " + shape_str(k.shape()));
  return conv_geometry(x, KernelTensor(k), pad, adjoint);
}

}  // namespace

Var conv2d(Tape& t, Var input, Var kernel, PaddingMode pad) {
  const Tensor& x = t.value(input);
  const Tensor& k = t.value(kernel);
  const ConvGeometry g = geometry_of(x, k, pad, false);
  Tensor out = Tensor::map(g.h, g.w, g.m_out);
  conv2d_forward<float>(g, x.data(), k.data(), out.data());
  return t.record(std::move(out), {input, kernel}, [=](Tape& tp, std::size_t self) {
    const Tensor& gy = tp.out_grad(self);
    if (tp.needs_grad(input))
      conv2d_adjoint<float>(g, gy.data(), tp.value(kernel).data(), tp.grad_buffer(input).data());
    if (tp.needs_grad(kernel))
      conv2d_kernel_grad<float>(g, tp.value(input).data(), gy.data(), tp.grad_buffer(kernel).data());
  });
}

Var conv2d_adjoint(Tape& t, Var input, Var kernel, PaddingMode pad) {
  const Tensor& u = t.value(input);
  const Tensor& k = t.value(kernel);
  const ConvGeometry g = geometry_of(u, k, pad, true);
  Tensor out = Tensor::map(g.h, g.w, g.m_in);
  conv2d_adjoint<float>(g, u.data(), k.data(), out.data());
  return t.record(std::move(out), {input, kernel}, [=](Tape& tp, std::size_t self) {
    const Tensor& gv = tp.out_grad(self);
    if (tp.needs_grad(input))
      conv2d_forward<float>(g, gv.data(), tp.value(kernel).data(), tp.grad_buffer(input).data());
    // <u, K * gv> is the same bilinear form, with gv in the role of the forward input.
    if (tp.needs_grad(kernel))
      conv2d_kernel_grad<float>(g, gv.data(), tp.value(input).data(), tp.grad_buffer(kernel).data());
  });
}

Var bias_add(Tape& t, Var x, Var bias) {
  const Tensor& xv = t.value(x);
  const Tensor& b = t.value(bias);
  require(xv.rank() == 3 && b.size() == xv.dim(2), "bias_add: bias length must equal channel count");
  Tensor out = xv;
  const std::size_t c = b.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % c];
  return t.record(std::move(out), {x, bias}, [=](Tape& tp, std::size_t self) {
    const Tensor& gy = tp.out_grad(self);
    if (tp.needs_grad(x)) {
      Tensor& gx = tp.grad_buffer(x);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    }
    if (tp.needs_grad(bias)) {
      Tensor& gb = tp.grad_buffer(bias);
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i % c] += gy[i];
    }
  });
}

Var relu(Tape& t, Var x) {
  Tensor out = rvp::relu(t.value(x));
  return t.record(std::move(out), {x}, [=](Tape& tp, std::size_t self) {
    const Tensor& gy = tp.out_grad(self);
    const Tensor& xv = tp.value(x);
    Tensor& gx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < gy.size(); ++i)
      if (xv[i] > 0.0f) gx[i] += gy[i];
  });
}

Var concat_channels(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  Tensor out = rvp::concat_channels(av, bv);
  const std::size_t ca = av.dim(2), cb = bv.dim(2), hw = av.dim(0) * av.dim(1);
  return t.record(std::move(out), {a, b}, [=](Tape& tp, std::size_t self) {
    const Tensor& gy = tp.out_grad(self);
    if (tp.needs_grad(a)) {
      Tensor& ga = tp.grad_buffer(a);
      for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t c = 0; c < ca; ++c) ga[p * ca + c] += gy[p * (ca + cb) + c];
    }
    if (tp.needs_grad(b)) {
      Tensor& gb = tp.grad_buffer(b);
      for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t c = 0; c < cb; ++c) gb[p * cb + c] += gy[p * (ca + cb) + ca + c];
    }
  });
}

Var add(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  const bool bcast = !av.same_shape(bv);
  require(!bcast || is_scalar(bv), "add: shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bcast ? bv[0] : bv[i];
  return t.record(std::move(out), {a, b}, [=](Tape& tp, std::size_t self) {
    const Tensor& gy = tp.out_grad(self);
    if (tp.needs_grad(a)) {
      Tensor& ga = tp.grad_buffer(a);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
    }
    if (tp.needs_grad(b)) {
      Tensor& gb = tp.grad_buffer(b);
      if (bcast) {
        double s = 0.0;
        for (float g : gy.data()) s += g;
        gb[0] += static_cast<float>(s);
      } else {
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i];
      }
    }
  });
}

Var sub(Tape& t, Var a, Var b) { return add(t, a, scale(t, b, -1.0f)); }

Var mul(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  const bool bcast = !av.same_shape(bv);
  require(!bcast || is_scalar(bv), "mul: shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bcast ? bv[0] : bv[i];
  return t.record(std::move(out), {a, b}, [=](Tape& tp, std::size_t self) {
    const Tensor& gy = tp.out_grad(self);
    const Tensor& A = tp.value(a);
    const Tensor& B = tp.value(b);
    if (tp.needs_grad(a)) {
      Tensor& ga = tp.grad_buffer(a);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * (bcast ? B[0] : B[i]);
    }
    if (tp.needs_grad(b)) {
      Tensor& gb = tp.grad_buffer(b);
      if (bcast) {
        double s = 0.0;
        for (std::size_t i = 0; i < gy.size(); ++i) s += static_cast<double>(gy[i]) * A[i];
        gb[0] += static_cast<float>(s);
      } else {
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * A[i];
      }
    }
  });
}

Var div(Tape& t, Var a, Var s) {
  require(is_scalar(t.value(s)), "div: divisor must be a scalar");
  const float sv = t.value(s)[0];
  Tensor out = t.value(a);
  for (float& v : out.vec()) v /= sv;
  return t.record(std::move(out), {a, s}, [=](Tape& tp, std::size_t self) {
    const Tensor& gy = tp.out_grad(self);
    const Tensor& A = tp.value(a);
    if (tp.needs_grad(a)) {
      Tensor& ga = tp.grad_buffer(a);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] / sv;
    }
    if (tp.needs_grad(s)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < gy.size(); ++i) acc += static_cast<double>(gy[i]) * A[i];
      tp.grad_buffer(s)[0] += static_cast<float>(-acc / (static_cast<double>(sv) * sv));
    }
  });
}

Var scale(Tape& t, Var a, float c) {
  Tensor out = rvp::scaled(t.value(a), c);
  return t.record(std::move(out), {a}, [=](Tape& tp, std::size_t self) {
    const Tensor& gy = tp.out_grad(self);
    Tensor& ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += c * gy[i];
  });
}

Var add_const(Tape& t, Var a, float c) {
  Tensor out = t.value(a);
  for (float& v : out.vec()) v += c;
  return t.record(std::move(out), {a}, [=](Tape& tp, std::size_t self) {
    const Tensor& gy = tp.out_grad(self);
    Tensor& ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
  });
}

Var sqrt(Tape& t, Var a) {
  Tensor out = t.value(a);
  for (float& v : out.vec()) v = std::sqrt(v);
  return t.record(std::move(out), {a}, [=](Tape& tp, std::size_t self) {
    const Tensor& gy = tp.out_grad(self);
    const Tensor& y = tp.value(Var{self});
    Tensor& ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < gy.size(); ++i)
      if (y[i] > 0.0f) ga[i] += gy[i] * 0.5f / y[i];
  });
}

Var dot(Tape& t, Var a, Var b) {
  const double d = rvp::dot(t.value(a).data(), t.value(b).data());
  return t.record(Tensor::scalar(static_cast<float>(d)), {a, b}, [=](Tape& tp, std::size_t self) {
    const float g = tp.out_grad(self)[0];
    if (tp.needs_grad(a)) {
      const Tensor& B = tp.value(b);
      Tensor& ga = tp.grad_buffer(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * B[i];
    }
    if (tp.needs_grad(b)) {
      const Tensor& A = tp.value(a);
      Tensor& gb = tp.grad_buffer(b);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g * A[i];
    }
  });
}

Var l2_norm(Tape& t, Var a) {
  const double nrm = rvp::l2_norm(t.value(a).data());
  return t.record(Tensor::scalar(static_cast<float>(nrm)), {a}, [=](Tape& tp, std::size_t self) {
    if (nrm == 0.0) return;
    const float g = tp.out_grad(self)[0];
    const Tensor& A = tp.value(a);
    Tensor& ga = tp.grad_buffer(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += static_cast<float>(g * A[i] / nrm);
  });
}

Var mse(Tape& t, Var a, Var b) {
  const double m = rvp::mse(t.value(a), t.value(b));
  return t.record(Tensor::scalar(static_cast<float>(m)), {a, b}, [=](Tape& tp, std::size_t self) {
    const float g = tp.out_grad(self)[0];
    const Tensor& A = tp.value(a);
    const Tensor& B = tp.value(b);
    const float c = 2.0f * g / static_cast<float>(A.size());
    if (tp.needs_grad(a)) {
      Tensor& ga = tp.grad_buffer(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += c * (A[i] - B[i]);
    }
    if (tp.needs_grad(b)) {
      Tensor& gb = tp.grad_buffer(b);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= c * (A[i] - B[i]);
    }
  });
}

Var l1_center_pixel(Tape& t, Var y) {
  const Tensor& yv = t.value(y);
  require(yv.rank() == 3, "l1_center_pixel: expected a [h,w,c] map");
  const std::size_t idx = ((yv.dim(0) / 2) * yv.dim(1) + yv.dim(1) / 2) * yv.dim(2);
  const float p = yv[idx];
  return t.record(Tensor::scalar(std::fabs(p)), {y}, [=](Tape& tp, std::size_t self) {
    const float g = tp.out_grad(self)[0];
    const float s = p > 0.0f ? 1.0f : (p < 0.0f ? -1.0f : 0.0f);
    tp.grad_buffer(y)[idx] += g * s;
  });
}

}  // namespace ad

Tensor relu(const Tensor& t) {
  Tensor r = t;
  for (float& v : r.vec()) v = v < 0.0f ? 0.0f : v;  // NaN propagates
  return r;
}

double mse(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "mse: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return a.size() ? s / static_cast<double>(a.size()) : 0.0;
}

double l1_center_pixel(const Tensor& y) {
  require(y.rank() == 3, "l1_center_pixel: expected a [h,w,c] map");
  return std::fabs(y.at(y.dim(0) / 2, y.dim(1) / 2, 0));
}

}  // namespace rvp

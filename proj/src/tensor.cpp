#include "rvp/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace rvp {

void require(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  require(data_.size() == shape_numel(shape_),
          "tensor data length " + std::to_string(data_.size()) + " does not match shape " + shape_str(shape_));
}

std::size_t Tensor::dim(std::size_t i) const {
  require(i < shape_.size(), "dimension index out of range for shape " + shape_str(shape_));
  return shape_[i];
}

float Tensor::item() const {
  require(data_.size() == 1, "item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

bool Tensor::all_finite() const {
  for (float v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor Tensor::reshaped(Shape s) const {
  require(shape_numel(s) == data_.size(), "cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
  return Tensor(std::move(s), data_);
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

std::string to_string(PaddingMode p) { return p == PaddingMode::circular ? "circular" : "zero"; }

PaddingMode padding_from_string(const std::string& s) {
  if (s == "circular") return PaddingMode::circular;
  if (s == "zero") return PaddingMode::zero;
  throw Error("unknown padding mode '" + s + "' (expected circular|zero)");
}

KernelTensor::KernelTensor(std::size_t k, std::size_t m_in, std::size_t m_out, float fill)
    : k_(k), m_in_(m_in), m_out_(m_out), w_(Shape{k, k, m_in, m_out}, fill) {
  require(k % 2 == 1, "kernel size must be odd, got " + std::to_string(k));
  require(m_in > 0 && m_out > 0, "kernel channel counts must be positive");
}

KernelTensor::KernelTensor(Tensor weights) : w_(std::move(weights)) {
  require(w_.rank() == 4, "kernel weights must be rank 4, got " + shape_str(w_.shape()));
  require(w_.dim(0) == w_.dim(1), "kernel must be square, got " + shape_str(w_.shape()));
  k_ = w_.dim(0);
  m_in_ = w_.dim(2);
  m_out_ = w_.dim(3);
  require(k_ % 2 == 1, "kernel size must be odd, got " + std::to_string(k_));
}

KernelTensor KernelTensor::identity(std::size_t k, std::size_t m) {
  KernelTensor K(k, m, m);
  for (std::size_t c = 0; c < m; ++c) K.at(k / 2, k / 2, c, c) = 1.0f;
  return K;
}

double KernelTensor::frobenius() const { return l2_norm(w_.data()); }

double dot(std::span<const float> a, std::span<const float> b) {
  require(a.size() == b.size(), "dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

double l2_norm(std::span<const float> a) { return std::sqrt(dot(a, a)); }

Tensor scaled(const Tensor& t, float s) {
  Tensor r = t;
  for (float& v : r.vec()) v *= s;
  return r;
}

Tensor axpby(float a, const Tensor& x, float b, const Tensor& y) {
  require(x.same_shape(y), "axpby: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  Tensor r = x;
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = a * x[i] + b * y[i];
  return r;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) && a.dim(1) == b.dim(1),
          "concat_channels: incompatible maps " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t h = a.dim(0), w = a.dim(1), ca = a.dim(2), cb = b.dim(2);
  Tensor r = Tensor::map(h, w, ca + cb);
  for (std::size_t p = 0; p < h * w; ++p) {
    std::copy_n(a.data().data() + p * ca, ca, r.data().data() + p * (ca + cb));
    std::copy_n(b.data().data() + p * cb, cb, r.data().data() + p * (ca + cb) + ca);
  }
  return r;
}

}  // namespace rvp

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rvp {

/// Raised for every contract violation (bad shapes, invalid configs, malformed files).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

/// Dense row-major float32 tensor.
///
/// Feature maps use the layout [H, W, C]; convolution kernels use
/// [k, k, C_in, C_out]. Gradient buffers are owned by the autodiff tape,
/// not by the tensor itself.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor scalar(float v) { return Tensor(Shape{}, std::vector<float>{v}); }
  /// Feature map [h, w, c].
  static Tensor map(std::size_t h, std::size_t w, std::size_t c, float fill = 0.0f) {
    return Tensor(Shape{h, w, c}, fill);
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  std::vector<float>& vec() { return data_; }
  const std::vector<float>& vec() const { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  /// Element of a rank-3 feature map.
  float& at(std::size_t y, std::size_t x, std::size_t c) {
    return data_[(y * shape_[1] + x) * shape_[2] + c];
  }
  float at(std::size_t y, std::size_t x, std::size_t c) const {
    return data_[(y * shape_[1] + x) * shape_[2] + c];
  }

  /// Value of a single-element tensor.
  float item() const;

  bool all_finite() const;
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Tensor reshaped(Shape s) const;
  void fill(float v);

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<float> data_;
};

/// Boundary handling of the convolution. Circular is the default everywhere
/// since it makes the layer operator a block matrix of doubly-block-circulant
/// matrices.
enum class PaddingMode { circular, zero };

std::string to_string(PaddingMode p);
PaddingMode padding_from_string(const std::string& s);

/// Convolution weights [k, k, m_in, m_out]; k odd.
class KernelTensor {
 public:
  KernelTensor() = default;
  KernelTensor(std::size_t k, std::size_t m_in, std::size_t m_out, float fill = 0.0f);
  explicit KernelTensor(Tensor weights);

  /// Single-channel-pair identity: centre tap is the identity matrix.
  static KernelTensor identity(std::size_t k, std::size_t m);

  std::size_t k() const { return k_; }
  std::size_t m_in() const { return m_in_; }
  std::size_t m_out() const { return m_out_; }

  Tensor& weights() { return w_; }
  const Tensor& weights() const { return w_; }

  float& at(std::size_t dy, std::size_t dx, std::size_t i, std::size_t o) {
    return w_[((dy * k_ + dx) * m_in_ + i) * m_out_ + o];
  }
  float at(std::size_t dy, std::size_t dx, std::size_t i, std::size_t o) const {
    return w_[((dy * k_ + dx) * m_in_ + i) * m_out_ + o];
  }

  double frobenius() const;

 private:
  std::size_t k_ = 0, m_in_ = 0, m_out_ = 0;
  Tensor w_;
};

// Elementwise helpers used outside the tape.
double dot(std::span<const float> a, std::span<const float> b);
double l2_norm(std::span<const float> a);
Tensor scaled(const Tensor& t, float s);
Tensor axpby(float a, const Tensor& x, float b, const Tensor& y);

/// Channel concatenation of two maps with equal spatial size.
Tensor concat_channels(const Tensor& a, const Tensor& b);

void require(bool cond, const std::string& msg);

}  // namespace rvp

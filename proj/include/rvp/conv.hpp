#pragma once

#include <cstddef>
#include <span>

#include "rvp/tensor.hpp"

namespace rvp {

/// Geometry of a same-size 2-D convolution over an [h, w, c] map.
struct ConvGeometry {
  std::size_t h = 0, w = 0;
  std::size_t k = 0;
  std::size_t m_in = 0, m_out = 0;
  PaddingMode pad = PaddingMode::circular;
};

// Raw kernels. All three accumulate (+=) into `out`, which the caller zeroes.
//
// Forward is a cross-correlation:
//   out[y,x,o] = sum_{dy,dx,i} in[y+dy-r, x+dx-r, i] * K[dy,dx,i,o],  r = k/2
// with indices wrapped (circular) or dropped (zero padding).

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> kernel, std::span<T> out);

/// Exact adjoint of conv2d_forward: maps [h,w,m_out] back to [h,w,m_in].
template <typename T>
void conv2d_adjoint(const ConvGeometry& g, std::span<const T> in, std::span<const T> kernel, std::span<T> out);

/// Gradient of <u, K*v> with respect to K: gk[dy,dx,i,o] += sum_{y,x} v[y+dy-r,x+dx-r,i] u[y,x,o].
template <typename T>
void conv2d_kernel_grad(const ConvGeometry& g, std::span<const T> v, std::span<const T> u, std::span<T> gk);

enum class FiniteCheck { reject, unchecked };

/// Same-size convolution of a feature map [n,n,m_in] -> [n,n,m_out].
Tensor conv2d(const Tensor& input, const KernelTensor& kernel, PaddingMode pad = PaddingMode::circular,
              FiniteCheck check = FiniteCheck::reject);

/// Transposed convolution [n,n,m_out] -> [n,n,m_in]; <conv2d(v), u> == <v, conv2d_adjoint(u)>.
Tensor conv2d_adjoint(const Tensor& input, const KernelTensor& kernel, PaddingMode pad = PaddingMode::circular,
                      FiniteCheck check = FiniteCheck::reject);

ConvGeometry conv_geometry(const Tensor& input, const KernelTensor& kernel, PaddingMode pad, bool adjoint);

}  // namespace rvp

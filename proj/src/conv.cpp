#include "rvp/conv.hpp"

#include <vector>

namespace rvp {
namespace {

// Source index for output coordinate `y` and tap `d`; returns false when the
// tap falls into zero padding.
inline bool source_index(std::size_t y, std::size_t d, std::size_t r, std::size_t n, PaddingMode pad,
                         std::size_t& src) {
  const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(y + d) - static_cast<std::ptrdiff_t>(r);
  const auto nn = static_cast<std::ptrdiff_t>(n);
  if (s >= 0 && s < nn) {
    src = static_cast<std::size_t>(s);
    return true;
  }
  if (pad == PaddingMode::zero) return false;
  src = static_cast<std::size_t>(((s % nn) + nn) % nn);
  return true;
}

void check_geometry(const ConvGeometry& g, std::size_t in_size, std::size_t k_size, std::size_t out_size,
                    std::size_t in_ch, std::size_t out_ch) {
  require(in_size == g.h * g.w * in_ch, "conv: input length mismatch");
  require(k_size == g.k * g.k * g.m_in * g.m_out, "conv: kernel length mismatch");
  require(out_size == g.h * g.w * out_ch, "conv: output length mismatch");
}

}  // namespace

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> kernel, std::span<T> out) {
  check_geometry(g, in.size(), kernel.size(), out.size(), g.m_in, g.m_out);
  const std::size_t r = g.k / 2, mi = g.m_in, mo = g.m_out;
  // Sums are carried in double per output pixel: float products, but the
  // rounding of long channel sums no longer depends on summation length.
  std::vector<double> acc(mo);
  for (std::size_t y = 0; y < g.h; ++y) {
    for (std::size_t x = 0; x < g.w; ++x) {
      T* o_row = &out[(y * g.w + x) * mo];
      for (std::size_t o = 0; o < mo; ++o) acc[o] = o_row[o];
      for (std::size_t dy = 0; dy < g.k; ++dy) {
        std::size_t yy;
        if (!source_index(y, dy, r, g.h, g.pad, yy)) continue;
        for (std::size_t dx = 0; dx < g.k; ++dx) {
          std::size_t xx;
          if (!source_index(x, dx, r, g.w, g.pad, xx)) continue;
          const T* i_row = &in[(yy * g.w + xx) * mi];
          const T* kd = &kernel[(dy * g.k + dx) * mi * mo];
          for (std::size_t i = 0; i < mi; ++i) {
            const double v = i_row[i];
            const T* kr = kd + i * mo;
            for (std::size_t o = 0; o < mo; ++o) acc[o] += v * kr[o];
          }
        }
      }
      for (std::size_t o = 0; o < mo; ++o) o_row[o] = static_cast<T>(acc[o]);
    }
  }
}

template <typename T>
void conv2d_adjoint(const ConvGeometry& g, std::span<const T> in, std::span<const T> kernel, std::span<T> out) {
  check_geometry(g, in.size(), kernel.size(), out.size(), g.m_out, g.m_in);
  const std::size_t r = g.k / 2, mi = g.m_in, mo = g.m_out;
  // Transposed taps so the inner loop runs over contiguous input channels.
  std::vector<T> kt(kernel.size());
  for (std::size_t d = 0; d < g.k * g.k; ++d)
    for (std::size_t i = 0; i < mi; ++i)
      for (std::size_t o = 0; o < mo; ++o) kt[(d * mo + o) * mi + i] = kernel[(d * mi + i) * mo + o];
  for (std::size_t y = 0; y < g.h; ++y) {
    for (std::size_t dy = 0; dy < g.k; ++dy) {
      std::size_t yy;
      if (!source_index(y, dy, r, g.h, g.pad, yy)) continue;
      for (std::size_t x = 0; x < g.w; ++x) {
        const T* u_row = &in[(y * g.w + x) * mo];
        for (std::size_t dx = 0; dx < g.k; ++dx) {
          std::size_t xx;
          if (!source_index(x, dx, r, g.w, g.pad, xx)) continue;
          T* o_row = &out[(yy * g.w + xx) * mi];
          const T* kd = &kt[(dy * g.k + dx) * mo * mi];
          for (std::size_t o = 0; o < mo; ++o) {
            const T v = u_row[o];
            const T* kr = kd + o * mi;
            for (std::size_t i = 0; i < mi; ++i) o_row[i] += v * kr[i];
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_kernel_grad(const ConvGeometry& g, std::span<const T> v, std::span<const T> u, std::span<T> gk) {
  check_geometry(g, v.size(), gk.size(), u.size(), g.m_in, g.m_out);
  const std::size_t r = g.k / 2, mi = g.m_in, mo = g.m_out;
  for (std::size_t y = 0; y < g.h; ++y) {
    for (std::size_t dy = 0; dy < g.k; ++dy) {
      std::size_t yy;
      if (!source_index(y, dy, r, g.h, g.pad, yy)) continue;
      for (std::size_t x = 0; x < g.w; ++x) {
        const T* u_row = &u[(y * g.w + x) * mo];
        for (std::size_t dx = 0; dx < g.k; ++dx) {
          std::size_t xx;
          if (!source_index(x, dx, r, g.w, g.pad, xx)) continue;
          const T* v_row = &v[(yy * g.w + xx) * mi];
          T* gd = &gk[(dy * g.k + dx) * mi * mo];
          for (std::size_t i = 0; i < mi; ++i) {
            const T a = v_row[i];
            T* gr = gd + i * mo;
            for (std::size_t o = 0; o < mo; ++o) gr[o] += a * u_row[o];
          }
        }
      }
    }
  }
}

template void conv2d_forward<float>(const ConvGeometry&, std::span<const float>, std::span<const float>,
                                    std::span<float>);
template void conv2d_forward<double>(const ConvGeometry&, std::span<const double>, std::span<const double>,
                                     std::span<double>);
template void conv2d_adjoint<float>(const ConvGeometry&, std::span<const float>, std::span<const float>,
                                    std::span<float>);
template void conv2d_adjoint<double>(const ConvGeometry&, std::span<const double>, std::span<const double>,
                                     std::span<double>);
template void conv2d_kernel_grad<float>(const ConvGeometry&, std::span<const float>, std::span<const float>,
                                        std::span<float>);
template void conv2d_kernel_grad<double>(const ConvGeometry&, std::span<const double>, std::span<const double>,
                                         std::span<double>);

ConvGeometry conv_geometry(const Tensor& input, const KernelTensor& kernel, PaddingMode pad, bool adjoint) {
  require(input.rank() == 3, "conv: input must be a [h,w,c] map, got " + shape_str(input.shape()));
  const std::size_t want = adjoint ? kernel.m_out() : kernel.m_in();
  require(input.dim(2) == want, "conv: input has " + std::to_string(input.dim(2)) + " channels, kernel " +
                                    shape_str(kernel.weights().shape()) + " expects " + std::to_string(want));
  require(input.dim(0) >= kernel.k() && input.dim(1) >= kernel.k(),
          "conv: spatial size " + shape_str(input.shape()) + " smaller than kernel size " +
              std::to_string(kernel.k()));
  return ConvGeometry{input.dim(0), input.dim(1), kernel.k(), kernel.m_in(), kernel.m_out(), pad};
}

Tensor conv2d(const Tensor& input, const KernelTensor& kernel, PaddingMode pad, FiniteCheck check) {
  const ConvGeometry g = conv_geometry(input, kernel, pad, false);
  if (check == FiniteCheck::reject) require(input.all_finite(), "conv2d: non-finite input");
  Tensor out = Tensor::map(g.h, g.w, g.m_out);
  conv2d_forward<float>(g, input.data(), kernel.weights().data(), out.data());
  return out;
}

Tensor conv2d_adjoint(const Tensor& input, const KernelTensor& kernel, PaddingMode pad, FiniteCheck check) {
  const ConvGeometry g = conv_geometry(input, kernel, pad, true);
  if (check == FiniteCheck::reject) require(input.all_finite(), "conv2d_adjoint: non-finite input");
  Tensor out = Tensor::map(g.h, g.w, g.m_in);
  conv2d_adjoint<float>(g, input.data(), kernel.weights().data(), out.data());
  return out;
}

}  // namespace rvp

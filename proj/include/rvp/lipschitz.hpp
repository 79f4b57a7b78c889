#pragma once

#include <string>
#include <vector>

#include "rvp/models.hpp"

namespace rvp {

struct LipschitzFactor {
  std::string label;  ///< layer name, "<name>[state]" for a state-reading slice, or "<block> (residual)"
  double value = 0.0;
  bool residual = false;  ///< bounded by 1 + sigma_a * sigma_b
};

struct LipschitzReport {
  double bound = 0.0;
  std::vector<LipschitzFactor> factors;
  bool has_recurrent_path = false;
  /// At least one residual block sits on the path; the bound uses the
  /// 1 + sigma_a sigma_b extension instead of a plain product.
  bool residual_adjusted = false;
  std::size_t n = 0;
};

/// Upper bound on the Lipschitz constant of h_{t-1} -> h_t (input frame
/// fixed): the product of layer spectral norms along the recurrent path.
///
/// Paths (state-reading slice first):
///   vdncnn frame:   conv0[state], conv1 .. conv{D-1}
///   vdncnn rlsp:    conv0[state], conv1 .. conv{D-2}
///   vdncnn feature: conv1[state], conv2 .. conv{tap}
///   vresnet frame:  head[state], blocks 0..B-1 (residual), tail
///   vresnet rlsp:   head[state], blocks 0..B-1 (residual)
///   vresnet feature: block0.a[state] * block0.b, blocks 1..tap (residual)
/// Feedforward variants have no recurrent path; the bound is 0.
/// Uses the effective (normalized) kernels.
LipschitzReport lipschitz_upper_bound(const RecurrentModel& model, std::size_t n);

/// Input channels [begin, end) of a kernel.
KernelTensor kernel_input_slice(const KernelTensor& K, std::size_t begin, std::size_t end);

/// ||phi(h, x) - phi(h', x)|| / ||h - h'|| for single-slot recurrent models.
double contraction_ratio(RecurrentModel& model, const Tensor& h, const Tensor& h2, const Tensor& x);

}  // namespace rvp

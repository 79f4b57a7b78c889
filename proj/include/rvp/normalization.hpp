#pragma once

#include <cstddef>
#include <string>

#include "rvp/autodiff.hpp"
#include "rvp/spectral.hpp"
#include "rvp/tensor.hpp"

namespace rvp {

enum class NormScheme { none, srn, srnl };

std::string to_string(NormScheme s);
NormScheme norm_scheme_from_string(const std::string& s);

struct NormalizerConfig {
  NormScheme scheme = NormScheme::none;
  double alpha = 1.0;     ///< target spectral norm of the used kernel alpha * K~
  double beta = 1.0;      ///< target stable rank as a fraction of the full dimension
  double epsilon = 1e-12;
  std::size_t power_iters = 1;  ///< power-iteration updates per normalization call
  /// Use the raw gradient of u^T(K~*v) as the rank-one part S1 instead of its
  /// projection-scaled version. Reproduces the unscaled variant; breaks the
  /// S1 _|_ S2 orthogonality and therefore the Frobenius target.
  bool literal_rank_one = false;
  bool normalize_output_conv = true;

  /// Throws on alpha <= 0, beta outside (0,1] or epsilon <= 0.
  void validate() const;
  /// Also checks that the stable-rank target is reachable: beta*m > 1/n^2
  /// (SRNL) or beta*m > 1 (SRN).
  void validate_for_layer(std::size_t m, std::size_t n) const;
};

/// Per-layer persistent state: warm-started power-iteration vectors.
struct NormalizerState {
  PowerIterationState layer;  ///< SRNL
  KernelPowerState kernel;    ///< SRN
  bool initialized = false;
};

/// Creates the warm-start vectors for a kernel on n x n maps.
NormalizerState make_normalizer_state(const KernelTensor& kernel, std::size_t n, std::uint64_t seed);

/// What one normalization call did.
struct NormalizeInfo {
  double sigma = 0.0;       ///< u^T (K * v) before division
  double gamma = 1.0;
  double s1_norm = 0.0;     ///< ||S1||_F
  double s2_norm = 0.0;     ///< ||S2||_F
  double s1_dot_s2 = 0.0;   ///< <S1, S2>
  bool rank_step_applied = false;
  bool s2_zero = false;          ///< already rank one; stable-rank step skipped
  bool target_unreachable = false;  ///< beta*m <= ||S1||^2; stable-rank step skipped
  bool degenerate = false;       ///< power iteration hit a zero kernel
};

/// Layer stable rank normalization. Runs config.power_iters conv/adjoint
/// power-iteration updates on `state`, divides K by u^T(K*v) + eps and, for
/// beta < 1, rescales the part orthogonal to the rank-one kernel S1 so that
/// the layer Frobenius norm becomes sqrt(beta m) n. Returns K~ (without alpha).
/// Computed in double precision.
KernelTensor srnl_normalize(const KernelTensor& K, std::size_t n, const NormalizerConfig& config,
                            NormalizerState& state, NormalizeInfo* info = nullptr);

/// Stable rank normalization of the reshaped [k k m_in, m_out] kernel matrix,
/// S1 = u v^T. Returns K~ (without alpha).
KernelTensor srn_normalize(const KernelTensor& K, const NormalizerConfig& config, NormalizerState& state,
                           NormalizeInfo* info = nullptr);

/// Dispatches on config.scheme and returns the kernel used in the forward
/// pass: alpha * K~, or K itself for scheme none.
KernelTensor normalized_kernel(const KernelTensor& K, std::size_t n, const NormalizerConfig& config,
                               NormalizerState& state, NormalizeInfo* info = nullptr);

/// Differentiable version of normalized_kernel. The power iteration runs on
/// the current value of K outside the tape and u, v are constants; the
/// division by sigma and the stable-rank rescaling are recorded.
Var normalized_kernel(Tape& tape, Var K, std::size_t n, const NormalizerConfig& config, NormalizerState& state,
                      NormalizeInfo* info = nullptr);

/// The kernel S with <S, K'> = u^T (K' * v) for every K' (closed-form spatial
/// correlation of u against v).
KernelTensor rank_one_kernel(const Tensor& u, const Tensor& v, std::size_t k, PaddingMode pad = PaddingMode::circular);

/// Same kernel obtained by differentiating u^T (K' * v) on the tape.
KernelTensor rank_one_kernel_tape(const Tensor& u, const Tensor& v, std::size_t k,
                                  PaddingMode pad = PaddingMode::circular);

Tensor dampen_features(const Tensor& h, float lambda);
KernelTensor dampen_kernel(const KernelTensor& K, float lambda);
/// Scales only input channels [begin, end) of K, i.e. the slice that reads a
/// recurrent state from a channel concatenation.
KernelTensor dampen_kernel_slice(const KernelTensor& K, float lambda, std::size_t begin, std::size_t end);

}  // namespace rvp

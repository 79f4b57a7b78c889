#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "rvp/tensor.hpp"

namespace rvp {

enum class SpectrumSource { power_iteration, fft_exact, materialized };

/// Singular values of the layer operator W of a convolution on n x n maps.
struct LayerSpectrum {
  std::vector<double> sigma;  ///< descending
  double frobenius = 0.0;     ///< ||W||_F
  std::size_t n = 0;
  SpectrumSource source = SpectrumSource::fft_exact;

  double sigma1() const { return sigma.empty() ? 0.0 : sigma.front(); }
};

/// Warm-startable state of the conv/adjoint power iteration.
struct PowerIterationState {
  Tensor u;  ///< [n, n, m_out], unit norm
  std::size_t iterations = 0;
  double sigma = 0.0;  ///< last estimate
};

PowerIterationState make_power_state(const KernelTensor& kernel, std::size_t n, std::uint64_t seed);

struct PowerIterationResult {
  double sigma = 0.0;
  Tensor v;                 ///< [n, n, m_in], unit norm
  bool degenerate = false;  ///< K * v vanished; sigma reported as 0
};

/// Power iteration on the layer operator using convolution and transposed
/// convolution: v = K^T*u / |K^T*u|, u = K*v / |K*v|, repeated `iters` times.
/// Returns u^T (K * v). When `rel_tol` > 0, stops early once the estimate
/// changes by less than rel_tol relative between iterations. Computed in
/// double precision; state.u is rounded back to float.
PowerIterationResult power_iteration_layer(const KernelTensor& kernel, std::size_t n, PowerIterationState& state,
                                           std::size_t iters, PaddingMode pad = PaddingMode::circular,
                                           double rel_tol = 0.0);

/// State for power iteration on the reshaped [k*k*m_in, m_out] kernel matrix.
struct KernelPowerState {
  std::vector<double> u;  ///< length m_out, unit norm
  std::size_t iterations = 0;
  double sigma = 0.0;
};

KernelPowerState make_kernel_power_state(const KernelTensor& kernel, std::uint64_t seed);

struct KernelPowerResult {
  double sigma = 0.0;
  std::vector<double> v;  ///< length k*k*m_in
  bool degenerate = false;
};

/// Matrix power iteration on Reshape(K, [k k m_in, m_out])^T.
KernelPowerResult power_iteration_kernel2d(const KernelTensor& kernel, KernelPowerState& state, std::size_t iters);

/// Cold-start sigma_1 of the layer with a convergence stopping rule.
double layer_sigma1(const KernelTensor& kernel, std::size_t n, std::size_t max_iters = 2000, double rel_tol = 1e-9,
                    std::uint64_t seed = 1, PaddingMode pad = PaddingMode::circular);

/// Full spectrum of the circular layer: per-frequency SVD of the
/// m_out x m_in transfer matrices of the zero-padded kernel's 2-D DFT.
LayerSpectrum fft_exact_spectrum(const KernelTensor& kernel, std::size_t n);

/// Largest singular value from the exact per-frequency decomposition.
double fft_sigma1(const KernelTensor& kernel, std::size_t n);

/// Dense layer matrix [n*n*m_out, n*n*m_in]; column j is the convolution of the
/// j-th basis map. Limited to n*n*max(m_in, m_out) <= 4096.
Eigen::MatrixXd materialize_operator(const KernelTensor& kernel, std::size_t n,
                                     PaddingMode pad = PaddingMode::circular);

/// Dense SVD of the materialized operator.
LayerSpectrum materialized_spectrum(const KernelTensor& kernel, std::size_t n,
                                    PaddingMode pad = PaddingMode::circular);

/// ||W||_F^2 / sigma_1^2 of a full spectrum.
double stable_rank(const LayerSpectrum& spectrum);

/// Same ratio using ||W||_F = n ||K||_F (circular padding, n >= k).
double stable_rank_layer(const KernelTensor& kernel, std::size_t n, double sigma1);

/// n * ||K||_F.
double layer_frobenius(const KernelTensor& kernel, std::size_t n);

/// Pointwise mean of sorted spectra; shorter spectra are padded with zeros.
std::vector<double> average_sorted_spectra(const std::vector<LayerSpectrum>& spectra);

}  // namespace rvp

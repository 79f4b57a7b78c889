#include <gtest/gtest.h>

#include <Eigen/Dense>

#include "rvp/conv.hpp"
#include "rvp/spectral.hpp"
#include "test_util.hpp"

using namespace rvp;
using rvp::testing::random_map;

namespace {

Eigen::VectorXd as_vec(const Tensor& t) {
  Eigen::VectorXd v(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) v[i] = t[i];
  return v;
}

}  // namespace

TEST(Spectral, MaterializedMatrixReproducesConvAndAdjoint) {
  Rng rng = make_rng(21);
  const KernelTensor K = random_kernel(3, 2, 3, rng);
  const Eigen::MatrixXd W = materialize_operator(K, 8);
  ASSERT_EQ(W.rows(), 8 * 8 * 3);
  ASSERT_EQ(W.cols(), 8 * 8 * 2);
  const Tensor v = random_map(8, 2, rng), u = random_map(8, 3, rng);
  EXPECT_LT((W * as_vec(v) - as_vec(conv2d(v, K))).cwiseAbs().maxCoeff(), 1e-5);
  EXPECT_LT((W.transpose() * as_vec(u) - as_vec(conv2d_adjoint(u, K))).cwiseAbs().maxCoeff(), 1e-5);
  // Zero padding: Toeplitz materialization.
  const Eigen::MatrixXd Z = materialize_operator(K, 8, PaddingMode::zero);
  EXPECT_LT((Z * as_vec(v) - as_vec(conv2d(v, K, PaddingMode::zero))).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(Spectral, MaterializeGuardrail) {
  Rng rng = make_rng(22);
  EXPECT_THROW(materialize_operator(random_kernel(3, 4, 4, rng), 64), Error);
}

TEST(Spectral, IdentityAndScalarKernels) {
  const LayerSpectrum s = fft_exact_spectrum(KernelTensor::identity(3, 2), 6);
  ASSERT_EQ(s.sigma.size(), 72u);
  for (double x : s.sigma) EXPECT_NEAR(x, 1.0, 1e-12);
  EXPECT_NEAR(stable_rank(s), 72.0, 1e-9);
  EXPECT_NEAR(fft_sigma1(KernelTensor(1, 1, 1, 0.7f), 5), 0.7, 1e-7);
}

TEST(Spectral, OracleTriangle) {
  Rng rng = make_rng(23);
  for (int trial = 0; trial < 12; ++trial) {
    const std::size_t k = std::vector<std::size_t>{1, 3, 5}[trial % 3];
    const std::size_t m = 1 + trial % 3, n = std::vector<std::size_t>{6, 8}[trial % 2];
    const KernelTensor K = random_kernel(k, m, m + trial % 2, rng);
    const LayerSpectrum fft = fft_exact_spectrum(K, n);
    const LayerSpectrum dense = materialized_spectrum(K, n);
    ASSERT_EQ(fft.sigma.size(), dense.sigma.size());
    for (std::size_t i = 0; i < fft.sigma.size(); ++i) EXPECT_NEAR(fft.sigma[i], dense.sigma[i], 1e-6 * dense.sigma1());
    PowerIterationState st = make_power_state(K, n, 5);
    const double pi = power_iteration_layer(K, n, st, 400).sigma;
    EXPECT_NEAR(pi, dense.sigma1(), 1e-3 * dense.sigma1());
    EXPECT_NEAR(fft_sigma1(K, n), dense.sigma1(), 1e-9 * dense.sigma1());
    EXPECT_NEAR(layer_frobenius(K, n), dense.frobenius, 1e-5 * dense.frobenius);
  }
}

TEST(Spectral, PowerIterationWarmStartAndDegenerateKernel) {
  Rng rng = make_rng(24);
  const KernelTensor K = random_kernel(3, 3, 3, rng);
  PowerIterationState st = make_power_state(K, 8, 1);
  power_iteration_layer(K, 8, st, 300);
  const double s1 = st.sigma;
  const double s2 = power_iteration_layer(K, 8, st, 1).sigma;
  EXPECT_NEAR(s2, s1, 1e-5 * s1);
  EXPECT_NEAR(l2_norm(st.u.data()), 1.0, 1e-5);

  const KernelTensor Z(3, 2, 2);
  PowerIterationState zs = make_power_state(Z, 6, 1);
  const PowerIterationResult r = power_iteration_layer(Z, 6, zs, 5);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.sigma, 0.0);
}

TEST(Spectral, KernelMatrixPowerIterationMatchesSvd) {
  Rng rng = make_rng(25);
  const KernelTensor K = random_kernel(3, 2, 4, rng);
  Eigen::MatrixXd M(18, 4);
  for (std::size_t r = 0; r < 18; ++r)
    for (std::size_t o = 0; o < 4; ++o) M(r, o) = K.weights()[r * 4 + o];
  const double ref = Eigen::JacobiSVD<Eigen::MatrixXd>(M).singularValues()[0];
  KernelPowerState st = make_kernel_power_state(K, 3);
  EXPECT_NEAR(power_iteration_kernel2d(K, st, 500).sigma, ref, 1e-6 * ref);
}

TEST(Spectral, LayerSigmaDiffersFromKernelMatrixSigma) {
  // The reshaped-kernel norm is not the layer operator norm.
  Rng rng = make_rng(26);
  const KernelTensor K = random_kernel(3, 3, 3, rng);
  KernelPowerState st = make_kernel_power_state(K, 3);
  EXPECT_GT(std::fabs(power_iteration_kernel2d(K, st, 500).sigma - fft_sigma1(K, 16)), 0.05);
}

TEST(Spectral, AverageOfSortedSpectraPadsWithZeros) {
  LayerSpectrum a, b;
  a.sigma = {3.0, 1.0};
  b.sigma = {1.0};
  EXPECT_EQ(average_sorted_spectra({a, b}), (std::vector<double>{2.0, 0.5}));
}

TEST(Spectral, StableRankBounds) {
  Rng rng = make_rng(27);
  const KernelTensor K = random_kernel(3, 2, 2, rng);
  const LayerSpectrum s = fft_exact_spectrum(K, 6);
  const double sr = stable_rank(s);
  EXPECT_GE(sr, 1.0);
  EXPECT_LE(sr, static_cast<double>(s.sigma.size()));
  EXPECT_NEAR(stable_rank_layer(K, 6, s.sigma1()), sr, 1e-5 * sr);
}

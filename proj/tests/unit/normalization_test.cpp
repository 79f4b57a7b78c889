#include <gtest/gtest.h>

#include "rvp/conv.hpp"
#include "rvp/normalization.hpp"
#include "rvp/spectral.hpp"
#include "test_util.hpp"

using namespace rvp;
using rvp::testing::numeric_grad;
using rvp::testing::random_map;
using rvp::testing::rel_error;

namespace {

/// Identity plus noise: a layer with stable rank close to m n^2, so that
/// every beta < 1 needs the rank step.
KernelTensor near_identity(std::size_t m, Rng& rng, float noise = 0.01f) {
  KernelTensor K = random_kernel(3, m, m, rng, noise);
  for (std::size_t i = 0; i < m; ++i) K.at(1, 1, i, i) += 1.0f;
  return K;
}

NormalizerConfig srnl(double alpha, double beta, std::size_t iters = 100) {
  NormalizerConfig c;
  c.scheme = NormScheme::srnl;
  c.alpha = alpha;
  c.beta = beta;
  c.power_iters = iters;
  return c;
}

}  // namespace

TEST(Normalization, ConfigValidation) {
  NormalizerConfig c = srnl(0.0, 1.0);
  EXPECT_THROW(c.validate(), Error);
  c = srnl(1.0, 0.0);
  EXPECT_THROW(c.validate(), Error);
  c = srnl(1.0, 1.5);
  EXPECT_THROW(c.validate(), Error);
  c = srnl(1.0, 1e-6);
  EXPECT_THROW(c.validate_for_layer(2, 8), Error);  // beta*m below 1/n^2
  c.scheme = NormScheme::srn;
  c.beta = 0.1;
  EXPECT_THROW(c.validate_for_layer(4, 3), Error);  // beta*m <= 1
  EXPECT_EQ(norm_scheme_from_string("srnl"), NormScheme::srnl);
  EXPECT_THROW(norm_scheme_from_string("spectral"), Error);
}

TEST(Normalization, SrnlSetsLayerSpectralNorm) {
  Rng rng = make_rng(31);
  for (double alpha : {0.5, 1.0, 1.5, 2.0}) {
    for (int trial = 0; trial < 3; ++trial) {
      const KernelTensor K = random_kernel(3, 2 + trial, 3, rng);
      const NormalizerConfig cfg = srnl(alpha, 1.0);
      NormalizerState st = make_normalizer_state(K, 8, 7);
      const KernelTensor W = normalized_kernel(K, 8, cfg, st);
      EXPECT_NEAR(fft_sigma1(W, 8), alpha, 5e-3) << "alpha " << alpha;
    }
  }
}

TEST(Normalization, SrnlStableRankTargetAndOrthogonality) {
  Rng rng = make_rng(32);
  for (double beta : {0.5, 0.25}) {
    const KernelTensor K = near_identity(4, rng);
    const std::size_t n = 8;
    NormalizerState st = make_normalizer_state(K, n, 3);
    NormalizeInfo info;
    const KernelTensor Kt = srnl_normalize(K, n, srnl(1.0, beta, 300), st, &info);
    ASSERT_TRUE(info.rank_step_applied);
    EXPECT_LT(info.gamma, 1.0);
    const double fro2 = std::pow(layer_frobenius(Kt, n), 2);
    const double target = beta * 4 * n * n;
    EXPECT_NEAR(fro2, target, 1e-2 * target);
    EXPECT_LT(std::fabs(info.s1_dot_s2), 1e-5 * info.s1_norm * info.s2_norm + 1e-12);
    // At beta = 0.5 the rank step leaves sigma_1 close to its target; smaller
    // beta lets the rank-one part dominate and sigma_1 drifts further.
    if (beta == 0.5) EXPECT_NEAR(fft_sigma1(Kt, n), 1.0, 5e-2);
  }
}

TEST(Normalization, SrnlRankStepSkippedForRankOneLayer) {
  // A 1x1 single-channel layer is a multiple of the identity: S2 = 0.
  KernelTensor K(1, 1, 1, 0.3f);
  NormalizerState st = make_normalizer_state(K, 6, 1);
  NormalizeInfo info;
  const KernelTensor Kt = srnl_normalize(K, 6, srnl(1.0, 0.5, 10), st, &info);
  EXPECT_TRUE(info.s2_zero);
  EXPECT_FALSE(info.rank_step_applied);
  EXPECT_NEAR(Kt.weights()[0], 1.0, 1e-6);
}

TEST(Normalization, LiteralRankOneVariantUsesUnscaledGradient) {
  Rng rng = make_rng(33);
  const KernelTensor K = near_identity(3, rng);
  NormalizerConfig cfg = srnl(1.0, 0.5, 200);
  NormalizerState a = make_normalizer_state(K, 8, 2), b = a;
  NormalizeInfo projected, literal;
  srnl_normalize(K, 8, cfg, a, &projected);
  cfg.literal_rank_one = true;
  const KernelTensor Kl = srnl_normalize(K, 8, cfg, b, &literal);
  // Same rank-one direction G; the literal variant uses it unscaled, which
  // breaks the S1 _|_ S2 split and misses the Frobenius target.
  EXPECT_NEAR(projected.sigma, literal.sigma, 1e-9);
  EXPECT_NE(literal.s1_norm, projected.s1_norm);
  EXPECT_GT(std::fabs(literal.s1_dot_s2), 1e-3 * literal.s1_norm * literal.s2_norm);
  const double target = 0.5 * 3 * 64;
  EXPECT_GT(std::fabs(std::pow(layer_frobenius(Kl, 8), 2) - target), 1e-2 * target);
}

TEST(Normalization, RankOneKernelDualImplementations) {
  Rng rng = make_rng(34);
  for (PaddingMode pad : {PaddingMode::circular, PaddingMode::zero}) {
    const Tensor u = random_map(6, 3, rng), v = random_map(6, 2, rng);
    const KernelTensor a = rank_one_kernel(u, v, 3, pad), b = rank_one_kernel_tape(u, v, 3, pad);
    for (std::size_t i = 0; i < a.weights().size(); ++i) EXPECT_NEAR(a.weights()[i], b.weights()[i], 1e-5);
    // <S, K'> = u^T (K' * v)
    const KernelTensor Kp = random_kernel(3, 2, 3, rng);
    EXPECT_NEAR(dot(a.weights().data(), Kp.weights().data()), dot(u.data(), conv2d(v, Kp, pad).data()), 1e-4);
  }
}

TEST(Normalization, SrnSetsKernelMatrixNormButNotLayerNorm) {
  Rng rng = make_rng(35);
  const KernelTensor K = random_kernel(3, 4, 4, rng);
  NormalizerConfig cfg;
  cfg.scheme = NormScheme::srn;
  cfg.power_iters = 300;
  NormalizerState st;
  const KernelTensor Kt = srn_normalize(K, cfg, st);
  KernelPowerState ks = make_kernel_power_state(Kt, 9);
  EXPECT_NEAR(power_iteration_kernel2d(Kt, ks, 500).sigma, 1.0, 1e-5);
  EXPECT_GT(std::fabs(fft_sigma1(Kt, 16) - 1.0), 0.05);
}

TEST(Normalization, SrnStableRankTarget) {
  Rng rng = make_rng(36);
  const KernelTensor K = random_kernel(3, 4, 8, rng);
  NormalizerConfig cfg;
  cfg.scheme = NormScheme::srn;
  cfg.beta = 0.5;
  cfg.power_iters = 300;
  NormalizerState st;
  NormalizeInfo info;
  const KernelTensor Kt = srn_normalize(K, cfg, st, &info);
  ASSERT_TRUE(info.rank_step_applied);
  // ||K~||_F^2 = beta * min(k^2 m_in, m_out) with ||S1|| = 1.
  EXPECT_NEAR(std::pow(Kt.frobenius(), 2), 0.5 * 8, 1e-3 * 4);
}

TEST(Normalization, TapeVersionMatchesPlainVersion) {
  Rng rng = make_rng(37);
  const KernelTensor K = random_kernel(3, 3, 3, rng);
  for (double beta : {1.0, 0.5}) {
    const NormalizerConfig cfg = srnl(0.7, beta, 50);
    NormalizerState a = make_normalizer_state(K, 8, 4), b = a;
    const KernelTensor plain = normalized_kernel(K, 8, cfg, a);
    Tape t;
    const Tensor taped = t.value(normalized_kernel(t, t.leaf(K.weights()), 8, cfg, b));
    for (std::size_t i = 0; i < taped.size(); ++i) EXPECT_NEAR(taped[i], plain.weights()[i], 1e-5);
  }
}

TEST(Normalization, SpectralDivisionGradientMatchesFiniteDifferences) {
  // With u, v converged, d sigma / dK = u (x) v exactly, so the stop-gradient
  // convention coincides with the true derivative for beta = 1.
  Rng rng = make_rng(38);
  KernelTensor K = random_kernel(3, 2, 2, rng);
  const Tensor target = random_map(6, 2, rng);
  const Tensor x = random_map(6, 2, rng);
  NormalizerConfig cfg = srnl(1.0, 1.0, 1);
  NormalizerState base = make_normalizer_state(K, 6, 5);
  power_iteration_layer(K, 6, base.layer, 2000);
  auto loss = [&] {
    NormalizerState s = base;
    NormalizerConfig c = cfg;
    c.power_iters = 200;
    Tape t;
    const Var W = normalized_kernel(t, t.leaf(K.weights()), 6, c, s);
    return static_cast<double>(t.value(ad::mse(t, ad::conv2d(t, t.constant(x), W), t.constant(target))).item());
  };
  NormalizerState s = base;
  Tape t;
  const Var kv = t.leaf(K.weights());
  const Var W = normalized_kernel(t, kv, 6, cfg, s);
  t.backward(ad::mse(t, ad::conv2d(t, t.constant(x), W), t.constant(target)));
  EXPECT_LT(rel_error(t.grad(kv), numeric_grad(K.weights(), loss, 1e-3)), 1e-2);
}

TEST(Normalization, DampeningHelpers) {
  Rng rng = make_rng(39);
  const KernelTensor K = random_kernel(3, 4, 2, rng);
  const KernelTensor D = dampen_kernel_slice(K, 0.25f, 2, 4);
  for (std::size_t d = 0; d < 9; ++d)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t o = 0; o < 2; ++o)
        EXPECT_EQ(D.weights()[(d * 4 + i) * 2 + o], K.weights()[(d * 4 + i) * 2 + o] * (i >= 2 ? 0.25f : 1.0f));
  EXPECT_THROW(dampen_kernel(K, 1.5f), Error);
  EXPECT_THROW(dampen_features(Tensor::map(2, 2, 1), -0.1f), Error);
  // Dampening the input is the same as dampening the whole kernel.
  const Tensor h = random_map(5, 4, rng);
  const Tensor a = conv2d(dampen_features(h, 0.55f), K), b = conv2d(h, dampen_kernel(K, 0.55f));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-6);
}

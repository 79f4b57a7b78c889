#include <gtest/gtest.h>

#include <filesystem>

#include "rvp/diagnostics.hpp"
#include "rvp/lipschitz.hpp"
#include "rvp/models.hpp"
#include "test_util.hpp"

using namespace rvp;
using rvp::testing::random_map;
using rvp::testing::rel_error;

namespace {

ArchitectureSpec arch(Backbone b, Recurrence r, std::size_t channels = 8) {
  ArchitectureSpec s;
  s.backbone = b;
  s.recurrence = r;
  s.channels = channels;
  return s;
}

std::vector<Tensor> random_frames(std::size_t T, std::size_t n, std::size_t c, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::vector<Tensor> X;
  for (std::size_t t = 0; t < T; ++t) X.push_back(random_map(n, c, rng, 0.0f, 1.0f));
  return X;
}

std::vector<ArchitectureSpec> all_specs() {
  std::vector<ArchitectureSpec> out;
  for (Backbone b : {Backbone::vdncnn, Backbone::vresnet, Backbone::tiny_vdncnn})
    for (const ArchitectureSpec& s : taxonomy_specs(b, 4)) out.push_back(s);
  return out;
}

}  // namespace

TEST(Models, BuildIsDeterministic) {
  const ArchitectureSpec s = arch(Backbone::vdncnn, Recurrence::feature);
  RecurrentModel a = RecurrentModel::build(s, 5), b = RecurrentModel::build(s, 5), c = RecurrentModel::build(s, 6);
  ASSERT_EQ(a.layers().size(), b.layers().size());
  bool differs = false;
  for (std::size_t i = 0; i < a.layers().size(); ++i) {
    EXPECT_EQ(a.layers()[i].kernel.weights(), b.layers()[i].kernel.weights());
    differs |= !(a.layers()[i].kernel.weights() == c.layers()[i].kernel.weights());
  }
  EXPECT_TRUE(differs);
}

TEST(Models, ConvolutionCounts) {
  EXPECT_EQ(arch(Backbone::vdncnn, Recurrence::none_single).conv_count(), 10u);
  EXPECT_EQ(arch(Backbone::vresnet, Recurrence::none_single).conv_count(), 12u);
  EXPECT_EQ(RecurrentModel::build(arch(Backbone::vdncnn, Recurrence::frame), 1).layers().size(), 10u);
  EXPECT_EQ(RecurrentModel::build(arch(Backbone::vresnet, Recurrence::rlsp), 1).layers().size(), 12u);
  EXPECT_EQ(arch(Backbone::tiny_vdncnn, Recurrence::feature, 0).resolved().channels, 16u);
  EXPECT_EQ(arch(Backbone::tiny_vdncnn, Recurrence::feature, 0).conv_count(), 3u);
}

TEST(Models, InvalidArchitecturesAreRejected) {
  ArchitectureSpec s = arch(Backbone::vdncnn, Recurrence::feature);
  s.depth = 2;
  EXPECT_THROW(s.resolved(), Error);
  s.depth = 10;
  s.feature_tap = 9;
  EXPECT_THROW(s.resolved(), Error);
  s = arch(Backbone::vresnet, Recurrence::feature);
  s.feature_tap = 5;
  EXPECT_THROW(s.resolved(), Error);
  s.feature_tap = -1;
  s.kernel_size = 4;
  EXPECT_THROW(s.resolved(), Error);
  EXPECT_THROW(backbone_from_string("unet"), Error);
  EXPECT_THROW(recurrence_from_string("lstm"), Error);
}

TEST(Models, SingleFrameOutputIgnoresState) {
  RecurrentModel m = RecurrentModel::build(arch(Backbone::vdncnn, Recurrence::none_single), 3);
  const auto X = random_frames(4, 8, 1, 1);
  RecurrentState s;
  for (std::size_t t = 0; t < 3; ++t) m.step(s, X[t]);
  RecurrentState fresh;
  EXPECT_EQ(m.step(s, X[3]).y, m.step(fresh, X[3]).y);
}

TEST(Models, ZeroFeedbackEqualsSingleFrameModel) {
  for (Backbone b : {Backbone::vdncnn, Backbone::vresnet}) {
    for (Recurrence r : {Recurrence::frame, Recurrence::feature, Recurrence::rlsp}) {
      RecurrentModel m = RecurrentModel::build(arch(b, r), 4);
      ConvLayer& L = m.layers()[m.state_reader()];
      for (std::size_t d = 0; d < L.kernel.k() * L.kernel.k(); ++d)
        for (std::size_t i = L.rec_begin; i < L.rec_end; ++i)
          for (std::size_t o = 0; o < L.kernel.m_out(); ++o)
            L.kernel.weights()[(d * L.kernel.m_in() + i) * L.kernel.m_out() + o] = 0.0f;
      RecurrentModel single = m.single_frame_variant();
      const auto X = random_frames(5, 8, 1, 2);
      const auto a = m.unroll(X), c = single.unroll(X);
      for (std::size_t t = 0; t < X.size(); ++t)
        for (std::size_t i = 0; i < a[t].size(); ++i)
          ASSERT_NEAR(a[t][i], c[t][i], 1e-6) << to_string(b) << "/" << to_string(r) << " t=" << t;
    }
  }
}

TEST(Models, UnrollMatchesIteratedStepBitExactly) {
  for (const ArchitectureSpec& s : all_specs()) {
    RecurrentModel m = RecurrentModel::build(s, 7);
    const auto X = random_frames(4, 8, 1, 3);
    const auto Y = m.unroll(X);
    RecurrentState st;
    for (std::size_t t = 0; t < X.size(); ++t) EXPECT_EQ(m.step(st, X[t]).y, Y[t]) << to_string(s.recurrence);
    // The taped unroll agrees too.
    Tape tape;
    const BoundParams p = m.bind(tape, BindMode::eval);
    std::vector<Var> Xv;
    for (const Tensor& x : X) Xv.push_back(tape.constant(x));
    const auto Yv = m.unroll(tape, p, Xv);
    for (std::size_t t = 0; t < X.size(); ++t) EXPECT_EQ(tape.value(Yv[t]), Y[t]);
  }
}

TEST(Models, SingleFrameUnrollEqualsStepFromZeroState) {
  RecurrentModel m = RecurrentModel::build(arch(Backbone::vdncnn, Recurrence::rlsp), 8);
  const auto X = random_frames(1, 8, 1, 4);
  RecurrentState st;
  EXPECT_EQ(m.unroll(X)[0], m.step(st, X[0]).y);
}

TEST(Models, FrameRecurrenceFeedsPreviousOutputBack) {
  // Two chained steps equal an explicit composition where the second step
  // is handed y_1 as its carried state.
  RecurrentModel m = RecurrentModel::build(arch(Backbone::vdncnn, Recurrence::frame), 9);
  const auto X = random_frames(2, 8, 1, 5);
  RecurrentState st;
  const Tensor y1 = m.step(st, X[0]).y;
  const Tensor y2 = m.step(st, X[1]).y;
  RecurrentState manual;
  manual.slots = {y1};
  manual.frame = 1;
  EXPECT_EQ(m.step(manual, X[1]).y, y2);
}

TEST(Models, GradientMatchesFiniteDifferences) {
  // Small steps: one conv0 bias sits within 1e-3 of a ReLU kink.
  ArchitectureSpec s = arch(Backbone::tiny_vdncnn, Recurrence::feature, 3);
  RecurrentModel m = RecurrentModel::build(s, 10, InitScheme::gaussian, 0.3f);
  const auto X = random_frames(3, 6, 1, 6);
  Tape tape;
  const BoundParams p = m.bind(tape, BindMode::grad);
  std::vector<Var> Xv;
  for (const Tensor& x : X) Xv.push_back(tape.constant(x));
  const auto Yv = m.unroll(tape, p, Xv);
  Var loss = ad::dot(tape, Yv[0], Yv[0]);
  for (std::size_t t = 1; t < Yv.size(); ++t) loss = ad::add(tape, loss, ad::dot(tape, Yv[t], Yv[t]));
  tape.backward(loss);

  auto f = [&] {
    double acc = 0.0;
    for (const Tensor& y : m.unroll(X))
      for (float v : y.vec()) acc += static_cast<double>(v) * v;
    return acc;
  };
  for (std::size_t i = 0; i < m.layers().size(); ++i) {
    const Tensor g = tape.grad(p.raw_kernels[i]);
    const auto num = rvp::testing::numeric_grad(m.layers()[i].kernel.weights(), f, 5e-4);
    EXPECT_LT(rel_error(g, num), 1e-3) << m.layers()[i].name;
    const Tensor gb = tape.grad(p.raw_biases[i]);
    const auto numb = rvp::testing::numeric_grad(m.layers()[i].bias, f, 5e-4);
    EXPECT_LT(rel_error(gb, numb), 1e-3) << m.layers()[i].name << " bias";
  }
}

TEST(Models, UnrollGuardrail) {
  RecurrentModel m = RecurrentModel::build(arch(Backbone::tiny_vdncnn, Recurrence::feature, 2), 1);
  const auto X = random_frames(RecurrentModel::kMaxUnroll + 1, 4, 1, 7);
  Tape tape;
  const BoundParams p = m.bind(tape, BindMode::eval);
  std::vector<Var> Xv;
  for (const Tensor& x : X) Xv.push_back(tape.constant(x));
  EXPECT_THROW(m.unroll(tape, p, Xv), Error);
}

TEST(Models, StepRejectsWrongChannelCount) {
  RecurrentModel m = RecurrentModel::build(arch(Backbone::vdncnn, Recurrence::feature), 1);
  RecurrentState st;
  EXPECT_THROW(m.step(st, Tensor::map(8, 8, 3)), Error);
}

TEST(Models, NonFiniteOutputIsFlaggedNotThrown) {
  RecurrentModel m = RecurrentModel::build(arch(Backbone::vdncnn, Recurrence::feature), 1);
  Tensor x = Tensor::map(8, 8, 1, 0.5f);
  x.vec()[3] = std::numeric_limits<float>::quiet_NaN();
  RecurrentState st;
  EXPECT_TRUE(m.step(st, x).diverged);
}

TEST(Models, ResetIsDeterministic) {
  RecurrentModel m = RecurrentModel::build(arch(Backbone::vresnet, Recurrence::feature), 11);
  const auto X = random_frames(6, 8, 1, 8);
  RecurrentState st;
  std::vector<Tensor> first;
  for (const Tensor& x : X) first.push_back(m.step(st, x).y);
  st.reset();
  for (std::size_t t = 0; t < X.size(); ++t) EXPECT_EQ(m.step(st, X[t]).y, first[t]);
}

TEST(Models, CheckpointRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "rvp_models_test";
  std::filesystem::create_directories(dir);
  RecurrentModel m = RecurrentModel::build(arch(Backbone::tiny_vdncnn, Recurrence::feature), 12);
  NormalizerConfig nc;
  nc.scheme = NormScheme::srnl;
  nc.alpha = 0.5;
  m.set_normalizer(nc, 16, 3);
  m.converge_normalizer(20);
  Checkpoint ck{m, {{"steps", 17}}, std::nullopt};
  save_checkpoint(dir / "m.rvpt", ck);
  Checkpoint back = load_checkpoint(dir / "m.rvpt");
  EXPECT_EQ(back.meta.at("steps").get<int>(), 17);
  EXPECT_EQ(back.model.spec(), m.spec().resolved());
  ASSERT_EQ(back.model.layers().size(), m.layers().size());
  for (std::size_t i = 0; i < m.layers().size(); ++i) {
    EXPECT_EQ(back.model.layers()[i].kernel.weights(), m.layers()[i].kernel.weights());
    EXPECT_EQ(back.model.layers()[i].bias, m.layers()[i].bias);
  }
  const auto X = random_frames(3, 8, 1, 9);
  const auto a = m.unroll(X), b = back.model.unroll(X);
  for (std::size_t t = 0; t < X.size(); ++t) EXPECT_EQ(a[t], b[t]);

  // Weights of one architecture cannot be loaded as another.
  RecurrentModel other = RecurrentModel::build(arch(Backbone::tiny_vdncnn, Recurrence::feature, 4), 12);
  EXPECT_THROW(RecurrentModel::from_archive(m.to_archive(), other.metadata()), Error);
  std::filesystem::remove(dir / "m.rvpt.json");
  EXPECT_THROW(load_checkpoint(dir / "m.rvpt"), Error);
  std::filesystem::remove_all(dir);
}

TEST(Models, DampeningRoutesAgree) {
  for (Recurrence r : {Recurrence::frame, Recurrence::feature, Recurrence::rlsp}) {
    RecurrentModel m = RecurrentModel::build(arch(Backbone::vdncnn, r), 13);
    const auto X = random_frames(5, 8, 1, 10);
    for (float lambda : {0.0f, 0.25f, 0.55f, 1.0f}) {
      RecurrentModel feat = m;
      feat.set_dampening(lambda, DampingRoute::features);
      RecurrentModel kern = dampen_recurrent_kernels(m, lambda);
      // Frame by frame from a shared state: each forward pass agrees.
      RecurrentState shared;
      for (const Tensor& x : X) {
        RecurrentState sa = shared, sb = shared;
        const Tensor a = feat.step(sa, x).y, b = kern.step(sb, x).y;
        for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i], b[i], 1e-6) << lambda;
        shared = sa;
      }
    }
    RecurrentModel zero = m;
    zero.set_dampening(0.0f, DampingRoute::features);
    const auto a = zero.unroll(X), b = m.single_frame_variant().unroll(X);
    for (std::size_t t = 0; t < X.size(); ++t) EXPECT_EQ(a[t], b[t]);
  }
  RecurrentModel m = RecurrentModel::build(arch(Backbone::vdncnn, Recurrence::feature), 1);
  EXPECT_THROW(m.set_dampening(1.1f, DampingRoute::features), Error);
}

TEST(Models, RescaleSetsLayerSigma) {
  RecurrentModel m = RecurrentModel::build(arch(Backbone::vresnet, Recurrence::feature), 14, InitScheme::gaussian);
  rescale_layers_to_sigma(m, 0.8, 12);
  for (const ConvLayer& L : m.layers()) EXPECT_NEAR(layer_spectral_norm(L.kernel, 12), 0.8, 1e-4) << L.name;
}

TEST(Models, NormalizedFeatureRecurrenceContracts) {
  RecurrentModel m = RecurrentModel::build(arch(Backbone::vdncnn, Recurrence::feature), 15);
  NormalizerConfig nc;
  nc.scheme = NormScheme::srnl;
  nc.alpha = 0.5;
  m.set_normalizer(nc, 8, 1);
  m.converge_normalizer(300);
  RecurrentModel f = m.frozen();
  const LipschitzReport rep = lipschitz_upper_bound(f, 8);
  ASSERT_TRUE(rep.has_recurrent_path);
  // Every factor is at most alpha (a kernel slice can only be smaller).
  EXPECT_LE(rep.bound, std::pow(0.5, static_cast<double>(rep.factors.size())) * (1 + 1e-3));
  for (const LipschitzFactor& fct : rep.factors) EXPECT_LE(fct.value, 0.5 * (1 + 1e-3)) << fct.label;
  Rng rng = make_rng(16);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor h = random_map(8, 8, rng), h2 = random_map(8, 8, rng), x = random_map(8, 1, rng, 0.0f, 1.0f);
    EXPECT_LE(contraction_ratio(f, h, h2, x), rep.bound * (1 + 1e-4));
  }
}

TEST(Models, LipschitzBoundOfScaledChain) {
  // All layers at sigma_1 = 0.5: a pure conv/ReLU chain multiplies.
  RecurrentModel m = RecurrentModel::build(arch(Backbone::vdncnn, Recurrence::frame), 17, InitScheme::gaussian);
  rescale_layers_to_sigma(m, 0.5, 8);
  const LipschitzReport rep = lipschitz_upper_bound(m, 8);
  EXPECT_FALSE(rep.residual_adjusted);
  // The state slice of conv0 has sigma_1 <= 0.5, so the bound is at most 0.5^10.
  EXPECT_LE(rep.bound, std::pow(0.5, 10) * (1 + 1e-6));
  EXPECT_EQ(rep.factors.size(), 10u);
  EXPECT_EQ(lipschitz_upper_bound(RecurrentModel::build(arch(Backbone::vdncnn, Recurrence::none_single), 1), 8).bound,
            0.0);
  RecurrentModel r = RecurrentModel::build(arch(Backbone::vresnet, Recurrence::rlsp), 2);
  EXPECT_TRUE(lipschitz_upper_bound(r, 8).residual_adjusted);
}

#include <gtest/gtest.h>

#include <cmath>

#include "rvp/adam.hpp"

using namespace rvp;

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Tensor p(Shape{3}, std::vector<float>{1.0f, -2.0f, 0.5f});
  const Tensor before = p;
  AdamState s(AdamConfig{0.1f});
  adam_step(p, Tensor::zeros(Shape{3}), s);
  EXPECT_EQ(p, before);
  EXPECT_EQ(s.step, 1);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor p = Tensor::scalar(0.0f);
  AdamState s(AdamConfig{1e-3f});
  adam_step(p, Tensor::scalar(1.0f), s);
  EXPECT_NEAR(p.item(), -1e-3, 1e-8);
}

TEST(Adam, QuadraticConvergesAndMatchesScalarRecursion) {
  Tensor p = Tensor::scalar(0.0f);
  AdamState s(AdamConfig{0.1f});
  // Reference recursion written out independently.
  float q = 0.0f, m = 0.0f, v = 0.0f;
  for (int t = 1; t <= 1000; ++t) {
    const float g = 2.0f * (p.item() - 3.0f);
    adam_step(p, Tensor::scalar(g), s);
    const float gq = 2.0f * (q - 3.0f);
    m = 0.9f * m + 0.1f * gq;
    v = 0.999f * v + 0.001f * gq * gq;
    const double mh = m / (1.0 - std::pow(0.9, t)), vh = v / (1.0 - std::pow(0.999, t));
    q -= static_cast<float>(0.1f * mh / (std::sqrt(vh) + 1e-8f));
  }
  EXPECT_NEAR(p.item(), 3.0, 1e-2);
  EXPECT_EQ(p.item(), q);
}

TEST(Adam, NonFinitePolicies) {
  Tensor p(Shape{2}, std::vector<float>{1.0f, 1.0f});
  Tensor g(Shape{2}, std::vector<float>{std::nanf(""), 1.0f});
  AdamState reject(AdamConfig{0.1f});
  EXPECT_THROW(adam_step(p, g, reject), Error);
  EXPECT_EQ(reject.step, 0);
  EXPECT_EQ(p[0], 1.0f);

  AdamState clamp(AdamConfig{0.1f, 0.9f, 0.999f, 1e-8f, NonFinitePolicy::clamp_and_record});
  adam_step(p, g, clamp);
  EXPECT_EQ(clamp.nonfinite_entries, 1);
  EXPECT_EQ(p[0], 1.0f);
  EXPECT_LT(p[1], 1.0f);
}

TEST(Adam, ShapeMismatchRejected) {
  Tensor p(Shape{2});
  AdamState s;
  EXPECT_THROW(adam_step(p, Tensor::zeros(Shape{3}), s), Error);
}

TEST(Adam, Deterministic) {
  auto run = [] {
    Tensor p(Shape{4}, std::vector<float>{0.1f, 0.2f, 0.3f, 0.4f});
    AdamState s(AdamConfig{0.01f});
    for (int i = 0; i < 50; ++i) {
      Tensor g = p;
      for (float& x : g.vec()) x = std::sin(37.0f * x + static_cast<float>(i));
      adam_step(p, g, s);
    }
    return p;
  };
  EXPECT_EQ(run(), run());
}

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "rvp/archive.hpp"
#include "rvp/autodiff.hpp"
#include "rvp/conv.hpp"
#include "test_util.hpp"

using namespace rvp;
using rvp::testing::numeric_grad;
using rvp::testing::random_map;
using rvp::testing::rel_error;

TEST(Tensor, ShapeAndAccess) {
  Tensor t = Tensor::map(2, 3, 4, 1.5f);
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(shape_str(t.shape()), "[2,3,4]");
  t.at(1, 2, 3) = 7.0f;
  EXPECT_EQ(t[23], 7.0f);
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<float>(3)), Error);
  EXPECT_THROW(Tensor::map(1, 1, 2).item(), Error);
}

TEST(Tensor, ConcatChannels) {
  Tensor a = Tensor::map(2, 2, 1, 1.0f), b = Tensor::map(2, 2, 2, 2.0f);
  const Tensor c = concat_channels(a, b);
  ASSERT_EQ(c.shape(), (Shape{2, 2, 3}));
  EXPECT_EQ(c.at(1, 1, 0), 1.0f);
  EXPECT_EQ(c.at(1, 1, 2), 2.0f);
  EXPECT_THROW(concat_channels(a, Tensor::map(3, 2, 1)), Error);
}

TEST(Archive, RoundTripIsBitExact) {
  Rng rng = make_rng(3);
  TensorArchive a;
  Tensor x = random_map(5, 3, rng);
  x[0] = -0.0f;
  x[1] = std::numeric_limits<float>::denorm_min();
  a.add("x", x);
  a.add("scalar", Tensor::scalar(3.25f));
  a.add("k", random_kernel(3, 2, 4, rng).weights());
  const auto path = std::filesystem::temp_directory_path() / "rvp_archive_test.rvpt";
  a.save(path);
  const TensorArchive b = TensorArchive::load(path);
  ASSERT_EQ(b.size(), 3u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.entries()[i].first, b.entries()[i].first);
    const Tensor& p = a.entries()[i].second;
    const Tensor& q = b.entries()[i].second;
    ASSERT_EQ(p.shape(), q.shape());
    EXPECT_EQ(std::memcmp(p.data().data(), q.data().data(), p.size() * sizeof(float)), 0);
  }
  std::filesystem::remove(path);
}

TEST(Archive, RejectsMalformedInput) {
  TensorArchive a;
  a.add("x", Tensor::map(2, 2, 1, 1.0f));
  std::string bytes = a.serialize();
  EXPECT_THROW(TensorArchive::deserialize(bytes.substr(0, bytes.size() - 3)), Error);
  bytes[0] = 'X';
  EXPECT_THROW(TensorArchive::deserialize(bytes), Error);
  EXPECT_THROW(a.add("x", Tensor::scalar(1.0f)), Error);  // duplicate name
}

TEST(Conv, IdentityKernelIsIdentity) {
  Rng rng = make_rng(1);
  const Tensor x = random_map(6, 3, rng);
  for (PaddingMode pad : {PaddingMode::circular, PaddingMode::zero}) EXPECT_EQ(conv2d(x, KernelTensor::identity(3, 3), pad), x);
}

TEST(Conv, CircularShiftByOffCenterTap) {
  // A single tap at (dy, dx) = (0, 2) on a 3x3 kernel reads in[y-1, x+1].
  Rng rng = make_rng(2);
  const Tensor x = random_map(5, 1, rng);
  KernelTensor K(3, 1, 1);
  K.at(0, 2, 0, 0) = 1.0f;
  const Tensor y = conv2d(x, K);
  for (std::size_t yy = 0; yy < 5; ++yy)
    for (std::size_t xx = 0; xx < 5; ++xx) EXPECT_EQ(y.at(yy, xx, 0), x.at((yy + 4) % 5, (xx + 1) % 5, 0));
  const Tensor z = conv2d(x, K, PaddingMode::zero);
  EXPECT_EQ(z.at(0, 0, 0), 0.0f);
  EXPECT_EQ(z.at(1, 0, 0), x.at(0, 1, 0));
}

TEST(Conv, AdjointIdentityOn200RandomProbes) {
  Rng rng = make_rng(42);
  for (int probe = 0; probe < 200; ++probe) {
    const std::size_t k = 1 + 2 * (rng() % 3), mi = 1 + rng() % 4, mo = 1 + rng() % 4, n = k + rng() % 6;
    const PaddingMode pad = probe % 2 ? PaddingMode::zero : PaddingMode::circular;
    const KernelTensor K = random_kernel(k, mi, mo, rng);
    const Tensor v = random_map(n, mi, rng), u = random_map(n, mo, rng);
    const double lhs = dot(conv2d(v, K, pad).data(), u.data());
    const double rhs = dot(v.data(), conv2d_adjoint(u, K, pad).data());
    EXPECT_LE(std::fabs(lhs - rhs), 1e-5 * std::max(1.0, std::fabs(lhs))) << "probe " << probe;
  }
}

TEST(Conv, RejectsMismatchedChannelsAndNonFinite) {
  Rng rng = make_rng(4);
  const KernelTensor K = random_kernel(3, 2, 1, rng);
  EXPECT_THROW(conv2d(Tensor::map(4, 4, 3), K), Error);
  Tensor x = Tensor::map(4, 4, 2);
  x[5] = std::nanf("");
  EXPECT_THROW(conv2d(x, K), Error);
  EXPECT_NO_THROW(conv2d(x, K, PaddingMode::circular, FiniteCheck::unchecked));
}

TEST(Conv, ImageSmallerThanKernelIsRejected) {
  KernelTensor K(5, 1, 1, 1.0f);
  EXPECT_THROW(conv2d(Tensor::map(3, 3, 1, 1.0f), K), Error);
  EXPECT_THROW(conv2d_adjoint(Tensor::map(3, 3, 1, 1.0f), K), Error);
}

TEST(Conv, ScalarKernelScalesAndIsSelfAdjoint) {
  Rng rng = make_rng(5);
  const Tensor x = random_map(4, 1, rng);
  KernelTensor K(1, 1, 1, 0.7f);
  const Tensor y = conv2d(x, K), z = conv2d_adjoint(x, K);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_FLOAT_EQ(y[i], 0.7f * x[i]);
    EXPECT_FLOAT_EQ(z[i], 0.7f * x[i]);
  }
  const KernelTensor I = KernelTensor::identity(3, 1);
  EXPECT_EQ(conv2d_adjoint(x, I), x);
}

TEST(Conv, Linearity) {
  Rng rng = make_rng(6);
  const KernelTensor K = random_kernel(3, 2, 3, rng);
  const Tensor x = random_map(6, 2, rng), y = random_map(6, 2, rng);
  const Tensor lhs = conv2d(axpby(0.3f, x, -1.7f, y), K);
  const Tensor rhs = axpby(0.3f, conv2d(x, K), -1.7f, conv2d(y, K));
  double num = 0.0;
  for (std::size_t i = 0; i < lhs.size(); ++i) num += (lhs[i] - rhs[i]) * (lhs[i] - rhs[i]);
  EXPECT_LE(std::sqrt(num), 1e-6 * l2_norm(rhs.data()) * 10);  // float rounding of the combination itself
}

// Gradient checks -------------------------------------------------------------------

TEST(Autodiff, ConvKernelAndInputGradientsMatchFiniteDifferences) {
  Rng rng = make_rng(7);
  for (PaddingMode pad : {PaddingMode::circular, PaddingMode::zero}) {
    KernelTensor K = random_kernel(3, 2, 3, rng, 0.5f);
    Tensor x = random_map(5, 2, rng);
    const Tensor target = random_map(5, 3, rng);
    auto loss = [&] {
      Tape t;
      return t.value(ad::mse(t, ad::conv2d(t, t.leaf(x), t.leaf(K.weights()), pad), t.constant(target))).item();
    };
    Tape t;
    const Var xv = t.leaf(x), kv = t.leaf(K.weights());
    t.backward(ad::mse(t, ad::conv2d(t, xv, kv, pad), t.constant(target)));
    const Tensor gx = t.grad(xv), gk = t.grad(kv);
    EXPECT_LT(rel_error(gk, numeric_grad(K.weights(), loss, 1e-2)), 1e-3);
    EXPECT_LT(rel_error(gx, numeric_grad(x, loss, 1e-2)), 1e-3);
  }
}

TEST(Autodiff, ThreeLayerStackGradientsMatchFiniteDifferences) {
  Rng rng = make_rng(8);
  KernelTensor K1 = random_kernel(3, 1, 4, rng, 0.4f), K2 = random_kernel(3, 4, 4, rng, 0.3f),
               K3 = random_kernel(3, 4, 1, rng, 0.3f);
  Tensor b1(Shape{4}), x = random_map(6, 1, rng, 0.0f, 1.0f);
  fill_uniform(b1, rng, -0.1f, 0.1f);
  auto forward = [&](Tape& t, Var& k1, Var& k2, Var& k3, Var& bb) {
    k1 = t.leaf(K1.weights());
    k2 = t.leaf(K2.weights());
    k3 = t.leaf(K3.weights());
    bb = t.leaf(b1);
    Var h = ad::relu(t, ad::bias_add(t, ad::conv2d(t, t.constant(x), k1), bb));
    h = ad::relu(t, ad::conv2d(t, h, k2));
    const Var y = ad::conv2d(t, h, k3);
    return ad::dot(t, y, y);
  };
  auto loss = [&] {
    Tape t;
    Var a, b, c, d;
    return static_cast<double>(t.value(forward(t, a, b, c, d)).item());
  };
  Tape t;
  Var k1, k2, k3, bb;
  t.backward(forward(t, k1, k2, k3, bb));
  EXPECT_LT(rel_error(t.grad(k1), numeric_grad(K1.weights(), loss, 1e-3)), 1e-3);
  EXPECT_LT(rel_error(t.grad(k2), numeric_grad(K2.weights(), loss, 1e-3)), 1e-3);
  EXPECT_LT(rel_error(t.grad(k3), numeric_grad(K3.weights(), loss, 1e-3)), 1e-3);
  EXPECT_LT(rel_error(t.grad(bb), numeric_grad(b1, loss, 1e-3)), 1e-3);
}

TEST(Autodiff, ScalarOpsMatchFiniteDifferences) {
  Rng rng = make_rng(9);
  Tensor a = random_map(3, 2, rng, 0.5f, 1.5f), b = random_map(3, 2, rng, 0.5f, 1.5f);
  auto build = [&](Tape& t, Var& va, Var& vb) {
    va = t.leaf(a);
    vb = t.leaf(b);
    const Var s = ad::dot(t, va, vb);                        // scalar
    const Var q = ad::div(t, ad::mul(t, va, s), ad::l2_norm(t, vb));
    const Var r = ad::sub(t, ad::add(t, q, ad::scale(t, vb, 0.5f)), ad::add_const(t, va, 0.25f));
    return ad::sqrt(t, ad::dot(t, r, r));
  };
  auto loss = [&] {
    Tape t;
    Var x, y;
    return static_cast<double>(t.value(build(t, x, y)).item());
  };
  Tape t;
  Var va, vb;
  t.backward(build(t, va, vb));
  EXPECT_LT(rel_error(t.grad(va), numeric_grad(a, loss, 1e-2)), 1e-3);
  EXPECT_LT(rel_error(t.grad(vb), numeric_grad(b, loss, 1e-2)), 1e-3);
}

TEST(Autodiff, ConvAdjointOpGradient) {
  Rng rng = make_rng(10);
  KernelTensor K = random_kernel(3, 2, 3, rng, 0.5f);
  Tensor u = random_map(4, 3, rng);
  auto loss = [&] {
    Tape t;
    const Var y = ad::conv2d_adjoint(t, t.leaf(u), t.leaf(K.weights()));
    return static_cast<double>(t.value(ad::dot(t, y, y)).item());
  };
  Tape t;
  const Var uv = t.leaf(u), kv = t.leaf(K.weights());
  const Var y = ad::conv2d_adjoint(t, uv, kv);
  t.backward(ad::dot(t, y, y));
  EXPECT_LT(rel_error(t.grad(kv), numeric_grad(K.weights(), loss, 1e-3)), 1e-3);
  EXPECT_LT(rel_error(t.grad(uv), numeric_grad(u, loss, 1e-3)), 1e-3);
}

TEST(Autodiff, ReluPropagatesNaN) {
  Tensor x = Tensor::map(1, 2, 1);
  x[0] = std::nanf("");
  x[1] = -1.0f;
  const Tensor y = relu(x);
  EXPECT_TRUE(std::isnan(y[0]));
  EXPECT_EQ(y[1], 0.0f);
}

TEST(Autodiff, TapeCannotBeReplayed) {
  Tape t;
  const Var x = t.leaf(Tensor::scalar(2.0f));
  const Var y = ad::mul(t, x, x);
  t.backward(y);
  EXPECT_FLOAT_EQ(t.grad(x).item(), 4.0f);
  EXPECT_THROW(t.backward(y), Error);
}

TEST(Autodiff, SquaredNormGradientIsTwiceInput) {
  Rng rng = make_rng(11);
  const Tensor x = random_map(3, 2, rng);
  Tape t;
  const Var v = t.leaf(x);
  t.backward(ad::dot(t, v, v));
  const Tensor g = t.grad(v);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_FLOAT_EQ(g[i], 2.0f * x[i]);
}

TEST(Losses, ElementaryValues) {
  Tensor x(Shape{2}, std::vector<float>{-1.0f, 2.0f});
  const Tensor r = relu(x);
  EXPECT_EQ(r[0], 0.0f);
  EXPECT_EQ(r[1], 2.0f);
  EXPECT_EQ(mse(x, x), 0.0);
  Tensor y = Tensor::map(4, 4, 1);
  y.at(2, 2, 0) = -3.0f;
  y.at(1, 1, 0) = 9.0f;
  EXPECT_EQ(l1_center_pixel(y), 3.0);
}

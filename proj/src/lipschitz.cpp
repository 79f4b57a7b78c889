#include "rvp/lipschitz.hpp"

#include <cmath>

#include "rvp/spectral.hpp"

namespace rvp {

KernelTensor kernel_input_slice(const KernelTensor& K, std::size_t begin, std::size_t end) {
  require(begin < end && end <= K.m_in(), "kernel_input_slice: invalid channel range");
  KernelTensor S(K.k(), end - begin, K.m_out());
  for (std::size_t dy = 0; dy < K.k(); ++dy)
    for (std::size_t dx = 0; dx < K.k(); ++dx)
      for (std::size_t i = begin; i < end; ++i)
        for (std::size_t o = 0; o < K.m_out(); ++o) S.at(dy, dx, i - begin, o) = K.at(dy, dx, i, o);
  return S;
}

LipschitzReport lipschitz_upper_bound(const RecurrentModel& model, std::size_t n) {
  LipschitzReport rep;
  rep.n = n;
  const ArchitectureSpec& s = model.spec();
  if (!is_recurrent(s.recurrence)) return rep;
  rep.has_recurrent_path = true;

  const std::vector<KernelTensor> K = model.effective_kernels();
  const auto& L = model.layers();
  auto sigma = [&](std::size_t i) { return layer_spectral_norm(K[i], n); };
  auto plain = [&](std::size_t i) { rep.factors.push_back({L[i].name, sigma(i), false}); };
  auto reader = [&](std::size_t i) {
    const KernelTensor S = kernel_input_slice(K[i], L[i].rec_begin, L[i].rec_end);
    rep.factors.push_back({L[i].name + "[state]", layer_spectral_norm(S, n), false});
  };
  auto block = [&](std::size_t b) {
    const double v = 1.0 + sigma(1 + 2 * b) * sigma(2 + 2 * b);
    rep.factors.push_back({"block" + std::to_string(b) + " (residual)", v, true});
    rep.residual_adjusted = true;
  };

  const std::size_t D = s.depth;
  const auto tap = static_cast<std::size_t>(s.feature_tap);
  if (s.backbone == Backbone::vresnet) {
    switch (s.recurrence) {
      case Recurrence::frame:
        reader(0);
        for (std::size_t b = 0; b < D; ++b) block(b);
        plain(L.size() - 1);
        break;
      case Recurrence::rlsp:
        reader(0);
        for (std::size_t b = 0; b < D; ++b) block(b);
        break;
      case Recurrence::feature:
        reader(1);
        plain(2);
        for (std::size_t b = 1; b <= tap; ++b) block(b);
        break;
      default: break;
    }
  } else {
    switch (s.recurrence) {
      case Recurrence::frame:
        reader(0);
        for (std::size_t i = 1; i < D; ++i) plain(i);
        break;
      case Recurrence::rlsp:
        reader(0);
        for (std::size_t i = 1; i + 1 < D; ++i) plain(i);
        break;
      case Recurrence::feature:
        reader(1);
        for (std::size_t i = 2; i <= tap; ++i) plain(i);
        break;
      default: break;
    }
  }
  rep.bound = 1.0;
  for (const auto& f : rep.factors) rep.bound *= f.value;
  return rep;
}

double contraction_ratio(RecurrentModel& model, const Tensor& h, const Tensor& h2, const Tensor& x) {
  require(is_recurrent(model.spec().recurrence), "contraction_ratio: model has no recurrent state");
  require(h.same_shape(h2), "contraction_ratio: state shapes differ");
  RecurrentState a, b;
  a.slots = {h};
  b.slots = {h2};
  model.step(a, x);
  model.step(b, x);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double d = static_cast<double>(a.slots[0][i]) - b.slots[0][i];
    const double e = static_cast<double>(h[i]) - h2[i];
    num += d * d;
    den += e * e;
  }
  require(den > 0.0, "contraction_ratio: identical states");
  return std::sqrt(num / den);
}

}  // namespace rvp

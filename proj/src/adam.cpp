#include "rvp/adam.hpp"

#include <cmath>

namespace rvp {

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state) {
  require(params.size() == grads.size(), "adam_step: parameter/gradient count mismatch");
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.push_back(Tensor::zeros(p->shape()));
      state.v.push_back(Tensor::zeros(p->shape()));
    }
  }
  require(state.m.size() == params.size(), "adam_step: state was created for a different parameter list");
  for (std::size_t j = 0; j < params.size(); ++j) {
    require(params[j]->same_shape(grads[j]) && state.m[j].same_shape(grads[j]),
            "adam_step: shape mismatch for parameter " + std::to_string(j));
  }

  // Validate before touching anything so a rejected step leaves state intact.
  std::int64_t bad = 0;
  for (const Tensor& g : grads)
    for (float v : g.data())
      if (!std::isfinite(v)) ++bad;
  if (bad > 0 && state.config.policy == NonFinitePolicy::reject)
    throw Error("adam_step: " + std::to_string(bad) + " non-finite gradient entries");
  state.nonfinite_entries += bad;

  ++state.step;
  const AdamConfig& c = state.config;
  const double bc1 = 1.0 - std::pow(static_cast<double>(c.beta1), static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(static_cast<double>(c.beta2), static_cast<double>(state.step));
  for (std::size_t j = 0; j < params.size(); ++j) {
    Tensor& p = *params[j];
    Tensor& m = state.m[j];
    Tensor& v = state.v[j];
    const Tensor& g = grads[j];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const float gi = std::isfinite(g[i]) ? g[i] : 0.0f;
      m[i] = c.beta1 * m[i] + (1.0f - c.beta1) * gi;
      v[i] = c.beta2 * v[i] + (1.0f - c.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= static_cast<float>(c.lr * mhat / (std::sqrt(vhat) + c.eps));
    }
  }
}

void adam_step(Tensor& param, const Tensor& grad, AdamState& state) {
  Tensor* ps[] = {&param};
  adam_step(std::span<Tensor* const>(ps), std::span<const Tensor>(&grad, 1), state);
}

}  // namespace rvp

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rvp/tensor.hpp"

namespace rvp {

/// What adam_step does with NaN/Inf gradient entries.
enum class NonFinitePolicy {
  reject,         ///< throw; used for training
  clamp_and_record  ///< zero the entry, count it; used for divergence studies
};

struct AdamConfig {
  float lr = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  NonFinitePolicy policy = NonFinitePolicy::reject;
};

struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  std::vector<Tensor> m;  ///< first moments, one per parameter
  std::vector<Tensor> v;  ///< second moments
  std::int64_t nonfinite_entries = 0;  ///< total clamped entries under clamp_and_record

  explicit AdamState(AdamConfig cfg = {}) : config(cfg) {}
};

/// One bias-corrected Adam update of `params` in place. Moment buffers are
/// created on the first call and must match parameter shapes afterwards.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state);

/// Convenience overload for a single tensor.
void adam_step(Tensor& param, const Tensor& grad, AdamState& state);

}  // namespace rvp

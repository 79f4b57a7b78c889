#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include "rvp/tensor.hpp"

namespace rvp {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Deterministic child seed; every component derives its randomness from
/// the run seed through a fixed chain of tags.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t s = splitmix64(seed);
  for (std::uint64_t t : tags) s = splitmix64(s ^ splitmix64(t + 0x632BE59BD9B4E019ull));
  return s;
}

inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags = {}) {
  return Rng(derive_seed(seed, tags));
}

inline void fill_gaussian(Tensor& t, Rng& rng, float stddev) {
  std::normal_distribution<float> d(0.0f, stddev);
  for (float& v : t.vec()) v = d(rng);
}

inline void fill_uniform(Tensor& t, Rng& rng, float lo = 0.0f, float hi = 1.0f) {
  std::uniform_real_distribution<float> d(lo, hi);
  for (float& v : t.vec()) v = d(rng);
}

inline KernelTensor random_kernel(std::size_t k, std::size_t m_in, std::size_t m_out, Rng& rng,
                                  float stddev = 1.0f) {
  KernelTensor K(k, m_in, m_out);
  fill_gaussian(K.weights(), rng, stddev);
  return K;
}

}  // namespace rvp

#pragma once

#include <cmath>
#include <functional>

#include "rvp/random.hpp"
#include "rvp/tensor.hpp"

namespace rvp::testing {

inline Tensor random_map(std::size_t n, std::size_t c, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
  Tensor t = Tensor::map(n, n, c);
  fill_uniform(t, rng, lo, hi);
  return t;
}

/// Central-difference gradient of f at x (perturbing x in place).
inline std::vector<double> numeric_grad(Tensor& x, const std::function<double()>& f, double h) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float orig = x[i];
    x[i] = orig + static_cast<float>(h);
    const double fp = f();
    x[i] = orig - static_cast<float>(h);
    const double fm = f();
    x[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// ||a - b|| / max(||b||, tiny).
inline double rel_error(const Tensor& a, const std::vector<double>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-30);
}

}  // namespace rvp::testing

#include "rvp/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "rvp/conv.hpp"
#include "rvp/random.hpp"

namespace rvp {
namespace {

double norm2(const std::vector<double>& a) {
  double s = 0.0;
  for (double v : a) s += v * v;
  return std::sqrt(s);
}

std::vector<double> to_double(std::span<const float> a) { return {a.begin(), a.end()}; }

Tensor to_map(const std::vector<double>& a, std::size_t n, std::size_t m) {
  Tensor t = Tensor::map(n, n, m);
  for (std::size_t i = 0; i < a.size(); ++i) t[i] = static_cast<float>(a[i]);
  return t;
}

void check_layer_size(const KernelTensor& kernel, std::size_t n) {
  require(kernel.k() > 0, "spectral: empty kernel");
  require(n >= kernel.k(), "spectral: image size " + std::to_string(n) + " smaller than kernel size " +
                               std::to_string(kernel.k()));
}

}  // namespace

PowerIterationState make_power_state(const KernelTensor& kernel, std::size_t n, std::uint64_t seed) {
  check_layer_size(kernel, n);
  PowerIterationState s;
  s.u = Tensor::map(n, n, kernel.m_out());
  Rng rng = make_rng(seed, {0x5057});
  fill_gaussian(s.u, rng, 1.0f);
  const double nrm = l2_norm(s.u.data());
  for (float& v : s.u.vec()) v = static_cast<float>(v / nrm);
  return s;
}

PowerIterationResult power_iteration_layer(const KernelTensor& kernel, std::size_t n, PowerIterationState& state,
                                           std::size_t iters, PaddingMode pad, double rel_tol) {
  check_layer_size(kernel, n);
  require(state.u.shape() == Shape({n, n, kernel.m_out()}),
          "power iteration: state u has shape " + shape_str(state.u.shape()) + ", expected " +
              shape_str(Shape{n, n, kernel.m_out()}));
  const ConvGeometry g{n, n, kernel.k(), kernel.m_in(), kernel.m_out(), pad};
  const std::vector<double> K = to_double(kernel.weights().data());
  std::vector<double> u = to_double(state.u.data());
  std::vector<double> v(n * n * kernel.m_in());
  std::vector<double> ku(u.size());

  PowerIterationResult res;
  double prev = -1.0;
  for (std::size_t it = 0; it < iters; ++it) {
    std::fill(v.begin(), v.end(), 0.0);
    conv2d_adjoint<double>(g, u, K, v);
    const double nv = norm2(v);
    if (nv == 0.0) {
      res.degenerate = true;
      break;
    }
    for (double& x : v) x /= nv;
    std::fill(ku.begin(), ku.end(), 0.0);
    conv2d_forward<double>(g, v, K, ku);
    const double nu = norm2(ku);  // equals u^T (K * v) after normalization
    if (nu == 0.0) {
      res.degenerate = true;
      break;
    }
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = ku[i] / nu;
    res.sigma = nu;
    ++state.iterations;
    if (rel_tol > 0.0 && prev > 0.0 && std::fabs(nu - prev) <= rel_tol * nu) break;
    prev = nu;
  }
  if (res.degenerate) res.sigma = 0.0;
  state.sigma = res.sigma;
  state.u = to_map(u, n, kernel.m_out());
  res.v = to_map(v, n, kernel.m_in());
  return res;
}

KernelPowerState make_kernel_power_state(const KernelTensor& kernel, std::uint64_t seed) {
  KernelPowerState s;
  s.u.resize(kernel.m_out());
  Rng rng = make_rng(seed, {0x4B50});
  std::normal_distribution<double> d;
  for (double& x : s.u) x = d(rng);
  const double nrm = norm2(s.u);
  for (double& x : s.u) x /= nrm;
  return s;
}

KernelPowerResult power_iteration_kernel2d(const KernelTensor& kernel, KernelPowerState& state, std::size_t iters) {
  const std::size_t rows = kernel.k() * kernel.k() * kernel.m_in();
  const std::size_t mo = kernel.m_out();
  require(state.u.size() == mo, "kernel power iteration: state has wrong length");
  // Weights are stored row-major as [rows, m_out]; the algorithm's matrix is its transpose.
  const auto& w = kernel.weights();
  KernelPowerResult res;
  std::vector<double> v(rows);
  std::vector<double>& u = state.u;
  for (std::size_t it = 0; it < iters; ++it) {
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t o = 0; o < mo; ++o) s += static_cast<double>(w[r * mo + o]) * u[o];
      v[r] = s;
    }
    const double nv = norm2(v);
    if (nv == 0.0) {
      res.degenerate = true;
      break;
    }
    for (double& x : v) x /= nv;
    std::vector<double> kv(mo, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t o = 0; o < mo; ++o) kv[o] += static_cast<double>(w[r * mo + o]) * v[r];
    const double nu = norm2(kv);
    if (nu == 0.0) {
      res.degenerate = true;
      break;
    }
    for (std::size_t o = 0; o < mo; ++o) u[o] = kv[o] / nu;
    res.sigma = nu;
    ++state.iterations;
  }
  if (res.degenerate) res.sigma = 0.0;
  state.sigma = res.sigma;
  res.v = std::move(v);
  return res;
}

double layer_sigma1(const KernelTensor& kernel, std::size_t n, std::size_t max_iters, double rel_tol,
                    std::uint64_t seed, PaddingMode pad) {
  PowerIterationState st = make_power_state(kernel, n, seed);
  return power_iteration_layer(kernel, n, st, max_iters, pad, rel_tol).sigma;
}

namespace {

// Transfer matrices H(p,q)[o,i] = sum_{dy,dx} K[dy,dx,i,o] exp(2 pi j (p (dy-r) + q (dx-r)) / n).
// Evaluated directly over the k x k support, which equals the DFT of the
// kernel zero-padded (and centred) to n x n.
template <typename Visit>
void for_each_transfer_matrix(const KernelTensor& kernel, std::size_t n, Visit&& visit) {
  const std::size_t k = kernel.k(), mi = kernel.m_in(), mo = kernel.m_out();
  const auto r = static_cast<std::ptrdiff_t>(k / 2);
  std::vector<std::complex<double>> tw(n);
  for (std::size_t j = 0; j < n; ++j)
    tw[j] = std::polar(1.0, 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(n));
  auto twiddle = [&](std::size_t p, std::ptrdiff_t d) {
    const auto nn = static_cast<std::ptrdiff_t>(n);
    const auto idx = ((static_cast<std::ptrdiff_t>(p) * d) % nn + nn) % nn;
    return tw[static_cast<std::size_t>(idx)];
  };
  Eigen::MatrixXcd H(mo, mi);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t q = 0; q < n; ++q) {
      H.setZero();
      for (std::size_t dy = 0; dy < k; ++dy) {
        for (std::size_t dx = 0; dx < k; ++dx) {
          const std::complex<double> e = twiddle(p, static_cast<std::ptrdiff_t>(dy) - r) *
                                         twiddle(q, static_cast<std::ptrdiff_t>(dx) - r);
          for (std::size_t i = 0; i < mi; ++i)
            for (std::size_t o = 0; o < mo; ++o)
              H(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(i)) +=
                  e * static_cast<double>(kernel.at(dy, dx, i, o));
        }
      }
      visit(H);
    }
  }
}

}  // namespace

LayerSpectrum fft_exact_spectrum(const KernelTensor& kernel, std::size_t n) {
  check_layer_size(kernel, n);
  LayerSpectrum s;
  s.n = n;
  s.source = SpectrumSource::fft_exact;
  s.sigma.reserve(n * n * std::min(kernel.m_in(), kernel.m_out()));
  for_each_transfer_matrix(kernel, n, [&](const Eigen::MatrixXcd& H) {
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(H);
    const auto& sv = svd.singularValues();
    for (Eigen::Index i = 0; i < sv.size(); ++i) s.sigma.push_back(sv(i));
  });
  std::sort(s.sigma.begin(), s.sigma.end(), std::greater<>());
  double f2 = 0.0;
  for (double x : s.sigma) f2 += x * x;
  s.frobenius = std::sqrt(f2);
  return s;
}

double fft_sigma1(const KernelTensor& kernel, std::size_t n) {
  check_layer_size(kernel, n);
  double best = 0.0;
  // Only the top singular value is needed: largest eigenvalue of the smaller Gram matrix.
  for_each_transfer_matrix(kernel, n, [&](const Eigen::MatrixXcd& H) {
    const Eigen::MatrixXcd G = H.rows() <= H.cols() ? Eigen::MatrixXcd(H * H.adjoint()) : Eigen::MatrixXcd(H.adjoint() * H);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(G, Eigen::EigenvaluesOnly);
    best = std::max(best, es.eigenvalues().maxCoeff());
  });
  return std::sqrt(std::max(best, 0.0));
}

Eigen::MatrixXd materialize_operator(const KernelTensor& kernel, std::size_t n, PaddingMode pad) {
  check_layer_size(kernel, n);
  const std::size_t mi = kernel.m_in(), mo = kernel.m_out();
  require(n * n * std::max(mi, mo) <= 4096, "materialize_operator: n^2*m = " +
                                                std::to_string(n * n * std::max(mi, mo)) +
                                                " exceeds the 4096 guardrail");
  const ConvGeometry g{n, n, kernel.k(), mi, mo, pad};
  const std::vector<double> K = to_double(kernel.weights().data());
  const std::size_t cols = n * n * mi, rows = n * n * mo;
  Eigen::MatrixXd W(rows, cols);
  std::vector<double> e(cols, 0.0), col(rows);
  for (std::size_t j = 0; j < cols; ++j) {
    e[j] = 1.0;
    std::fill(col.begin(), col.end(), 0.0);
    conv2d_forward<double>(g, e, K, col);
    for (std::size_t i = 0; i < rows; ++i) W(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = col[i];
    e[j] = 0.0;
  }
  return W;
}

LayerSpectrum materialized_spectrum(const KernelTensor& kernel, std::size_t n, PaddingMode pad) {
  const Eigen::MatrixXd W = materialize_operator(kernel, n, pad);
  // Jacobi, not BDCSVD: the divide-and-conquer solver of Eigen 3.4.0 returns
  // wrong values for highly repeated singular values (e.g. 1x1 kernels, where
  // every value has multiplicity n^2). Slower, but this is the oracle.
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(W);
  LayerSpectrum s;
  s.n = n;
  s.source = SpectrumSource::materialized;
  const auto& sv = svd.singularValues();
  s.sigma.assign(sv.data(), sv.data() + sv.size());
  std::sort(s.sigma.begin(), s.sigma.end(), std::greater<>());
  s.frobenius = W.norm();
  return s;
}

double stable_rank(const LayerSpectrum& spectrum) {
  const double s1 = spectrum.sigma1();
  require(s1 > 0.0, "stable_rank: undefined for sigma_1 = 0");
  return spectrum.frobenius * spectrum.frobenius / (s1 * s1);
}

double layer_frobenius(const KernelTensor& kernel, std::size_t n) { return static_cast<double>(n) * kernel.frobenius(); }

double stable_rank_layer(const KernelTensor& kernel, std::size_t n, double sigma1) {
  require(sigma1 > 0.0, "stable_rank_layer: undefined for sigma_1 = 0");
  const double f = layer_frobenius(kernel, n);
  return f * f / (sigma1 * sigma1);
}

std::vector<double> average_sorted_spectra(const std::vector<LayerSpectrum>& spectra) {
  std::size_t len = 0;
  for (const auto& s : spectra) len = std::max(len, s.sigma.size());
  std::vector<double> avg(len, 0.0);
  if (spectra.empty()) return avg;
  for (const auto& s : spectra)
    for (std::size_t i = 0; i < s.sigma.size(); ++i) avg[i] += s.sigma[i];
  for (double& a : avg) a /= static_cast<double>(spectra.size());
  return avg;
}

}  // namespace rvp

#include "rvp/normalization.hpp"

#include <algorithm>
#include <cmath>

#include "rvp/conv.hpp"

namespace rvp {

std::string to_string(NormScheme s) {
  switch (s) {
    case NormScheme::none: return "none";
    case NormScheme::srn: return "srn";
    case NormScheme::srnl: return "srnl";
  }
  return "?";
}

NormScheme norm_scheme_from_string(const std::string& s) {
  if (s == "none") return NormScheme::none;
  if (s == "srn") return NormScheme::srn;
  if (s == "srnl") return NormScheme::srnl;
  throw Error("unknown normalization scheme '" + s + "' (expected none, srn or srnl)");
}

void NormalizerConfig::validate() const {
  require(alpha > 0.0, "norm.alpha must be > 0, got " + std::to_string(alpha));
  require(beta > 0.0 && beta <= 1.0, "norm.beta must lie in (0, 1], got " + std::to_string(beta));
  require(epsilon > 0.0, "norm.epsilon must be > 0");
  require(power_iters >= 1, "norm.power_iters must be >= 1");
}

namespace {

// Effective channel count m in the stable-rank target beta*m: the rank of a
// rectangular layer is bounded by the smaller channel count.
double srnl_m(std::size_t m_in, std::size_t m_out) { return static_cast<double>(std::min(m_in, m_out)); }
double srn_m(const KernelTensor& K) {
  return static_cast<double>(std::min(K.k() * K.k() * K.m_in(), K.m_out()));
}

}  // namespace

void NormalizerConfig::validate_for_layer(std::size_t m, std::size_t n) const {
  validate();
  if (beta >= 1.0) return;
  const double bm = beta * static_cast<double>(m);
  if (scheme == NormScheme::srnl)
    require(bm > 1.0 / (static_cast<double>(n) * n),
            "norm.beta too small: beta*m = " + std::to_string(bm) + " must exceed 1/n^2");
  if (scheme == NormScheme::srn) require(bm > 1.0, "norm.beta too small: beta*m = " + std::to_string(bm) + " must exceed 1");
}

NormalizerState make_normalizer_state(const KernelTensor& kernel, std::size_t n, std::uint64_t seed) {
  NormalizerState s;
  s.layer = make_power_state(kernel, n, seed);
  s.kernel = make_kernel_power_state(kernel, seed);
  s.initialized = true;
  return s;
}

namespace {

void ensure_state(NormalizerState& state, const KernelTensor& K, std::size_t n) {
  if (!state.initialized) state = make_normalizer_state(K, n, 1);
}

std::vector<double> rank_one_double(const Tensor& u, const Tensor& v, std::size_t k, PaddingMode pad) {
  require(u.rank() == 3 && v.rank() == 3 && u.dim(0) == v.dim(0) && u.dim(1) == v.dim(1),
          "rank_one_kernel: u " + shape_str(u.shape()) + " and v " + shape_str(v.shape()) + " must be same-size maps");
  require(k % 2 == 1 && u.dim(0) >= k && u.dim(1) >= k, "rank_one_kernel: invalid kernel size");
  const ConvGeometry g{u.dim(0), u.dim(1), k, v.dim(2), u.dim(2), pad};
  const std::vector<double> ud(u.data().begin(), u.data().end());
  const std::vector<double> vd(v.data().begin(), v.data().end());
  std::vector<double> gk(k * k * v.dim(2) * u.dim(2), 0.0);
  conv2d_kernel_grad<double>(g, vd, ud, gk);
  return gk;
}

double dotd(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

struct Core {
  double m_eff;             // m in beta*m
  double nominal_s1_sq;     // ||S1||^2 assumed by the unprojected variant
  bool project;             // S1 = (<K~,D>/||D||^2) D instead of D
};

// Spectral division by sigma = <K, D> and the stable-rank step, in double.
std::vector<double> normalize_core(const std::vector<double>& K, const std::vector<double>& D, const Core& c,
                                   const NormalizerConfig& cfg, NormalizeInfo& info) {
  const double sigma = dotd(K, D);
  info.sigma = sigma;
  std::vector<double> Kt(K.size());
  for (std::size_t i = 0; i < K.size(); ++i) Kt[i] = K[i] / (sigma + cfg.epsilon);
  if (cfg.beta >= 1.0) return Kt;

  const double dd = dotd(D, D);
  if (dd == 0.0) return Kt;
  const double coef = c.project ? dotd(Kt, D) / dd : 1.0;
  std::vector<double> S1(D.size()), S2(D.size());
  for (std::size_t i = 0; i < D.size(); ++i) {
    S1[i] = coef * D[i];
    S2[i] = Kt[i] - S1[i];
  }
  info.s1_norm = std::sqrt(dotd(S1, S1));
  info.s2_norm = std::sqrt(dotd(S2, S2));
  info.s1_dot_s2 = dotd(S1, S2);
  if (info.s2_norm == 0.0) {
    info.s2_zero = true;
    return Kt;
  }
  const double s1_sq = c.project ? info.s1_norm * info.s1_norm : c.nominal_s1_sq;
  const double target = cfg.beta * c.m_eff - s1_sq;
  if (target <= 0.0) {
    info.target_unreachable = true;
    return Kt;
  }
  info.gamma = std::sqrt(target) / info.s2_norm;
  if (info.gamma < 1.0) {
    info.rank_step_applied = true;
    for (std::size_t i = 0; i < Kt.size(); ++i) Kt[i] = S1[i] + info.gamma * S2[i];
  }
  return Kt;
}

KernelTensor from_double(const KernelTensor& like, const std::vector<double>& w) {
  KernelTensor out(like.k(), like.m_in(), like.m_out());
  for (std::size_t i = 0; i < w.size(); ++i) out.weights()[i] = static_cast<float>(w[i]);
  return out;
}

std::vector<double> srn_direction(const KernelTensor& K, const KernelPowerResult& r, const KernelPowerState& s) {
  const std::size_t rows = K.k() * K.k() * K.m_in(), mo = K.m_out();
  std::vector<double> D(rows * mo);
  for (std::size_t row = 0; row < rows; ++row)
    for (std::size_t o = 0; o < mo; ++o) D[row * mo + o] = r.v[row] * s.u[o];
  return D;
}

// Direction D for the current kernel value; advances the power iteration.
std::vector<double> direction(const KernelTensor& K, std::size_t n, const NormalizerConfig& cfg,
                              NormalizerState& state, NormalizeInfo& info, Core& core) {
  if (cfg.scheme == NormScheme::srnl) {
    const PowerIterationResult r = power_iteration_layer(K, n, state.layer, cfg.power_iters);
    info.degenerate = r.degenerate;
    core = Core{srnl_m(K.m_in(), K.m_out()), 1.0 / (static_cast<double>(n) * n), !cfg.literal_rank_one};
    return rank_one_double(state.layer.u, r.v, K.k(), PaddingMode::circular);
  }
  const KernelPowerResult r = power_iteration_kernel2d(K, state.kernel, cfg.power_iters);
  info.degenerate = r.degenerate;
  core = Core{srn_m(K), 1.0, false};
  return srn_direction(K, r, state.kernel);
}

}  // namespace

KernelTensor rank_one_kernel(const Tensor& u, const Tensor& v, std::size_t k, PaddingMode pad) {
  KernelTensor S(k, v.dim(2), u.dim(2));
  const std::vector<double> g = rank_one_double(u, v, k, pad);
  for (std::size_t i = 0; i < g.size(); ++i) S.weights()[i] = static_cast<float>(g[i]);
  return S;
}

KernelTensor rank_one_kernel_tape(const Tensor& u, const Tensor& v, std::size_t k, PaddingMode pad) {
  Tape t;
  Var kv = t.leaf(KernelTensor(k, v.dim(2), u.dim(2)).weights());
  Var vv = t.constant(v);
  Var uv = t.constant(u);
  Var out = ad::dot(t, ad::conv2d(t, vv, kv, pad), uv);
  t.backward(out);
  return KernelTensor(t.grad(kv));
}

KernelTensor srnl_normalize(const KernelTensor& K, std::size_t n, const NormalizerConfig& config,
                            NormalizerState& state, NormalizeInfo* info) {
  NormalizerConfig cfg = config;
  cfg.scheme = NormScheme::srnl;
  cfg.validate_for_layer(std::min(K.m_in(), K.m_out()), n);
  ensure_state(state, K, n);
  NormalizeInfo local;
  Core core{};
  const std::vector<double> D = direction(K, n, cfg, state, local, core);
  const std::vector<double> Kd(K.weights().data().begin(), K.weights().data().end());
  const KernelTensor out = from_double(K, normalize_core(Kd, D, core, cfg, local));
  if (info) *info = local;
  return out;
}

KernelTensor srn_normalize(const KernelTensor& K, const NormalizerConfig& config, NormalizerState& state,
                           NormalizeInfo* info) {
  NormalizerConfig cfg = config;
  cfg.scheme = NormScheme::srn;
  cfg.validate_for_layer(static_cast<std::size_t>(srn_m(K)), K.k());
  if (!state.initialized) {
    state.kernel = make_kernel_power_state(K, 1);
    state.initialized = true;
  }
  NormalizeInfo local;
  Core core{};
  const std::vector<double> D = direction(K, 0, cfg, state, local, core);
  const std::vector<double> Kd(K.weights().data().begin(), K.weights().data().end());
  const KernelTensor out = from_double(K, normalize_core(Kd, D, core, cfg, local));
  if (info) *info = local;
  return out;
}

KernelTensor normalized_kernel(const KernelTensor& K, std::size_t n, const NormalizerConfig& config,
                               NormalizerState& state, NormalizeInfo* info) {
  KernelTensor out;
  switch (config.scheme) {
    case NormScheme::none: return K;
    case NormScheme::srn: out = srn_normalize(K, config, state, info); break;
    case NormScheme::srnl: out = srnl_normalize(K, n, config, state, info); break;
  }
  for (float& w : out.weights().vec()) w = static_cast<float>(w * config.alpha);
  return out;
}

Var normalized_kernel(Tape& tape, Var K, std::size_t n, const NormalizerConfig& config, NormalizerState& state,
                      NormalizeInfo* info) {
  if (config.scheme == NormScheme::none) return K;
  const KernelTensor Kv(tape.value(K));
  if (config.scheme == NormScheme::srnl) {
    config.validate_for_layer(std::min(Kv.m_in(), Kv.m_out()), n);
    ensure_state(state, Kv, n);
  } else {
    config.validate_for_layer(static_cast<std::size_t>(srn_m(Kv)), Kv.k());
    if (!state.initialized) {
      state.kernel = make_kernel_power_state(Kv, 1);
      state.initialized = true;
    }
  }
  NormalizeInfo local;
  Core core{};
  const std::vector<double> Dd = direction(Kv, n, config, state, local, core);
  Tensor Dt(Kv.weights().shape());
  for (std::size_t i = 0; i < Dd.size(); ++i) Dt[i] = static_cast<float>(Dd[i]);
  const Var D = tape.constant(Dt);

  const Var sigma = ad::dot(tape, K, D);
  local.sigma = tape.value(sigma).item();
  Var Kt = ad::div(tape, K, ad::add_const(tape, sigma, static_cast<float>(config.epsilon)));

  const double dd = dot(Dt.data(), Dt.data());
  if (config.beta < 1.0 && dd > 0.0) {
    const Var S1 = core.project ? ad::mul(tape, D, ad::scale(tape, ad::dot(tape, Kt, D), static_cast<float>(1.0 / dd)))
                                : D;
    const Var S2 = ad::sub(tape, Kt, S1);
    const Tensor& s1 = tape.value(S1);
    const Tensor& s2 = tape.value(S2);
    local.s1_norm = l2_norm(s1.data());
    local.s2_norm = l2_norm(s2.data());
    local.s1_dot_s2 = dot(s1.data(), s2.data());
    const double bm = config.beta * core.m_eff;
    if (local.s2_norm == 0.0) {
      local.s2_zero = true;
    } else {
      const double s1_sq = core.project ? local.s1_norm * local.s1_norm : core.nominal_s1_sq;
      if (bm - s1_sq <= 0.0) {
        local.target_unreachable = true;
      } else {
        local.gamma = std::sqrt(bm - s1_sq) / local.s2_norm;
        if (local.gamma < 1.0) {
          local.rank_step_applied = true;
          const Var num = core.project ? ad::sqrt(tape, ad::add_const(tape, ad::scale(tape, ad::dot(tape, S1, S1), -1.0f),
                                                                      static_cast<float>(bm)))
                                       : tape.constant(Tensor::scalar(static_cast<float>(std::sqrt(bm - s1_sq))));
          const Var gamma = ad::div(tape, num, ad::l2_norm(tape, S2));
          Kt = ad::add(tape, S1, ad::mul(tape, S2, gamma));
        }
      }
    }
  }
  if (info) *info = local;
  return ad::scale(tape, Kt, static_cast<float>(config.alpha));
}

Tensor dampen_features(const Tensor& h, float lambda) {
  require(lambda >= 0.0f && lambda <= 1.0f, "dampening lambda must lie in [0, 1]");
  return scaled(h, lambda);
}

KernelTensor dampen_kernel(const KernelTensor& K, float lambda) {
  return dampen_kernel_slice(K, lambda, 0, K.m_in());
}

KernelTensor dampen_kernel_slice(const KernelTensor& K, float lambda, std::size_t begin, std::size_t end) {
  require(lambda >= 0.0f && lambda <= 1.0f, "dampening lambda must lie in [0, 1]");
  require(begin <= end && end <= K.m_in(), "dampen_kernel_slice: channel range out of bounds");
  KernelTensor out = K;
  for (std::size_t d = 0; d < K.k() * K.k(); ++d)
    for (std::size_t i = begin; i < end; ++i)
      for (std::size_t o = 0; o < K.m_out(); ++o) {
        float& w = out.weights()[(d * K.m_in() + i) * K.m_out() + o];
        w *= lambda;
      }
  return out;
}

}  // namespace rvp

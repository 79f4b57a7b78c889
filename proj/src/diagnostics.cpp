#include "rvp/diagnostics.hpp"

#include <algorithm>
#include <cmath>

#include "rvp/random.hpp"

namespace rvp {

double psnr(const Tensor& a, const Tensor& b, double peak) {
  require(a.same_shape(b), "psnr: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const double m = mse(a, b);
  if (!std::isfinite(m)) return std::numeric_limits<double>::quiet_NaN();
  if (m == 0.0) return kInf;
  return 10.0 * std::log10(peak * peak / m);
}

nlohmann::json json_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

namespace {

nlohmann::json json_array(const std::vector<double>& v) {
  nlohmann::json a = nlohmann::json::array();
  for (double x : v) a.push_back(json_number(x));
  return a;
}

}  // namespace

// STRF --------------------------------------------------------------------------

std::string to_string(StrfLoss l) { return l == StrfLoss::norm_y0 ? "norm_y0" : "center_pixel"; }

StrfLoss strf_loss_from_string(const std::string& s) {
  if (s == "norm_y0") return StrfLoss::norm_y0;
  if (s == "center_pixel") return StrfLoss::center_pixel;
  throw Error("unknown STRF loss '" + s + "' (expected norm_y0 or center_pixel)");
}

std::string to_string(Verdict v) { return v == Verdict::bounded ? "bounded" : "unbounded"; }

nlohmann::json StrfReport::to_json() const {
  return {{"verdict", to_string(verdict)},
          {"tau", tau},
          {"temporal_extent", temporal_extent},
          {"growth", json_number(growth)},
          {"diverged", diverged},
          {"dead_gradient", dead_gradient},
          {"best_loss", json_number(best_loss)},
          {"best_restart", best_restart},
          {"influence", json_array(influence)},
          {"output_norms", json_array(output_norms)},
          {"loss_trace", json_array(loss_trace)},
          {"best_trace", json_array(best_trace)}};
}

StrfReport strf_search(RecurrentModel& model_in, const StrfConfig& cfg) {
  require(cfg.tau + 1 <= RecurrentModel::kMaxUnroll, "strf: tau + 1 exceeds the unroll limit");
  require(cfg.restarts >= 1, "strf: restarts must be >= 1");
  require(cfg.n >= model_in.spec().kernel_size, "strf: image size smaller than the kernel");
  RecurrentModel model = model_in.normalizer().scheme == NormScheme::none ? model_in : model_in.frozen();
  const std::size_t T = 2 * cfg.tau + 1, c = model.spec().in_channels;

  StrfReport rep;
  rep.tau = cfg.tau;
  rep.best_loss = -kInf;
  std::vector<Tensor> best_init;
  bool all_dead = true;

  for (std::size_t r = 0; r < cfg.restarts; ++r) {
    Rng rng = make_rng(cfg.seed, {0x53545246, r});
    std::vector<Tensor> init(T, Tensor::map(cfg.n, cfg.n, c));
    for (Tensor& x : init) fill_uniform(x, rng);
    std::vector<Tensor> X = init;
    AdamState adam(AdamConfig{cfg.lr, 0.9f, 0.999f, 1e-8f, NonFinitePolicy::clamp_and_record});
    bool dead = true;
    for (std::size_t it = 0; it <= cfg.iters; ++it) {
      Tape tape;
      const BoundParams p = model.bind(tape, BindMode::eval);
      std::vector<Var> xs;
      for (std::size_t t = 0; t <= cfg.tau; ++t) xs.push_back(tape.leaf(X[t]));
      const std::vector<Var> Y = model.unroll(tape, p, xs);
      const Var loss = cfg.loss == StrfLoss::norm_y0 ? ad::l2_norm(tape, Y.back()) : ad::l1_center_pixel(tape, Y.back());
      const double L = tape.value(loss).item();
      rep.loss_trace.push_back(L);
      if (L > rep.best_loss) {
        rep.best_loss = L;
        rep.best_restart = r;
        rep.X = X;
        best_init = init;
      }
      rep.best_trace.push_back(rep.best_loss);
      if (it == cfg.iters) break;

      tape.backward(loss);
      std::vector<Tensor> grads;
      std::vector<Tensor*> params;
      for (std::size_t t = 0; t <= cfg.tau; ++t) {
        Tensor g = tape.grad(xs[t]);
        for (float& v : g.vec()) {
          if (v != 0.0f) dead = dead && it > 0;
          v = -v;  // ascent
        }
        grads.push_back(std::move(g));
        params.push_back(&X[t]);
      }
      adam_step(params, grads, adam);
      for (std::size_t t = 0; t <= cfg.tau; ++t)
        for (float& v : X[t].vec()) v = std::isfinite(v) ? std::clamp(v, 0.0f, 1.0f) : 0.0f;
    }
    all_dead = all_dead && dead;
  }
  rep.dead_gradient = all_dead;
  if (rep.X.empty()) {  // every loss was NaN
    rep.X.assign(T, Tensor::map(cfg.n, cfg.n, c));
    best_init = rep.X;
  }

  RecurrentState state;
  for (const Tensor& x : rep.X) {
    Tensor y = model.step(state, x).y;
    rep.output_norms.push_back(l2_norm(y.data()));
    rep.Y.push_back(std::move(y));
  }
  for (std::size_t t = 0; t < T; ++t) {
    double s = 0.0;
    for (std::size_t i = 0; i < rep.X[t].size(); ++i) s += std::fabs(rep.X[t][i] - best_init[t][i]);
    rep.influence.push_back(s / static_cast<double>(rep.X[t].size()));
  }
  for (long t = -static_cast<long>(cfg.tau); t <= 0; ++t)
    if (rep.influence[rep.index(t)] > cfg.theta_infl) ++rep.temporal_extent;

  const double y0 = rep.output_norms[rep.index(0)];
  bool nonfinite = !std::isfinite(y0);
  double growth = 0.0;
  for (long t = 1; t <= static_cast<long>(cfg.tau); ++t) {
    const double v = rep.output_norms[rep.index(t)];
    if (!std::isfinite(v)) {
      nonfinite = true;
      continue;
    }
    growth = std::max(growth, y0 > 0.0 ? v / y0 : (v > 0.0 ? kInf : 0.0));
  }
  rep.growth = nonfinite ? kInf : growth;
  rep.diverged = nonfinite || rep.growth > cfg.theta_div;
  const bool reaches_start = rep.influence[rep.index(-static_cast<long>(cfg.tau))] > cfg.theta_infl;
  rep.verdict = reaches_start || rep.diverged ? Verdict::unbounded : Verdict::bounded;
  return rep;
}

// Divergence probe --------------------------------------------------------------

std::vector<ArchitectureSpec> taxonomy_specs(Backbone backbone, std::size_t channels, std::size_t in_channels) {
  std::vector<ArchitectureSpec> out;
  for (Recurrence r : {Recurrence::none_single, Recurrence::none_multi, Recurrence::feature_shift, Recurrence::frame,
                       Recurrence::feature, Recurrence::rlsp}) {
    ArchitectureSpec s;
    s.backbone = backbone;
    s.recurrence = r;
    s.channels = channels;
    s.in_channels = in_channels;
    out.push_back(s.resolved());
  }
  return out;
}

ProbeTrace divergence_probe(RecurrentModel& model, std::uint64_t seed, const ProbeConfig& cfg) {
  require(cfg.frames >= 1, "probe: needs at least one frame");
  ProbeTrace tr;
  tr.spec = model.spec();
  tr.seed = seed;
  RecurrentState state;
  for (std::size_t t = 0; t < cfg.frames; ++t) {
    Tensor x = Tensor::map(cfg.n, cfg.n, model.spec().in_channels);
    Rng rng = make_rng(cfg.input_seed, {0x50524F42, seed, t});
    fill_uniform(x, rng);
    const StepResult r = model.step(state, x);
    const double nrm = l2_norm(r.y.data());
    tr.nonfinite = tr.nonfinite || !std::isfinite(nrm);
    tr.norms.push_back(nrm);
  }
  const double y1 = tr.norms.front();
  tr.growth = 0.0;
  for (double v : tr.norms) tr.growth = std::max(tr.growth, std::isfinite(v) ? v / y1 : kInf);
  tr.final_ratio = std::isfinite(tr.norms.back()) ? tr.norms.back() / y1 : kInf;
  return tr;
}

ProbeTrace divergence_probe(const ArchitectureSpec& spec, std::uint64_t seed, const ProbeConfig& cfg) {
  RecurrentModel m = RecurrentModel::build(spec, seed, InitScheme::gaussian, cfg.init_std);
  if (cfg.sigma_scale > 0.0) rescale_layers_to_sigma(m, cfg.sigma_scale, cfg.n);
  return divergence_probe(m, seed, cfg);
}

// Stability harness -------------------------------------------------------------

Tensor FailureInjector::process(const Tensor& noisy) {
  ++count_;
  if (std::find(fail_.begin(), fail_.end(), count_) != fail_.end()) return Tensor(noisy.shape(), 1.0f);
  return noisy;
}

Deciles onset_deciles(const std::vector<std::size_t>& onsets) {
  Deciles d;
  if (onsets.empty()) return d;
  std::vector<double> s(onsets.begin(), onsets.end());
  std::sort(s.begin(), s.end());
  if (s.size() < 10) {
    d.fallback = true;
    d.d1 = s.front();
    d.d9 = s.back();
    return d;
  }
  auto q = [&](double p) {
    const double pos = p * static_cast<double>(s.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - static_cast<double>(lo);
    return lo + 1 < s.size() ? s[lo] + frac * (s[lo + 1] - s[lo]) : s[lo];
  };
  d.d1 = q(0.1);
  d.d9 = q(0.9);
  return d;
}

nlohmann::json StabilityReport::to_json() const {
  return {{"onsets", onsets},
          {"d1", json_number(deciles.d1)},
          {"d9", json_number(deciles.d9)},
          {"decile_fallback", deciles.fallback},
          {"frames", frames},
          {"nonfinite_frames", nonfinite_frames},
          {"mean_psnr", json_number(mean_psnr)},
          {"verdict", unstable() ? "unstable" : "stable"}};
}

StabilityReport stability_harness(Processor& proc, FrameSource& clean, const StabilityConfig& cfg) {
  if (const auto len = clean.length(); len && *len < 2 && (cfg.max_frames == 0 || cfg.max_frames >= 2))
    throw Error("stability harness: stream has " + std::to_string(*len) + " frame(s); at least 2 are required");
  require(cfg.decimate >= 1, "stability harness: decimate must be >= 1");
  const NoiseSpec noise{cfg.noise_sigma, cfg.noise_seed, cfg.clip_noise};
  StabilityReport rep;
  std::size_t since = 0;
  double psum = 0.0;
  std::size_t pcount = 0;
  proc.reset();
  while (cfg.max_frames == 0 || rep.frames < cfg.max_frames) {
    std::optional<Tensor> x = clean.next();
    if (!x) break;
    ++rep.frames;
    ++since;
    const Tensor noisy = add_noise(*x, noise, rep.frames - 1);
    const Tensor y = proc.process(noisy);
    double p = psnr(y, *x);
    if (std::isnan(p)) {
      ++rep.nonfinite_frames;
      p = -kInf;
    }
    if (std::isfinite(p)) {
      psum += p;
      ++pcount;
    }
    if ((rep.frames - 1) % cfg.decimate == 0) rep.psnr_trace.emplace_back(rep.frames, p);
    if (p < cfg.psnr_fail) {
      rep.onsets.push_back(since);
      since = 0;
      proc.reset();
    }
  }
  if (rep.frames < 2) throw Error("stability harness: stream shorter than 2 frames");
  rep.deciles = onset_deciles(rep.onsets);
  rep.mean_psnr = pcount ? psum / static_cast<double>(pcount) : kInf;
  return rep;
}

}  // namespace rvp

// rvplab: train, probe and diagnose recurrent video denoisers.
//
// Exit codes: 0 success / stable, 2 unstable verdict (strf, stability), 1 error.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "rvp/config.hpp"
#include "rvp/dataio.hpp"
#include "rvp/diagnostics.hpp"
#include "rvp/lipschitz.hpp"
#include "rvp/models.hpp"
#include "rvp/random.hpp"
#include "rvp/spectral.hpp"
#include "rvp/training.hpp"

namespace fs = std::filesystem;
using namespace rvp;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitUnstable = 2;

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string seed, out, threads;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "Run configuration file (section.key = value)");
  app->add_option("--set", c.sets, "Override a config key: section.key=value (repeatable)");
  app->add_option("--seed", c.seed, "Master seed (run.seed)");
  app->add_option("--out", c.out, "Output directory (run.out)");
  app->add_option("--threads", c.threads, "Worker threads (run.threads)");
}

/// Config precedence: defaults < preset < config file < flags.
RunConfig resolve(const Common& c, const std::function<void(RunConfig&)>& preset = {},
                  const std::vector<std::pair<std::string, std::string>>& flags = {}) {
  RunConfig cfg;
  if (preset) preset(cfg);
  if (!c.config.empty()) cfg.load(c.config);
  for (const auto& [k, v] : flags)
    if (!v.empty()) cfg.set(k, v);
  if (!c.seed.empty()) cfg.set("run.seed", c.seed);
  if (!c.out.empty()) cfg.set("run.out", c.out);
  if (!c.threads.empty()) cfg.set("run.threads", c.threads);
  for (const auto& s : c.sets) cfg.set_assignment(s);
  cfg.get_u64("run.seed");
  if (cfg.get_size("run.threads") == 0) throw Error("config key 'run.threads': must be >= 1");
  return cfg;
}

fs::path out_dir(const RunConfig& cfg) {
  const fs::path d = cfg.get("run.out");
  fs::create_directories(d);
  return d;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream f(p);
  if (!f) throw Error("cannot write '" + p.string() + "'");
  f << s;
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(9) << v;
  return os.str();
}

Checkpoint load_checkpoint_from(const RunConfig& cfg) {
  const std::string& p = cfg.get("run.checkpoint");
  if (p.empty()) throw Error("no checkpoint given (--checkpoint or run.checkpoint)");
  if (!fs::exists(p)) throw Error("checkpoint '" + p + "' does not exist");
  return load_checkpoint(p);
}

/// Inference copy: normalization power iterations converged on the copy,
/// then the effective kernels are frozen. The checkpoint is not modified.
RecurrentModel inference_model(const Checkpoint& ck, const RunConfig& cfg) {
  RecurrentModel m = ck.model;
  if (m.normalizer().scheme == NormScheme::none) return m;
  m.converge_normalizer(cfg.get_size("norm.converge_iters"));
  return m.frozen();
}

/// Runs fn(i) for i in [0, count) on `threads` workers; results are kept by index.
template <typename T, typename F>
std::vector<T> parallel_map(std::size_t count, std::size_t threads, F fn) {
  std::vector<T> out(count);
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < count;) {
      try {
        out[i] = fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < std::min(threads, count); ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

/// Horizontal strip of the frames t = -tau, -tau+every, ..., separated by a
/// one-pixel white line.
Tensor frame_grid(const std::vector<Tensor>& frames, std::size_t every) {
  std::vector<const Tensor*> pick;
  for (std::size_t i = 0; i < frames.size(); i += every) pick.push_back(&frames[i]);
  const std::size_t h = frames.front().dim(0), w = frames.front().dim(1), c = frames.front().dim(2);
  Tensor g = Tensor::map(h, pick.size() * (w + 1) - 1, c, 1.0f);
  for (std::size_t k = 0; k < pick.size(); ++k)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t ch = 0; ch < c; ++ch) g.at(y, k * (w + 1) + x, ch) = pick[k]->at(y, x, ch);
  return g;
}

// train ---------------------------------------------------------------------------

int cmd_train(const RunConfig& cfg) {
  const ArchitectureSpec spec = architecture_from_config(cfg);
  const NormalizerConfig norm = normalizer_from_config(cfg);
  const TrainConfig tc = train_from_config(cfg);
  const std::uint64_t seed = cfg.get_u64("run.seed");
  const std::string data_path = cfg.get("data.path");
  if (!data_path.empty() && !fs::exists(data_path)) throw Error("config key 'data.path': '" + data_path + "' does not exist");
  const std::string resume = cfg.get("train.resume");
  if (!resume.empty() && !fs::exists(resume)) throw Error("config key 'train.resume': '" + resume + "' does not exist");
  const MotionConfig motion = motion_from_config(cfg);
  const float lambda = static_cast<float>(cfg.get_double("dampening.lambda"));
  const std::string route = cfg.get("dampening.route");
  if (route != "features" && route != "kernel") throw Error("config key 'dampening.route': expected features or kernel");
  const std::size_t ckpt_every = cfg.get_size("train.checkpoint_every");

  const fs::path out = out_dir(cfg);
  cfg.write(out / "config.txt");

  RecurrentModel model;
  AdamState adam(AdamConfig{tc.lr});
  std::size_t start = 0;
  if (!resume.empty()) {
    Checkpoint ck = load_checkpoint(resume);
    if (!(ck.model.spec() == spec)) throw Error("checkpoint/architecture mismatch: '" + resume + "' holds " +
                                                ck.model.spec().to_json().dump() + ", config asks for " +
                                                spec.to_json().dump());
    model = std::move(ck.model);
    if (ck.adam) adam = *ck.adam;
    start = ck.meta.value("steps", std::size_t{0});
  } else {
    model = RecurrentModel::build(spec, seed, init_from_config(cfg), static_cast<float>(cfg.get_double("arch.init_std")));
    if (norm.scheme != NormScheme::none) {
      const std::size_t n = cfg.get_size("norm.n") ? cfg.get_size("norm.n") : tc.crop;
      model.set_normalizer(norm, n, derive_seed(seed, {0x4E4F524D}));
    }
    if (lambda != 1.0f) {
      model.set_dampening(lambda, DampingRoute::features);
      if (route == "kernel") model = dampen_recurrent_kernels(model, lambda);
    }
  }

  TrainingData data = data_path.empty()
                          ? TrainingData::procedural(cfg.get_size("data.stills"), cfg.get_size("data.still_size"),
                                                     spec.in_channels, derive_seed(seed, {0x44415441}), motion)
                          : [&] {
                              auto src = open_sequence(data_path);
                              return TrainingData::from_sequence(read_all(*src));
                            }();

  std::vector<NonFiniteEvent> events;
  auto meta_for = [&](std::size_t steps) {
    nlohmann::json ev = nlohmann::json::array();
    for (const auto& e : events) ev.push_back({{"step", e.step}, {"what", e.what}});
    return nlohmann::json{{"steps", steps},          {"seed", seed},        {"noise_sigma", tc.noise_sigma},
                          {"frames", tc.frames},     {"crop", tc.crop},     {"batch", tc.batch},
                          {"lr", tc.lr},             {"nonfinite_events", ev}};
  };
  std::ofstream csv(out / "loss.csv");
  if (!csv) throw Error("cannot write '" + (out / "loss.csv").string() + "'");
  csv << "step,loss,val_psnr\n";

  std::cout << "training " << to_string(spec.backbone) << "/" << to_string(spec.recurrence) << " m=" << spec.channels
            << " T=" << tc.frames << " steps " << start << ".." << tc.steps << "\n";
  const TrainResult res = train(model, adam, data, tc, start, [&](std::size_t step, const LossRecord& r) {
    csv << loss_csv({r}, false) << std::flush;
    if (!std::isfinite(r.loss)) events.push_back({step, "non-finite loss"});
    if (!std::isnan(r.val_psnr))
      std::cout << "step " << step + 1 << "  loss " << fmt(r.loss) << "  val_psnr " << fmt(r.val_psnr) << " dB\n";
    if (ckpt_every && (step + 1) % ckpt_every == 0 && step + 1 < tc.steps)
      save_checkpoint(out / ("checkpoint_" + std::to_string(step + 1) + ".rvpt"),
                      Checkpoint{model, meta_for(step + 1), adam});
  });
  events = res.events;
  save_checkpoint(out / "model.rvpt", Checkpoint{model, meta_for(res.steps_done), adam});
  for (const auto& e : res.events) std::cout << "event: step " << e.step << ": " << e.what << "\n";
  if (!res.curve.empty())
    std::cout << "loss " << fmt(res.curve.front().loss) << " -> " << fmt(res.curve.back().loss) << ", "
              << res.events.size() << " non-finite event(s)" << (res.halted ? ", halted" : "") << "\n";
  std::cout << "checkpoint: " << (out / "model.rvpt").string() << "\n";
  return kExitOk;
}

// strf ------------------------------------------------------------------------------

int cmd_strf(const RunConfig& cfg) {
  const StrfConfig sc = strf_from_config(cfg);
  const std::size_t every = std::max<std::size_t>(1, cfg.get_size("strf.grid_every"));
  const Checkpoint ck = load_checkpoint_from(cfg);
  const fs::path out = out_dir(cfg);
  cfg.write(out / "config.txt");
  RecurrentModel model = inference_model(ck, cfg);

  const StrfReport rep = strf_search(model, sc);
  nlohmann::json j = rep.to_json();
  write_text(out / "strf.json", j.dump(2) + "\n");
  TensorArchive a;
  for (std::size_t t = 0; t < rep.X.size(); ++t) {
    const long time = static_cast<long>(t) - static_cast<long>(rep.tau);
    a.add("X." + std::to_string(time), rep.X[t]);
    a.add("Y." + std::to_string(time), rep.Y[t]);
  }
  a.save(out / "strf.rvpt");
  write_pnm(out / "strf_X.pnm", frame_grid(rep.X, every));
  write_pnm(out / "strf_Y.pnm", frame_grid(rep.Y, every));
  std::cout << "verdict " << to_string(rep.verdict) << "  temporal_extent " << rep.temporal_extent << "/"
            << rep.tau + 1 << "  growth " << fmt(rep.growth) << "  best_loss " << fmt(rep.best_loss)
            << (rep.dead_gradient ? "  (dead gradient)" : "") << "\n";
  return rep.verdict == Verdict::unbounded ? kExitUnstable : kExitOk;
}

// stability -------------------------------------------------------------------------

int cmd_stability(const RunConfig& cfg, const std::string& stream) {
  const StabilityConfig sc = stability_from_config(cfg);
  const std::vector<std::size_t> inject = cfg.get_size_list("stability.inject");
  const std::uint64_t seed = cfg.get_u64("run.seed");
  const std::size_t frames = cfg.get_size("stability.frames");
  const std::size_t crop = cfg.get_size("stability.crop");
  const std::string data_path = cfg.get("data.path");
  if (stream != "synthetic" && stream != "gray" && stream != "path")
    throw Error("--stream: expected synthetic, gray or path");
  if (stream == "path" && (data_path.empty() || !fs::exists(data_path)))
    throw Error("config key 'data.path': a readable sequence is required for --stream path");

  std::unique_ptr<Processor> proc;
  std::size_t channels = 1;
  if (!inject.empty()) {
    proc = std::make_unique<FailureInjector>(inject);
    channels = cfg.get_size("arch.in_channels");
  } else {
    const Checkpoint ck = load_checkpoint_from(cfg);
    channels = ck.model.spec().in_channels;
    proc = std::make_unique<ModelProcessor>(inference_model(ck, cfg));
  }
  const fs::path out = out_dir(cfg);
  cfg.write(out / "config.txt");

  std::unique_ptr<FrameSource> src;
  if (stream == "path")
    src = open_sequence(data_path);
  else if (stream == "gray")
    src = std::make_unique<ConstantSource>(Tensor::map(crop, crop, channels, 0.5f), frames);
  else
    src = std::make_unique<MotionSource>(
        procedural_still(std::max(cfg.get_size("data.still_size"), crop + 8), channels, derive_seed(seed, {0x44415441})),
        crop, derive_seed(seed, {0x4D4F54}), motion_from_config(cfg), frames);

  const StabilityReport rep = stability_harness(*proc, *src, sc);
  std::ostringstream csv;
  csv << "frame,psnr\n";
  for (const auto& [f, p] : rep.psnr_trace) csv << f << ',' << fmt(p) << '\n';
  write_text(out / "stability.csv", csv.str());
  write_text(out / "stability.json", rep.to_json().dump(2) + "\n");
  std::cout << "frames " << rep.frames << "  onsets " << rep.onsets.size() << "  d1 " << fmt(rep.deciles.d1) << "  d9 "
            << fmt(rep.deciles.d9) << (rep.deciles.fallback ? " (min/max)" : "") << "  mean_psnr "
            << fmt(rep.mean_psnr) << "\n";
  std::cout << "verdict " << (rep.unstable() ? "unstable" : "stable") << "\n";
  return rep.unstable() ? kExitUnstable : kExitOk;
}

// spectrum / normcheck ----------------------------------------------------------------

int cmd_spectrum(const RunConfig& cfg) {
  const std::size_t n = cfg.get_size("spectrum.n");
  if (n == 0) throw Error("config key 'spectrum.n': must be >= 1");
  const Checkpoint ck = load_checkpoint_from(cfg);
  const fs::path out = out_dir(cfg);
  cfg.write(out / "config.txt");
  const RecurrentModel model = inference_model(ck, cfg);

  std::ostringstream csv, sum, avg;
  csv << "layer_index,rank_index,sigma\n";
  sum << "layer_index,name,sigma1,frobenius,stable_rank\n";
  std::vector<LayerSpectrum> spectra;
  for (std::size_t i = 0; i < model.layers().size(); ++i) {
    const LayerSpectrum s = fft_exact_spectrum(model.layers()[i].kernel, n);
    for (std::size_t r = 0; r < s.sigma.size(); ++r) csv << i << ',' << r << ',' << fmt(s.sigma[r]) << '\n';
    sum << i << ',' << model.layers()[i].name << ',' << fmt(s.sigma1()) << ',' << fmt(s.frobenius) << ','
        << fmt(stable_rank(s)) << '\n';
    spectra.push_back(s);
  }
  avg << "rank_index,sigma\n";
  const std::vector<double> mean = average_sorted_spectra(spectra);
  for (std::size_t r = 0; r < mean.size(); ++r) avg << r << ',' << fmt(mean[r]) << '\n';
  write_text(out / "spectrum.csv", csv.str());
  write_text(out / "spectrum_summary.csv", sum.str());
  write_text(out / "spectrum_avg.csv", avg.str());
  std::cout << sum.str();
  return kExitOk;
}

int cmd_normcheck(const RunConfig& cfg) {
  const Checkpoint ck = load_checkpoint_from(cfg);
  std::size_t n = cfg.get_size("norm.n");
  if (n == 0) n = ck.model.normalizer_n() ? ck.model.normalizer_n() : cfg.get_size("spectrum.n");
  const fs::path out = out_dir(cfg);
  cfg.write(out / "config.txt");
  const RecurrentModel model = inference_model(ck, cfg);

  std::ostringstream csv;
  csv << "layer_index,name,normalized,sigma1,stable_rank\n";
  std::cout << std::left << std::setw(14) << "layer" << std::setw(12) << "sigma1" << "stable_rank\n";
  double product = 1.0;
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t i = 0; i < model.layers().size(); ++i) {
    const ConvLayer& L = model.layers()[i];
    const LayerSpectrum s = fft_exact_spectrum(L.kernel, n);
    const double sr = stable_rank(s);
    const bool normed = ck.model.layer_normalized(i);
    product *= s.sigma1();
    csv << i << ',' << L.name << ',' << (normed ? 1 : 0) << ',' << fmt(s.sigma1()) << ',' << fmt(sr) << '\n';
    std::cout << std::setw(14) << L.name << std::setw(12) << fmt(s.sigma1()) << fmt(sr) << "\n";
    layers.push_back({{"name", L.name}, {"normalized", normed}, {"sigma1", s.sigma1()}, {"stable_rank", sr}});
  }
  const LipschitzReport lip = lipschitz_upper_bound(model, n);
  nlohmann::json factors = nlohmann::json::array();
  for (const auto& f : lip.factors) factors.push_back({{"label", f.label}, {"value", f.value}});
  const nlohmann::json j = {{"n", n},
                            {"scheme", to_string(ck.model.normalizer().scheme)},
                            {"layers", layers},
                            {"product_sigma1", product},
                            {"recurrent_path", lip.has_recurrent_path},
                            {"recurrent_bound", lip.bound},
                            {"recurrent_factors", factors},
                            {"residual_adjusted", lip.residual_adjusted}};
  write_text(out / "normcheck.csv", csv.str());
  write_text(out / "normcheck.json", j.dump(2) + "\n");
  std::cout << "product of sigma1 over all layers: " << fmt(product) << "\n";
  if (lip.has_recurrent_path)
    std::cout << "recurrent-path bound (" << lip.factors.size() << " factors): " << fmt(lip.bound)
              << (lip.bound < 1.0 ? "  < 1, contractive" : "  >= 1, not certified") << "\n";
  return kExitOk;
}

// probe -------------------------------------------------------------------------------

int cmd_probe(const RunConfig& cfg) {
  const ProbeConfig pc = probe_from_config(cfg);
  const Backbone backbone = backbone_from_string(cfg.get("probe.backbone"));
  const std::size_t channels = cfg.get_size("probe.channels");
  const std::size_t seeds = cfg.get_size("probe.seeds");
  const double bounded_growth = cfg.get_double("probe.bounded_growth");
  const double divergent_growth = cfg.get_double("probe.divergent_growth");
  const std::uint64_t seed = cfg.get_u64("run.seed");
  const std::size_t in_ch = cfg.get_size("arch.in_channels");
  const fs::path out = out_dir(cfg);
  cfg.write(out / "config.txt");

  const std::vector<ArchitectureSpec> specs = taxonomy_specs(backbone, channels, in_ch);
  const std::size_t jobs = specs.size() * seeds;
  const std::vector<ProbeTrace> traces = parallel_map<ProbeTrace>(jobs, cfg.get_size("run.threads"), [&](std::size_t i) {
    return divergence_probe(specs[i / seeds], derive_seed(seed, {i % seeds}), pc);
  });

  std::ostringstream csv, sum;
  csv << "architecture,seed_index,t,norm\n";
  sum << "architecture,seeds,bounded,divergent,median_growth,class\n";
  std::cout << std::left << std::setw(16) << "architecture" << std::setw(10) << "bounded" << std::setw(11) << "divergent"
            << "median growth\n";
  for (std::size_t a = 0; a < specs.size(); ++a) {
    std::vector<double> g;
    std::size_t bounded = 0, divergent = 0;
    const std::string name = to_string(specs[a].recurrence);
    for (std::size_t s = 0; s < seeds; ++s) {
      const ProbeTrace& tr = traces[a * seeds + s];
      for (std::size_t t = 0; t < tr.norms.size(); ++t) csv << name << ',' << s << ',' << t + 1 << ',' << fmt(tr.norms[t]) << '\n';
      g.push_back(tr.growth);
      if (tr.growth <= bounded_growth) ++bounded;
      if (tr.growth > divergent_growth || tr.nonfinite) ++divergent;
    }
    std::sort(g.begin(), g.end());
    const double med = g.empty() ? 0.0 : g[g.size() / 2];
    const std::string cls = bounded == seeds ? "bounded" : divergent * 5 >= seeds * 4 ? "divergent" : "mixed";
    sum << name << ',' << seeds << ',' << bounded << ',' << divergent << ',' << fmt(med) << ',' << cls << '\n';
    std::cout << std::setw(16) << name << std::setw(10) << bounded << std::setw(11) << divergent << fmt(med) << "  "
              << cls << "\n";
  }
  write_text(out / "probe.csv", csv.str());
  write_text(out / "probe_summary.csv", sum.str());
  return kExitOk;
}

// gendata -----------------------------------------------------------------------------

int cmd_gendata(const RunConfig& cfg, const std::string& still_path) {
  const std::uint64_t seed = cfg.get_u64("run.seed");
  const std::size_t crop = cfg.get_size("data.crop");
  const std::size_t length = cfg.get_size("data.length");
  const std::string format = cfg.get("data.format");
  if (format != "pgm" && format != "rvpt") throw Error("config key 'data.format': expected pgm or rvpt");
  if (length == 0) throw Error("config key 'data.length': must be >= 1");
  const Tensor still = still_path.empty() ? procedural_still(cfg.get_size("data.still_size"),
                                                             cfg.get_size("arch.in_channels"), derive_seed(seed, {0x44415441}))
                                          : read_pnm(still_path);
  const fs::path out = out_dir(cfg);
  cfg.write(out / "config.txt");
  const std::vector<Tensor> seq =
      synth_motion_sequence(still, crop, length, derive_seed(seed, {0x4D4F54}), motion_from_config(cfg));
  if (format == "rvpt") {
    save_sequence_rvpt(out / "sequence.rvpt", seq);
    std::cout << "wrote " << (out / "sequence.rvpt").string() << "\n";
  } else {
    fs::create_directories(out / "frames");
    const char* ext = still.dim(2) == 1 ? "pgm" : "ppm";
    for (std::size_t t = 0; t < seq.size(); ++t) {
      char name[64];
      std::snprintf(name, sizeof name, "frame_%06zu.%s", t, ext);
      write_pnm(out / "frames" / name, seq[t]);
    }
    std::cout << "wrote " << seq.size() << " frames to " << (out / "frames").string() << "\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rvplab - stability analysis of recurrent video denoisers"};
  app.require_subcommand(1);
  Common common;

  auto* train = app.add_subcommand("train", "Train a model; writes a checkpoint and loss.csv");
  add_common(train, common);
  std::string preset, frames, steps, data, resume;
  train->add_option("--preset", preset, "Preset: appendix-c")->check(CLI::IsMember({"appendix-c"}));
  train->add_option("--frames", frames, "Training sequence length T (train.frames)");
  train->add_option("--steps", steps, "Total training steps (train.steps)");
  train->add_option("--data", data, "Clean training sequence: directory of PGM/PPM or .rvpt (data.path)");
  train->add_option("--resume", resume, "Checkpoint to resume from (train.resume)");

  std::string checkpoint;
  auto* strf = app.add_subcommand("strf", "Adversarial spatio-temporal receptive field search");
  add_common(strf, common);
  std::string tau, iters, n, loss, restarts;
  strf->add_option("--checkpoint", checkpoint, "Model checkpoint (run.checkpoint)");
  strf->add_option("--tau", tau, "Past frames (strf.tau)");
  strf->add_option("--iters", iters, "Adam iterations per restart (strf.iters)");
  strf->add_option("--n", n, "Image size (strf.n)");
  strf->add_option("--loss", loss, "norm_y0 or center_pixel (strf.loss)");
  strf->add_option("--restarts", restarts, "Random restarts (strf.restarts)");

  auto* stab = app.add_subcommand("stability", "Long-sequence stability harness");
  add_common(stab, common);
  std::string inject, stream = "synthetic", stab_frames;
  stab->add_option("--checkpoint", checkpoint, "Model checkpoint (run.checkpoint)");
  stab->add_option("--inject", inject, "Use the failure injector failing at these frames, e.g. 100,250 (stability.inject)");
  stab->add_option("--stream", stream, "synthetic (motion over a procedural still), gray (constant 0.5) or path (data.path)")
      ->check(CLI::IsMember({"synthetic", "gray", "path"}));
  stab->add_option("--frames", stab_frames, "Stream length for generated streams (stability.frames)");
  stab->add_option("--data", data, "Clean sequence for --stream path (data.path)");

  auto* spec = app.add_subcommand("spectrum", "Per-layer singular value spectra");
  add_common(spec, common);
  spec->add_option("--checkpoint", checkpoint, "Model checkpoint (run.checkpoint)");
  spec->add_option("--n", n, "Image size of the layer operators (spectrum.n)");

  auto* probe = app.add_subcommand("probe", "Divergence probe of the six recurrence types at random initialization");
  add_common(probe, common);
  std::string backbone, channels, seeds, sigma_scale, probe_frames;
  probe->add_option("--backbone", backbone, "vdncnn, vresnet or tiny_vdncnn (probe.backbone)");
  probe->add_option("--channels", channels, "Feature channels (probe.channels)");
  probe->add_option("--seeds", seeds, "Seeds per architecture (probe.seeds)");
  probe->add_option("--frames", probe_frames, "Sequence length (probe.frames)");
  probe->add_option("--sigma-scale", sigma_scale, "Rescale every layer to this sigma1 first; 0 = off (probe.sigma_scale)");

  auto* normcheck = app.add_subcommand("normcheck", "Per-layer sigma1 / stable rank and the recurrent-path bound");
  add_common(normcheck, common);
  normcheck->add_option("--checkpoint", checkpoint, "Model checkpoint (run.checkpoint)");
  normcheck->add_option("--n", n, "Image size (norm.n; default: the checkpoint's)");

  auto* gendata = app.add_subcommand("gendata", "Synthetic-motion sequence from a still");
  add_common(gendata, common);
  std::string still, length;
  gendata->add_option("--still", still, "Still image (PGM/PPM); default: procedural");
  gendata->add_option("--length", length, "Frames (data.length)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitError;
  }

  try {
    if (*train) {
      const RunConfig cfg = resolve(
          common,
          preset.empty() ? std::function<void(RunConfig&)>{} : [](RunConfig& c) { apply_long_sequence_preset(c); },
          {{"train.frames", frames}, {"train.steps", steps}, {"data.path", data}, {"train.resume", resume}});
      return cmd_train(cfg);
    }
    if (*strf)
      return cmd_strf(resolve(common, {},
                              {{"run.checkpoint", checkpoint},
                               {"strf.tau", tau},
                               {"strf.iters", iters},
                               {"strf.n", n},
                               {"strf.loss", loss},
                               {"strf.restarts", restarts}}));
    if (*stab)
      return cmd_stability(resolve(common, {},
                                   {{"run.checkpoint", checkpoint},
                                    {"stability.inject", inject},
                                    {"stability.frames", stab_frames},
                                    {"data.path", data}}),
                           stream);
    if (*spec) return cmd_spectrum(resolve(common, {}, {{"run.checkpoint", checkpoint}, {"spectrum.n", n}}));
    if (*probe)
      return cmd_probe(resolve(common, {},
                               {{"probe.backbone", backbone},
                                {"probe.channels", channels},
                                {"probe.seeds", seeds},
                                {"probe.frames", probe_frames},
                                {"probe.sigma_scale", sigma_scale}}));
    if (*normcheck) return cmd_normcheck(resolve(common, {}, {{"run.checkpoint", checkpoint}, {"norm.n", n}}));
    if (*gendata) return cmd_gendata(resolve(common, {}, {{"data.length", length}}), still);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}

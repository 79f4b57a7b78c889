#include "rvp/training.hpp"

#include <cmath>
#include <sstream>

#include "rvp/diagnostics.hpp"
#include "rvp/random.hpp"

namespace rvp {

namespace {
constexpr std::uint64_t kBatchTag = 0x4241544348;  // "BATCH"
constexpr std::uint64_t kNoiseTag = 0x4E4F495345;  // "NOISE"
constexpr std::uint64_t kValTag = 0x56414C;        // "VAL"
}  // namespace

TrainingData TrainingData::synthetic(std::vector<Tensor> stills, MotionConfig motion) {
  require(!stills.empty(), "training data: empty still pool");
  for (const Tensor& s : stills)
    require(s.rank() == 3 && s.dim(2) == stills.front().dim(2), "training data: stills must be [h,w,c] maps with equal channels");
  TrainingData d;
  d.stills_ = std::move(stills);
  d.motion_ = motion;
  return d;
}

TrainingData TrainingData::procedural(std::size_t count, std::size_t size, std::size_t channels, std::uint64_t seed,
                                      MotionConfig motion) {
  std::vector<Tensor> stills;
  for (std::size_t i = 0; i < count; ++i) stills.push_back(procedural_still(size, channels, derive_seed(seed, {i})));
  return synthetic(std::move(stills), motion);
}

TrainingData TrainingData::from_sequence(std::vector<Tensor> frames) {
  require(!frames.empty(), "training data: empty sequence");
  TrainingData d;
  d.sequence_ = std::move(frames);
  return d;
}

std::size_t TrainingData::channels() const {
  return stills_.empty() ? sequence_.front().dim(2) : stills_.front().dim(2);
}

std::vector<Tensor> TrainingData::clip(std::size_t T, std::size_t crop, std::uint64_t key) const {
  if (!sequence_.empty()) return sample_crops(sequence_, crop, T, 1, key).front().frames;
  Rng rng = make_rng(key);
  const Tensor& still = stills_[rng() % stills_.size()];
  MotionConfig mc = motion_;
  mc.y0 = mc.x0 = -1.0;  // random start
  MotionSource src(still, crop, rng(), mc, T);
  return read_all(src);
}

void TrainConfig::validate() const {
  require(steps >= 1, "train.steps must be >= 1");
  require(batch >= 1, "train.batch must be >= 1");
  require(frames >= 1 && frames <= RecurrentModel::kMaxUnroll,
          "train.frames must lie in [1, " + std::to_string(RecurrentModel::kMaxUnroll) + "]");
  require(crop >= 1, "train.crop must be >= 1");
  require(noise_sigma >= 0.0, "train.noise_sigma must be >= 0");
  require(lr >= 0.0f && std::isfinite(lr), "train.lr must be a finite value >= 0");
  require(clip_grad >= 0.0, "train.clip_grad must be >= 0");
}

namespace {

struct Sample {
  std::vector<Tensor> clean, noisy;
};

Sample make_sample(const TrainingData& data, const TrainConfig& cfg, std::uint64_t key) {
  Sample s;
  s.clean = data.clip(cfg.frames, cfg.crop, key);
  const NoiseSpec noise{cfg.noise_sigma, derive_seed(key, {kNoiseTag}), false};
  for (std::size_t t = 0; t < s.clean.size(); ++t) s.noisy.push_back(add_noise(s.clean[t], noise, t));
  return s;
}

}  // namespace

double validation_psnr(RecurrentModel& model, const TrainingData& data, const TrainConfig& cfg) {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < cfg.val_clips; ++i) {
    const Sample s = make_sample(data, cfg, derive_seed(cfg.seed, {kValTag, i}));
    const std::vector<Tensor> Y = model.unroll(s.noisy);
    for (std::size_t t = 0; t < Y.size(); ++t) {
      const double p = psnr(Y[t], s.clean[t]);
      sum += std::isfinite(p) ? p : (std::isnan(p) ? -kInf : p);
      ++count;
    }
  }
  return count ? sum / static_cast<double>(count) : std::numeric_limits<double>::quiet_NaN();
}

TrainResult train(RecurrentModel& model, AdamState& adam, const TrainingData& data, const TrainConfig& cfg,
                  std::size_t start_step, const std::function<void(std::size_t, const LossRecord&)>& on_step) {
  cfg.validate();
  require(data.channels() == model.spec().in_channels, "training data channels do not match the model input");
  adam.config.lr = cfg.lr;
  adam.config.policy = NonFinitePolicy::reject;
  TrainResult res;
  res.steps_done = start_step;

  for (std::size_t step = start_step; step < cfg.steps; ++step) {
    Tape tape;
    const BoundParams p = model.bind(tape, BindMode::train);
    Var loss{};
    for (std::size_t b = 0; b < cfg.batch; ++b) {
      const Sample s = make_sample(data, cfg, derive_seed(cfg.seed, {kBatchTag, step, b}));
      std::vector<Var> X;
      for (const Tensor& x : s.noisy) X.push_back(tape.constant(x));
      const std::vector<Var> Y = model.unroll(tape, p, X);
      for (std::size_t t = 0; t < Y.size(); ++t) {
        const Var l = ad::mse(tape, Y[t], tape.constant(s.clean[t]));
        loss = (b == 0 && t == 0) ? l : ad::add(tape, loss, l);
      }
    }
    loss = ad::scale(tape, loss, 1.0f / static_cast<float>(cfg.batch));
    LossRecord rec{step, tape.value(loss).item()};

    bool skip = false;
    if (!std::isfinite(rec.loss)) {
      res.events.push_back({step, "non-finite loss"});
      skip = true;
    } else {
      tape.backward(loss);
      std::vector<Tensor> grads;
      for (Var v : p.raw_kernels) grads.push_back(tape.grad(v));
      for (Var v : p.raw_biases) grads.push_back(tape.grad(v));
      double sq = 0.0;
      for (const Tensor& g : grads) {
        const double n = l2_norm(g.data());
        sq += n * n;
      }
      if (!std::isfinite(sq)) {
        res.events.push_back({step, "non-finite gradient"});
        skip = true;
      } else {
        if (cfg.clip_grad > 0.0 && std::sqrt(sq) > cfg.clip_grad) {
          const auto f = static_cast<float>(cfg.clip_grad / std::sqrt(sq));
          for (Tensor& g : grads)
            for (float& v : g.vec()) v *= f;
        }
        const std::vector<Tensor*> params = model.parameters();
        adam_step(params, grads, adam);
      }
    }
    res.steps_done = step + 1;
    if (skip && cfg.halt_on_nonfinite) {
      res.halted = true;
      res.curve.push_back(rec);
      if (on_step) on_step(step, rec);
      break;
    }
    if (cfg.val_every && ((step + 1) % cfg.val_every == 0 || step + 1 == cfg.steps))
      rec.val_psnr = validation_psnr(model, data, cfg);
    res.curve.push_back(rec);
    if (on_step) on_step(step, rec);
  }
  return res;
}

std::string loss_csv(const std::vector<LossRecord>& curve, bool header) {
  std::ostringstream os;
  os.precision(9);
  if (header) os << "step,loss,val_psnr\n";
  for (const LossRecord& r : curve) {
    os << r.step << ',' << r.loss << ',';
    if (!std::isnan(r.val_psnr)) os << r.val_psnr;
    os << '\n';
  }
  return os.str();
}

std::vector<double> window_means(const std::vector<LossRecord>& curve, std::size_t window) {
  require(window >= 1, "window_means: window must be >= 1");
  std::vector<double> out;
  for (std::size_t i = 0; i + window <= curve.size(); i += window) {
    double s = 0.0;
    for (std::size_t j = i; j < i + window; ++j) s += curve[j].loss;
    out.push_back(s / static_cast<double>(window));
  }
  return out;
}

}  // namespace rvp

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "rvp/adam.hpp"
#include "rvp/dataio.hpp"
#include "rvp/models.hpp"

namespace rvp {

/// Where training clips come from: synthetic motion over a pool of stills,
/// or random aligned crops of a user-supplied clean sequence.
class TrainingData {
 public:
  static TrainingData synthetic(std::vector<Tensor> stills, MotionConfig motion = {});
  /// Pool of procedural stills.
  static TrainingData procedural(std::size_t count, std::size_t size, std::size_t channels, std::uint64_t seed,
                                 MotionConfig motion = {});
  static TrainingData from_sequence(std::vector<Tensor> frames);

  /// T clean frames of crop x crop pixels, fully determined by `key`.
  std::vector<Tensor> clip(std::size_t T, std::size_t crop, std::uint64_t key) const;
  std::size_t channels() const;

 private:
  std::vector<Tensor> stills_;
  std::vector<Tensor> sequence_;
  MotionConfig motion_;
};

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 4;
  std::size_t frames = 7;        ///< T, unroll length
  std::size_t crop = 32;
  double noise_sigma = 20.0 / 255.0;  ///< [0,1] scale
  float lr = 1e-4f;
  std::uint64_t seed = 0;
  std::size_t val_every = 100;   ///< 0 disables validation
  std::size_t val_clips = 4;
  double clip_grad = 0.0;        ///< global gradient-norm clip; 0 = off
  bool halt_on_nonfinite = false;

  void validate() const;
};

struct LossRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double val_psnr = std::numeric_limits<double>::quiet_NaN();  ///< NaN when not evaluated
};

struct NonFiniteEvent {
  std::size_t step = 0;
  std::string what;
};

struct TrainResult {
  std::vector<LossRecord> curve;
  std::vector<NonFiniteEvent> events;
  std::size_t steps_done = 0;  ///< index one past the last executed step
  bool halted = false;
};

/// Loss of one step: per-frame MSE summed over the T output frames, averaged
/// over the batch.
///
/// Steps [start_step, cfg.steps) are executed; batches and noise depend only
/// on (cfg.seed, step), so a run resumed from a checkpoint taken after step s
/// continues exactly like the uninterrupted run. A non-finite loss or
/// gradient is recorded as an event and the update is skipped (or training
/// halts when cfg.halt_on_nonfinite). `on_step` is called after every step.
TrainResult train(RecurrentModel& model, AdamState& adam, const TrainingData& data, const TrainConfig& cfg,
                  std::size_t start_step = 0,
                  const std::function<void(std::size_t step, const LossRecord&)>& on_step = {});

/// Mean PSNR of the model on `clips` fixed validation clips (keyed by seed).
double validation_psnr(RecurrentModel& model, const TrainingData& data, const TrainConfig& cfg);

/// CSV `step,loss,val_psnr`; val_psnr is empty when not evaluated.
std::string loss_csv(const std::vector<LossRecord>& curve, bool header = true);

/// Means over consecutive non-overlapping windows of `window` steps (a
/// trailing partial window is dropped).
std::vector<double> window_means(const std::vector<LossRecord>& curve, std::size_t window);

}  // namespace rvp

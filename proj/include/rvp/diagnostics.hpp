#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rvp/dataio.hpp"
#include "rvp/models.hpp"

namespace rvp {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// 10 log10(peak^2 / MSE); +inf when the images are identical, NaN when
/// either contains non-finite values.
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

// STRF search -------------------------------------------------------------------

enum class StrfLoss { norm_y0, center_pixel };
std::string to_string(StrfLoss l);
StrfLoss strf_loss_from_string(const std::string& s);

struct StrfConfig {
  StrfLoss loss = StrfLoss::norm_y0;
  std::size_t tau = 40;
  std::size_t n = 64;
  std::size_t iters = 1000;
  float lr = 1e-2f;
  std::size_t restarts = 3;
  double theta_infl = 1e-3;
  double theta_div = 1e3;
  std::uint64_t seed = 0;
};

enum class Verdict { bounded, unbounded };
std::string to_string(Verdict v);

struct StrfReport {
  std::vector<Tensor> X;               ///< 2 tau + 1 frames, t = -tau .. tau
  std::vector<Tensor> Y;
  std::vector<double> loss_trace;      ///< every iteration of every restart
  std::vector<double> best_trace;      ///< running best over loss_trace
  std::vector<double> influence;       ///< e_t = mean |x_t - x_t^init|, t = -tau .. tau
  std::vector<double> output_norms;    ///< ||y_t||
  std::size_t temporal_extent = 0;     ///< # t <= 0 with e_t > theta_infl
  double growth = 0.0;                 ///< max_{t>0} ||y_t|| / ||y_0||
  bool diverged = false;               ///< growth > theta_div or non-finite outputs
  bool dead_gradient = false;          ///< gradient identically zero at every initialization
  double best_loss = 0.0;
  std::size_t best_restart = 0;
  Verdict verdict = Verdict::bounded;
  std::size_t tau = 0;

  /// Frame index of time t in X / Y / influence.
  std::size_t index(long t) const { return static_cast<std::size_t>(static_cast<long>(tau) + t); }
  nlohmann::json to_json() const;
};

/// Adversarial search for the input sequence X in [0,1] that maximizes the
/// chosen loss on y_0, with the model unrolled from a zero state at t = -tau.
/// Adam ascent with projection onto [0,1] after each step; the best of
/// `restarts` uniform random initializations is kept. Frames t > 0 do not
/// affect the loss and keep their initial values; they are used to test
/// whether the output keeps growing after t = 0.
StrfReport strf_search(RecurrentModel& model, const StrfConfig& cfg);

// Divergence probe --------------------------------------------------------------

struct ProbeTrace {
  ArchitectureSpec spec;
  std::uint64_t seed = 0;
  std::vector<double> norms;  ///< ||y_t||, t = 1..T (NaN/Inf kept)
  double growth = 0.0;        ///< max_t ||y_t|| / ||y_1||
  double final_ratio = 0.0;   ///< ||y_T|| / ||y_1||
  bool nonfinite = false;
};

struct ProbeConfig {
  std::size_t n = 16;
  std::size_t frames = 50;
  float init_std = 0.1f;
  /// When > 0, every layer is rescaled to this sigma_1 before the run.
  double sigma_scale = 0.0;
  std::uint64_t input_seed = 0;
};

/// Runs a Gaussian-initialized model on i.i.d. uniform [0,1] frames.
ProbeTrace divergence_probe(const ArchitectureSpec& spec, std::uint64_t seed, const ProbeConfig& cfg);
/// Same on an existing model (state reset first).
ProbeTrace divergence_probe(RecurrentModel& model, std::uint64_t seed, const ProbeConfig& cfg);

/// The six architectures of the recurrence taxonomy on a backbone.
std::vector<ArchitectureSpec> taxonomy_specs(Backbone backbone, std::size_t channels, std::size_t in_channels = 1);

// Stability harness -------------------------------------------------------------

/// Anything that maps a noisy frame to an output frame and can be reset.
class Processor {
 public:
  virtual ~Processor() = default;
  virtual Tensor process(const Tensor& noisy) = 0;
  virtual void reset() = 0;
};

class ModelProcessor : public Processor {
 public:
  explicit ModelProcessor(RecurrentModel model) : model_(std::move(model)) {}
  Tensor process(const Tensor& noisy) override { return model_.step(state_, noisy).y; }
  void reset() override { state_.reset(); }
  RecurrentModel& model() { return model_; }

 private:
  RecurrentModel model_;
  RecurrentState state_;
};

/// Identity processor that outputs an all-ones frame on the listed
/// (1-based, never reset) frame numbers.
class FailureInjector : public Processor {
 public:
  explicit FailureInjector(std::vector<std::size_t> fail_frames) : fail_(std::move(fail_frames)) {}
  Tensor process(const Tensor& noisy) override;
  void reset() override { ++resets_; }
  std::size_t resets() const { return resets_; }

 private:
  std::vector<std::size_t> fail_;
  std::size_t count_ = 0;
  std::size_t resets_ = 0;
};

struct StabilityConfig {
  double noise_sigma = 0.0;  ///< [0,1] scale
  std::uint64_t noise_seed = 0;
  bool clip_noise = false;
  double psnr_fail = 0.0;    ///< dB
  std::size_t max_frames = 0;  ///< 0: until the source ends
  std::size_t decimate = 1;  ///< keep every n-th PSNR in the trace
};

struct Deciles {
  double d1 = kInf, d9 = kInf;
  bool fallback = false;  ///< fewer than 10 samples: min/max used
};

/// 1st and 9th decile with linear interpolation between order statistics
/// (position q (N-1)); min/max when N < 10; infinity when empty.
Deciles onset_deciles(const std::vector<std::size_t>& onsets);

struct StabilityReport {
  std::vector<std::size_t> onsets;
  Deciles deciles;
  std::size_t frames = 0;
  std::vector<std::pair<std::size_t, double>> psnr_trace;  ///< (frame, psnr), 1-based frames
  std::size_t nonfinite_frames = 0;
  double mean_psnr = 0.0;  ///< over finite PSNR values

  bool unstable() const { return !onsets.empty(); }
  nlohmann::json to_json() const;
};

/// Runs the processor over the noisy stream. Whenever the PSNR of the
/// output against the clean frame drops below psnr_fail (or the output is
/// non-finite) the number of frames since the last reset is recorded as an
/// onset and the processor is reset.
StabilityReport stability_harness(Processor& proc, FrameSource& clean, const StabilityConfig& cfg);

/// JSON number, or the string "inf" / "-inf" / "nan".
nlohmann::json json_number(double v);

}  // namespace rvp

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rvp/adam.hpp"
#include "rvp/archive.hpp"
#include "rvp/autodiff.hpp"
#include "rvp/normalization.hpp"
#include "rvp/tensor.hpp"

namespace rvp {

enum class Backbone { vdncnn, vresnet, tiny_vdncnn };
enum class Recurrence { none_single, none_multi, feature_shift, frame, feature, rlsp };

std::string to_string(Backbone b);
std::string to_string(Recurrence r);
Backbone backbone_from_string(const std::string& s);
Recurrence recurrence_from_string(const std::string& s);

/// True for the types that feed outputs of the model back into itself.
bool is_recurrent(Recurrence r);

struct ArchitectureSpec {
  Backbone backbone = Backbone::vdncnn;
  Recurrence recurrence = Recurrence::none_single;
  std::size_t channels = 0;     ///< 0: default (64, tiny 16)
  std::size_t depth = 0;        ///< vdncnn family: total convs (10, tiny 3); vresnet: residual blocks (5)
  std::size_t kernel_size = 3;
  std::size_t in_channels = 1;  ///< 1 gray, 3 RGB
  /// Feature recurrence tap. vdncnn: index of the conv whose activation is
  /// fed back (default max(1, depth/2 - 1)); vresnet: index of the block
  /// whose output is fed back (default 2). The state is always injected
  /// right after the first conv (vdncnn) / into the first block (vresnet).
  int feature_tap = -1;

  /// Copy with defaults filled in; throws on invalid combinations.
  ArchitectureSpec resolved() const;
  std::size_t conv_count() const;

  nlohmann::json to_json() const;
  static ArchitectureSpec from_json(const nlohmann::json& j);
  bool operator==(const ArchitectureSpec&) const = default;
};

/// One convolution with a per-channel bias. `rec_begin`/`rec_end` mark the
/// input channels that read the carried state (empty range when none).
struct ConvLayer {
  std::string name;
  KernelTensor kernel;
  Tensor bias;
  std::size_t rec_begin = 0, rec_end = 0;
  bool is_output = false;
};

enum class InitScheme { gaussian, he };
enum class DampingRoute { features, kernel };

/// Hidden tensors carried between frames. Slots are zero-initialised lazily
/// from the first frame's size.
struct RecurrentState {
  std::vector<Tensor> slots;
  std::size_t frame = 0;
  void reset() {
    slots.clear();
    frame = 0;
  }
};

struct StepResult {
  Tensor y;
  bool diverged = false;  ///< y contains NaN/Inf
};

/// Parameters bound onto a tape for one forward computation.
struct BoundParams {
  std::vector<Var> raw_kernels, raw_biases;  ///< leaves
  std::vector<Var> kernels, biases;          ///< used in the forward pass
};

enum class BindMode {
  eval,   ///< constants; normalization from a copy of the power-iteration state
  train,  ///< gradient leaves; normalization advances the power iteration
  grad    ///< gradient leaves; normalization state left untouched
};

/// A video processor x_t -> y_t with state h_t: h_t = phi(h_{t-1}, x_t),
/// y_t = psi(h_t). Outputs use a global residual y = x + f(...).
class RecurrentModel {
 public:
  RecurrentModel() = default;

  static RecurrentModel build(const ArchitectureSpec& spec, std::uint64_t seed, InitScheme init = InitScheme::he,
                              float gaussian_std = 0.1f);

  const ArchitectureSpec& spec() const { return spec_; }
  const std::vector<ConvLayer>& layers() const { return layers_; }
  std::vector<ConvLayer>& layers() { return layers_; }

  /// Index of the layer that reads the carried state, or npos.
  std::size_t state_reader() const;

  // Normalization ---------------------------------------------------------
  /// Enables normalization of the kernels; n is the training crop size used
  /// for the layer power iteration and the stable-rank target.
  void set_normalizer(const NormalizerConfig& cfg, std::size_t n, std::uint64_t seed);
  const NormalizerConfig& normalizer() const { return norm_; }
  std::size_t normalizer_n() const { return norm_n_; }
  std::vector<NormalizerState>& normalizer_states() { return norm_states_; }
  const std::vector<NormalizerState>& normalizer_states() const { return norm_states_; }
  bool layer_normalized(std::size_t i) const;

  /// Runs `iters` extra power-iteration updates on every normalized layer.
  void converge_normalizer(std::size_t iters);
  /// Kernels actually used by the forward pass (alpha K~ for normalized layers),
  /// computed from a copy of the power-iteration state.
  std::vector<KernelTensor> effective_kernels() const;
  /// Replaces kernels by their effective values and disables normalization,
  /// so inference uses fixed weights.
  RecurrentModel frozen() const;

  // Dampening -------------------------------------------------------------
  void set_dampening(float lambda, DampingRoute route);
  float dampening() const { return lambda_; }
  DampingRoute dampening_route() const { return route_; }

  /// Same weights with the state-reading kernel slice dropped and recurrence
  /// none_single.
  RecurrentModel single_frame_variant() const;

  // Forward ---------------------------------------------------------------
  BoundParams bind(Tape& tape, BindMode mode);
  /// One recurrence update on the tape; `slots` holds the carried state and
  /// is replaced by the new state.
  Var forward(Tape& tape, const BoundParams& p, Var x, std::vector<Var>& slots) const;
  std::vector<Var> zero_slots(Tape& tape, const Tensor& x) const;

  StepResult step(RecurrentState& state, const Tensor& x);
  /// Differentiable unroll from a zero state; T <= 128.
  std::vector<Var> unroll(Tape& tape, const BoundParams& p, const std::vector<Var>& X) const;
  /// Inference unroll from a zero state.
  std::vector<Tensor> unroll(const std::vector<Tensor>& X);

  static constexpr std::size_t kMaxUnroll = 128;

  // Parameters ------------------------------------------------------------
  std::size_t parameter_count() const;
  std::vector<Tensor*> parameters();  ///< kernels then biases, layer order

  // Serialization ---------------------------------------------------------
  TensorArchive to_archive() const;
  nlohmann::json metadata() const;
  static RecurrentModel from_archive(const TensorArchive& a, const nlohmann::json& meta);

 private:
  std::size_t slot_count() const;
  Var damp(Tape& tape, Var s) const;

  ArchitectureSpec spec_;
  std::vector<ConvLayer> layers_;
  NormalizerConfig norm_;
  std::size_t norm_n_ = 0;
  std::vector<NormalizerState> norm_states_;
  float lambda_ = 1.0f;
  DampingRoute route_ = DampingRoute::features;
};

/// Kernel route of dampening: the state-reading kernel slice is scaled by
/// lambda and the feature route is switched off.
RecurrentModel dampen_recurrent_kernels(const RecurrentModel& m, float lambda);

/// Rescales every kernel so that its layer sigma_1 on n x n maps equals `target`.
void rescale_layers_to_sigma(RecurrentModel& m, double target, std::size_t n);

/// sigma_1 of a circular layer on n x n maps from the exact per-frequency
/// decomposition.
double layer_spectral_norm(const KernelTensor& K, std::size_t n);

struct Checkpoint {
  RecurrentModel model;
  nlohmann::json meta;  ///< training metadata (steps, seed, noise sigma, ...)
  std::optional<AdamState> adam;
};

/// Writes `path` (RVPT) and `path`.json (metadata sidecar).
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::filesystem::path sidecar_path(const std::filesystem::path& path);

}  // namespace rvp

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rvp/tensor.hpp"

namespace rvp {

// Netpbm ----------------------------------------------------------------------

/// Reads a binary PGM (P5) or PPM (P6) with maxval <= 255 into a [h,w,c]
/// map with values v / maxval (v / 255 for 8-bit files).
Tensor read_pnm(const std::filesystem::path& path);
Tensor decode_pnm(const std::string& bytes, const std::string& origin = "<memory>");
/// Writes P5 (1 channel) or P6 (3 channels); values are clipped to [0,1] and
/// rounded to 8 bits.
void write_pnm(const std::filesystem::path& path, const Tensor& frame);
std::string encode_pnm(const Tensor& frame);

// Sequence sources --------------------------------------------------------------

/// Single-consumer stream of clean frames in [0,1].
class FrameSource {
 public:
  virtual ~FrameSource() = default;
  virtual std::optional<Tensor> next() = 0;
  /// Rewinds to the first frame; the replay is bit-identical.
  virtual void restart() = 0;
  /// Number of frames, or nullopt for unbounded generators.
  virtual std::optional<std::size_t> length() const = 0;
};

/// Image files (.pgm/.ppm) of a directory in lexicographic filename order,
/// decoded lazily.
class DirectorySource : public FrameSource {
 public:
  explicit DirectorySource(const std::filesystem::path& dir);
  std::optional<Tensor> next() override;
  void restart() override { pos_ = 0; }
  std::optional<std::size_t> length() const override { return files_.size(); }
  const std::vector<std::filesystem::path>& files() const { return files_; }

 private:
  std::vector<std::filesystem::path> files_;
  std::size_t pos_ = 0;
  Shape shape_;
};

/// Frames stored in an RVPT archive, in entry order; each entry is either a
/// [h,w,c] frame or a [T,h,w,c] stack.
class ArchiveSource : public FrameSource {
 public:
  explicit ArchiveSource(const std::filesystem::path& path);
  explicit ArchiveSource(std::vector<Tensor> frames);
  std::optional<Tensor> next() override;
  void restart() override { pos_ = 0; }
  std::optional<std::size_t> length() const override { return frames_.size(); }

 private:
  std::vector<Tensor> frames_;
  std::size_t pos_ = 0;
};

/// The same frame repeated `count` times (0 = unbounded).
class ConstantSource : public FrameSource {
 public:
  ConstantSource(Tensor frame, std::size_t count) : frame_(std::move(frame)), count_(count) {}
  std::optional<Tensor> next() override;
  void restart() override { pos_ = 0; }
  std::optional<std::size_t> length() const override {
    return count_ ? std::optional<std::size_t>(count_) : std::nullopt;
  }

 private:
  Tensor frame_;
  std::size_t count_;
  std::size_t pos_ = 0;
};

/// Opens a directory or an .rvpt file.
std::unique_ptr<FrameSource> open_sequence(const std::filesystem::path& path);
std::vector<Tensor> read_all(FrameSource& src, std::size_t max_frames = 0);
void save_sequence_rvpt(const std::filesystem::path& path, const std::vector<Tensor>& frames);

// Noise -------------------------------------------------------------------------

struct NoiseSpec {
  double sigma = 0.0;  ///< standard deviation on the [0,1] scale
  std::uint64_t seed = 0;
  bool clip = false;   ///< clip noisy values to [0,1]; off by default
};

/// i.i.d. Gaussian noise seeded by (spec.seed, frame_index), independent of
/// access order.
Tensor add_noise(const Tensor& frame, const NoiseSpec& spec, std::uint64_t frame_index);
/// The noise field itself.
Tensor noise_field(const Shape& shape, const NoiseSpec& spec, std::uint64_t frame_index);

// Synthetic motion ------------------------------------------------------------

/// Global-translation random walk: each frame the velocity receives
/// N(0, walk_std) increments per axis, its magnitude is capped at v_max
/// pixels/frame, and the crop window moves by it, reflecting off the still's
/// borders.
struct MotionConfig {
  double v_max = 2.0;
  double walk_std = 0.25;
  double vy0 = 0.0, vx0 = 0.0;  ///< initial velocity
  /// Initial top-left corner; negative = random uniform position.
  double y0 = -1.0, x0 = -1.0;
};

/// Bilinear crop [n,n,c] with top-left corner at (y, x); requires the window
/// to lie inside the still. Exact copy at integer positions.
Tensor resample_crop(const Tensor& still, double y, double x, std::size_t n);

/// Unbounded (or `length`-bounded) synthetic-motion stream over a still.
class MotionSource : public FrameSource {
 public:
  MotionSource(Tensor still, std::size_t crop, std::uint64_t seed, MotionConfig cfg = {}, std::size_t length = 0);
  std::optional<Tensor> next() override;
  void restart() override;
  std::optional<std::size_t> length() const override {
    return length_ ? std::optional<std::size_t>(length_) : std::nullopt;
  }
  /// Window position of the last emitted frame.
  std::pair<double, double> position() const { return {py_, px_}; }

 private:
  Tensor still_;
  std::size_t crop_;
  std::uint64_t seed_;
  MotionConfig cfg_;
  std::size_t length_;
  std::size_t t_ = 0;
  double py_ = 0, px_ = 0, vy_ = 0, vx_ = 0;
  std::mt19937_64 rng_;
};

std::vector<Tensor> synth_motion_sequence(const Tensor& still, std::size_t crop, std::size_t length,
                                          std::uint64_t seed, const MotionConfig& cfg = {});

/// Procedural natural-looking still in [0,1]: a smooth multi-scale noise
/// background with random shaded ellipses and bars.
Tensor procedural_still(std::size_t size, std::size_t channels, std::uint64_t seed);

// Crops -----------------------------------------------------------------------------

struct Clip {
  std::vector<Tensor> frames;
  std::size_t t0 = 0, y0 = 0, x0 = 0;
};

/// `count` aligned spatio-temporal crops of T frames and n x n pixels.
std::vector<Clip> sample_crops(const std::vector<Tensor>& sequence, std::size_t n, std::size_t T, std::size_t count,
                               std::uint64_t seed);

}  // namespace rvp

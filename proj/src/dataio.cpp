#include "rvp/dataio.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "rvp/archive.hpp"
#include "rvp/random.hpp"

namespace rvp {

// Netpbm ----------------------------------------------------------------------

namespace {

std::string slurp(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Reads one header token, skipping whitespace and '#' comments.
std::size_t header_int(const std::string& b, std::size_t& pos, const std::string& origin, const char* what) {
  while (pos < b.size()) {
    if (std::isspace(static_cast<unsigned char>(b[pos]))) {
      ++pos;
    } else if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < b.size() && std::isdigit(static_cast<unsigned char>(b[pos]))) ++pos;
  if (start == pos) throw Error(origin + ": malformed PNM header (expected " + what + ")");
  return std::stoul(b.substr(start, pos - start));
}

}  // namespace

Tensor decode_pnm(const std::string& b, const std::string& origin) {
  if (b.size() < 2 || b[0] != 'P' || (b[1] != '5' && b[1] != '6'))
    throw Error(origin + ": not a binary PGM/PPM file (expected magic P5 or P6)");
  const std::size_t c = b[1] == '5' ? 1 : 3;
  std::size_t pos = 2;
  const std::size_t w = header_int(b, pos, origin, "width");
  const std::size_t h = header_int(b, pos, origin, "height");
  const std::size_t maxval = header_int(b, pos, origin, "maxval");
  if (w == 0 || h == 0) throw Error(origin + ": zero image size");
  if (maxval == 0 || maxval > 255) throw Error(origin + ": unsupported maxval " + std::to_string(maxval) + " (1..255)");
  if (pos >= b.size() || !std::isspace(static_cast<unsigned char>(b[pos])))
    throw Error(origin + ": malformed PNM header (missing separator before raster)");
  ++pos;
  const std::size_t need = w * h * c;
  if (b.size() - pos < need)
    throw Error(origin + ": truncated raster (" + std::to_string(b.size() - pos) + " of " + std::to_string(need) +
                " bytes)");
  Tensor t = Tensor::map(h, w, c);
  const auto fmax = static_cast<float>(maxval);
  for (std::size_t i = 0; i < need; ++i) {
    const auto v = static_cast<unsigned char>(b[pos + i]);
    if (v > maxval) throw Error(origin + ": sample exceeds maxval");
    t[i] = static_cast<float>(v) / fmax;
  }
  return t;
}

Tensor read_pnm(const std::filesystem::path& path) { return decode_pnm(slurp(path), path.string()); }

std::string encode_pnm(const Tensor& frame) {
  require(frame.rank() == 3 && (frame.dim(2) == 1 || frame.dim(2) == 3),
          "write_pnm: expected a [h,w,1] or [h,w,3] frame, got " + shape_str(frame.shape()));
  std::string out = (frame.dim(2) == 1 ? "P5\n" : "P6\n") + std::to_string(frame.dim(1)) + " " +
                    std::to_string(frame.dim(0)) + "\n255\n";
  out.reserve(out.size() + frame.size());
  for (float v : frame.data()) {
    const float c = std::isfinite(v) ? std::clamp(v, 0.0f, 1.0f) : 0.0f;
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0f))));
  }
  return out;
}

void write_pnm(const std::filesystem::path& path, const Tensor& frame) {
  const std::string bytes = encode_pnm(frame);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path.string() + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Sources -----------------------------------------------------------------------

DirectorySource::DirectorySource(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error("sequence directory '" + dir.string() + "' does not exist");
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (ext == ".pgm" || ext == ".ppm") files_.push_back(e.path());
  }
  std::sort(files_.begin(), files_.end(),
            [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });
  if (files_.empty()) throw Error("sequence directory '" + dir.string() + "' contains no .pgm/.ppm frames");
}

std::optional<Tensor> DirectorySource::next() {
  if (pos_ >= files_.size()) return std::nullopt;
  const std::size_t idx = pos_++;
  Tensor t = read_pnm(files_[idx]);
  if (idx == 0) shape_ = t.shape();
  if (t.shape() != shape_)
    throw Error("frame " + std::to_string(idx) + " ('" + files_[idx].filename().string() + "') has shape " +
                shape_str(t.shape()) + ", expected " + shape_str(shape_));
  return t;
}

namespace {

void check_same_shapes(const std::vector<Tensor>& frames) {
  for (std::size_t i = 0; i < frames.size(); ++i)
    if (frames[i].shape() != frames[0].shape())
      throw Error("frame " + std::to_string(i) + " has shape " + shape_str(frames[i].shape()) + ", expected " +
                  shape_str(frames[0].shape()));
}

}  // namespace

ArchiveSource::ArchiveSource(std::vector<Tensor> frames) : frames_(std::move(frames)) { check_same_shapes(frames_); }

ArchiveSource::ArchiveSource(const std::filesystem::path& path) {
  const TensorArchive a = TensorArchive::load(path);
  for (const auto& [name, t] : a.entries()) {
    if (t.rank() == 3) {
      frames_.push_back(t);
    } else if (t.rank() == 4) {
      const Shape fs{t.dim(1), t.dim(2), t.dim(3)};
      const std::size_t sz = shape_numel(fs);
      for (std::size_t i = 0; i < t.dim(0); ++i)
        frames_.emplace_back(fs, std::vector<float>(t.vec().begin() + static_cast<std::ptrdiff_t>(i * sz),
                                                    t.vec().begin() + static_cast<std::ptrdiff_t>((i + 1) * sz)));
    } else {
      throw Error(path.string() + ": entry '" + name + "' is neither a frame nor a frame stack");
    }
  }
  check_same_shapes(frames_);
}

std::optional<Tensor> ArchiveSource::next() {
  if (pos_ >= frames_.size()) return std::nullopt;
  return frames_[pos_++];
}

std::optional<Tensor> ConstantSource::next() {
  if (count_ && pos_ >= count_) return std::nullopt;
  ++pos_;
  return frame_;
}

std::unique_ptr<FrameSource> open_sequence(const std::filesystem::path& path) {
  if (std::filesystem::is_directory(path)) return std::make_unique<DirectorySource>(path);
  if (!std::filesystem::exists(path)) throw Error("sequence path '" + path.string() + "' does not exist");
  return std::make_unique<ArchiveSource>(path);
}

std::vector<Tensor> read_all(FrameSource& src, std::size_t max_frames) {
  std::vector<Tensor> out;
  while (max_frames == 0 || out.size() < max_frames) {
    auto f = src.next();
    if (!f) break;
    out.push_back(std::move(*f));
  }
  return out;
}

void save_sequence_rvpt(const std::filesystem::path& path, const std::vector<Tensor>& frames) {
  TensorArchive a;
  char name[32];
  for (std::size_t i = 0; i < frames.size(); ++i) {
    std::snprintf(name, sizeof name, "frame.%06zu", i);
    a.add(name, frames[i]);
  }
  a.save(path);
}

// Noise -----------------------------------------------------------------------------

Tensor noise_field(const Shape& shape, const NoiseSpec& spec, std::uint64_t frame_index) {
  require(spec.sigma >= 0.0, "noise sigma must be >= 0");
  Tensor n(shape);
  if (spec.sigma == 0.0) return n;
  Rng rng = make_rng(spec.seed, {0x4E4F4953, frame_index});
  std::normal_distribution<double> d(0.0, spec.sigma);
  for (float& v : n.vec()) v = static_cast<float>(d(rng));
  return n;
}

Tensor add_noise(const Tensor& frame, const NoiseSpec& spec, std::uint64_t frame_index) {
  if (spec.sigma == 0.0) return frame;
  Tensor out = noise_field(frame.shape(), spec, frame_index);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] += frame[i];
    if (spec.clip) out[i] = std::clamp(out[i], 0.0f, 1.0f);
  }
  return out;
}

// Synthetic motion ----------------------------------------------------------------

Tensor resample_crop(const Tensor& still, double y, double x, std::size_t n) {
  require(still.rank() == 3, "resample_crop: still must be a [h,w,c] map");
  const std::size_t H = still.dim(0), W = still.dim(1), C = still.dim(2);
  require(y >= 0.0 && x >= 0.0 && y + static_cast<double>(n) <= static_cast<double>(H) &&
              x + static_cast<double>(n) <= static_cast<double>(W),
          "resample_crop: window outside the still");
  const auto iy = static_cast<std::size_t>(std::floor(y)), ix = static_cast<std::size_t>(std::floor(x));
  const double fy = y - static_cast<double>(iy), fx = x - static_cast<double>(ix);
  Tensor out = Tensor::map(n, n, C);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t y0 = iy + r, y1 = std::min(y0 + 1, H - 1);
    for (std::size_t c = 0; c < n; ++c) {
      const std::size_t x0 = ix + c, x1 = std::min(x0 + 1, W - 1);
      for (std::size_t ch = 0; ch < C; ++ch) {
        if (fy == 0.0 && fx == 0.0) {
          out.at(r, c, ch) = still.at(y0, x0, ch);
          continue;
        }
        const double v = (1 - fy) * ((1 - fx) * still.at(y0, x0, ch) + fx * still.at(y0, x1, ch)) +
                         fy * ((1 - fx) * still.at(y1, x0, ch) + fx * still.at(y1, x1, ch));
        out.at(r, c, ch) = static_cast<float>(v);
      }
    }
  }
  return out;
}

namespace {

// Reflects p into [0, hi], flipping the velocity at each bounce.
void reflect(double& p, double& v, double hi) {
  if (hi <= 0.0) {
    p = 0.0;
    return;
  }
  for (int guard = 0; guard < 64 && (p < 0.0 || p > hi); ++guard) {
    if (p < 0.0) p = -p;
    if (p > hi) p = 2.0 * hi - p;
    v = -v;
  }
  p = std::clamp(p, 0.0, hi);
}

}  // namespace

MotionSource::MotionSource(Tensor still, std::size_t crop, std::uint64_t seed, MotionConfig cfg, std::size_t length)
    : still_(std::move(still)), crop_(crop), seed_(seed), cfg_(cfg), length_(length) {
  require(still_.rank() == 3, "synthetic motion: still must be a [h,w,c] map");
  require(crop_ >= 1 && still_.dim(0) >= crop_ && still_.dim(1) >= crop_,
          "synthetic motion: still " + shape_str(still_.shape()) + " smaller than crop " + std::to_string(crop_));
  require(cfg_.v_max >= 0.0 && cfg_.walk_std >= 0.0, "synthetic motion: v_max and walk_std must be >= 0");
  restart();
}

void MotionSource::restart() {
  rng_ = make_rng(seed_, {0x4D4F54});
  t_ = 0;
  const double hy = static_cast<double>(still_.dim(0) - crop_), hx = static_cast<double>(still_.dim(1) - crop_);
  std::uniform_real_distribution<double> uy(0.0, hy), ux(0.0, hx);
  py_ = cfg_.y0 >= 0.0 ? std::min(cfg_.y0, hy) : std::round(uy(rng_));
  px_ = cfg_.x0 >= 0.0 ? std::min(cfg_.x0, hx) : std::round(ux(rng_));
  vy_ = cfg_.vy0;
  vx_ = cfg_.vx0;
}

std::optional<Tensor> MotionSource::next() {
  if (length_ && t_ >= length_) return std::nullopt;
  if (t_ > 0) {
    if (cfg_.walk_std > 0.0) {
      std::normal_distribution<double> d(0.0, cfg_.walk_std);
      vy_ += d(rng_);
      vx_ += d(rng_);
    }
    const double speed = std::hypot(vy_, vx_);
    if (speed > cfg_.v_max) {
      const double s = speed > 0.0 ? cfg_.v_max / speed : 0.0;
      vy_ *= s;
      vx_ *= s;
    }
    py_ += vy_;
    px_ += vx_;
    reflect(py_, vy_, static_cast<double>(still_.dim(0) - crop_));
    reflect(px_, vx_, static_cast<double>(still_.dim(1) - crop_));
  }
  ++t_;
  return resample_crop(still_, py_, px_, crop_);
}

std::vector<Tensor> synth_motion_sequence(const Tensor& still, std::size_t crop, std::size_t length,
                                          std::uint64_t seed, const MotionConfig& cfg) {
  MotionSource src(still, crop, seed, cfg, length);
  return read_all(src);
}

namespace {

// Bilinearly upsampled random grid (value noise) of the given cell size.
std::vector<double> value_noise(std::size_t size, std::size_t cell, Rng& rng) {
  const std::size_t g = size / cell + 2;
  std::vector<double> grid(g * g);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double& v : grid) v = u(rng);
  std::vector<double> out(size * size);
  for (std::size_t y = 0; y < size; ++y) {
    const double gy = static_cast<double>(y) / static_cast<double>(cell);
    const auto y0 = static_cast<std::size_t>(gy);
    double fy = gy - static_cast<double>(y0);
    fy = fy * fy * (3 - 2 * fy);
    for (std::size_t x = 0; x < size; ++x) {
      const double gx = static_cast<double>(x) / static_cast<double>(cell);
      const auto x0 = static_cast<std::size_t>(gx);
      double fx = gx - static_cast<double>(x0);
      fx = fx * fx * (3 - 2 * fx);
      const double a = grid[y0 * g + x0], b = grid[y0 * g + x0 + 1];
      const double c = grid[(y0 + 1) * g + x0], d = grid[(y0 + 1) * g + x0 + 1];
      out[y * size + x] = (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * d);
    }
  }
  return out;
}

}  // namespace

Tensor procedural_still(std::size_t size, std::size_t channels, std::uint64_t seed) {
  require(size >= 8, "procedural_still: size must be >= 8");
  require(channels == 1 || channels == 3, "procedural_still: channels must be 1 or 3");
  Rng rng = make_rng(seed, {0x5354494C});
  std::vector<double> lum(size * size, 0.0);
  double amp = 1.0;
  for (std::size_t cell = std::max<std::size_t>(size / 2, 4); cell >= 2; cell /= 2, amp *= 0.5) {
    const auto n = value_noise(size, cell, rng);
    for (std::size_t i = 0; i < lum.size(); ++i) lum[i] += 0.25 * amp * n[i];
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int shapes = 6 + static_cast<int>(u(rng) * 8);
  const double S = static_cast<double>(size);
  for (int s = 0; s < shapes; ++s) {
    const double cy = u(rng) * S, cx = u(rng) * S;
    const double ry = (0.05 + 0.25 * u(rng)) * S, rx = (0.05 + 0.25 * u(rng)) * S;
    const double th = u(rng) * std::numbers::pi;
    const double level = u(rng) - 0.5, grad = (u(rng) - 0.5) * 0.6;
    const bool bar = u(rng) < 0.3;
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
        const double a = (dy * std::cos(th) + dx * std::sin(th)) / ry;
        const double b = (-dy * std::sin(th) + dx * std::cos(th)) / rx;
        const double r = bar ? std::max(std::fabs(a), std::fabs(b)) : std::sqrt(a * a + b * b);
        const double w = std::clamp((1.0 - r) * 4.0, 0.0, 1.0);  // soft edge
        if (w > 0.0) {
          double& L = lum[y * size + x];
          L = (1 - w) * L + w * (level + grad * a);
        }
      }
  }
  const auto [mn, mx] = std::minmax_element(lum.begin(), lum.end());
  const double lo = *mn, span = std::max(*mx - *mn, 1e-12);
  Tensor t = Tensor::map(size, size, channels);
  std::vector<double> tint(channels, 1.0);
  if (channels == 3)
    for (double& c : tint) c = 0.75 + 0.25 * u(rng);
  for (std::size_t i = 0; i < size * size; ++i) {
    const double v = 0.05 + 0.9 * (lum[i] - lo) / span;
    for (std::size_t c = 0; c < channels; ++c) t[i * channels + c] = static_cast<float>(v * tint[c]);
  }
  return t;
}

// Crops -----------------------------------------------------------------------------

std::vector<Clip> sample_crops(const std::vector<Tensor>& sequence, std::size_t n, std::size_t T, std::size_t count,
                               std::uint64_t seed) {
  require(!sequence.empty(), "sample_crops: empty sequence");
  require(T >= 1 && sequence.size() >= T,
          "sample_crops: sequence of " + std::to_string(sequence.size()) + " frames shorter than T = " +
              std::to_string(T));
  const Tensor& f0 = sequence.front();
  require(f0.rank() == 3 && n >= 1 && f0.dim(0) >= n && f0.dim(1) >= n,
          "sample_crops: crop " + std::to_string(n) + " larger than frame " + shape_str(f0.shape()));
  Rng rng = make_rng(seed, {0x43524F50});
  std::uniform_int_distribution<std::size_t> dt(0, sequence.size() - T), dy(0, f0.dim(0) - n), dx(0, f0.dim(1) - n);
  std::vector<Clip> clips;
  for (std::size_t c = 0; c < count; ++c) {
    Clip clip;
    clip.t0 = dt(rng);
    clip.y0 = dy(rng);
    clip.x0 = dx(rng);
    for (std::size_t t = 0; t < T; ++t)
      clip.frames.push_back(resample_crop(sequence[clip.t0 + t], static_cast<double>(clip.y0),
                                          static_cast<double>(clip.x0), n));
    clips.push_back(std::move(clip));
  }
  return clips;
}

}  // namespace rvp

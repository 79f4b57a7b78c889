#include "rvp/archive.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace rvp {
namespace {

static_assert(std::endian::native == std::endian::little, "RVPT I/O assumes a little-endian host");

constexpr char kMagic[4] = {'R', 'V', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string origin) : b_(bytes), origin_(std::move(origin)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void floats(float* dst, std::size_t n) {
    need(n * sizeof(float));
    std::memcpy(dst, b_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw Error(origin_ + ": truncated RVPT archive at byte " + std::to_string(pos_));
  }
  const std::string& b_;
  std::string origin_;
  std::size_t pos_ = 0;
};

}  // namespace

void TensorArchive::add(std::string name, Tensor t) {
  require(name.size() <= 0xFFFF, "RVPT: tensor name too long");
  require(t.rank() <= 0xFF, "RVPT: tensor rank too large");
  require(!contains(name), "RVPT: duplicate tensor name '" + name + "'");
  entries_.emplace_back(std::move(name), std::move(t));
}

bool TensorArchive::contains(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return true;
  return false;
}

const Tensor& TensorArchive::get(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw Error("RVPT: no tensor named '" + name + "'");
}

std::string TensorArchive::serialize() const {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& [name, t] : entries_) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    out.append(reinterpret_cast<const char*>(t.data().data()), t.size() * sizeof(float));
  }
  return out;
}

TensorArchive TensorArchive::deserialize(const std::string& bytes, const std::string& origin) {
  Reader r(bytes, origin);
  if (r.str(4) != std::string(kMagic, 4)) throw Error(origin + ": not an RVPT archive (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) throw Error(origin + ": unsupported RVPT version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  TensorArchive a;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>();
    std::string name = r.str(len);
    const auto rank = r.get<std::uint8_t>();
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint32_t>();
    Tensor t(shape);
    r.floats(t.data().data(), t.size());
    a.add(std::move(name), std::move(t));
  }
  if (!r.done()) throw Error(origin + ": trailing bytes after RVPT payload");
  return a;
}

void TensorArchive::save(const std::filesystem::path& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path.string() + "' for writing");
  const std::string bytes = serialize();
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("failed writing '" + path.string() + "'");
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize(ss.str(), path.string());
}

}  // namespace rvp

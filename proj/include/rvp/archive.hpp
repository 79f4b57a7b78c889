#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "rvp/tensor.hpp"

namespace rvp {

/// Named tensors stored in the RVPT binary format:
///
///   "RVPT" | u32 version=1 | u32 count |
///   count x ( u16 name_len | name (UTF-8) | u8 rank | u32 dims[rank] | f32 payload )
///
/// All integers and floats are little-endian.
class TensorArchive {
 public:
  void add(std::string name, Tensor t);
  bool contains(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  void save(const std::filesystem::path& path) const;
  static TensorArchive load(const std::filesystem::path& path);

  std::string serialize() const;
  static TensorArchive deserialize(const std::string& bytes, const std::string& origin = "<memory>");

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

}  // namespace rvp

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "rvp/diagnostics.hpp"
#include "rvp/models.hpp"
#include "rvp/training.hpp"

namespace rvp {

/// Line-oriented run configuration:
///
///     # comment
///     section.key = value
///
/// Every key has a default; unknown keys are rejected. Noise levels are
/// given on the 0-255 scale and converted to [0,1] by the typed accessors.
class RunConfig {
 public:
  RunConfig();

  /// Parses text and applies it on top of the current values.
  void parse(const std::string& text, const std::string& origin = "<config>");
  void load(const std::filesystem::path& path);
  /// Sets one key; throws on unknown keys.
  void set(const std::string& key, const std::string& value);
  /// "key=value" form used by --set.
  void set_assignment(const std::string& assignment);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  /// Comma-separated list of non-negative integers; empty string -> {}.
  std::vector<std::size_t> get_size_list(const std::string& key) const;

  /// Fully resolved text, one key per line in sorted order.
  std::string dump() const;
  void write(const std::filesystem::path& path) const;

  std::vector<std::string> keys() const;

 private:
  std::map<std::string, std::string> values_;
};

ArchitectureSpec architecture_from_config(const RunConfig& c);
NormalizerConfig normalizer_from_config(const RunConfig& c);
TrainConfig train_from_config(const RunConfig& c);
StrfConfig strf_from_config(const RunConfig& c);
StabilityConfig stability_from_config(const RunConfig& c);
ProbeConfig probe_from_config(const RunConfig& c);
MotionConfig motion_from_config(const RunConfig& c);
InitScheme init_from_config(const RunConfig& c);

/// Settings of the small-scale long-sequence training study: tiny_vdncnn
/// with feature recurrence, 16 channels, gray 32 x 32 crops, noise 20/255,
/// T frames, Adam 1e-4, batch 4, 2000 steps.
void apply_long_sequence_preset(RunConfig& c, std::size_t frames = 7);

}  // namespace rvp

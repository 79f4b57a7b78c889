#include "rvp/config.hpp"

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "rvp/random.hpp"

namespace rvp {

namespace {

const std::map<std::string, std::string>& default_values() {
  static const std::map<std::string, std::string> d = {
      {"run.seed", "0"},
      {"run.out", "out"},
      {"run.threads", "1"},
      {"run.checkpoint", ""},

      {"arch.backbone", "vdncnn"},
      {"arch.recurrence", "feature"},
      {"arch.channels", "0"},
      {"arch.depth", "0"},
      {"arch.kernel", "3"},
      {"arch.in_channels", "1"},
      {"arch.feature_tap", "-1"},
      {"arch.init", "he"},
      {"arch.init_std", "0.1"},

      {"norm.scheme", "none"},
      {"norm.alpha", "1"},
      {"norm.beta", "1"},
      {"norm.epsilon", "1e-12"},
      {"norm.power_iters", "1"},
      {"norm.literal_rank_one", "false"},
      {"norm.normalize_output", "true"},
      {"norm.n", "0"},
      {"norm.converge_iters", "200"},

      {"dampening.lambda", "1"},
      {"dampening.route", "features"},

      {"train.steps", "2000"},
      {"train.batch", "4"},
      {"train.frames", "7"},
      {"train.crop", "32"},
      {"train.noise_sigma", "20"},
      {"train.lr", "1e-4"},
      {"train.val_every", "100"},
      {"train.val_clips", "4"},
      {"train.clip_grad", "0"},
      {"train.halt_on_nonfinite", "false"},
      {"train.checkpoint_every", "500"},
      {"train.resume", ""},

      {"data.path", ""},
      {"data.stills", "8"},
      {"data.still_size", "96"},
      {"data.v_max", "2"},
      {"data.walk_std", "0.25"},
      {"data.length", "200"},
      {"data.crop", "64"},
      {"data.format", "pgm"},

      {"strf.loss", "norm_y0"},
      {"strf.tau", "40"},
      {"strf.n", "64"},
      {"strf.iters", "1000"},
      {"strf.lr", "1e-2"},
      {"strf.restarts", "3"},
      {"strf.theta_infl", "1e-3"},
      {"strf.theta_div", "1e3"},
      {"strf.grid_every", "5"},

      {"stability.noise_sigma", "30"},
      {"stability.psnr_fail", "0"},
      {"stability.max_frames", "0"},
      {"stability.frames", "10000"},
      {"stability.crop", "64"},
      {"stability.decimate", "1"},
      {"stability.clip_noise", "false"},
      {"stability.inject", ""},

      {"probe.backbone", "vdncnn"},
      {"probe.channels", "64"},
      {"probe.n", "16"},
      {"probe.frames", "50"},
      {"probe.seeds", "20"},
      {"probe.init_std", "0.1"},
      {"probe.sigma_scale", "0"},
      {"probe.bounded_growth", "10"},
      {"probe.divergent_growth", "1e3"},

      {"spectrum.n", "64"},
  };
  return d;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& v, const std::string& expected) {
  throw Error("config key '" + key + "': expected " + expected + ", got '" + v + "'");
}

}  // namespace

RunConfig::RunConfig() : values_(default_values()) {}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!values_.count(key)) throw Error("unknown config key '" + key + "'");
  values_[key] = value;
}

void RunConfig::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw Error("expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::parse(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(origin + ":" + std::to_string(no) + ": expected 'section.key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (!values_.count(key)) throw Error(origin + ":" + std::to_string(no) + ": unknown config key '" + key + "'");
    values_[key] = trim(line.substr(eq + 1));
  }
}

void RunConfig::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot read config '" + path.string() + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  parse(ss.str(), path.string());
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw Error("unknown config key '" + key + "'");
  return it->second;
}

double RunConfig::get_double(const std::string& key) const {
  const std::string& v = get(key);
  char* end = nullptr;
  errno = 0;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0' || errno == ERANGE) bad_value(key, v, "a number");
  return d;
}

std::int64_t RunConfig::get_int(const std::string& key) const {
  const std::string& v = get(key);
  char* end = nullptr;
  errno = 0;
  const long long i = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || *end != '\0' || errno == ERANGE) bad_value(key, v, "an integer");
  return i;
}

std::size_t RunConfig::get_size(const std::string& key) const {
  const std::int64_t i = get_int(key);
  if (i < 0) bad_value(key, get(key), "a non-negative integer");
  return static_cast<std::size_t>(i);
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const std::string& v = get(key);
  char* end = nullptr;
  errno = 0;
  const unsigned long long u = std::strtoull(v.c_str(), &end, 10);
  if (v.empty() || v[0] == '-' || *end != '\0' || errno == ERANGE) bad_value(key, v, "a non-negative integer");
  return u;
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "true/false");
}

std::vector<std::size_t> RunConfig::get_size_list(const std::string& key) const {
  std::vector<std::size_t> out;
  std::istringstream in(get(key));
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    char* end = nullptr;
    const unsigned long long u = std::strtoull(item.c_str(), &end, 10);
    if (*end != '\0' || item[0] == '-') bad_value(key, get(key), "a comma-separated list of non-negative integers");
    out.push_back(static_cast<std::size_t>(u));
  }
  return out;
}

std::string RunConfig::dump() const {
  std::ostringstream os;
  std::string section;
  for (const auto& [k, v] : values_) {
    const std::string s = k.substr(0, k.find('.'));
    if (s != section) {
      if (!section.empty()) os << '\n';
      section = s;
    }
    os << k << " = " << v << '\n';
  }
  return os.str();
}

void RunConfig::write(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw Error("cannot write config '" + path.string() + "'");
  f << dump();
}

std::vector<std::string> RunConfig::keys() const {
  std::vector<std::string> k;
  for (const auto& kv : values_) k.push_back(kv.first);
  return k;
}

// Typed views -----------------------------------------------------------------------

namespace {

template <typename F>
auto keyed(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    const std::string msg = e.what();
    if (msg.rfind("config key", 0) == 0) throw;
    throw Error("config key '" + key + "': " + msg);
  }
}

}  // namespace

ArchitectureSpec architecture_from_config(const RunConfig& c) {
  ArchitectureSpec s;
  s.backbone = keyed("arch.backbone", [&] { return backbone_from_string(c.get("arch.backbone")); });
  s.recurrence = keyed("arch.recurrence", [&] { return recurrence_from_string(c.get("arch.recurrence")); });
  s.channels = c.get_size("arch.channels");
  s.depth = c.get_size("arch.depth");
  s.kernel_size = c.get_size("arch.kernel");
  s.in_channels = c.get_size("arch.in_channels");
  s.feature_tap = static_cast<int>(c.get_int("arch.feature_tap"));
  return keyed("arch", [&] { return s.resolved(); });
}

InitScheme init_from_config(const RunConfig& c) {
  const std::string& v = c.get("arch.init");
  if (v == "he") return InitScheme::he;
  if (v == "gaussian") return InitScheme::gaussian;
  throw Error("config key 'arch.init': expected he or gaussian, got '" + v + "'");
}

NormalizerConfig normalizer_from_config(const RunConfig& c) {
  NormalizerConfig n;
  n.scheme = keyed("norm.scheme", [&] { return norm_scheme_from_string(c.get("norm.scheme")); });
  n.alpha = c.get_double("norm.alpha");
  n.beta = c.get_double("norm.beta");
  n.epsilon = c.get_double("norm.epsilon");
  n.power_iters = c.get_size("norm.power_iters");
  n.literal_rank_one = c.get_bool("norm.literal_rank_one");
  n.normalize_output_conv = c.get_bool("norm.normalize_output");
  keyed("norm", [&] {
    n.validate();
    return 0;
  });
  return n;
}

MotionConfig motion_from_config(const RunConfig& c) {
  MotionConfig m;
  m.v_max = c.get_double("data.v_max");
  m.walk_std = c.get_double("data.walk_std");
  if (m.v_max < 0.0) throw Error("config key 'data.v_max': must be >= 0");
  if (m.walk_std < 0.0) throw Error("config key 'data.walk_std': must be >= 0");
  return m;
}

TrainConfig train_from_config(const RunConfig& c) {
  TrainConfig t;
  t.steps = c.get_size("train.steps");
  t.batch = c.get_size("train.batch");
  t.frames = c.get_size("train.frames");
  t.crop = c.get_size("train.crop");
  t.noise_sigma = c.get_double("train.noise_sigma") / 255.0;
  t.lr = static_cast<float>(c.get_double("train.lr"));
  t.seed = c.get_u64("run.seed");
  t.val_every = c.get_size("train.val_every");
  t.val_clips = c.get_size("train.val_clips");
  t.clip_grad = c.get_double("train.clip_grad");
  t.halt_on_nonfinite = c.get_bool("train.halt_on_nonfinite");
  keyed("train", [&] {
    t.validate();
    return 0;
  });
  return t;
}

StrfConfig strf_from_config(const RunConfig& c) {
  StrfConfig s;
  s.loss = keyed("strf.loss", [&] { return strf_loss_from_string(c.get("strf.loss")); });
  s.tau = c.get_size("strf.tau");
  s.n = c.get_size("strf.n");
  s.iters = c.get_size("strf.iters");
  s.lr = static_cast<float>(c.get_double("strf.lr"));
  s.restarts = c.get_size("strf.restarts");
  s.theta_infl = c.get_double("strf.theta_infl");
  s.theta_div = c.get_double("strf.theta_div");
  s.seed = c.get_u64("run.seed");
  if (s.restarts == 0) throw Error("config key 'strf.restarts': must be >= 1");
  if (s.tau + 1 > RecurrentModel::kMaxUnroll)
    throw Error("config key 'strf.tau': tau + 1 must not exceed " + std::to_string(RecurrentModel::kMaxUnroll));
  return s;
}

StabilityConfig stability_from_config(const RunConfig& c) {
  StabilityConfig s;
  s.noise_sigma = c.get_double("stability.noise_sigma") / 255.0;
  s.noise_seed = derive_seed(c.get_u64("run.seed"), {0x53544142});
  s.clip_noise = c.get_bool("stability.clip_noise");
  s.psnr_fail = c.get_double("stability.psnr_fail");
  s.max_frames = c.get_size("stability.max_frames");
  s.decimate = c.get_size("stability.decimate");
  if (s.noise_sigma < 0.0) throw Error("config key 'stability.noise_sigma': must be >= 0");
  if (s.decimate == 0) throw Error("config key 'stability.decimate': must be >= 1");
  return s;
}

ProbeConfig probe_from_config(const RunConfig& c) {
  ProbeConfig p;
  p.n = c.get_size("probe.n");
  p.frames = c.get_size("probe.frames");
  p.init_std = static_cast<float>(c.get_double("probe.init_std"));
  p.sigma_scale = c.get_double("probe.sigma_scale");
  p.input_seed = c.get_u64("run.seed");
  if (p.frames == 0) throw Error("config key 'probe.frames': must be >= 1");
  return p;
}

void apply_long_sequence_preset(RunConfig& c, std::size_t frames) {
  c.set("arch.backbone", "tiny_vdncnn");
  c.set("arch.recurrence", "feature");
  c.set("arch.channels", "16");
  c.set("arch.depth", "0");
  c.set("arch.in_channels", "1");
  c.set("arch.init", "he");
  c.set("train.crop", "32");
  c.set("train.noise_sigma", "20");
  c.set("train.frames", std::to_string(frames));
  c.set("train.lr", "1e-4");
  c.set("train.batch", "4");
  c.set("train.steps", "2000");
}

}  // namespace rvp

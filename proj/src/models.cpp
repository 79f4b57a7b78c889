#include "rvp/models.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "rvp/random.hpp"
#include "rvp/spectral.hpp"

namespace rvp {

std::string to_string(Backbone b) {
  switch (b) {
    case Backbone::vdncnn: return "vdncnn";
    case Backbone::vresnet: return "vresnet";
    case Backbone::tiny_vdncnn: return "tiny_vdncnn";
  }
  return "?";
}

std::string to_string(Recurrence r) {
  switch (r) {
    case Recurrence::none_single: return "none_single";
    case Recurrence::none_multi: return "none_multi";
    case Recurrence::feature_shift: return "feature_shift";
    case Recurrence::frame: return "frame";
    case Recurrence::feature: return "feature";
    case Recurrence::rlsp: return "rlsp";
  }
  return "?";
}

Backbone backbone_from_string(const std::string& s) {
  for (Backbone b : {Backbone::vdncnn, Backbone::vresnet, Backbone::tiny_vdncnn})
    if (to_string(b) == s) return b;
  throw Error("unknown backbone '" + s + "' (expected vdncnn, vresnet or tiny_vdncnn)");
}

Recurrence recurrence_from_string(const std::string& s) {
  for (Recurrence r : {Recurrence::none_single, Recurrence::none_multi, Recurrence::feature_shift, Recurrence::frame,
                       Recurrence::feature, Recurrence::rlsp})
    if (to_string(r) == s) return r;
  throw Error("unknown recurrence '" + s +
              "' (expected none_single, none_multi, feature_shift, frame, feature or rlsp)");
}

bool is_recurrent(Recurrence r) {
  return r == Recurrence::frame || r == Recurrence::feature || r == Recurrence::rlsp;
}

namespace {

bool is_resnet(const ArchitectureSpec& s) { return s.backbone == Backbone::vresnet; }

}  // namespace

ArchitectureSpec ArchitectureSpec::resolved() const {
  ArchitectureSpec s = *this;
  if (s.channels == 0) s.channels = s.backbone == Backbone::tiny_vdncnn ? 16 : 64;
  if (s.depth == 0) s.depth = s.backbone == Backbone::vdncnn ? 10 : s.backbone == Backbone::tiny_vdncnn ? 3 : 5;
  require(s.kernel_size % 2 == 1, "architecture: kernel size must be odd");
  require(s.in_channels >= 1, "architecture: in_channels must be >= 1");
  if (is_resnet(s)) {
    require(s.depth >= 1, "architecture: vresnet needs at least one residual block");
    if (s.feature_tap < 0) s.feature_tap = std::min<int>(2, static_cast<int>(s.depth) - 1);
    require(static_cast<std::size_t>(s.feature_tap) < s.depth, "architecture: feature tap must index a residual block");
  } else {
    require(s.depth >= 3, "architecture: " + to_string(s.backbone) +
                              " needs at least 3 convolutions (input, internal, output); got " + std::to_string(s.depth));
    if (s.feature_tap < 0) s.feature_tap = std::max<int>(1, static_cast<int>(s.depth) / 2 - 1);
    require(s.feature_tap >= 1 && static_cast<std::size_t>(s.feature_tap) <= s.depth - 2,
            "architecture: feature tap must index an internal conv in [1, depth-2]");
  }
  return s;
}

std::size_t ArchitectureSpec::conv_count() const {
  const ArchitectureSpec s = resolved();
  return is_resnet(s) ? 2 * s.depth + 2 : s.depth;
}

nlohmann::json ArchitectureSpec::to_json() const {
  return {{"backbone", to_string(backbone)}, {"recurrence", to_string(recurrence)},
          {"channels", channels},            {"depth", depth},
          {"kernel_size", kernel_size},      {"in_channels", in_channels},
          {"feature_tap", feature_tap}};
}

ArchitectureSpec ArchitectureSpec::from_json(const nlohmann::json& j) {
  ArchitectureSpec s;
  s.backbone = backbone_from_string(j.at("backbone").get<std::string>());
  s.recurrence = recurrence_from_string(j.at("recurrence").get<std::string>());
  s.channels = j.at("channels").get<std::size_t>();
  s.depth = j.at("depth").get<std::size_t>();
  s.kernel_size = j.at("kernel_size").get<std::size_t>();
  s.in_channels = j.at("in_channels").get<std::size_t>();
  s.feature_tap = j.at("feature_tap").get<int>();
  return s;
}

// ---------------------------------------------------------------------------

namespace {

ConvLayer make_layer(std::string name, std::size_t k, std::size_t m_in, std::size_t m_out, std::size_t extra) {
  ConvLayer l;
  l.name = std::move(name);
  l.kernel = KernelTensor(k, m_in + extra, m_out);
  l.bias = Tensor(Shape{m_out});
  if (extra) {
    l.rec_begin = m_in;
    l.rec_end = m_in + extra;
  }
  return l;
}

// Extra input channels of the head (first) conv and of the injection conv.
std::pair<std::size_t, std::size_t> extra_channels(const ArchitectureSpec& s) {
  const std::size_t c = s.in_channels, m = s.channels;
  switch (s.recurrence) {
    case Recurrence::none_single: return {0, 0};
    case Recurrence::none_multi: return {2 * c, 0};
    case Recurrence::frame: return {c, 0};
    case Recurrence::rlsp: return {m, 0};
    case Recurrence::feature:
    case Recurrence::feature_shift: return {0, m};
  }
  return {0, 0};
}

std::vector<ConvLayer> make_layers(const ArchitectureSpec& s) {
  const std::size_t c = s.in_channels, m = s.channels, k = s.kernel_size;
  const auto [head_extra, inject_extra] = extra_channels(s);
  std::vector<ConvLayer> L;
  if (is_resnet(s)) {
    L.push_back(make_layer("head", k, c, m, head_extra));
    for (std::size_t b = 0; b < s.depth; ++b) {
      L.push_back(make_layer("block" + std::to_string(b) + ".a", k, m, m, b == 0 ? inject_extra : 0));
      L.push_back(make_layer("block" + std::to_string(b) + ".b", k, m, m, 0));
    }
    L.push_back(make_layer("tail", k, m, c, 0));
  } else {
    for (std::size_t i = 0; i < s.depth; ++i) {
      const std::size_t in = i == 0 ? c : m;
      const std::size_t out = i + 1 == s.depth ? c : m;
      const std::size_t extra = i == 0 ? head_extra : (i == 1 ? inject_extra : 0);
      L.push_back(make_layer("conv" + std::to_string(i), k, in, out, extra));
    }
  }
  L.back().is_output = true;
  return L;
}

}  // namespace

RecurrentModel RecurrentModel::build(const ArchitectureSpec& spec, std::uint64_t seed, InitScheme init,
                                     float gaussian_std) {
  RecurrentModel m;
  m.spec_ = spec.resolved();
  m.layers_ = make_layers(m.spec_);
  for (std::size_t i = 0; i < m.layers_.size(); ++i) {
    KernelTensor& K = m.layers_[i].kernel;
    Rng rng = make_rng(seed, {0x494E4954, i});
    const float std_dev = init == InitScheme::gaussian
                              ? gaussian_std
                              : static_cast<float>(std::sqrt(2.0 / static_cast<double>(K.k() * K.k() * K.m_in())));
    fill_gaussian(K.weights(), rng, std_dev);
  }
  return m;
}

std::size_t RecurrentModel::state_reader() const {
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (layers_[i].rec_end > layers_[i].rec_begin) return i;
  return Var::npos;
}

std::size_t RecurrentModel::slot_count() const {
  switch (spec_.recurrence) {
    case Recurrence::none_single: return 0;
    case Recurrence::none_multi: return 2;
    default: return 1;
  }
}

// Normalization ---------------------------------------------------------------

void RecurrentModel::set_normalizer(const NormalizerConfig& cfg, std::size_t n, std::uint64_t seed) {
  norm_ = cfg;
  norm_n_ = n;
  norm_states_.assign(layers_.size(), NormalizerState{});
  if (cfg.scheme == NormScheme::none) return;
  cfg.validate();
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!layer_normalized(i)) continue;
    const KernelTensor& K = layers_[i].kernel;
    if (cfg.scheme == NormScheme::srnl)
      cfg.validate_for_layer(std::min(K.m_in(), K.m_out()), n);
    else
      cfg.validate_for_layer(std::min(K.k() * K.k() * K.m_in(), K.m_out()), K.k());
    norm_states_[i] = make_normalizer_state(K, n, derive_seed(seed, {0x4E4F524D, i}));
  }
}

bool RecurrentModel::layer_normalized(std::size_t i) const {
  if (norm_.scheme == NormScheme::none) return false;
  return norm_.normalize_output_conv || !layers_[i].is_output;
}

void RecurrentModel::converge_normalizer(std::size_t iters) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!layer_normalized(i)) continue;
    if (norm_.scheme == NormScheme::srnl)
      power_iteration_layer(layers_[i].kernel, norm_n_, norm_states_[i].layer, iters);
    else
      power_iteration_kernel2d(layers_[i].kernel, norm_states_[i].kernel, iters);
  }
}

std::vector<KernelTensor> RecurrentModel::effective_kernels() const {
  std::vector<KernelTensor> out;
  out.reserve(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!layer_normalized(i)) {
      out.push_back(layers_[i].kernel);
      continue;
    }
    NormalizerState s = norm_states_[i];
    out.push_back(normalized_kernel(layers_[i].kernel, norm_n_, norm_, s));
  }
  return out;
}

RecurrentModel RecurrentModel::frozen() const {
  RecurrentModel m = *this;
  const std::vector<KernelTensor> eff = effective_kernels();
  for (std::size_t i = 0; i < m.layers_.size(); ++i) m.layers_[i].kernel = eff[i];
  m.norm_ = NormalizerConfig{};
  m.norm_states_.clear();
  return m;
}

// Dampening -------------------------------------------------------------------

void RecurrentModel::set_dampening(float lambda, DampingRoute route) {
  require(lambda >= 0.0f && lambda <= 1.0f, "dampening.lambda must lie in [0, 1], got " + std::to_string(lambda));
  lambda_ = lambda;
  route_ = route;
}

Var RecurrentModel::damp(Tape& tape, Var s) const {
  if (route_ != DampingRoute::features || lambda_ == 1.0f) return s;
  return ad::scale(tape, s, lambda_);
}

RecurrentModel dampen_recurrent_kernels(const RecurrentModel& m, float lambda) {
  RecurrentModel out = m;
  const std::size_t r = m.state_reader();
  if (r != Var::npos) {
    ConvLayer& L = out.layers()[r];
    L.kernel = dampen_kernel_slice(L.kernel, lambda, L.rec_begin, L.rec_end);
  }
  out.set_dampening(1.0f, DampingRoute::kernel);
  return out;
}

RecurrentModel RecurrentModel::single_frame_variant() const {
  RecurrentModel m = *this;
  m.spec_.recurrence = Recurrence::none_single;
  const std::size_t r = state_reader();
  if (r != Var::npos) {
    ConvLayer& L = m.layers_[r];
    const KernelTensor& K = L.kernel;
    const std::size_t keep = K.m_in() - (L.rec_end - L.rec_begin);
    KernelTensor S(K.k(), keep, K.m_out());
    for (std::size_t dy = 0; dy < K.k(); ++dy)
      for (std::size_t dx = 0; dx < K.k(); ++dx)
        for (std::size_t i = 0, j = 0; i < K.m_in(); ++i) {
          if (i >= L.rec_begin && i < L.rec_end) continue;
          for (std::size_t o = 0; o < K.m_out(); ++o) S.at(dy, dx, j, o) = K.at(dy, dx, i, o);
          ++j;
        }
    L.kernel = std::move(S);
    L.rec_begin = L.rec_end = 0;
    if (m.norm_.scheme != NormScheme::none && layer_normalized(r))
      m.norm_states_[r] = make_normalizer_state(L.kernel, norm_n_, 1);
  }
  m.lambda_ = 1.0f;
  m.route_ = DampingRoute::features;
  return m;
}

// Forward ---------------------------------------------------------------------

BoundParams RecurrentModel::bind(Tape& tape, BindMode mode) {
  BoundParams p;
  if (mode == BindMode::eval) {
    const std::vector<KernelTensor> eff = effective_kernels();
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      p.raw_kernels.push_back(tape.constant(eff[i].weights()));
      p.raw_biases.push_back(tape.constant(layers_[i].bias));
    }
    p.kernels = p.raw_kernels;
    p.biases = p.raw_biases;
    return p;
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    p.raw_kernels.push_back(tape.leaf(layers_[i].kernel.weights()));
    p.raw_biases.push_back(tape.leaf(layers_[i].bias));
  }
  p.biases = p.raw_biases;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!layer_normalized(i)) {
      p.kernels.push_back(p.raw_kernels[i]);
      continue;
    }
    if (mode == BindMode::train) {
      p.kernels.push_back(normalized_kernel(tape, p.raw_kernels[i], norm_n_, norm_, norm_states_[i]));
    } else {
      NormalizerState s = norm_states_[i];
      p.kernels.push_back(normalized_kernel(tape, p.raw_kernels[i], norm_n_, norm_, s));
    }
  }
  return p;
}

std::vector<Var> RecurrentModel::zero_slots(Tape& tape, const Tensor& x) const {
  require(x.rank() == 3 && x.dim(2) == spec_.in_channels,
          "model expects [n,n," + std::to_string(spec_.in_channels) + "] frames, got " + shape_str(x.shape()));
  const std::size_t h = x.dim(0), w = x.dim(1), c = spec_.in_channels, m = spec_.channels;
  std::vector<Var> s;
  switch (spec_.recurrence) {
    case Recurrence::none_single: break;
    case Recurrence::none_multi:
      s.push_back(tape.constant(Tensor::map(h, w, c)));
      s.push_back(tape.constant(Tensor::map(h, w, c)));
      break;
    case Recurrence::frame: s.push_back(tape.constant(Tensor::map(h, w, c))); break;
    default: s.push_back(tape.constant(Tensor::map(h, w, m))); break;
  }
  return s;
}

Var RecurrentModel::forward(Tape& tape, const BoundParams& p, Var x, std::vector<Var>& slots) const {
  const Tensor& xv = tape.value(x);
  require(xv.rank() == 3 && xv.dim(2) == spec_.in_channels,
          "model expects [n,n," + std::to_string(spec_.in_channels) + "] frames, got " + shape_str(xv.shape()));
  require(slots.size() == slot_count(), "model: state has " + std::to_string(slots.size()) + " slots, expected " +
                                            std::to_string(slot_count()));
  const Recurrence rec = spec_.recurrence;
  auto conv = [&](std::size_t i, Var in) {
    return ad::bias_add(tape, ad::conv2d(tape, in, p.kernels[i]), p.biases[i]);
  };

  Var in0 = x;
  std::vector<Var> next = slots;
  switch (rec) {
    case Recurrence::none_multi:
      in0 = ad::concat_channels(tape, ad::concat_channels(tape, x, damp(tape, slots[0])), damp(tape, slots[1]));
      next = {x, slots[0]};
      break;
    case Recurrence::frame:
    case Recurrence::rlsp: in0 = ad::concat_channels(tape, x, damp(tape, slots[0])); break;
    default: break;
  }

  Var out;
  if (is_resnet(spec_)) {
    Var z = conv(0, in0);
    for (std::size_t b = 0; b < spec_.depth; ++b) {
      Var inA = z;
      if (b == 0 && rec == Recurrence::feature) inA = ad::concat_channels(tape, z, damp(tape, slots[0]));
      if (b == 0 && rec == Recurrence::feature_shift) {
        inA = ad::concat_channels(tape, z, damp(tape, slots[0]));
        next[0] = z;
      }
      const Var r = conv(2 + 2 * b, ad::relu(tape, conv(1 + 2 * b, inA)));
      z = ad::add(tape, z, r);
      if (rec == Recurrence::feature && b == static_cast<std::size_t>(spec_.feature_tap)) next[0] = z;
    }
    if (rec == Recurrence::rlsp) next[0] = z;
    out = conv(layers_.size() - 1, z);
  } else {
    const std::size_t D = spec_.depth;
    Var a = ad::relu(tape, conv(0, in0));
    for (std::size_t i = 1; i + 1 < D; ++i) {
      Var in = a;
      if (i == 1 && rec == Recurrence::feature) in = ad::concat_channels(tape, a, damp(tape, slots[0]));
      if (i == 1 && rec == Recurrence::feature_shift) {
        in = ad::concat_channels(tape, a, damp(tape, slots[0]));
        next[0] = a;
      }
      a = ad::relu(tape, conv(i, in));
      if (rec == Recurrence::feature && i == static_cast<std::size_t>(spec_.feature_tap)) next[0] = a;
      if (rec == Recurrence::rlsp && i + 2 == D) next[0] = a;
    }
    out = conv(D - 1, a);
  }
  const Var y = ad::add(tape, x, out);
  if (rec == Recurrence::frame) next[0] = y;
  slots = std::move(next);
  return y;
}

StepResult RecurrentModel::step(RecurrentState& state, const Tensor& x) {
  Tape tape;
  const BoundParams p = bind(tape, BindMode::eval);
  const Var xv = tape.constant(x);
  std::vector<Var> slots;
  if (state.slots.empty()) {
    slots = zero_slots(tape, x);
  } else {
    for (const Tensor& s : state.slots) slots.push_back(tape.constant(s));
  }
  const Var y = forward(tape, p, xv, slots);
  state.slots.clear();
  for (Var s : slots) state.slots.push_back(tape.value(s));
  ++state.frame;
  StepResult r;
  r.y = tape.value(y);
  r.diverged = !r.y.all_finite();
  return r;
}

std::vector<Var> RecurrentModel::unroll(Tape& tape, const BoundParams& p, const std::vector<Var>& X) const {
  require(!X.empty(), "unroll: empty sequence");
  require(X.size() <= kMaxUnroll, "unroll: T = " + std::to_string(X.size()) + " exceeds the limit of " +
                                      std::to_string(kMaxUnroll) +
                                      " recorded frames; use step() or split the sequence into truncated runs");
  std::vector<Var> slots = zero_slots(tape, tape.value(X.front()));
  std::vector<Var> Y;
  Y.reserve(X.size());
  for (Var x : X) Y.push_back(forward(tape, p, x, slots));
  return Y;
}

std::vector<Tensor> RecurrentModel::unroll(const std::vector<Tensor>& X) {
  Tape tape;
  const BoundParams p = bind(tape, BindMode::eval);
  std::vector<Var> xs;
  for (const Tensor& x : X) xs.push_back(tape.constant(x));
  std::vector<Tensor> Y;
  for (Var y : unroll(tape, p, xs)) Y.push_back(tape.value(y));
  return Y;
}

std::size_t RecurrentModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& L : layers_) n += L.kernel.weights().size() + L.bias.size();
  return n;
}

std::vector<Tensor*> RecurrentModel::parameters() {
  std::vector<Tensor*> p;
  for (auto& L : layers_) p.push_back(&L.kernel.weights());
  for (auto& L : layers_) p.push_back(&L.bias);
  return p;
}

// Serialization -----------------------------------------------------------------

TensorArchive RecurrentModel::to_archive() const {
  TensorArchive a;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const ConvLayer& L = layers_[i];
    a.add(L.name + ".kernel", L.kernel.weights());
    a.add(L.name + ".bias", L.bias);
    if (layer_normalized(i) && norm_states_[i].initialized) {
      a.add(L.name + ".power_u", norm_states_[i].layer.u);
      const auto& ku = norm_states_[i].kernel.u;
      Tensor t(Shape{ku.size()});
      for (std::size_t j = 0; j < ku.size(); ++j) t[j] = static_cast<float>(ku[j]);
      a.add(L.name + ".power_ku", t);
    }
  }
  return a;
}

nlohmann::json RecurrentModel::metadata() const {
  return {{"architecture", spec_.to_json()},
          {"normalizer",
           {{"scheme", to_string(norm_.scheme)},
            {"alpha", norm_.alpha},
            {"beta", norm_.beta},
            {"epsilon", norm_.epsilon},
            {"power_iters", norm_.power_iters},
            {"literal_rank_one", norm_.literal_rank_one},
            {"normalize_output_conv", norm_.normalize_output_conv},
            {"n", norm_n_}}},
          {"dampening", {{"lambda", lambda_}, {"route", route_ == DampingRoute::features ? "features" : "kernel"}}}};
}

RecurrentModel RecurrentModel::from_archive(const TensorArchive& a, const nlohmann::json& meta) {
  RecurrentModel m = build(ArchitectureSpec::from_json(meta.at("architecture")), 0);
  const auto& nj = meta.at("normalizer");
  m.norm_.scheme = norm_scheme_from_string(nj.at("scheme").get<std::string>());
  m.norm_.alpha = nj.at("alpha").get<double>();
  m.norm_.beta = nj.at("beta").get<double>();
  m.norm_.epsilon = nj.at("epsilon").get<double>();
  m.norm_.power_iters = nj.at("power_iters").get<std::size_t>();
  m.norm_.literal_rank_one = nj.at("literal_rank_one").get<bool>();
  m.norm_.normalize_output_conv = nj.at("normalize_output_conv").get<bool>();
  m.norm_n_ = nj.at("n").get<std::size_t>();
  m.norm_states_.assign(m.layers_.size(), NormalizerState{});
  const auto& dj = meta.at("dampening");
  m.set_dampening(dj.at("lambda").get<float>(),
                  dj.at("route").get<std::string>() == "kernel" ? DampingRoute::kernel : DampingRoute::features);

  for (std::size_t i = 0; i < m.layers_.size(); ++i) {
    ConvLayer& L = m.layers_[i];
    const Tensor& k = a.get(L.name + ".kernel");
    const Tensor& b = a.get(L.name + ".bias");
    if (k.shape() != L.kernel.weights().shape() || b.shape() != L.bias.shape())
      throw Error("checkpoint/architecture mismatch at layer '" + L.name + "': stored kernel " + shape_str(k.shape()) +
                  ", architecture expects " + shape_str(L.kernel.weights().shape()));
    L.kernel = KernelTensor(k);
    L.bias = b;
    if (m.layer_normalized(i)) {
      NormalizerState& s = m.norm_states_[i];
      s = make_normalizer_state(L.kernel, m.norm_n_, 1);
      if (a.contains(L.name + ".power_u")) {
        s.layer.u = a.get(L.name + ".power_u");
        const Tensor& ku = a.get(L.name + ".power_ku");
        s.kernel.u.assign(ku.data().begin(), ku.data().end());
      }
    }
  }
  return m;
}

// Layer scaling -----------------------------------------------------------------

double layer_spectral_norm(const KernelTensor& K, std::size_t n) { return fft_sigma1(K, n); }

void rescale_layers_to_sigma(RecurrentModel& m, double target, std::size_t n) {
  for (ConvLayer& L : m.layers()) {
    const double s = layer_spectral_norm(L.kernel, n);
    require(s > 0.0, "rescale_layers_to_sigma: layer '" + L.name + "' has sigma_1 = 0");
    const float c = static_cast<float>(target / s);
    for (float& w : L.kernel.weights().vec()) w *= c;
  }
}

// Checkpoints -------------------------------------------------------------------

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  std::filesystem::path p = path;
  p += ".json";
  return p;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  TensorArchive a = ck.model.to_archive();
  nlohmann::json meta = ck.model.metadata();
  meta["format"] = "rvplab-checkpoint";
  meta["training"] = ck.meta.is_null() ? nlohmann::json::object() : ck.meta;
  if (ck.adam) {
    const AdamState& s = *ck.adam;
    meta["adam"] = {{"step", s.step},   {"lr", s.config.lr},   {"beta1", s.config.beta1},
                    {"beta2", s.config.beta2}, {"eps", s.config.eps}, {"moments", s.m.size()},
                    {"nonfinite_entries", s.nonfinite_entries}};
    for (std::size_t i = 0; i < s.m.size(); ++i) {
      a.add("adam.m." + std::to_string(i), s.m[i]);
      a.add("adam.v." + std::to_string(i), s.v[i]);
    }
  }
  a.save(path);
  std::ofstream f(sidecar_path(path));
  if (!f) throw Error("cannot write checkpoint metadata '" + sidecar_path(path).string() + "'");
  f << meta.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const TensorArchive a = TensorArchive::load(path);
  std::ifstream f(sidecar_path(path));
  if (!f) throw Error("missing checkpoint metadata '" + sidecar_path(path).string() + "'");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed checkpoint metadata '" + sidecar_path(path).string() + "': " + e.what());
  }
  Checkpoint ck;
  try {
    ck.model = RecurrentModel::from_archive(a, meta);
    ck.meta = meta.value("training", nlohmann::json::object());
    if (meta.contains("adam")) {
      const auto& aj = meta["adam"];
      AdamConfig cfg;
      cfg.lr = aj.at("lr").get<float>();
      cfg.beta1 = aj.at("beta1").get<float>();
      cfg.beta2 = aj.at("beta2").get<float>();
      cfg.eps = aj.at("eps").get<float>();
      AdamState s(cfg);
      s.step = aj.at("step").get<std::int64_t>();
      s.nonfinite_entries = aj.at("nonfinite_entries").get<std::int64_t>();
      const auto count = aj.at("moments").get<std::size_t>();
      for (std::size_t i = 0; i < count; ++i) {
        s.m.push_back(a.get("adam.m." + std::to_string(i)));
        s.v.push_back(a.get("adam.v." + std::to_string(i)));
      }
      ck.adam = std::move(s);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed checkpoint metadata '" + sidecar_path(path).string() + "': " + e.what());
  }
  return ck;
}

}  // namespace rvp

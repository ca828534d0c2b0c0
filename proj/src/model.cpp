#include "refsr/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <random>
#include <limits>
#include <sstream>

namespace refsr {

using nlohmann::json;

SearchMode parse_search_mode(const std::string& name) {
  if (name == "full") return SearchMode::Full;
  if (name == "tiled") return SearchMode::Tiled;
  throw Error("unknown search mode '" + name + "' (expected full or tiled)");
}

std::string to_string(SearchMode mode) { return mode == SearchMode::Full ? "full" : "tiled"; }

// ---------------------------------------------------------------------------
// Config

json ModelConfig::to_json() const {
  return json{{"phi_channels", phi_channels},
              {"psi_stem_channels", psi_stem_channels},
              {"hr_channels", hr_channels},
              {"lr_channels", lr_channels},
              {"residual_blocks", residual_blocks},
              {"transformer_channels", transformer_channels},
              {"gate_channels", gate_channels},
              {"bound_scale", bound_scale},
              {"bound_translation", bound_translation},
              {"fusion", to_string(fusion)},
              {"search", to_string(search)},
              {"tile", tile},
              {"margin", margin}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  read_config_keys(j, "model config", [&c](const std::string& key, const json& v) {
    if (key == "phi_channels") c.phi_channels = json_int(v);
    else if (key == "psi_stem_channels") c.psi_stem_channels = json_int(v);
    else if (key == "hr_channels") c.hr_channels = json_int(v);
    else if (key == "lr_channels") c.lr_channels = json_int(v);
    else if (key == "residual_blocks") c.residual_blocks = json_int(v);
    else if (key == "transformer_channels") c.transformer_channels = json_int(v);
    else if (key == "gate_channels") c.gate_channels = json_int(v);
    else if (key == "bound_scale") c.bound_scale = v.get<double>();
    else if (key == "bound_translation") c.bound_translation = v.get<double>();
    else if (key == "fusion") c.fusion = parse_fusion_mode(v.get<std::string>());
    else if (key == "search") c.search = parse_search_mode(v.get<std::string>());
    else if (key == "tile") c.tile = json_int(v);
    else if (key == "margin") c.margin = json_int(v);
    else return false;
    return true;
  });
  c.validate();
  return c;
}

std::uint64_t ModelConfig::fingerprint() const {
  const std::string text = to_json().dump();
  return fnv1a(text.data(), text.size());
}

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw Error(std::string("model config: ") + name + " must be positive");
  };
  positive(phi_channels, "phi_channels");
  positive(psi_stem_channels, "psi_stem_channels");
  positive(hr_channels, "hr_channels");
  positive(lr_channels, "lr_channels");
  positive(transformer_channels, "transformer_channels");
  positive(gate_channels, "gate_channels");
  positive(tile, "tile");
  if (residual_blocks < 0) throw Error("model config: residual_blocks must be >= 0");
  if (margin < 0) throw Error("model config: margin must be >= 0");
  if (!(bound_scale > 0) || !(bound_translation > 0)) throw Error("model config: affine bounds must be positive");
}

int json_int(const json& v) {
  if (!v.is_number_integer()) throw Error("expected an integer, got " + v.dump());
  const auto i = v.get<std::int64_t>();
  if (i < std::numeric_limits<int>::min() || i > std::numeric_limits<int>::max())
    throw Error("integer out of range: " + v.dump());
  return static_cast<int>(i);
}

std::uint64_t json_u64(const json& v) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
    throw Error("expected a non-negative integer, got " + v.dump());
  return static_cast<std::uint64_t>(v.get<std::int64_t>());
}

std::string fingerprint_hex(std::uint64_t fp) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fp;
  return os.str();
}

// ---------------------------------------------------------------------------
// Params

namespace {

template <typename P, typename L>
std::vector<std::pair<std::string, L*>> collect_layers(P& p) {
  std::vector<std::pair<std::string, L*>> out;
  auto stack = [&out](const std::string& prefix, auto& s) {
    for (std::size_t i = 0; i < s.layers.size(); ++i) out.emplace_back(prefix + "." + std::to_string(i), &s.layers[i]);
  };
  stack("phi", p.phi);
  out.emplace_back("psi.0", &p.psi0);
  out.emplace_back("psi.1", &p.psi1);
  out.emplace_back("psi.2", &p.psi2);
  out.emplace_back("head", &p.head);
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    out.emplace_back("block." + std::to_string(i / 2) + ".conv" + std::to_string(i % 2 + 1), &p.blocks[i]);
  }
  out.emplace_back("up_conv", &p.up_conv);
  out.emplace_back("out_conv", &p.out_conv);
  stack("transformer", p.transformer);
  stack("fuse_lr.g", p.fuse_lr.g);
  out.emplace_back("fuse_lr.h", &p.fuse_lr.h);
  stack("fuse_hr.g", p.fuse_hr.g);
  out.emplace_back("fuse_hr.h", &p.fuse_hr.h);
  stack("g_r", p.g_r);
  return out;
}

template <typename T>
ModelParams<T> skeleton(const ModelConfig& c) {
  c.validate();
  ModelParams<T> p;
  p.config = c;
  p.phi.layers = {ConvLayer<T>(3, c.phi_channels), ConvLayer<T>(c.phi_channels, c.phi_channels),
                  ConvLayer<T>(c.phi_channels, c.phi_channels)};
  p.psi0 = ConvLayer<T>(3, c.psi_stem_channels);
  p.psi1 = ConvLayer<T>(c.psi_stem_channels, c.hr_channels);
  p.psi2 = ConvLayer<T>(c.hr_channels, c.lr_channels);
  p.head = ConvLayer<T>(3, c.lr_channels);
  p.blocks.assign(2 * c.residual_blocks, ConvLayer<T>(c.lr_channels, c.lr_channels));
  p.up_conv = ConvLayer<T>(c.lr_channels, c.hr_channels);
  p.out_conv = ConvLayer<T>(c.hr_channels, 3);
  const int t = c.transformer_channels;
  p.transformer.layers = {ConvLayer<T>(6, t), ConvLayer<T>(t, t), ConvLayer<T>(t, t), ConvLayer<T>(t, 6)};
  auto gate_stack = [&c] {
    ConvStack<T> g;
    g.layers = {ConvLayer<T>(1, c.gate_channels), ConvLayer<T>(c.gate_channels, 1)};
    return g;
  };
  p.fuse_lr = {gate_stack(), ConvLayer<T>(2 * c.lr_channels, c.lr_channels)};
  p.fuse_hr = {gate_stack(), ConvLayer<T>(2 * c.hr_channels, c.hr_channels)};
  p.g_r = gate_stack();
  return p;
}

template <typename T>
void add_grads(ConvLayer<T>& g, const ConvGrads<T>& cg) {
  g.weight += cg.weight;
  for (std::size_t i = 0; i < cg.bias.size(); ++i) g.bias[i] += cg.bias[i];
}

template <typename T>
void check_image(const BasicTensor<T>& t, const char* what) {
  if (t.n() != 1 || t.c() != 3) throw ShapeError(what, Shape{1, 3, t.h(), t.w()}, t.shape());
  if (t.h() < kMinExtent || t.w() < kMinExtent || t.h() % 2 || t.w() % 2) {
    throw Error(std::string(what) + " extents must be even and >= " + std::to_string(kMinExtent) + ", got " +
                t.shape().str());
  }
}

double tensor_mean(const auto& t) { return t.size() ? mean(t) : 0.0; }

}  // namespace

template <typename T>
std::vector<std::pair<std::string, ConvLayer<T>*>> ModelParams<T>::named_layers() {
  return collect_layers<ModelParams<T>, ConvLayer<T>>(*this);
}

template <typename T>
std::vector<std::pair<std::string, const ConvLayer<T>*>> ModelParams<T>::named_layers() const {
  return collect_layers<const ModelParams<T>, const ConvLayer<T>>(*this);
}

template <typename T>
ModelParams<T> ModelParams<T>::zeros_like() const {
  ModelParams<T> z = skeleton<T>(config);
  z.seed = seed;
  return z;
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, l] : named_layers()) n += l->parameter_count();
  return n;
}

template <typename T>
std::uint64_t ModelParams<T>::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& [name, l] : named_layers()) {
    h = fnv1a(l->weight.data(), l->weight.size() * sizeof(T), h);
    h = fnv1a(l->bias.data(), l->bias.size() * sizeof(T), h);
  }
  return h;
}

template <typename T>
bool ModelParams<T>::all_finite() const {
  for (const auto& [name, l] : named_layers()) {
    if (!l->weight.all_finite()) return false;
    for (T b : l->bias)
      if (!std::isfinite(static_cast<double>(b))) return false;
  }
  return true;
}

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
  ModelParams<U> out = skeleton<U>(config);
  out.seed = seed;
  auto dst = out.named_layers();
  const auto src = named_layers();
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i].second = src[i].second->template cast<U>();
  return out;
}

template <typename T>
ModelParams<T> init_params(std::uint64_t seed, const ModelConfig& config) {
  ModelParams<T> p = skeleton<T>(config);
  p.seed = seed;
  std::mt19937_64 rng(seed);
  for (auto& [name, l] : p.named_layers()) {
    const bool gate = name.rfind("fuse_lr.g.", 0) == 0 || name.rfind("fuse_hr.g.", 0) == 0 || name.rfind("g_r.", 0) == 0;
    l->init_uniform(rng, gate);
  }
  p.transformer.layers.back().set_zero();
  return p;
}

// ---------------------------------------------------------------------------
// Forward / backward

template <typename T>
BasicTensor<T> phi_features(const ModelParams<T>& p, const BasicTensor<T>& image) {
  BasicTensor<T> x = relu(p.phi.layers[0](image));
  x = relu(p.phi.layers[1](x));
  x = bicubic_resize(x, Resample::Down2);
  return p.phi.layers[2](x);
}

template <typename T>
MatchContext<T> build_context(const ModelParams<T>& p, const BasicTensor<T>& lr, const BasicTensor<T>& ref) {
  check_image(lr, "lr");
  check_image(ref, "ref");
  MatchContext<T> ctx;
  ctx.lr_up = bicubic_resize(lr, Resample::Up2);
  const BasicTensor<T> fl = phi_features(p, ctx.lr_up);
  const BasicTensor<T> fr = phi_features(p, ref);
  ctx.match = p.config.search == SearchMode::Full ? match_features(fl, fr)
                                                  : tiled_match(fl, fr, p.config.tile, p.config.margin);
  ctx.ref_matched = warp_by_index(ref, ctx.match, 2);
  ctx.hf_matched = warp_by_index(hf_residual(ref), ctx.match, 2);
  ctx.conf_lr = ctx.match.template confidence_map<T>();
  ctx.conf_hr = bilinear_upsample2(ctx.conf_lr);
  return ctx;
}

template <typename T>
double ForwardTrace<T>::mean_gate() const {
  if (!used_reference) return 0.0;
  double s = tensor_mean(image_cache.gate);
  int n = 1;
  if (fuse_lr_cache.gate.size()) {
    s += tensor_mean(fuse_lr_cache.gate) + tensor_mean(fuse_hr_cache.gate);
    n += 2;
  }
  return s / n;
}

template <typename T>
ForwardTrace<T> forward(const ModelParams<T>& p, const BasicTensor<T>& lr, const BasicTensor<T>& ref,
                        const MatchContext<T>& ctx, ForwardOptions options) {
  check_image(lr, "lr");
  check_image(ref, "ref");
  if (ctx.lr_up.h() != 2 * lr.h() || ctx.lr_up.w() != 2 * lr.w()) throw Error("match context does not belong to this lr");
  const ModelConfig& c = p.config;
  ForwardTrace<T> t;
  t.used_reference = options.use_reference;
  t.lr = lr;

  t.head_pre = p.head(lr);
  BasicTensor<T> x = relu(t.head_pre);
  for (int b = 0; b < c.residual_blocks; ++b) {
    t.block_in.push_back(x);
    t.block_mid_pre.push_back(p.blocks[2 * b](x));
    t.block_mid.push_back(relu(t.block_mid_pre.back()));
    x += p.blocks[2 * b + 1](t.block_mid.back());
  }
  t.f_sr_lr = std::move(x);

  if (options.use_reference) {
    t.ref = ref;
    t.align = predict_alignment(ctx.lr_up, ctx.ref_matched, p.transformer, c.bounds(), 2);
    t.psi0_pre = p.psi0(ref);
    t.psi0_out = relu(t.psi0_pre);
    t.psi1_pre = p.psi1(t.psi0_out);
    t.f_ref_hr = relu(t.psi1_pre);
    t.f_ref_hr_down = bicubic_resize(t.f_ref_hr, Resample::Down2);
    t.psi2_pre = p.psi2(t.f_ref_hr_down);
    t.f_ref_lr = relu(t.psi2_pre);
    t.f_ref_lr_matched = warp_by_index(t.f_ref_lr, ctx.match, 1);
    t.f_ref_hr_matched = warp_by_index(t.f_ref_hr, ctx.match, 2);
    t.f_ref_lr_aligned = apply_patch_affine(t.f_ref_lr_matched, t.align.field, 1);
    t.f_ref_hr_aligned = apply_patch_affine(t.f_ref_hr_matched, t.align.field, 2);
    t.fused_lr = adaptive_feature_fuse(t.f_sr_lr, t.f_ref_lr_aligned, ctx.conf_lr, p.fuse_lr, c.fusion, &t.fuse_lr_cache);
  } else {
    t.fused_lr = t.f_sr_lr;
  }

  t.fused_lr_up = bicubic_resize(t.fused_lr, Resample::Up2);
  t.up_pre = p.up_conv(t.fused_lr_up);
  t.f_sr_hr = relu(t.up_pre);
  t.fused_hr = options.use_reference ? adaptive_feature_fuse(t.f_sr_hr, t.f_ref_hr_aligned, ctx.conf_hr, p.fuse_hr,
                                                             c.fusion, &t.fuse_hr_cache)
                                     : t.f_sr_hr;
  t.decoded = p.out_conv(t.fused_hr) + ctx.lr_up;
  if (options.use_reference) {
    t.hf_aligned = apply_patch_affine(ctx.hf_matched, t.align.field, 2);
    t.sr = image_space_fuse(t.decoded, t.hf_aligned, ctx.conf_hr, p.g_r, &t.image_cache);
  } else {
    t.sr = t.decoded;
  }
  return t;
}

template <typename T>
ForwardTrace<T> forward(const ModelParams<T>& p, const BasicTensor<T>& lr, const BasicTensor<T>& ref,
                        ForwardOptions options) {
  return forward(p, lr, ref, build_context(p, lr, ref), options);
}

template <typename T>
ModelParams<T> backward(const ModelParams<T>& p, const MatchContext<T>& ctx, const ForwardTrace<T>& t,
                        const BasicTensor<T>& grad_sr) {
  require_same_shape("backward grad_sr", grad_sr.shape(), t.sr.shape());
  const ModelConfig& c = p.config;
  ModelParams<T> g = p.zeros_like();
  const bool ref = t.used_reference;
  std::vector<T> d_field;
  if (ref) d_field.assign(t.align.field.residual.size(), T(0));
  auto add_field = [&d_field](const std::vector<T>& r) {
    for (std::size_t i = 0; i < r.size(); ++i) d_field[i] += r[i];
  };

  BasicTensor<T> d_decoded = grad_sr;
  if (ref) {
    ImageFuseGrads<T> ig = image_space_fuse_backward(grad_sr, t.hf_aligned, p.g_r, t.image_cache, g.g_r);
    d_decoded = std::move(ig.decoded);
    add_field(apply_patch_affine_backward(ctx.hf_matched, t.align.field, 2, ig.hf_aligned).residual);
  }

  ConvGrads<T> cg = conv2d_backward(t.fused_hr, p.out_conv.weight, d_decoded);
  add_grads(g.out_conv, cg);
  BasicTensor<T> d_f_sr_hr = std::move(cg.input);
  BasicTensor<T> d_ref_hr_aligned;
  if (ref) {
    FuseGrads<T> fg = adaptive_feature_fuse_backward(d_f_sr_hr, t.f_sr_hr, t.f_ref_hr_aligned, ctx.conf_hr, p.fuse_hr,
                                                     c.fusion, t.fuse_hr_cache, g.fuse_hr);
    d_f_sr_hr = std::move(fg.f_sr);
    d_ref_hr_aligned = std::move(fg.f_ref);
  }
  cg = conv2d_backward(t.fused_lr_up, p.up_conv.weight, relu_backward(d_f_sr_hr, t.up_pre));
  add_grads(g.up_conv, cg);
  BasicTensor<T> d_f_sr_lr = bicubic_resize_backward(cg.input, Resample::Up2, t.fused_lr.shape());
  BasicTensor<T> d_ref_lr_aligned;
  if (ref) {
    FuseGrads<T> fg = adaptive_feature_fuse_backward(d_f_sr_lr, t.f_sr_lr, t.f_ref_lr_aligned, ctx.conf_lr, p.fuse_lr,
                                                     c.fusion, t.fuse_lr_cache, g.fuse_lr);
    d_f_sr_lr = std::move(fg.f_sr);
    d_ref_lr_aligned = std::move(fg.f_ref);
  }

  // Backbone.
  BasicTensor<T> d_x = std::move(d_f_sr_lr);
  for (int b = c.residual_blocks - 1; b >= 0; --b) {
    ConvGrads<T> c2 = conv2d_backward(t.block_mid[b], p.blocks[2 * b + 1].weight, d_x);
    add_grads(g.blocks[2 * b + 1], c2);
    ConvGrads<T> c1 = conv2d_backward(t.block_in[b], p.blocks[2 * b].weight, relu_backward(c2.input, t.block_mid_pre[b]));
    add_grads(g.blocks[2 * b], c1);
    d_x += c1.input;
  }
  add_grads(g.head, conv2d_backward(t.lr, p.head.weight, relu_backward(d_x, t.head_pre), false));

  if (ref) {
    AffinePatchGrads<T> a_hr = apply_patch_affine_backward(t.f_ref_hr_matched, t.align.field, 2, d_ref_hr_aligned);
    AffinePatchGrads<T> a_lr = apply_patch_affine_backward(t.f_ref_lr_matched, t.align.field, 1, d_ref_lr_aligned);
    add_field(a_hr.residual);
    add_field(a_lr.residual);
    BasicTensor<T> d_f_ref_hr = warp_by_index_backward(a_hr.input, ctx.match, 2, t.f_ref_hr.shape());
    const BasicTensor<T> d_f_ref_lr = warp_by_index_backward(a_lr.input, ctx.match, 1, t.f_ref_lr.shape());
    cg = conv2d_backward(t.f_ref_hr_down, p.psi2.weight, relu_backward(d_f_ref_lr, t.psi2_pre));
    add_grads(g.psi2, cg);
    d_f_ref_hr += bicubic_resize_backward(cg.input, Resample::Down2, t.f_ref_hr.shape());
    cg = conv2d_backward(t.psi0_out, p.psi1.weight, relu_backward(d_f_ref_hr, t.psi1_pre));
    add_grads(g.psi1, cg);
    add_grads(g.psi0, conv2d_backward(t.ref, p.psi0.weight, relu_backward(cg.input, t.psi0_pre), false));
    predict_alignment_backward(d_field, t.align, p.transformer, g.transformer);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr const char* kMagic = "refsr-checkpoint 1";
static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

}  // namespace

void save_checkpoint(const ModelParams<float>& p, const std::filesystem::path& path) {
  json tensors = json::array();
  std::size_t offset = 0;
  for (const auto& [name, l] : p.named_layers()) {
    const Shape s = l->weight.shape();
    tensors.push_back({{"name", name + ".weight"}, {"shape", {s.n, s.c, s.h, s.w}}, {"offset", offset}, {"count", l->weight.size()}});
    offset += l->weight.size();
    tensors.push_back({{"name", name + ".bias"}, {"shape", {static_cast<int>(l->bias.size())}}, {"offset", offset}, {"count", l->bias.size()}});
    offset += l->bias.size();
  }
  const json manifest{{"config", p.config.to_json()},
                      {"seed", p.seed},
                      {"fingerprint", fingerprint_hex(p.config.fingerprint())},
                      {"dtype", "float32-le"},
                      {"tensors", tensors},
                      {"payload_floats", offset}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out << kMagic << '\n' << manifest.dump() << '\n';
  for (const auto& [name, l] : p.named_layers()) {
    out.write(reinterpret_cast<const char*>(l->weight.data()), static_cast<std::streamsize>(l->weight.size() * sizeof(float)));
    out.write(reinterpret_cast<const char*>(l->bias.data()), static_cast<std::streamsize>(l->bias.size() * sizeof(float)));
  }
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

ModelParams<float> load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::string magic, manifest_text;
  std::getline(in, magic);
  if (magic != kMagic) throw Error("not a checkpoint file: " + path.string());
  std::getline(in, manifest_text);
  json manifest;
  try {
    manifest = json::parse(manifest_text);
  } catch (const json::exception& e) {
    throw Error("corrupt checkpoint manifest in " + path.string() + ": " + e.what());
  }
  const ModelConfig config = ModelConfig::from_json(manifest.at("config"));
  const std::string stored = manifest.at("fingerprint").get<std::string>();
  const std::string actual = fingerprint_hex(config.fingerprint());
  if (stored != actual) {
    throw Error("checkpoint fingerprint " + stored + " does not match its config (" + actual + ")");
  }
  if (expected) {
    const std::string want = fingerprint_hex(expected->fingerprint());
    if (want != stored) {
      throw Error("config fingerprint mismatch: checkpoint has " + stored + ", expected " + want);
    }
  }
  ModelParams<float> p = skeleton<float>(config);
  p.seed = manifest.at("seed").get<std::uint64_t>();
  const std::streampos payload_start = in.tellg();
  in.seekg(0, std::ios::end);
  const std::size_t available = static_cast<std::size_t>(in.tellg() - payload_start);
  in.seekg(payload_start);

  auto layers = p.named_layers();
  const json& index = manifest.at("tensors");
  if (index.size() != 2 * layers.size()) throw Error("checkpoint tensor index does not match the model structure");
  std::size_t entry = 0;
  auto read = [&](const std::string& name, float* dst, std::size_t count) {
    const json& e = index.at(entry++);
    if (e.at("name").get<std::string>() != name || e.at("count").get<std::size_t>() != count) {
      throw Error("checkpoint tensor '" + e.at("name").get<std::string>() + "' does not match layer '" + name + "'");
    }
    const std::size_t begin = e.at("offset").get<std::size_t>() * sizeof(float);
    const std::size_t bytes = count * sizeof(float);
    if (begin + bytes > available) {
      throw Error("truncated checkpoint payload: tensor '" + name + "' needs bytes [" + std::to_string(begin) + ", " +
                  std::to_string(begin + bytes) + ") but only " + std::to_string(available) + " are present");
    }
    in.seekg(payload_start + static_cast<std::streamoff>(begin));
    in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(bytes));
    if (!in) throw Error("failed reading tensor '" + name + "'");
  };
  for (auto& [name, l] : layers) {
    read(name + ".weight", l->weight.data(), l->weight.size());
    read(name + ".bias", l->bias.data(), l->bias.size());
  }
  if (!p.all_finite()) throw Error("checkpoint " + path.string() + " contains non-finite weights");
  return p;
}

#define REFSR_INSTANTIATE(T)                                                                                        \
  template struct ModelParams<T>;                                                                                   \
  template ModelParams<T> init_params(std::uint64_t, const ModelConfig&);                                           \
  template BasicTensor<T> phi_features(const ModelParams<T>&, const BasicTensor<T>&);                               \
  template MatchContext<T> build_context(const ModelParams<T>&, const BasicTensor<T>&, const BasicTensor<T>&);      \
  template struct ForwardTrace<T>;                                                                                  \
  template ForwardTrace<T> forward(const ModelParams<T>&, const BasicTensor<T>&, const BasicTensor<T>&,             \
                                   const MatchContext<T>&, ForwardOptions);                                         \
  template ForwardTrace<T> forward(const ModelParams<T>&, const BasicTensor<T>&, const BasicTensor<T>&,             \
                                   ForwardOptions);                                                                 \
  template ModelParams<T> backward(const ModelParams<T>&, const MatchContext<T>&, const ForwardTrace<T>&,           \
                                   const BasicTensor<T>&);

REFSR_INSTANTIATE(float)
REFSR_INSTANTIATE(double)

#undef REFSR_INSTANTIATE

template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;
template ModelParams<float> ModelParams<float>::cast<float>() const;

}  // namespace refsr

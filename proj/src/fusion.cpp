#include "refsr/fusion.hpp"

namespace refsr {

FusionMode parse_fusion_mode(const std::string& name) {
  if (name == "adaptive") return FusionMode::Adaptive;
  if (name == "soft") return FusionMode::Soft;
  if (name == "sum") return FusionMode::Sum;
  throw Error("unknown fusion mode '" + name + "' (expected adaptive, soft or sum)");
}

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::Adaptive: return "adaptive";
    case FusionMode::Soft: return "soft";
    case FusionMode::Sum: return "sum";
  }
  return "adaptive";
}

namespace {

template <typename T>
void check_confidence(const BasicTensor<T>& confidence, const Shape& level) {
  const Shape expect{level.n, 1, level.h, level.w};
  if (confidence.shape() != expect) throw ShapeError("confidence map extent", expect, confidence.shape());
}

}  // namespace

template <typename T>
BasicTensor<T> gate_map(const ConvStack<T>& g, const BasicTensor<T>& confidence,
                        typename ConvStack<T>::Cache* cache) {
  return sigmoid(g.forward(confidence, cache));
}

template <typename T>
BasicTensor<T> adaptive_feature_fuse(const BasicTensor<T>& f_sr, const BasicTensor<T>& f_ref,
                                     const BasicTensor<T>& confidence, const FusionGate<T>& gate, FusionMode mode,
                                     FuseCache<T>* cache) {
  require_same_shape("adaptive_feature_fuse features", f_sr.shape(), f_ref.shape());
  if (mode == FusionMode::Sum) return f_sr + f_ref;
  check_confidence(confidence, f_sr.shape());
  FuseCache<T> local;
  FuseCache<T>& c = cache ? *cache : local;
  c.gate = mode == FusionMode::Adaptive ? gate_map(gate.g, confidence, &c.g_cache) : confidence;
  c.concat = concat_channels(f_sr, f_ref);
  c.h_out = gate.h(c.concat);
  return broadcast_mul(c.gate, c.h_out) + f_sr;
}

template <typename T>
FuseGrads<T> adaptive_feature_fuse_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& f_sr,
                                            const BasicTensor<T>& f_ref, const BasicTensor<T>& confidence,
                                            const FusionGate<T>& gate, FusionMode mode, const FuseCache<T>& cache,
                                            FusionGate<T>& grads) {
  require_same_shape("adaptive_feature_fuse_backward", grad_out.shape(), f_sr.shape());
  require_same_shape("adaptive_feature_fuse_backward", f_ref.shape(), f_sr.shape());
  FuseGrads<T> out;
  if (mode == FusionMode::Sum) {
    out.f_sr = grad_out;
    out.f_ref = grad_out;
    out.confidence = BasicTensor<T>(confidence.shape());
    return out;
  }
  const BasicTensor<T> d_gate = channel_dot(grad_out, cache.h_out);
  const BasicTensor<T> d_h = broadcast_mul(cache.gate, grad_out);
  ConvGrads<T> hg = conv2d_backward(cache.concat, gate.h.weight, d_h);
  grads.h.weight += hg.weight;
  for (std::size_t i = 0; i < hg.bias.size(); ++i) grads.h.bias[i] += hg.bias[i];
  const int C = f_sr.c();
  out.f_sr = slice_channels(hg.input, 0, C) + grad_out;
  out.f_ref = slice_channels(hg.input, C, C);
  if (mode == FusionMode::Adaptive) {
    out.confidence = gate.g.backward(sigmoid_backward(d_gate, cache.gate), cache.g_cache, grads.g);
  } else {
    out.confidence = d_gate;
  }
  return out;
}

template <typename T>
BasicTensor<T> hf_residual(const BasicTensor<T>& ref) {
  return ref - bicubic_resize(bicubic_resize(ref, Resample::Down2), Resample::Up2);
}

template <typename T>
BasicTensor<T> image_space_fuse(const BasicTensor<T>& decoded, const BasicTensor<T>& hf_aligned,
                                const BasicTensor<T>& confidence, const ConvStack<T>& g_r,
                                ImageFuseCache<T>* cache) {
  require_same_shape("image_space_fuse", decoded.shape(), hf_aligned.shape());
  check_confidence(confidence, decoded.shape());
  ImageFuseCache<T> local;
  ImageFuseCache<T>& c = cache ? *cache : local;
  c.gate = gate_map(g_r, confidence, &c.g_cache);
  return broadcast_mul(c.gate, hf_aligned) + decoded;
}

template <typename T>
ImageFuseGrads<T> image_space_fuse_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& hf_aligned,
                                            const ConvStack<T>& g_r, const ImageFuseCache<T>& cache,
                                            ConvStack<T>& grads) {
  require_same_shape("image_space_fuse_backward", grad_out.shape(), hf_aligned.shape());
  ImageFuseGrads<T> out;
  out.decoded = grad_out;
  out.hf_aligned = broadcast_mul(cache.gate, grad_out);
  out.confidence = g_r.backward(sigmoid_backward(channel_dot(grad_out, hf_aligned), cache.gate), cache.g_cache, grads);
  return out;
}

#define REFSR_INSTANTIATE(T)                                                                                   \
  template BasicTensor<T> gate_map(const ConvStack<T>&, const BasicTensor<T>&, ConvStack<T>::Cache*);          \
  template BasicTensor<T> adaptive_feature_fuse(const BasicTensor<T>&, const BasicTensor<T>&,                  \
                                                const BasicTensor<T>&, const FusionGate<T>&, FusionMode,       \
                                                FuseCache<T>*);                                                \
  template FuseGrads<T> adaptive_feature_fuse_backward(const BasicTensor<T>&, const BasicTensor<T>&,           \
                                                       const BasicTensor<T>&, const BasicTensor<T>&,           \
                                                       const FusionGate<T>&, FusionMode, const FuseCache<T>&,  \
                                                       FusionGate<T>&);                                        \
  template BasicTensor<T> hf_residual(const BasicTensor<T>&);                                                  \
  template BasicTensor<T> image_space_fuse(const BasicTensor<T>&, const BasicTensor<T>&,                       \
                                           const BasicTensor<T>&, const ConvStack<T>&, ImageFuseCache<T>*);    \
  template ImageFuseGrads<T> image_space_fuse_backward(const BasicTensor<T>&, const BasicTensor<T>&,           \
                                                       const ConvStack<T>&, const ImageFuseCache<T>&,          \
                                                       ConvStack<T>&);

REFSR_INSTANTIATE(float)
REFSR_INSTANTIATE(double)

#undef REFSR_INSTANTIATE

}  // namespace refsr

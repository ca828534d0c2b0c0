#pragma once

// Confidence-gated fusion of aligned reference features into the SR path, and
// the image-space high-frequency residual fusion at the output.

#include <string>

#include "refsr/layers.hpp"

namespace refsr {

enum class FusionMode { Adaptive, Soft, Sum };

FusionMode parse_fusion_mode(const std::string& name);
std::string to_string(FusionMode mode);

/// Gate g (conv stack on the 1-channel confidence, sigmoid applied on top) and
/// aggregation h (conv over concat(f_sr, f_ref)) for one decoder level.
template <typename T>
struct FusionGate {
  ConvStack<T> g;
  ConvLayer<T> h;

  FusionGate zeros_like() const { return {g.zeros_like(), h.zeros_like()}; }
};

template <typename T>
struct FuseCache {
  typename ConvStack<T>::Cache g_cache;
  BasicTensor<T> gate;    ///< sigmoid(g(C)) in adaptive mode, C in soft mode
  BasicTensor<T> concat;  ///< input of h
  BasicTensor<T> h_out;
};

/// adaptive: sigmoid(g(C)) * h(concat(f_sr, f_ref)) + f_sr
/// soft:     C * h(concat(f_sr, f_ref)) + f_sr
/// sum:      f_sr + f_ref
template <typename T>
BasicTensor<T> adaptive_feature_fuse(const BasicTensor<T>& f_sr, const BasicTensor<T>& f_ref,
                                     const BasicTensor<T>& confidence, const FusionGate<T>& gate, FusionMode mode,
                                     FuseCache<T>* cache = nullptr);

template <typename T>
struct FuseGrads {
  BasicTensor<T> f_sr;
  BasicTensor<T> f_ref;
  BasicTensor<T> confidence;
};

/// Gate parameter gradients are accumulated into `grads`.
template <typename T>
FuseGrads<T> adaptive_feature_fuse_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& f_sr,
                                            const BasicTensor<T>& f_ref, const BasicTensor<T>& confidence,
                                            const FusionGate<T>& gate, FusionMode mode, const FuseCache<T>& cache,
                                            FusionGate<T>& grads);

/// sigmoid(g(C)).
template <typename T>
BasicTensor<T> gate_map(const ConvStack<T>& g, const BasicTensor<T>& confidence,
                        typename ConvStack<T>::Cache* cache = nullptr);

/// ref - up(down(ref)), the detail that bicubic x2 cannot reproduce.
template <typename T>
BasicTensor<T> hf_residual(const BasicTensor<T>& ref);

template <typename T>
struct ImageFuseCache {
  typename ConvStack<T>::Cache g_cache;
  BasicTensor<T> gate;
};

/// sigmoid(g_r(C)) * hf_aligned + decoded.
template <typename T>
BasicTensor<T> image_space_fuse(const BasicTensor<T>& decoded, const BasicTensor<T>& hf_aligned,
                                const BasicTensor<T>& confidence, const ConvStack<T>& g_r,
                                ImageFuseCache<T>* cache = nullptr);

template <typename T>
struct ImageFuseGrads {
  BasicTensor<T> decoded;
  BasicTensor<T> hf_aligned;
  BasicTensor<T> confidence;
};

template <typename T>
ImageFuseGrads<T> image_space_fuse_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& hf_aligned,
                                            const ConvStack<T>& g_r, const ImageFuseCache<T>& cache,
                                            ConvStack<T>& grads);

}  // namespace refsr

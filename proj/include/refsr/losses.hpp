#pragma once

// Training objectives with analytic gradients w.r.t. the SR image.

#include <type_traits>
#include <vector>

#include "refsr/layers.hpp"

namespace refsr {

/// Per-pixel nearest-neighbour cosine distance from x to the pixel set of y.
struct ContextualResult {
  std::vector<double> delta;    ///< one per x pixel, in [0, 2]
  std::vector<int> assignment;  ///< selected y pixel, -1 when none applies
  double mean = 0.0;
};

/// delta_i = min_j (1 - cos(x_i, y_j)); features are (1, C, H, W) with equal C.
/// A pixel with norm < 1e-8 is at distance 0 from another such pixel and 1 from
/// everything else.
template <typename T>
ContextualResult contextual_distance(const BasicTensor<T>& x_feat, const BasicTensor<T>& y_feat);

/// Same distances but with a caller-supplied assignment (no search).
template <typename T>
ContextualResult contextual_distance_assigned(const BasicTensor<T>& x_feat, const BasicTensor<T>& y_feat,
                                              const std::vector<int>& assignment);

/// d/dx of sum_i grad_delta[i] * delta_i with the assignment held fixed.
template <typename T>
BasicTensor<T> contextual_distance_backward(const BasicTensor<T>& x_feat, const BasicTensor<T>& y_feat,
                                            const ContextualResult& result, const std::vector<double>& grad_delta);

/// relu(conv(x)) with the first matching-encoder layer.
template <typename T>
BasicTensor<T> embed_features(const ConvLayer<T>& embed, const BasicTensor<T>& image);

template <typename T>
struct LossValue {
  double value = 0.0;
  double term1 = 0.0;  ///< pixel term (blur L1, downsample consistency, ...)
  double term2 = 0.0;  ///< contextual term as it enters `value`
  BasicTensor<T> grad;  ///< d value / d sr
  std::vector<int> assignment;
};

/// mean|blur(sr) - blur(hr)| + mean contextual distance of the embeddings.
/// `hr_feat` may carry embed_features(embed, hr) to skip recomputation;
/// `assignment` pins the nearest-neighbour choice (used by gradient checks).
template <typename T>
LossValue<T> reconstruction_loss(const BasicTensor<T>& sr, const BasicTensor<T>& hr, const ConvLayer<T>& embed,
                                 const std::type_identity_t<BasicTensor<T>>* hr_feat = nullptr,
                                 const std::vector<int>* assignment = nullptr);

/// sum_i c_i delta_i / sum_i c_i with c clamped to [0, 1]; 0 when sum c < 1e-8.
/// `confidence` is (1, 1, H, W) at the extent of sr.
template <typename T>
LossValue<T> fidelity_loss(const BasicTensor<T>& sr, const BasicTensor<T>& ref, const BasicTensor<T>& confidence,
                           const ConvLayer<T>& embed, const std::type_identity_t<BasicTensor<T>>* ref_feat = nullptr,
                           const std::vector<int>* assignment = nullptr);

/// mean|down(sr) - wide| + lambda * fidelity_loss(sr, tele, C).
template <typename T>
LossValue<T> sra_loss(const BasicTensor<T>& sr, const BasicTensor<T>& wide, const BasicTensor<T>& tele,
                      const BasicTensor<T>& confidence, double lambda, const ConvLayer<T>& embed,
                      const std::type_identity_t<BasicTensor<T>>* tele_feat = nullptr, const std::vector<int>* assignment = nullptr);

/// mean|sr - hr|.
template <typename T>
LossValue<T> l1_loss(const BasicTensor<T>& sr, const BasicTensor<T>& hr);

/// Standard deviation of the blur used by reconstruction_loss.
inline constexpr double kReconstructionBlurSigma = 0.5;

}  // namespace refsr

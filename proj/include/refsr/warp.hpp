#pragma once

// Aligned attention: coarse warping by the index map, per-patch affine
// prediction by the local transformer T, and patch-wise affine refinement.

#include <array>
#include <vector>

#include "refsr/kernels.hpp"
#include "refsr/layers.hpp"
#include "refsr/matching.hpp"

namespace refsr {

struct AffineBounds {
  double scale = 0.5;        ///< bound on the four linear residual entries
  double translation = 2.0;  ///< bound on the translation entries, in grid cells
};

/// Per grid cell 2x3 affine stored as a residual from identity, six values per cell:
/// (a00 - 1, a01, a10, a11 - 1, tx, ty). Translation is in grid cells and is
/// multiplied by the level scale when applied.
template <typename T>
struct AffineField {
  int h = 0;
  int w = 0;
  AffineBounds bounds;
  std::vector<T> residual;

  static AffineField identity(int h, int w, AffineBounds bounds = {}) {
    return AffineField{h, w, bounds, std::vector<T>(static_cast<std::size_t>(h) * w * 6, T(0))};
  }
  std::size_t cells() const { return static_cast<std::size_t>(h) * w; }
  const T* at(std::size_t cell) const { return residual.data() + cell * 6; }
  T* at(std::size_t cell) { return residual.data() + cell * 6; }
  bool within_bounds() const;
};

// ---------------------------------------------------------------------------
// Coarse warp

/// Copy the matched (3*s)-pixel source patch into every LR grid position and
/// average overlaps. `source` lives on the Ref grid scaled by `level_scale`.
template <typename T>
BasicTensor<T> warp_by_index(const BasicTensor<T>& source, const MatchResult& m, int level_scale);

template <typename T>
BasicTensor<T> warp_by_index_backward(const BasicTensor<T>& grad_out, const MatchResult& m, int level_scale,
                                      const Shape& source_shape);

// ---------------------------------------------------------------------------
// Local transformer

template <typename T>
struct AlignmentPrediction {
  AffineField<T> field;
  BasicTensor<T> raw;  ///< T output before squashing, (1, 6, h, w)
  typename ConvStack<T>::Cache cache;
};

/// Runs T on concat(lr_up, ref_matched) after downsampling by `input_scale`
/// (a power of two) so the field lands on the matching grid.
template <typename T>
AlignmentPrediction<T> predict_alignment(const BasicTensor<T>& lr_up, const BasicTensor<T>& ref_matched,
                                         const ConvStack<T>& transformer, const AffineBounds& bounds,
                                         int input_scale = 2);

/// Gradient of the squashed residuals -> gradients of T's weights (accumulated).
template <typename T>
void predict_alignment_backward(const std::vector<T>& grad_residual, const AlignmentPrediction<T>& pred,
                                const ConvStack<T>& transformer, ConvStack<T>& grads);

// ---------------------------------------------------------------------------
// Patch-wise affine refinement

/// Resample each (3*s)-pixel patch of `feat` through its cell's affine about the
/// patch center. Rows follow unfold_patches(feat, PatchGeometry::cells(s)).
template <typename T>
PatchMatrix<T> sample_affine_patches(const BasicTensor<T>& feat, const AffineField<T>& field, int level_scale);

template <typename T>
struct AffinePatchGrads {
  BasicTensor<T> input;
  std::vector<T> residual;  ///< same layout as AffineField::residual
};

template <typename T>
AffinePatchGrads<T> sample_affine_patches_backward(const BasicTensor<T>& feat, const AffineField<T>& field,
                                                   int level_scale, const PatchMatrix<T>& grad_patches);

/// fold(sample_affine_patches(feat)); the identity field reproduces `feat` exactly.
template <typename T>
BasicTensor<T> apply_patch_affine(const BasicTensor<T>& feat, const AffineField<T>& field, int level_scale);

template <typename T>
AffinePatchGrads<T> apply_patch_affine_backward(const BasicTensor<T>& feat, const AffineField<T>& field,
                                                int level_scale, const BasicTensor<T>& grad_out);

// ---------------------------------------------------------------------------
// Direct per-patch refinement (no network)

struct PatchFitResult {
  double initial_error = 0.0;  ///< mean squared error at the identity affine
  double final_error = 0.0;
  std::array<double, 6> residual{};
};

/// Fit one cell's affine so that its resampled patch of `feat` matches `target`
/// ((3*s)^2 * C values, layout (c, dy, dx)) by Adam on the squashed parameters.
PatchFitResult fit_patch_affine(const TensorD& feat, int cell_y, int cell_x, int level_scale,
                                const std::vector<double>& target, const AffineBounds& bounds, int steps,
                                double learning_rate);

}  // namespace refsr

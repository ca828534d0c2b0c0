#pragma once

// Differentiable image kernels. Every operation that participates in training
// has a companion *_backward that maps an upstream gradient to gradients of its
// inputs. All boundaries use reflect padding (mirror without edge repeat).

#include <array>
#include <vector>

#include <Eigen/Core>

#include "refsr/tensor.hpp"

namespace refsr {

/// Mirror an index into [0, n): -1 -> 1, n -> n - 2.
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

// ---------------------------------------------------------------------------
// Convolution (stride 1, same padding, reflect boundary)

template <typename T>
struct ConvGrads {
  BasicTensor<T> input;
  BasicTensor<T> weight;
  std::vector<T> bias;
};

/// weight: (out_ch, in_ch, k, k) with odd k; bias: out_ch entries.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const std::vector<T>& bias);

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                             const BasicTensor<T>& grad_out, bool need_input_grad = true);

// ---------------------------------------------------------------------------
// Bicubic resampling (Catmull-Rom, a = -0.5), factor 2 only.

enum class Resample { Up2, Down2 };

/// Catmull-Rom cubic convolution kernel.
double cubic_weight(double x);

template <typename T>
BasicTensor<T> bicubic_resize(const BasicTensor<T>& input, Resample mode);

/// Adjoint of bicubic_resize; `input_shape` is the shape of the forward input.
template <typename T>
BasicTensor<T> bicubic_resize_backward(const BasicTensor<T>& grad_out, Resample mode,
                                       const Shape& input_shape);

// ---------------------------------------------------------------------------
// Gaussian blur

/// Normalized 3x3 Gaussian, row-major, center at index 4.
std::array<double, 9> gaussian_kernel3x3(double sigma);

template <typename T>
BasicTensor<T> gaussian_blur3x3(const BasicTensor<T>& input, double sigma);

template <typename T>
BasicTensor<T> gaussian_blur3x3_backward(const BasicTensor<T>& grad_out, double sigma);

// ---------------------------------------------------------------------------
// Bilinear grid sampling
//
// grid has shape (n, 2, out_h, out_w): channel 0 holds x, channel 1 holds y, in
// continuous pixel units of the input. Coordinates are clamped to the border.

template <typename T>
BasicTensor<T> grid_sample_bilinear(const BasicTensor<T>& input, const BasicTensor<T>& grid);

template <typename T>
struct GridSampleGrads {
  BasicTensor<T> input;
  BasicTensor<T> grid;
};

template <typename T>
GridSampleGrads<T> grid_sample_bilinear_backward(const BasicTensor<T>& input,
                                                 const BasicTensor<T>& grid,
                                                 const BasicTensor<T>& grad_out);

/// x2 bilinear upsampling (half-pixel centers), built on grid_sample_bilinear.
template <typename T>
BasicTensor<T> bilinear_upsample2(const BasicTensor<T>& input);

template <typename T>
BasicTensor<T> bilinear_upsample2_backward(const BasicTensor<T>& grad_out, const Shape& input_shape);

// ---------------------------------------------------------------------------
// Patch extraction / recomposition

template <typename T>
using PatchMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Square patches laid on a grid: patch (gy, gx) covers rows
/// [step*gy - offset, step*gy - offset + size). The grid has (h/step) x (w/step) cells.
struct PatchGeometry {
  int size = 3;
  int step = 1;
  int offset = 1;

  /// Dense stride-1 k x k patches centered on each pixel.
  static PatchGeometry dense(int k) { return {k, 1, k / 2}; }
  /// Patches of 3 x 3 cells at `scale` pixels per cell, centered on each cell.
  static PatchGeometry cells(int scale) { return {3 * scale, scale, scale}; }
};

/// One row per patch (batch-major, then row-major over the grid); columns ordered (c, dy, dx).
template <typename T>
PatchMatrix<T> unfold_patches(const BasicTensor<T>& input, int k = 3);

template <typename T>
PatchMatrix<T> unfold_patches(const BasicTensor<T>& input, const PatchGeometry& geom);

/// Recompose patches into a tensor of `shape`, averaging overlapping contributions.
template <typename T>
BasicTensor<T> fold_patches(const PatchMatrix<T>& patches, const Shape& shape, int k = 3);

template <typename T>
BasicTensor<T> fold_patches(const PatchMatrix<T>& patches, const Shape& shape,
                            const PatchGeometry& geom);

/// Adjoint of unfold_patches (sums contributions, no averaging).
template <typename T>
BasicTensor<T> unfold_patches_backward(const PatchMatrix<T>& grad_patches, const Shape& shape,
                                       const PatchGeometry& geom);

/// Adjoint of fold_patches.
template <typename T>
PatchMatrix<T> fold_patches_backward(const BasicTensor<T>& grad_out, const PatchGeometry& geom);

// ---------------------------------------------------------------------------
// Pointwise activations

template <typename T>
BasicTensor<T> relu(BasicTensor<T> x);

/// Gradient through relu given the pre-activation input.
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& pre);

template <typename T>
BasicTensor<T> sigmoid(BasicTensor<T> x);

/// Gradient through sigmoid given its output.
template <typename T>
BasicTensor<T> sigmoid_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& out);

}  // namespace refsr

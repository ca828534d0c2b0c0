#include "refsr/warp.hpp"

#include <cmath>
#include <string>

namespace refsr {

namespace {

void check_level_scale(int s) {
  if (s != 1 && s != 2 && s != 4) throw Error("level_scale must be 1, 2 or 4, got " + std::to_string(s));
}

void check_indices(const MatchResult& m) {
  const int n_ref = m.ref_h * m.ref_w;
  if (m.index.size() != static_cast<std::size_t>(m.lr_h) * m.lr_w) {
    throw Error("index map size does not match its grid");
  }
  for (std::size_t i = 0; i < m.index.size(); ++i) {
    if (m.index[i] < 0 || m.index[i] >= n_ref) {
      throw Error("index map entry " + std::to_string(i) + " = " + std::to_string(m.index[i]) +
                  " outside the reference grid of " + std::to_string(n_ref));
    }
  }
}

// Continuous mirror of q into [0, n-1]; `sign` receives d(out)/d(q).
inline double reflect_coord(double q, int n, double& sign) {
  if (n == 1) {
    sign = 0.0;
    return 0.0;
  }
  const double period = 2.0 * (n - 1);
  double r = std::fmod(q, period);
  if (r < 0) r += period;
  if (r > n - 1) {
    sign = -1.0;
    return period - r;
  }
  sign = 1.0;
  return r;
}

// Offsets of the patch pixels from the patch center along one axis.
inline double patch_offset(int d, int s) { return d - (3.0 * s - 1.0) / 2.0; }

// Fill K*K sampling positions for one cell into grid rows [row0, row0 + K).
template <typename T>
void fill_cell_grid(BasicTensor<T>& grid, int row0, int gy, int gx, const T* r, int s, int fh, int fw,
                    std::vector<double>* sign_x, std::vector<double>* sign_y) {
  const int K = 3 * s;
  const double cy = s * gy + (s - 1) / 2.0;
  const double cx = s * gx + (s - 1) / 2.0;
  for (int dy = 0; dy < K; ++dy) {
    const double uy = patch_offset(dy, s);
    for (int dx = 0; dx < K; ++dx) {
      const double ux = patch_offset(dx, s);
      const double qx = cx + ux + static_cast<double>(r[0]) * ux + static_cast<double>(r[1]) * uy + s * static_cast<double>(r[4]);
      const double qy = cy + uy + static_cast<double>(r[2]) * ux + static_cast<double>(r[3]) * uy + s * static_cast<double>(r[5]);
      double sx = 0, sy = 0;
      grid(0, 0, row0 + dy, dx) = static_cast<T>(reflect_coord(qx, fw, sx));
      grid(0, 1, row0 + dy, dx) = static_cast<T>(reflect_coord(qy, fh, sy));
      if (sign_x) {
        const std::size_t k = static_cast<std::size_t>(row0 + dy) * K + dx;
        (*sign_x)[k] = sx;
        (*sign_y)[k] = sy;
      }
    }
  }
}

// Chain a grid gradient for one cell back to its six residual entries.
template <typename T>
void accumulate_cell_grad(const BasicTensor<T>& grid_grad, int row0, int s, const std::vector<double>& sign_x,
                          const std::vector<double>& sign_y, double* out) {
  const int K = 3 * s;
  for (int dy = 0; dy < K; ++dy) {
    const double uy = patch_offset(dy, s);
    for (int dx = 0; dx < K; ++dx) {
      const double ux = patch_offset(dx, s);
      const std::size_t k = static_cast<std::size_t>(row0 + dy) * K + dx;
      const double gx = sign_x[k] * grid_grad(0, 0, row0 + dy, dx);
      const double gy = sign_y[k] * grid_grad(0, 1, row0 + dy, dx);
      out[0] += gx * ux;
      out[1] += gx * uy;
      out[2] += gy * ux;
      out[3] += gy * uy;
      out[4] += gx * s;
      out[5] += gy * s;
    }
  }
}

template <typename T>
void check_field(const Shape& fs, const AffineField<T>& field, int s) {
  check_level_scale(s);
  if (fs.n != 1 || fs.h != field.h * s || fs.w != field.w * s) {
    throw ShapeError("apply_patch_affine: feature extents must equal the field grid times level_scale",
                     Shape{1, fs.c, field.h * s, field.w * s}, fs);
  }
  if (field.residual.size() != field.cells() * 6) throw Error("affine field has the wrong number of entries");
}

template <typename T>
struct FieldGrid {
  BasicTensor<T> grid;
  std::vector<double> sign_x, sign_y;
};

template <typename T>
FieldGrid<T> build_grid(const Shape& fs, const AffineField<T>& field, int s, bool with_signs) {
  const int K = 3 * s;
  FieldGrid<T> g;
  g.grid = BasicTensor<T>(Shape{1, 2, static_cast<int>(field.cells()) * K, K});
  if (with_signs) {
    g.sign_x.assign(g.grid.size() / 2, 0.0);
    g.sign_y.assign(g.grid.size() / 2, 0.0);
  }
  for (int gy = 0; gy < field.h; ++gy) {
    for (int gx = 0; gx < field.w; ++gx) {
      const std::size_t cell = static_cast<std::size_t>(gy) * field.w + gx;
      fill_cell_grid(g.grid, static_cast<int>(cell) * K, gy, gx, field.at(cell), s, fs.h, fs.w,
                     with_signs ? &g.sign_x : nullptr, with_signs ? &g.sign_y : nullptr);
    }
  }
  return g;
}

// (1, C, N*K, K) samples <-> patch rows with columns (c, dy, dx).
template <typename T>
PatchMatrix<T> samples_to_patches(const BasicTensor<T>& samples, int K) {
  const int C = samples.c();
  const int N = samples.h() / K;
  PatchMatrix<T> p(N, static_cast<Eigen::Index>(C) * K * K);
  for (int i = 0; i < N; ++i)
    for (int c = 0; c < C; ++c)
      for (int dy = 0; dy < K; ++dy)
        for (int dx = 0; dx < K; ++dx) p(i, (c * K + dy) * K + dx) = samples(0, c, i * K + dy, dx);
  return p;
}

template <typename T>
BasicTensor<T> patches_to_samples(const PatchMatrix<T>& p, int C, int K) {
  const int N = static_cast<int>(p.rows());
  BasicTensor<T> s(Shape{1, C, N * K, K});
  for (int i = 0; i < N; ++i)
    for (int c = 0; c < C; ++c)
      for (int dy = 0; dy < K; ++dy)
        for (int dx = 0; dx < K; ++dx) s(0, c, i * K + dy, dx) = p(i, (c * K + dy) * K + dx);
  return s;
}

}  // namespace

template <typename T>
bool AffineField<T>::within_bounds() const {
  for (std::size_t cell = 0; cell < cells(); ++cell) {
    const T* r = at(cell);
    for (int k = 0; k < 4; ++k)
      if (std::abs(static_cast<double>(r[k])) > bounds.scale) return false;
    for (int k = 4; k < 6; ++k)
      if (std::abs(static_cast<double>(r[k])) > bounds.translation) return false;
  }
  return true;
}

template <typename T>
BasicTensor<T> warp_by_index(const BasicTensor<T>& source, const MatchResult& m, int level_scale) {
  check_level_scale(level_scale);
  check_indices(m);
  const Shape expect{1, source.c(), m.ref_h * level_scale, m.ref_w * level_scale};
  if (source.shape() != expect) throw ShapeError("warp_by_index source", expect, source.shape());
  const PatchGeometry geom = PatchGeometry::cells(level_scale);
  const PatchMatrix<T> src = unfold_patches(source, geom);
  PatchMatrix<T> gathered(static_cast<Eigen::Index>(m.size()), src.cols());
  for (std::size_t i = 0; i < m.size(); ++i) gathered.row(i) = src.row(m.index[i]);
  return fold_patches(gathered, Shape{1, source.c(), m.lr_h * level_scale, m.lr_w * level_scale}, geom);
}

template <typename T>
BasicTensor<T> warp_by_index_backward(const BasicTensor<T>& grad_out, const MatchResult& m, int level_scale,
                                      const Shape& source_shape) {
  check_level_scale(level_scale);
  check_indices(m);
  const PatchGeometry geom = PatchGeometry::cells(level_scale);
  const PatchMatrix<T> g = fold_patches_backward(grad_out, geom);
  PatchMatrix<T> src = PatchMatrix<T>::Zero(static_cast<Eigen::Index>(m.ref_h) * m.ref_w, g.cols());
  for (std::size_t i = 0; i < m.size(); ++i) src.row(m.index[i]) += g.row(i);
  return unfold_patches_backward(src, source_shape, geom);
}

template <typename T>
AlignmentPrediction<T> predict_alignment(const BasicTensor<T>& lr_up, const BasicTensor<T>& ref_matched,
                                         const ConvStack<T>& transformer, const AffineBounds& bounds,
                                         int input_scale) {
  require_same_shape("predict_alignment inputs", lr_up.shape(), ref_matched.shape());
  BasicTensor<T> x = concat_channels(lr_up, ref_matched);
  for (int s = input_scale; s > 1; s /= 2) {
    if (s % 2 != 0) throw Error("predict_alignment: input_scale must be a power of two");
    x = bicubic_resize(x, Resample::Down2);
  }
  AlignmentPrediction<T> pred;
  pred.raw = transformer.forward(x, &pred.cache);
  if (pred.raw.c() != 6) throw Error("transformer must output 6 channels, got " + std::to_string(pred.raw.c()));
  pred.field = AffineField<T>::identity(pred.raw.h(), pred.raw.w(), bounds);
  for (int y = 0; y < pred.raw.h(); ++y) {
    for (int xx = 0; xx < pred.raw.w(); ++xx) {
      T* r = pred.field.at(static_cast<std::size_t>(y) * pred.raw.w() + xx);
      for (int k = 0; k < 6; ++k) {
        const double b = k < 4 ? bounds.scale : bounds.translation;
        r[k] = static_cast<T>(b * std::tanh(static_cast<double>(pred.raw(0, k, y, xx)) / b));
      }
    }
  }
  return pred;
}

template <typename T>
void predict_alignment_backward(const std::vector<T>& grad_residual, const AlignmentPrediction<T>& pred,
                                const ConvStack<T>& transformer, ConvStack<T>& grads) {
  if (grad_residual.size() != pred.field.residual.size()) throw Error("affine gradient has the wrong size");
  BasicTensor<T> g(pred.raw.shape());
  for (int y = 0; y < g.h(); ++y) {
    for (int x = 0; x < g.w(); ++x) {
      const std::size_t cell = static_cast<std::size_t>(y) * g.w() + x;
      for (int k = 0; k < 6; ++k) {
        const double b = k < 4 ? pred.field.bounds.scale : pred.field.bounds.translation;
        const double t = std::tanh(static_cast<double>(pred.raw(0, k, y, x)) / b);
        g(0, k, y, x) = static_cast<T>(grad_residual[cell * 6 + k] * (1.0 - t * t));
      }
    }
  }
  transformer.backward(g, pred.cache, grads, false);
}

template <typename T>
PatchMatrix<T> sample_affine_patches(const BasicTensor<T>& feat, const AffineField<T>& field, int level_scale) {
  check_field(feat.shape(), field, level_scale);
  const FieldGrid<T> g = build_grid(feat.shape(), field, level_scale, false);
  return samples_to_patches(grid_sample_bilinear(feat, g.grid), 3 * level_scale);
}

template <typename T>
AffinePatchGrads<T> sample_affine_patches_backward(const BasicTensor<T>& feat, const AffineField<T>& field,
                                                   int level_scale, const PatchMatrix<T>& grad_patches) {
  check_field(feat.shape(), field, level_scale);
  const int K = 3 * level_scale;
  const FieldGrid<T> g = build_grid(feat.shape(), field, level_scale, true);
  GridSampleGrads<T> gs = grid_sample_bilinear_backward(feat, g.grid, patches_to_samples(grad_patches, feat.c(), K));
  AffinePatchGrads<T> out;
  out.input = std::move(gs.input);
  out.residual.assign(field.residual.size(), T(0));
  for (std::size_t cell = 0; cell < field.cells(); ++cell) {
    double acc[6] = {0, 0, 0, 0, 0, 0};
    accumulate_cell_grad(gs.grid, static_cast<int>(cell) * K, level_scale, g.sign_x, g.sign_y, acc);
    for (int k = 0; k < 6; ++k) out.residual[cell * 6 + k] = static_cast<T>(acc[k]);
  }
  return out;
}

template <typename T>
BasicTensor<T> apply_patch_affine(const BasicTensor<T>& feat, const AffineField<T>& field, int level_scale) {
  return fold_patches(sample_affine_patches(feat, field, level_scale), feat.shape(),
                      PatchGeometry::cells(level_scale));
}

template <typename T>
AffinePatchGrads<T> apply_patch_affine_backward(const BasicTensor<T>& feat, const AffineField<T>& field,
                                                int level_scale, const BasicTensor<T>& grad_out) {
  require_same_shape("apply_patch_affine_backward", feat.shape(), grad_out.shape());
  return sample_affine_patches_backward(feat, field, level_scale,
                                        fold_patches_backward(grad_out, PatchGeometry::cells(level_scale)));
}

PatchFitResult fit_patch_affine(const TensorD& feat, int cell_y, int cell_x, int level_scale,
                                const std::vector<double>& target, const AffineBounds& bounds, int steps,
                                double learning_rate) {
  check_level_scale(level_scale);
  const int s = level_scale, K = 3 * s;
  if (feat.n() != 1 || feat.h() % s != 0 || feat.w() % s != 0) throw Error("fit_patch_affine: bad feature extents");
  if (target.size() != static_cast<std::size_t>(feat.c()) * K * K) throw Error("fit_patch_affine: bad target size");
  if (cell_y < 0 || cell_x < 0 || cell_y >= feat.h() / s || cell_x >= feat.w() / s) {
    throw Error("fit_patch_affine: cell outside the grid");
  }
  const double bound[6] = {bounds.scale, bounds.scale, bounds.scale, bounds.scale, bounds.translation,
                           bounds.translation};
  std::array<double, 6> theta{}, m1{}, m2{};
  TensorD grid(Shape{1, 2, K, K});
  std::vector<double> sign_x(K * K), sign_y(K * K);

  auto evaluate = [&](const double* r, std::array<double, 6>* grad) {
    fill_cell_grid(grid, 0, cell_y, cell_x, r, s, feat.h(), feat.w(), &sign_x, &sign_y);
    const TensorD sampled = grid_sample_bilinear(feat, grid);
    const double n = static_cast<double>(target.size());
    double err = 0.0;
    TensorD d(sampled.shape());
    for (std::size_t i = 0; i < sampled.size(); ++i) {
      const double e = sampled[i] - target[i];
      err += e * e;
      d[i] = 2.0 * e / n;
    }
    if (grad) {
      const GridSampleGrads<double> gs = grid_sample_bilinear_backward(feat, grid, d);
      double acc[6] = {0, 0, 0, 0, 0, 0};
      accumulate_cell_grad(gs.grid, 0, s, sign_x, sign_y, acc);
      for (int k = 0; k < 6; ++k) (*grad)[k] = acc[k];
    }
    return err / n;
  };

  PatchFitResult out;
  double r[6] = {0, 0, 0, 0, 0, 0};
  out.initial_error = evaluate(r, nullptr);
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::array<double, 6> g{};
  for (int step = 1; step <= steps; ++step) {
    for (int k = 0; k < 6; ++k) r[k] = bound[k] * std::tanh(theta[k] / bound[k]);
    evaluate(r, &g);
    for (int k = 0; k < 6; ++k) {
      const double t = std::tanh(theta[k] / bound[k]);
      const double gk = g[k] * (1.0 - t * t);
      m1[k] = b1 * m1[k] + (1 - b1) * gk;
      m2[k] = b2 * m2[k] + (1 - b2) * gk * gk;
      const double mh = m1[k] / (1 - std::pow(b1, step));
      const double vh = m2[k] / (1 - std::pow(b2, step));
      theta[k] -= learning_rate * mh / (std::sqrt(vh) + eps);
    }
  }
  for (int k = 0; k < 6; ++k) r[k] = bound[k] * std::tanh(theta[k] / bound[k]);
  out.final_error = evaluate(r, nullptr);
  for (int k = 0; k < 6; ++k) out.residual[k] = r[k];
  return out;
}

#define REFSR_INSTANTIATE(T)                                                                                  \
  template struct AffineField<T>;                                                                             \
  template BasicTensor<T> warp_by_index(const BasicTensor<T>&, const MatchResult&, int);                      \
  template BasicTensor<T> warp_by_index_backward(const BasicTensor<T>&, const MatchResult&, int, const Shape&); \
  template AlignmentPrediction<T> predict_alignment(const BasicTensor<T>&, const BasicTensor<T>&,              \
                                                    const ConvStack<T>&, const AffineBounds&, int);           \
  template void predict_alignment_backward(const std::vector<T>&, const AlignmentPrediction<T>&,              \
                                           const ConvStack<T>&, ConvStack<T>&);                               \
  template PatchMatrix<T> sample_affine_patches(const BasicTensor<T>&, const AffineField<T>&, int);           \
  template AffinePatchGrads<T> sample_affine_patches_backward(const BasicTensor<T>&, const AffineField<T>&,   \
                                                              int, const PatchMatrix<T>&);                    \
  template BasicTensor<T> apply_patch_affine(const BasicTensor<T>&, const AffineField<T>&, int);              \
  template AffinePatchGrads<T> apply_patch_affine_backward(const BasicTensor<T>&, const AffineField<T>&, int, \
                                                           const BasicTensor<T>&);

REFSR_INSTANTIATE(float)
REFSR_INSTANTIATE(double)

#undef REFSR_INSTANTIATE

}  // namespace refsr

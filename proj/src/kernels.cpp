#include "refsr/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace refsr {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

void check_conv_shapes(const Shape& in, const Shape& weight, std::size_t bias_len) {
  const int k = weight.h;
  if (weight.h != weight.w || k % 2 == 0 || weight.c != in.c ||
      bias_len != static_cast<std::size_t>(weight.n)) {
    throw ShapeError("conv2d input/weight mismatch", in, weight);
  }
  if (in.h <= k / 2 || in.w <= k / 2) {
    throw ShapeError("conv2d input too small for reflect padding", in, weight);
  }
}

// Column matrix (C*k*k) x (H*W) for batch item b.
template <typename T>
void im2col(const BasicTensor<T>& in, int b, int k, RowMat<T>& cols) {
  const int C = in.c(), H = in.h(), W = in.w(), pad = k / 2;
  cols.resize(static_cast<Eigen::Index>(C) * k * k, static_cast<Eigen::Index>(H) * W);
  for (int c = 0; c < C; ++c) {
    const T* src = in.plane(b, c);
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* dst = cols.data() + (static_cast<std::size_t>(c * k + ky) * k + kx) * H * W;
        for (int y = 0; y < H; ++y) {
          const T* row = src + static_cast<std::size_t>(reflect_index(y + ky - pad, H)) * W;
          T* out = dst + static_cast<std::size_t>(y) * W;
          const int x_lo = std::max(0, pad - kx);
          const int x_hi = std::min(W, W + pad - kx);
          for (int x = 0; x < x_lo; ++x) out[x] = row[reflect_index(x + kx - pad, W)];
          const int shift = kx - pad;
          for (int x = x_lo; x < x_hi; ++x) out[x] = row[x + shift];
          for (int x = x_hi; x < W; ++x) out[x] = row[reflect_index(x + kx - pad, W)];
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const RowMat<T>& cols, int k, BasicTensor<T>& grad_in, int b) {
  const int C = grad_in.c(), H = grad_in.h(), W = grad_in.w(), pad = k / 2;
  for (int c = 0; c < C; ++c) {
    T* dst = grad_in.plane(b, c);
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* src = cols.data() + (static_cast<std::size_t>(c * k + ky) * k + kx) * H * W;
        for (int y = 0; y < H; ++y) {
          T* row = dst + static_cast<std::size_t>(reflect_index(y + ky - pad, H)) * W;
          const T* g = src + static_cast<std::size_t>(y) * W;
          for (int x = 0; x < W; ++x) row[reflect_index(x + kx - pad, W)] += g[x];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const std::vector<T>& bias) {
  check_conv_shapes(input.shape(), weight.shape(), bias.size());
  const int O = weight.n(), k = weight.h();
  const Eigen::Index hw = static_cast<Eigen::Index>(input.h()) * input.w();
  const Eigen::Index ckk = static_cast<Eigen::Index>(input.c()) * k * k;
  BasicTensor<T> out(Shape{input.n(), O, input.h(), input.w()});
  ConstMapMat<T> wmat(weight.data(), O, ckk);
  RowMat<T> cols;
  for (int b = 0; b < input.n(); ++b) {
    MapMat<T> omat(out.plane(b, 0), O, hw);
    if (k == 1) {
      omat.noalias() = wmat * ConstMapMat<T>(input.plane(b, 0), ckk, hw);
    } else {
      im2col(input, b, k, cols);
      omat.noalias() = wmat * cols;
    }
    for (int o = 0; o < O; ++o) omat.row(o).array() += bias[o];
  }
  REFSR_ASSERT_FINITE(out);
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                             const BasicTensor<T>& grad_out, bool need_input_grad) {
  check_conv_shapes(input.shape(), weight.shape(), static_cast<std::size_t>(weight.n()));
  require_same_shape("conv2d_backward grad_out", Shape{input.n(), weight.n(), input.h(), input.w()},
                     grad_out.shape());
  const int O = weight.n(), k = weight.h();
  const Eigen::Index hw = static_cast<Eigen::Index>(input.h()) * input.w();
  const Eigen::Index ckk = static_cast<Eigen::Index>(input.c()) * k * k;
  ConvGrads<T> g;
  g.weight = BasicTensor<T>(weight.shape());
  g.bias.assign(O, T(0));
  if (need_input_grad) g.input = BasicTensor<T>(input.shape());
  ConstMapMat<T> wmat(weight.data(), O, ckk);
  MapMat<T> dw(g.weight.data(), O, ckk);
  RowMat<T> cols, dcols;
  for (int b = 0; b < input.n(); ++b) {
    ConstMapMat<T> go(grad_out.plane(b, 0), O, hw);
    for (int o = 0; o < O; ++o) g.bias[o] += go.row(o).sum();
    if (k == 1) {
      ConstMapMat<T> in(input.plane(b, 0), ckk, hw);
      dw.noalias() += go * in.transpose();
      if (need_input_grad) {
        MapMat<T>(g.input.plane(b, 0), ckk, hw).noalias() = wmat.transpose() * go;
      }
    } else {
      im2col(input, b, k, cols);
      dw.noalias() += go * cols.transpose();
      if (need_input_grad) {
        dcols.noalias() = wmat.transpose() * go;
        col2im_add(dcols, k, g.input, b);
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

double cubic_weight(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x < 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

namespace {

struct Taps {
  int out_len = 0;
  std::vector<std::array<int, 4>> index;
  std::vector<std::array<double, 4>> weight;
};

Taps make_taps(int in_len, Resample mode) {
  Taps taps;
  taps.out_len = mode == Resample::Up2 ? in_len * 2 : in_len / 2;
  taps.index.resize(taps.out_len);
  taps.weight.resize(taps.out_len);
  for (int o = 0; o < taps.out_len; ++o) {
    const double src = mode == Resample::Up2 ? (o + 0.5) / 2.0 - 0.5 : 2.0 * o + 0.5;
    const int x0 = static_cast<int>(std::floor(src));
    const double t = src - x0;
    for (int j = 0; j < 4; ++j) {
      taps.index[o][j] = reflect_index(x0 - 1 + j, in_len);
      taps.weight[o][j] = cubic_weight(t - (j - 1));
    }
  }
  return taps;
}

void check_resize(const Shape& s, Resample mode) {
  if (s.h < 4 || s.w < 4) throw ShapeError("bicubic_resize extent below 4", s, s);
  if (mode == Resample::Down2 && (s.h % 2 != 0 || s.w % 2 != 0)) {
    throw ShapeError("bicubic_resize down2 needs even extents", s, s);
  }
}

}  // namespace

template <typename T>
BasicTensor<T> bicubic_resize(const BasicTensor<T>& input, Resample mode) {
  check_resize(input.shape(), mode);
  const Taps tx = make_taps(input.w(), mode);
  const Taps ty = make_taps(input.h(), mode);
  const int H = input.h(), Wo = tx.out_len, Ho = ty.out_len;
  BasicTensor<T> out(Shape{input.n(), input.c(), Ho, Wo});
  std::vector<double> tmp(static_cast<std::size_t>(H) * Wo);
  for (int b = 0; b < input.n(); ++b) {
    for (int c = 0; c < input.c(); ++c) {
      const T* src = input.plane(b, c);
      for (int y = 0; y < H; ++y) {
        const T* row = src + static_cast<std::size_t>(y) * input.w();
        for (int x = 0; x < Wo; ++x) {
          double acc = 0.0;
          for (int j = 0; j < 4; ++j) acc += tx.weight[x][j] * static_cast<double>(row[tx.index[x][j]]);
          tmp[static_cast<std::size_t>(y) * Wo + x] = acc;
        }
      }
      T* dst = out.plane(b, c);
      for (int y = 0; y < Ho; ++y) {
        for (int x = 0; x < Wo; ++x) {
          double acc = 0.0;
          for (int j = 0; j < 4; ++j) acc += ty.weight[y][j] * tmp[static_cast<std::size_t>(ty.index[y][j]) * Wo + x];
          dst[static_cast<std::size_t>(y) * Wo + x] = static_cast<T>(acc);
        }
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> bicubic_resize_backward(const BasicTensor<T>& grad_out, Resample mode,
                                       const Shape& input_shape) {
  check_resize(input_shape, mode);
  const Taps tx = make_taps(input_shape.w, mode);
  const Taps ty = make_taps(input_shape.h, mode);
  const int H = input_shape.h, W = input_shape.w, Wo = tx.out_len, Ho = ty.out_len;
  require_same_shape("bicubic_resize_backward", Shape{input_shape.n, input_shape.c, Ho, Wo},
                     grad_out.shape());
  BasicTensor<T> grad_in(input_shape);
  std::vector<double> tmp(static_cast<std::size_t>(H) * Wo);
  std::vector<double> row_acc(W);
  for (int b = 0; b < input_shape.n; ++b) {
    for (int c = 0; c < input_shape.c; ++c) {
      std::fill(tmp.begin(), tmp.end(), 0.0);
      const T* g = grad_out.plane(b, c);
      for (int y = 0; y < Ho; ++y) {
        for (int x = 0; x < Wo; ++x) {
          const double v = g[static_cast<std::size_t>(y) * Wo + x];
          for (int j = 0; j < 4; ++j) tmp[static_cast<std::size_t>(ty.index[y][j]) * Wo + x] += ty.weight[y][j] * v;
        }
      }
      T* dst = grad_in.plane(b, c);
      for (int y = 0; y < H; ++y) {
        std::fill(row_acc.begin(), row_acc.end(), 0.0);
        for (int x = 0; x < Wo; ++x) {
          const double v = tmp[static_cast<std::size_t>(y) * Wo + x];
          for (int j = 0; j < 4; ++j) row_acc[tx.index[x][j]] += tx.weight[x][j] * v;
        }
        for (int x = 0; x < W; ++x) dst[static_cast<std::size_t>(y) * W + x] = static_cast<T>(row_acc[x]);
      }
    }
  }
  return grad_in;
}

// ---------------------------------------------------------------------------

std::array<double, 9> gaussian_kernel3x3(double sigma) {
  if (!(sigma > 0.0)) throw Error("gaussian_blur3x3: sigma must be positive");
  std::array<double, 9> k{};
  double total = 0.0;
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      k[(dy + 1) * 3 + (dx + 1)] = v;
      total += v;
    }
  }
  for (auto& v : k) v /= total;
  return k;
}

namespace {

template <typename T>
BasicTensor<T> depthwise3x3(const BasicTensor<T>& input, const std::array<double, 9>& k, bool adjoint) {
  const int H = input.h(), W = input.w();
  if (H < 2 || W < 2) throw ShapeError("gaussian_blur3x3 needs extents >= 2", input.shape(), input.shape());
  BasicTensor<T> out(input.shape());
  std::vector<double> acc(static_cast<std::size_t>(H) * W);
  for (int b = 0; b < input.n(); ++b) {
    for (int c = 0; c < input.c(); ++c) {
      const T* src = input.plane(b, c);
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
          for (int dy = -1; dy <= 1; ++dy) {
            const int yy = reflect_index(y + dy, H);
            for (int dx = -1; dx <= 1; ++dx) {
              const int xx = reflect_index(x + dx, W);
              const double w = k[(dy + 1) * 3 + (dx + 1)];
              if (adjoint) {
                acc[static_cast<std::size_t>(yy) * W + xx] += w * src[static_cast<std::size_t>(y) * W + x];
              } else {
                acc[static_cast<std::size_t>(y) * W + x] += w * src[static_cast<std::size_t>(yy) * W + xx];
              }
            }
          }
        }
      }
      T* dst = out.plane(b, c);
      for (std::size_t i = 0; i < acc.size(); ++i) dst[i] = static_cast<T>(acc[i]);
    }
  }
  return out;
}

}  // namespace

template <typename T>
BasicTensor<T> gaussian_blur3x3(const BasicTensor<T>& input, double sigma) {
  return depthwise3x3(input, gaussian_kernel3x3(sigma), false);
}

template <typename T>
BasicTensor<T> gaussian_blur3x3_backward(const BasicTensor<T>& grad_out, double sigma) {
  return depthwise3x3(grad_out, gaussian_kernel3x3(sigma), true);
}

// ---------------------------------------------------------------------------

namespace {

struct Bilinear {
  int x0, x1, y0, y1;
  double fx, fy;
  bool clamped_x, clamped_y;
};

inline Bilinear bilinear_setup(double x, double y, int W, int H) {
  Bilinear b{};
  b.clamped_x = x < 0.0 || x > W - 1;
  b.clamped_y = y < 0.0 || y > H - 1;
  x = std::clamp(x, 0.0, static_cast<double>(W - 1));
  y = std::clamp(y, 0.0, static_cast<double>(H - 1));
  b.x0 = std::min(static_cast<int>(std::floor(x)), std::max(W - 2, 0));
  b.y0 = std::min(static_cast<int>(std::floor(y)), std::max(H - 2, 0));
  b.x1 = std::min(b.x0 + 1, W - 1);
  b.y1 = std::min(b.y0 + 1, H - 1);
  b.fx = x - b.x0;
  b.fy = y - b.y0;
  return b;
}

void check_grid(const Shape& input, const Shape& grid) {
  if (grid.c != 2 || grid.n != input.n) throw ShapeError("grid_sample_bilinear grid", input, grid);
}

}  // namespace

template <typename T>
BasicTensor<T> grid_sample_bilinear(const BasicTensor<T>& input, const BasicTensor<T>& grid) {
  check_grid(input.shape(), grid.shape());
  const int H = input.h(), W = input.w(), Ho = grid.h(), Wo = grid.w();
  BasicTensor<T> out(Shape{input.n(), input.c(), Ho, Wo});
  for (int b = 0; b < input.n(); ++b) {
    const T* gx = grid.plane(b, 0);
    const T* gy = grid.plane(b, 1);
    for (std::size_t p = 0; p < static_cast<std::size_t>(Ho) * Wo; ++p) {
      const Bilinear s = bilinear_setup(gx[p], gy[p], W, H);
      const double w00 = (1 - s.fx) * (1 - s.fy), w01 = s.fx * (1 - s.fy);
      const double w10 = (1 - s.fx) * s.fy, w11 = s.fx * s.fy;
      const std::size_t i00 = static_cast<std::size_t>(s.y0) * W + s.x0;
      const std::size_t i01 = static_cast<std::size_t>(s.y0) * W + s.x1;
      const std::size_t i10 = static_cast<std::size_t>(s.y1) * W + s.x0;
      const std::size_t i11 = static_cast<std::size_t>(s.y1) * W + s.x1;
      for (int c = 0; c < input.c(); ++c) {
        const T* src = input.plane(b, c);
        out.plane(b, c)[p] = static_cast<T>(w00 * src[i00] + w01 * src[i01] + w10 * src[i10] + w11 * src[i11]);
      }
    }
  }
  return out;
}

template <typename T>
GridSampleGrads<T> grid_sample_bilinear_backward(const BasicTensor<T>& input,
                                                 const BasicTensor<T>& grid,
                                                 const BasicTensor<T>& grad_out) {
  check_grid(input.shape(), grid.shape());
  const int H = input.h(), W = input.w(), Ho = grid.h(), Wo = grid.w();
  require_same_shape("grid_sample_bilinear_backward", Shape{input.n(), input.c(), Ho, Wo},
                     grad_out.shape());
  GridSampleGrads<T> g{BasicTensor<T>(input.shape()), BasicTensor<T>(grid.shape())};
  for (int b = 0; b < input.n(); ++b) {
    const T* gx = grid.plane(b, 0);
    const T* gy = grid.plane(b, 1);
    T* dgx = g.grid.plane(b, 0);
    T* dgy = g.grid.plane(b, 1);
    for (std::size_t p = 0; p < static_cast<std::size_t>(Ho) * Wo; ++p) {
      const Bilinear s = bilinear_setup(gx[p], gy[p], W, H);
      const double w00 = (1 - s.fx) * (1 - s.fy), w01 = s.fx * (1 - s.fy);
      const double w10 = (1 - s.fx) * s.fy, w11 = s.fx * s.fy;
      const std::size_t i00 = static_cast<std::size_t>(s.y0) * W + s.x0;
      const std::size_t i01 = static_cast<std::size_t>(s.y0) * W + s.x1;
      const std::size_t i10 = static_cast<std::size_t>(s.y1) * W + s.x0;
      const std::size_t i11 = static_cast<std::size_t>(s.y1) * W + s.x1;
      double ddx = 0.0, ddy = 0.0;
      for (int c = 0; c < input.c(); ++c) {
        const T* src = input.plane(b, c);
        T* dsrc = g.input.plane(b, c);
        const double go = grad_out.plane(b, c)[p];
        dsrc[i00] += static_cast<T>(w00 * go);
        dsrc[i01] += static_cast<T>(w01 * go);
        dsrc[i10] += static_cast<T>(w10 * go);
        dsrc[i11] += static_cast<T>(w11 * go);
        ddx += go * ((1 - s.fy) * (src[i01] - src[i00]) + s.fy * (src[i11] - src[i10]));
        ddy += go * ((1 - s.fx) * (src[i10] - src[i00]) + s.fx * (src[i11] - src[i01]));
      }
      dgx[p] = s.clamped_x || W == 1 ? T(0) : static_cast<T>(ddx);
      dgy[p] = s.clamped_y || H == 1 ? T(0) : static_cast<T>(ddy);
    }
  }
  return g;
}

namespace {

template <typename T>
BasicTensor<T> upsample2_grid(const Shape& in) {
  BasicTensor<T> grid(Shape{in.n, 2, in.h * 2, in.w * 2});
  for (int b = 0; b < in.n; ++b) {
    for (int y = 0; y < in.h * 2; ++y) {
      for (int x = 0; x < in.w * 2; ++x) {
        grid(b, 0, y, x) = static_cast<T>((x + 0.5) / 2.0 - 0.5);
        grid(b, 1, y, x) = static_cast<T>((y + 0.5) / 2.0 - 0.5);
      }
    }
  }
  return grid;
}

}  // namespace

template <typename T>
BasicTensor<T> bilinear_upsample2(const BasicTensor<T>& input) {
  return grid_sample_bilinear(input, upsample2_grid<T>(input.shape()));
}

template <typename T>
BasicTensor<T> bilinear_upsample2_backward(const BasicTensor<T>& grad_out, const Shape& input_shape) {
  const BasicTensor<T> zeros(input_shape);
  return grid_sample_bilinear_backward(zeros, upsample2_grid<T>(input_shape), grad_out).input;
}

// ---------------------------------------------------------------------------

namespace {

void check_geometry(const Shape& s, const PatchGeometry& g) {
  if (g.size < 1 || g.step < 1) throw Error("invalid patch geometry");
  if (s.h < g.size || s.w < g.size) throw ShapeError("patch extent exceeds input", s, Shape{s.n, s.c, g.size, g.size});
  if (s.h % g.step != 0 || s.w % g.step != 0) {
    throw ShapeError("input extents not divisible by patch step", s, Shape{s.n, s.c, g.step, g.step});
  }
}

}  // namespace

template <typename T>
PatchMatrix<T> unfold_patches(const BasicTensor<T>& input, int k) {
  return unfold_patches(input, PatchGeometry::dense(k));
}

template <typename T>
PatchMatrix<T> unfold_patches(const BasicTensor<T>& input, const PatchGeometry& geom) {
  check_geometry(input.shape(), geom);
  const int H = input.h(), W = input.w(), K = geom.size;
  const int gh = H / geom.step, gw = W / geom.step;
  PatchMatrix<T> out(static_cast<Eigen::Index>(input.n()) * gh * gw, static_cast<Eigen::Index>(input.c()) * K * K);
  for (int b = 0; b < input.n(); ++b) {
    for (int gy = 0; gy < gh; ++gy) {
      for (int gx = 0; gx < gw; ++gx) {
        T* row = out.data() + ((static_cast<std::size_t>(b) * gh + gy) * gw + gx) * out.cols();
        for (int c = 0; c < input.c(); ++c) {
          const T* src = input.plane(b, c);
          for (int dy = 0; dy < K; ++dy) {
            const int y = reflect_index(gy * geom.step - geom.offset + dy, H);
            for (int dx = 0; dx < K; ++dx) {
              const int x = reflect_index(gx * geom.step - geom.offset + dx, W);
              *row++ = src[static_cast<std::size_t>(y) * W + x];
            }
          }
        }
      }
    }
  }
  return out;
}

namespace {

// Per-pixel number of patch contributions (identical for every batch item and channel).
std::vector<double> fold_counts(int H, int W, const PatchGeometry& geom) {
  std::vector<double> count(static_cast<std::size_t>(H) * W, 0.0);
  const int gh = H / geom.step, gw = W / geom.step, K = geom.size;
  for (int gy = 0; gy < gh; ++gy) {
    for (int dy = 0; dy < K; ++dy) {
      const int y = reflect_index(gy * geom.step - geom.offset + dy, H);
      for (int gx = 0; gx < gw; ++gx) {
        for (int dx = 0; dx < K; ++dx) {
          const int x = reflect_index(gx * geom.step - geom.offset + dx, W);
          count[static_cast<std::size_t>(y) * W + x] += 1.0;
        }
      }
    }
  }
  return count;
}

template <typename T>
BasicTensor<T> scatter_patches(const PatchMatrix<T>& patches, const Shape& shape, const PatchGeometry& geom,
                               const std::vector<double>* count) {
  check_geometry(shape, geom);
  const int H = shape.h, W = shape.w, K = geom.size;
  const int gh = H / geom.step, gw = W / geom.step;
  if (patches.rows() != static_cast<Eigen::Index>(shape.n) * gh * gw ||
      patches.cols() != static_cast<Eigen::Index>(shape.c) * K * K) {
    throw ShapeError("fold_patches patch count mismatch", shape,
                     Shape{1, 1, static_cast<int>(patches.rows()), static_cast<int>(patches.cols())});
  }
  std::vector<double> acc(shape.numel(), 0.0);
  for (int b = 0; b < shape.n; ++b) {
    for (int gy = 0; gy < gh; ++gy) {
      for (int gx = 0; gx < gw; ++gx) {
        const T* row = patches.data() + ((static_cast<std::size_t>(b) * gh + gy) * gw + gx) * patches.cols();
        for (int c = 0; c < shape.c; ++c) {
          double* dst = acc.data() + (static_cast<std::size_t>(b) * shape.c + c) * H * W;
          for (int dy = 0; dy < K; ++dy) {
            const int y = reflect_index(gy * geom.step - geom.offset + dy, H);
            for (int dx = 0; dx < K; ++dx) {
              const int x = reflect_index(gx * geom.step - geom.offset + dx, W);
              dst[static_cast<std::size_t>(y) * W + x] += static_cast<double>(*row++);
            }
          }
        }
      }
    }
  }
  BasicTensor<T> out(shape);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (std::size_t i = 0; i < acc.size(); ++i) {
    double v = acc[i];
    if (count) {
      const double n = (*count)[i % plane];
      v = n > 0.0 ? v / n : 0.0;
    }
    out[i] = static_cast<T>(v);
  }
  return out;
}

}  // namespace

template <typename T>
BasicTensor<T> fold_patches(const PatchMatrix<T>& patches, const Shape& shape, int k) {
  return fold_patches(patches, shape, PatchGeometry::dense(k));
}

template <typename T>
BasicTensor<T> fold_patches(const PatchMatrix<T>& patches, const Shape& shape, const PatchGeometry& geom) {
  check_geometry(shape, geom);
  const std::vector<double> count = fold_counts(shape.h, shape.w, geom);
  return scatter_patches(patches, shape, geom, &count);
}

template <typename T>
BasicTensor<T> unfold_patches_backward(const PatchMatrix<T>& grad_patches, const Shape& shape,
                                       const PatchGeometry& geom) {
  return scatter_patches<T>(grad_patches, shape, geom, nullptr);
}

template <typename T>
PatchMatrix<T> fold_patches_backward(const BasicTensor<T>& grad_out, const PatchGeometry& geom) {
  check_geometry(grad_out.shape(), geom);
  const std::vector<double> count = fold_counts(grad_out.h(), grad_out.w(), geom);
  BasicTensor<T> scaled(grad_out.shape());
  const std::size_t plane = static_cast<std::size_t>(grad_out.h()) * grad_out.w();
  for (std::size_t i = 0; i < grad_out.size(); ++i) {
    const double n = count[i % plane];
    scaled[i] = n > 0.0 ? static_cast<T>(grad_out[i] / n) : T(0);
  }
  return unfold_patches(scaled, geom);
}

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> relu(BasicTensor<T> x) {
  for (auto& v : x.values()) v = v > T(0) ? v : T(0);
  return x;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& pre) {
  require_same_shape("relu_backward", grad_out.shape(), pre.shape());
  BasicTensor<T> g(grad_out.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = pre[i] > T(0) ? grad_out[i] : T(0);
  return g;
}

template <typename T>
BasicTensor<T> sigmoid(BasicTensor<T> x) {
  for (auto& v : x.values()) v = T(1) / (T(1) + std::exp(-v));
  return x;
}

template <typename T>
BasicTensor<T> sigmoid_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& out) {
  require_same_shape("sigmoid_backward", grad_out.shape(), out.shape());
  BasicTensor<T> g(grad_out.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = grad_out[i] * out[i] * (T(1) - out[i]);
  return g;
}

#define REFSR_INSTANTIATE(T)                                                                             \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, const std::vector<T>&);  \
  template ConvGrads<T> conv2d_backward(const BasicTensor<T>&, const BasicTensor<T>&,                   \
                                        const BasicTensor<T>&, bool);                                   \
  template BasicTensor<T> bicubic_resize(const BasicTensor<T>&, Resample);                              \
  template BasicTensor<T> bicubic_resize_backward(const BasicTensor<T>&, Resample, const Shape&);       \
  template BasicTensor<T> gaussian_blur3x3(const BasicTensor<T>&, double);                              \
  template BasicTensor<T> gaussian_blur3x3_backward(const BasicTensor<T>&, double);                     \
  template BasicTensor<T> grid_sample_bilinear(const BasicTensor<T>&, const BasicTensor<T>&);           \
  template GridSampleGrads<T> grid_sample_bilinear_backward(const BasicTensor<T>&,                      \
                                                            const BasicTensor<T>&,                      \
                                                            const BasicTensor<T>&);                     \
  template BasicTensor<T> bilinear_upsample2(const BasicTensor<T>&);                                    \
  template BasicTensor<T> bilinear_upsample2_backward(const BasicTensor<T>&, const Shape&);             \
  template PatchMatrix<T> unfold_patches(const BasicTensor<T>&, int);                                   \
  template PatchMatrix<T> unfold_patches(const BasicTensor<T>&, const PatchGeometry&);                  \
  template BasicTensor<T> fold_patches(const PatchMatrix<T>&, const Shape&, int);                       \
  template BasicTensor<T> fold_patches(const PatchMatrix<T>&, const Shape&, const PatchGeometry&);      \
  template BasicTensor<T> unfold_patches_backward(const PatchMatrix<T>&, const Shape&,                  \
                                                  const PatchGeometry&);                                \
  template PatchMatrix<T> fold_patches_backward(const BasicTensor<T>&, const PatchGeometry&);           \
  template BasicTensor<T> relu(BasicTensor<T>);                                                         \
  template BasicTensor<T> relu_backward(const BasicTensor<T>&, const BasicTensor<T>&);                  \
  template BasicTensor<T> sigmoid(BasicTensor<T>);                                                      \
  template BasicTensor<T> sigmoid_backward(const BasicTensor<T>&, const BasicTensor<T>&);

REFSR_INSTANTIATE(float)
REFSR_INSTANTIATE(double)

#undef REFSR_INSTANTIATE

}  // namespace refsr

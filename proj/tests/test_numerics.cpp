#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "refsr/gradcheck.hpp"
#include "refsr/image.hpp"
#include "refsr/kernels.hpp"

namespace refsr {
namespace {

using gradcheck::probe_tensor;
using gradcheck::random_tensor;
using gradcheck::weighted_sum;

constexpr double kKernelTol = 1e-4;
constexpr int kInstances = 20;

// Catmull-Rom written out independently of cubic_weight.
double catmull_rom(double t) {
  t = std::fabs(t);
  if (t < 1) return 1.5 * t * t * t - 2.5 * t * t + 1.0;
  if (t < 2) return -0.5 * t * t * t + 2.5 * t * t - 4.0 * t + 2.0;
  return 0.0;
}

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// ----------------------------------------------------------------------------- conv2d

TEST(Conv2d, ZeroInputGivesZeroOutput) {
  std::mt19937_64 rng(1);
  Tensor in(Shape{1, 1, 3, 3});
  Tensor w = random_tensor(Shape{1, 1, 3, 3}, rng).cast<float>();
  Tensor out = conv2d(in, w, {0.0f});
  for (float v : out.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Conv2d, IdentityKernel) {
  std::mt19937_64 rng(2);
  Tensor in = random_tensor(Shape{2, 1, 5, 4}, rng).cast<float>();
  Tensor w(Shape{1, 1, 1, 1}, 1.0f);
  Tensor out = conv2d(in, w, {0.0f});
  EXPECT_EQ(max_abs_diff(in, out), 0.0);
}

TEST(Conv2d, ShapeMismatchNamesBothShapes) {
  Tensor in(Shape{1, 2, 8, 8});
  Tensor w(Shape{4, 3, 3, 3});
  try {
    conv2d(in, w, std::vector<float>(4));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(1,2,8,8)"), std::string::npos);
    EXPECT_NE(msg.find("(4,3,3,3)"), std::string::npos);
  }
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  double worst = 0.0;
  for (int k = 0; k < kInstances; ++k) {
    std::mt19937_64 rng(100 + k);
    TensorD in = random_tensor(Shape{2, 3, 8, 8}, rng);
    TensorD w = random_tensor(Shape{4, 3, 3, 3}, rng);
    std::vector<double> bias = random_vec(4, rng);
    TensorD up = random_tensor(Shape{2, 4, 8, 8}, rng);
    auto loss = [&] { return weighted_sum(conv2d(in, w, bias), up); };
    ConvGrads<double> g = conv2d_backward(in, w, up);
    worst = std::max(worst, probe_tensor(in, g.input, loss, rng));
    worst = std::max(worst, probe_tensor(w, g.weight, loss, rng));
    auto idx = gradcheck::sample_indices(bias.size(), 4, rng);
    worst = std::max(worst, gradcheck::probe(bias, g.bias, loss, idx));
  }
  EXPECT_LT(worst, kKernelTol);
}

// ----------------------------------------------------------------------------- bicubic

TEST(Bicubic, ConstantPreservedUp) {
  Tensor in(Shape{1, 1, 8, 8}, 0.5f);
  Tensor out = bicubic_resize(in, Resample::Up2);
  ASSERT_EQ(out.shape(), (Shape{1, 1, 16, 16}));
  for (float v : out.values()) EXPECT_EQ(v, 0.5f);
}

TEST(Bicubic, ConstantPreservedDown) {
  Tensor in(Shape{1, 1, 16, 16}, 0.25f);
  Tensor out = bicubic_resize(in, Resample::Down2);
  ASSERT_EQ(out.shape(), (Shape{1, 1, 8, 8}));
  for (float v : out.values()) EXPECT_EQ(v, 0.25f);
}

TEST(Bicubic, ArbitraryConstantPreservedExactly) {
  for (float c : {0.3f, 0.7123f, 0.0001f}) {
    Tensor in(Shape{1, 3, 12, 10}, c);
    const Tensor up = bicubic_resize(in, Resample::Up2);
    const Tensor down = bicubic_resize(in, Resample::Down2);
    for (float v : up.values()) EXPECT_EQ(v, c);
    for (float v : down.values()) EXPECT_EQ(v, c);
  }
}

TEST(Bicubic, RampMatchesDirectKernelEvaluation) {
  const int W = 12, H = 6;
  Tensor in(Shape{1, 1, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) in(0, 0, y, x) = static_cast<float>(x) / W;
  Tensor out = bicubic_resize(in, Resample::Up2);
  for (int j = 4; j < 2 * W - 4; ++j) {
    const double src = (j + 0.5) / 2.0 - 0.5;
    const int base = static_cast<int>(std::floor(src));
    double expect = 0.0;
    for (int m = base - 1; m <= base + 2; ++m) expect += catmull_rom(src - m) * (static_cast<double>(m) / W);
    for (int y = 0; y < 2 * H; ++y) EXPECT_NEAR(out(0, 0, y, j), expect, 1e-6);
  }
}

TEST(Bicubic, TooSmallExtentRejected) {
  EXPECT_THROW(bicubic_resize(Tensor(Shape{1, 1, 3, 8}), Resample::Up2), ShapeError);
  EXPECT_THROW(bicubic_resize(Tensor(Shape{1, 1, 6, 7}), Resample::Down2), ShapeError);
}

TEST(Bicubic, AdjointMatchesFiniteDifferences) {
  double worst = 0.0;
  for (int k = 0; k < kInstances; ++k) {
    std::mt19937_64 rng(200 + k);
    for (Resample mode : {Resample::Up2, Resample::Down2}) {
      TensorD in = random_tensor(Shape{2, 2, 8, 6}, rng);
      const Shape out_shape = mode == Resample::Up2 ? Shape{2, 2, 16, 12} : Shape{2, 2, 4, 3};
      TensorD up = random_tensor(out_shape, rng);
      auto loss = [&] { return weighted_sum(bicubic_resize(in, mode), up); };
      TensorD g = bicubic_resize_backward(up, mode, in.shape());
      worst = std::max(worst, probe_tensor(in, g, loss, rng));
    }
  }
  EXPECT_LT(worst, kKernelTol);
}

// ----------------------------------------------------------------------------- blur

TEST(GaussianBlur, KernelWeightsSigmaHalf) {
  const auto k = gaussian_kernel3x3(0.5);
  EXPECT_NEAR(k[4], 0.61934, 1e-5);
  EXPECT_NEAR(k[1], 0.08382, 1e-5);
  EXPECT_NEAR(k[0], 0.01134, 1e-5);
  double total = 0.0;
  for (double v : k) total += v;
  EXPECT_NEAR(total, 1.0, 1e-15);
}

TEST(GaussianBlur, ConstantPreserved) {
  for (float c : {0.5f, 0.37f}) {
    Tensor in(Shape{1, 3, 7, 9}, c);
    const Tensor out = gaussian_blur3x3(in, 0.5);
    for (float v : out.values()) EXPECT_EQ(v, c);
  }
}

TEST(GaussianBlur, ImpulseImprintsKernel) {
  Tensor in(Shape{1, 1, 7, 7});
  in(0, 0, 3, 3) = 1.0f;
  Tensor out = gaussian_blur3x3(in, 0.5);
  const auto k = gaussian_kernel3x3(0.5);
  for (int y = 0; y < 7; ++y) {
    for (int x = 0; x < 7; ++x) {
      const bool inside = std::abs(y - 3) <= 1 && std::abs(x - 3) <= 1;
      const double expect = inside ? k[(y - 2) * 3 + (x - 2)] : 0.0;
      EXPECT_NEAR(out(0, 0, y, x), expect, 1e-7);
    }
  }
}

TEST(GaussianBlur, NonPositiveSigmaRejected) {
  EXPECT_THROW(gaussian_blur3x3(Tensor(Shape{1, 1, 4, 4}), 0.0), Error);
  EXPECT_THROW(gaussian_blur3x3(Tensor(Shape{1, 1, 4, 4}), -1.0), Error);
}

TEST(GaussianBlur, AdjointMatchesFiniteDifferences) {
  double worst = 0.0;
  for (int k = 0; k < kInstances; ++k) {
    std::mt19937_64 rng(300 + k);
    TensorD in = random_tensor(Shape{2, 3, 6, 8}, rng);
    TensorD up = random_tensor(in.shape(), rng);
    auto loss = [&] { return weighted_sum(gaussian_blur3x3(in, 0.5), up); };
    worst = std::max(worst, probe_tensor(in, gaussian_blur3x3_backward(up, 0.5), loss, rng));
  }
  EXPECT_LT(worst, kKernelTol);
}

// ----------------------------------------------------------------------------- grid sample

TensorD identity_grid(int n, int h, int w) {
  TensorD g(Shape{n, 2, h, w});
  for (int b = 0; b < n; ++b)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        g(b, 0, y, x) = x;
        g(b, 1, y, x) = y;
      }
  return g;
}

TEST(GridSample, IdentityGridIsExact) {
  std::mt19937_64 rng(3);
  Tensor in = random_tensor(Shape{2, 3, 5, 7}, rng).cast<float>();
  Tensor out = grid_sample_bilinear(in, identity_grid(2, 5, 7).cast<float>());
  EXPECT_EQ(max_abs_diff(in, out), 0.0);
}

TEST(GridSample, HalfPixelShiftOnRamp) {
  TensorD in(Shape{1, 1, 4, 8});
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 8; ++x) in(0, 0, y, x) = x;
  TensorD grid = identity_grid(1, 4, 8);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 8; ++x) grid(0, 0, y, x) += 0.5;
  TensorD out = grid_sample_bilinear(in, grid);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 7; ++x) EXPECT_NEAR(out(0, 0, y, x), x + 0.5, 1e-12);
  // Last column clamps to the border.
  EXPECT_NEAR(out(0, 0, 0, 7), 7.0, 1e-12);
}

TEST(GridSample, GradientsMatchFiniteDifferences) {
  double worst = 0.0;
  for (int k = 0; k < kInstances; ++k) {
    std::mt19937_64 rng(400 + k);
    TensorD in = random_tensor(Shape{2, 3, 6, 7}, rng);
    TensorD grid(Shape{2, 2, 5, 4});
    std::uniform_real_distribution<double> ux(0.05, 5.95), uy(0.05, 4.95);
    for (int b = 0; b < 2; ++b)
      for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 4; ++x) {
          grid(b, 0, y, x) = ux(rng);
          grid(b, 1, y, x) = uy(rng);
        }
    TensorD up = random_tensor(Shape{2, 3, 5, 4}, rng);
    auto loss = [&] { return weighted_sum(grid_sample_bilinear(in, grid), up); };
    auto g = grid_sample_bilinear_backward(in, grid, up);
    worst = std::max(worst, probe_tensor(in, g.input, loss, rng));
    worst = std::max(worst, probe_tensor(grid, g.grid, loss, rng, 40));
  }
  EXPECT_LT(worst, kKernelTol);
}

TEST(BilinearUpsample, ConstantAndAdjoint) {
  Tensor c(Shape{1, 1, 4, 4}, 0.6f);
  const Tensor up2 = bilinear_upsample2(c);
  for (float v : up2.values()) EXPECT_FLOAT_EQ(v, 0.6f);
  double worst = 0.0;
  for (int k = 0; k < kInstances; ++k) {
    std::mt19937_64 rng(450 + k);
    TensorD in = random_tensor(Shape{1, 2, 5, 4}, rng);
    TensorD up = random_tensor(Shape{1, 2, 10, 8}, rng);
    auto loss = [&] { return weighted_sum(bilinear_upsample2(in), up); };
    worst = std::max(worst, probe_tensor(in, bilinear_upsample2_backward(up, in.shape()), loss, rng));
  }
  EXPECT_LT(worst, kKernelTol);
}

// ----------------------------------------------------------------------------- patches

TEST(Unfold, ThreeByThreeCenterPatchIsInput) {
  Tensor in(Shape{1, 1, 3, 3});
  for (int i = 0; i < 9; ++i) in[i] = static_cast<float>(i + 1);
  PatchMatrix<float> p = unfold_patches(in);
  ASSERT_EQ(p.rows(), 9);
  ASSERT_EQ(p.cols(), 9);
  for (int j = 0; j < 9; ++j) EXPECT_EQ(p(4, j), in[j]);
}

TEST(Unfold, ConstantInputGivesIdenticalRows) {
  Tensor in(Shape{1, 2, 5, 6}, 0.3f);
  PatchMatrix<float> p = unfold_patches(in);
  for (Eigen::Index r = 1; r < p.rows(); ++r) EXPECT_TRUE(p.row(r) == p.row(0));
}

TEST(Unfold, RampNeighborhoodReadDirectly) {
  Tensor in(Shape{1, 1, 4, 4});
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) in(0, 0, y, x) = static_cast<float>(10 * y + x);
  PatchMatrix<float> p = unfold_patches(in);
  const Eigen::Index row = 1 * 4 + 1;
  for (int dy = 0; dy < 3; ++dy)
    for (int dx = 0; dx < 3; ++dx) EXPECT_EQ(p(row, dy * 3 + dx), in(0, 0, dy, dx));
}

TEST(Unfold, ExtentBelowKernelRejected) {
  EXPECT_THROW(unfold_patches(Tensor(Shape{1, 1, 2, 5})), ShapeError);
}

TEST(Fold, RoundTripIsIdentity) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 10; ++t) {
    Tensor in = random_tensor(Shape{1, 2, 8, 8}, rng).cast<float>();
    EXPECT_LT(max_abs_diff(fold_patches(unfold_patches(in), in.shape()), in), 1e-6);
  }
  for (int s : {1, 2, 4}) {
    Tensor in = random_tensor(Shape{1, 3, 4 * s, 5 * s}, rng).cast<float>();
    const auto g = PatchGeometry::cells(s);
    EXPECT_LT(max_abs_diff(fold_patches(unfold_patches(in, g), in.shape(), g), in), 1e-6);
  }
}

TEST(Fold, ZeroPatchesGiveZeroTensor) {
  const PatchMatrix<float> p = PatchMatrix<float>::Zero(64, 18);
  Tensor out = fold_patches(p, Shape{1, 2, 8, 8});
  for (float v : out.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Fold, OverlapsAveraged) {
  // 2x2 patches, stride 1, no offset on a 2x2 image: each patch covers every pixel once.
  const PatchGeometry g{2, 1, 0};
  PatchMatrix<float> p(4, 4);
  p.row(0).setConstant(0.0f);
  p.row(1).setConstant(0.0f);
  p.row(2).setConstant(1.0f);
  p.row(3).setConstant(1.0f);
  Tensor out = fold_patches(p, Shape{1, 1, 2, 2}, g);
  for (float v : out.values()) EXPECT_FLOAT_EQ(v, 0.5f);
}

TEST(Fold, CountMismatchRejected) {
  EXPECT_THROW(fold_patches(PatchMatrix<float>(PatchMatrix<float>::Zero(10, 9)), Shape{1, 1, 4, 4}), ShapeError);
}

TEST(Patches, AdjointsMatchFiniteDifferences) {
  double worst = 0.0;
  for (int k = 0; k < kInstances; ++k) {
    std::mt19937_64 rng(500 + k);
    for (int s : {1, 2}) {
      const auto geom = PatchGeometry::cells(s);
      TensorD in = random_tensor(Shape{1, 2, 4 * s, 3 * s}, rng);
      const PatchMatrix<double> pw = PatchMatrix<double>::Random(12, 2 * 9 * s * s);
      auto unfold_loss = [&] { return (unfold_patches(in, geom).array() * pw.array()).sum(); };
      worst = std::max(worst, probe_tensor(in, unfold_patches_backward(pw, in.shape(), geom), unfold_loss, rng));

      PatchMatrix<double> patches = PatchMatrix<double>::Random(12, 2 * 9 * s * s);
      TensorD up = random_tensor(in.shape(), rng);
      PatchMatrix<double> analytic = fold_patches_backward(up, geom);
      std::vector<double> flat(patches.data(), patches.data() + patches.size());
      std::vector<double> ana(analytic.data(), analytic.data() + analytic.size());
      auto fold_loss = [&] {
        Eigen::Map<PatchMatrix<double>> m(flat.data(), patches.rows(), patches.cols());
        return weighted_sum(fold_patches(PatchMatrix<double>(m), in.shape(), geom), up);
      };
      worst = std::max(worst, gradcheck::probe(flat, ana, fold_loss, gradcheck::sample_indices(flat.size(), 24, rng)));
    }
  }
  EXPECT_LT(worst, kKernelTol);
}

// ----------------------------------------------------------------------------- image

TEST(Image, ClampsOnConstruction) {
  Image img(2, 2, 1, std::vector<float>{-0.5f, 0.25f, 1.5f, 0.75f});
  EXPECT_EQ(img.at(0, 0, 0), 0.0f);
  EXPECT_EQ(img.at(1, 0, 0), 1.0f);
  EXPECT_EQ(img.at(0, 1, 0), 0.25f);
}

TEST(Image, PngRoundTripIsExactOn8BitValues) {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> u(0, 255);
  std::vector<float> v(5 * 7 * 3);
  for (auto& x : v) x = u(rng) / 255.0f;
  Image img(5, 7, 3, v);
  const auto path = std::filesystem::temp_directory_path() / "refsr_png_roundtrip.png";
  write_png(img, path);
  Image back = read_png(path);
  ASSERT_TRUE(back.same_shape(img));
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(back.values()[i], img.values()[i]);
  std::filesystem::remove(path);
}

TEST(Image, MissingPngIsAnError) {
  EXPECT_THROW(read_png("/nonexistent/definitely_missing.png"), Error);
}

}  // namespace
}  // namespace refsr

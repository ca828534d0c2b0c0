#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "refsr/fusion.hpp"
#include "refsr/gradcheck.hpp"

namespace refsr {
namespace {

using gradcheck::random_tensor;
using gradcheck::weighted_sum;

ConvStack<double> random_gate_stack(std::mt19937_64& rng) {
  ConvStack<double> g;
  g.layers = {ConvLayer<double>(1, 4), ConvLayer<double>(4, 1)};
  for (auto& l : g.layers) l.init_uniform(rng);
  return g;
}

FusionGate<double> random_gate(std::mt19937_64& rng, int channels) {
  FusionGate<double> gate{random_gate_stack(rng), ConvLayer<double>(2 * channels, channels)};
  gate.h.init_uniform(rng);
  return gate;
}

TEST(FusionMode, ParseRoundTrip) {
  for (FusionMode m : {FusionMode::Adaptive, FusionMode::Soft, FusionMode::Sum})
    EXPECT_EQ(parse_fusion_mode(to_string(m)), m);
  EXPECT_THROW(parse_fusion_mode("concat"), Error);
}

TEST(AdaptiveFuse, ClosedGateIsIdentityOnSrPath) {
  std::mt19937_64 rng(1);
  FusionGate<double> gate = random_gate(rng, 4);
  gate.g.layers.back().bias[0] = -20.0;
  const TensorD f_sr = random_tensor(Shape{1, 4, 6, 7}, rng), f_ref = random_tensor(Shape{1, 4, 6, 7}, rng);
  const TensorD c = random_tensor(Shape{1, 1, 6, 7}, rng);
  const TensorD out = adaptive_feature_fuse(f_sr, f_ref, c, gate, FusionMode::Adaptive);
  EXPECT_LT(max_abs_diff(out, f_sr), 1e-6);
}

TEST(AdaptiveFuse, SumModeWithZeroReferenceIsIdentity) {
  std::mt19937_64 rng(2);
  const FusionGate<double> gate = random_gate(rng, 3);
  const TensorD f_sr = random_tensor(Shape{1, 3, 5, 5}, rng);
  const TensorD out = adaptive_feature_fuse(f_sr, TensorD(f_sr.shape()), TensorD(Shape{1, 1, 5, 5}), gate, FusionMode::Sum);
  EXPECT_EQ(max_abs_diff(out, f_sr), 0.0);
}

TEST(AdaptiveFuse, SumModeIgnoresConfidence) {
  std::mt19937_64 rng(3);
  const FusionGate<double> gate = random_gate(rng, 2);
  const TensorD a = random_tensor(Shape{1, 2, 4, 4}, rng), b = random_tensor(Shape{1, 2, 4, 4}, rng);
  const TensorD o1 = adaptive_feature_fuse(a, b, random_tensor(Shape{1, 1, 4, 4}, rng), gate, FusionMode::Sum);
  const TensorD o2 = adaptive_feature_fuse(a, b, random_tensor(Shape{1, 1, 4, 4}, rng), gate, FusionMode::Sum);
  EXPECT_EQ(max_abs_diff(o1, o2), 0.0);
  EXPECT_LT(max_abs_diff(o1, a + b), 1e-15);
}

TEST(AdaptiveFuse, SoftModeEqualsAdaptiveWhenGivenTheSameGateMap) {
  std::mt19937_64 rng(4);
  const FusionGate<double> gate = random_gate(rng, 3);
  const TensorD f_sr = random_tensor(Shape{1, 3, 6, 5}, rng), f_ref = random_tensor(Shape{1, 3, 6, 5}, rng);
  const TensorD c = random_tensor(Shape{1, 1, 6, 5}, rng);
  const TensorD adaptive = adaptive_feature_fuse(f_sr, f_ref, c, gate, FusionMode::Adaptive);
  const TensorD soft = adaptive_feature_fuse(f_sr, f_ref, gate_map(gate.g, c), gate, FusionMode::Soft);
  EXPECT_EQ(max_abs_diff(adaptive, soft), 0.0);
  const TensorD raw_soft = adaptive_feature_fuse(f_sr, f_ref, c, gate, FusionMode::Soft);
  EXPECT_GT(max_abs_diff(adaptive, raw_soft), 1e-3);
}

TEST(AdaptiveFuse, ShapeMismatchRejected) {
  std::mt19937_64 rng(5);
  const FusionGate<double> gate = random_gate(rng, 2);
  EXPECT_THROW(adaptive_feature_fuse(TensorD(Shape{1, 2, 4, 4}), TensorD(Shape{1, 2, 4, 5}), TensorD(Shape{1, 1, 4, 4}),
                                     gate, FusionMode::Adaptive),
               ShapeError);
  EXPECT_THROW(adaptive_feature_fuse(TensorD(Shape{1, 2, 4, 4}), TensorD(Shape{1, 2, 4, 4}), TensorD(Shape{1, 1, 2, 2}),
                                     gate, FusionMode::Adaptive),
               ShapeError);
}

class FuseGradient : public ::testing::TestWithParam<FusionMode> {};

TEST_P(FuseGradient, MatchesFiniteDifferences) {
  const FusionMode mode = GetParam();
  for (int inst = 0; inst < 3; ++inst) {
    std::mt19937_64 rng(100 + inst);
    FusionGate<double> gate = random_gate(rng, 3);
    TensorD f_sr = random_tensor(Shape{1, 3, 5, 6}, rng), f_ref = random_tensor(Shape{1, 3, 5, 6}, rng);
    TensorD c = random_tensor(Shape{1, 1, 5, 6}, rng);
    const TensorD w = random_tensor(f_sr.shape(), rng);
    FuseCache<double> cache;
    adaptive_feature_fuse(f_sr, f_ref, c, gate, mode, &cache);
    FusionGate<double> grads = gate.zeros_like();
    const FuseGrads<double> g = adaptive_feature_fuse_backward(w, f_sr, f_ref, c, gate, mode, cache, grads);
    auto loss = [&] { return weighted_sum(adaptive_feature_fuse(f_sr, f_ref, c, gate, mode), w); };
    EXPECT_LT(gradcheck::probe_tensor(f_sr, g.f_sr, loss, rng), 1e-3);
    EXPECT_LT(gradcheck::probe_tensor(f_ref, g.f_ref, loss, rng), 1e-3);
    if (mode != FusionMode::Sum) {
      EXPECT_LT(gradcheck::probe_tensor(c, g.confidence, loss, rng), 1e-3);
      EXPECT_LT(gradcheck::probe_tensor(gate.h.weight, grads.h.weight, loss, rng), 1e-3);
    }
    if (mode == FusionMode::Adaptive) {
      for (std::size_t l = 0; l < gate.g.layers.size(); ++l)
        EXPECT_LT(gradcheck::probe_tensor(gate.g.layers[l].weight, grads.g.layers[l].weight, loss, rng), 1e-3);
      EXPECT_LT(gradcheck::probe(gate.g.layers.back().bias, grads.g.layers.back().bias, loss, {0}), 1e-3);
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Modes, FuseGradient,
                         ::testing::Values(FusionMode::Adaptive, FusionMode::Soft, FusionMode::Sum));

TEST(HfResidual, ConstantImageHasZeroResidual) {
  Tensor x(Shape{1, 3, 16, 12});
  for (auto& v : x.values()) v = 0.4f;
  const Tensor r = hf_residual(x);
  for (float v : r.values()) EXPECT_NEAR(v, 0.0f, 1e-7);
}

TEST(HfResidual, SmoothUpsampledImageHasNearZeroResidual) {
  // A x2 bicubic upsample of a band-limited image: the residual only carries the
  // tiny round-trip error of down(up(.)).
  TensorD lo(Shape{1, 3, 24, 24});
  const double pi = std::acos(-1.0);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 24; ++y)
      for (int x = 0; x < 24; ++x)
        lo(0, c, y, x) = 0.5 + 0.3 * std::sin(2 * pi * x / 24.0 + c) * std::cos(2 * pi * y / 24.0);
  const TensorD up = bicubic_resize(lo, Resample::Up2);
  const TensorD r = hf_residual(up);
  double mad = 0;
  for (double v : r.values()) mad += std::abs(v);
  mad /= static_cast<double>(r.size());
  EXPECT_LT(mad, 1e-3);
}

TEST(HfResidual, NyquistCheckerboardIsMostlyResidual) {
  TensorD x(Shape{1, 1, 16, 16});
  for (int y = 0; y < 16; ++y)
    for (int c = 0; c < 16; ++c) x(0, 0, y, c) = ((y + c) % 2 == 0) ? 0.5 : -0.5;
  const TensorD r = hf_residual(x);
  double er = 0, ex = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    er += r[i] * r[i];
    ex += x[i] * x[i];
  }
  EXPECT_GE(er / ex, 0.5);
}

TEST(HfResidual, OddExtentRejected) { EXPECT_THROW(hf_residual(TensorD(Shape{1, 1, 9, 8})), Error); }

TEST(ImageFuse, ZeroResidualGivesDecoded) {
  std::mt19937_64 rng(6);
  const ConvStack<double> g = random_gate_stack(rng);
  const TensorD d = random_tensor(Shape{1, 3, 8, 8}, rng);
  const TensorD out = image_space_fuse(d, TensorD(d.shape()), random_tensor(Shape{1, 1, 8, 8}, rng), g);
  EXPECT_EQ(max_abs_diff(out, d), 0.0);
}

TEST(ImageFuse, ClosedGateGivesDecoded) {
  std::mt19937_64 rng(7);
  ConvStack<double> g = random_gate_stack(rng);
  g.layers.back().bias[0] = -20.0;
  const TensorD d = random_tensor(Shape{1, 3, 8, 8}, rng);
  const TensorD out = image_space_fuse(d, random_tensor(d.shape(), rng), random_tensor(Shape{1, 1, 8, 8}, rng), g);
  EXPECT_LT(max_abs_diff(out, d), 1e-6);
}

TEST(ImageFuse, GradientsMatchFiniteDifferences) {
  for (int inst = 0; inst < 3; ++inst) {
    std::mt19937_64 rng(200 + inst);
    ConvStack<double> g = random_gate_stack(rng);
    TensorD d = random_tensor(Shape{1, 3, 6, 6}, rng), hf = random_tensor(d.shape(), rng);
    TensorD c = random_tensor(Shape{1, 1, 6, 6}, rng);
    const TensorD w = random_tensor(d.shape(), rng);
    ImageFuseCache<double> cache;
    image_space_fuse(d, hf, c, g, &cache);
    ConvStack<double> grads = g.zeros_like();
    const ImageFuseGrads<double> gr = image_space_fuse_backward(w, hf, g, cache, grads);
    auto loss = [&] { return weighted_sum(image_space_fuse(d, hf, c, g), w); };
    EXPECT_LT(gradcheck::probe_tensor(d, gr.decoded, loss, rng), 1e-3);
    EXPECT_LT(gradcheck::probe_tensor(hf, gr.hf_aligned, loss, rng), 1e-3);
    EXPECT_LT(gradcheck::probe_tensor(c, gr.confidence, loss, rng), 1e-3);
    for (std::size_t l = 0; l < g.layers.size(); ++l)
      EXPECT_LT(gradcheck::probe_tensor(g.layers[l].weight, grads.layers[l].weight, loss, rng), 1e-3);
  }
}

}  // namespace
}  // namespace refsr

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "refsr/gradcheck.hpp"
#include "refsr/matching.hpp"

namespace refsr {
namespace {

using gradcheck::random_tensor;

PatchMatrix<double> rows(std::initializer_list<std::initializer_list<double>> r) {
  PatchMatrix<double> m(r.size(), r.begin()->size());
  Eigen::Index i = 0;
  for (const auto& row : r) {
    Eigen::Index j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

TEST(CosineSimilarity, HandExamples) {
  EXPECT_DOUBLE_EQ(cosine_similarity_matrix<double>(rows({{1, 0, 0, 0}}), rows({{1, 0, 0, 0}}))(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(cosine_similarity_matrix<double>(rows({{1, 0}}), rows({{0, 1}}))(0, 0), 0.0);
  EXPECT_NEAR(cosine_similarity_matrix<double>(rows({{1, 1}}), rows({{1, 0}}))(0, 0), 1.0 / std::sqrt(2.0), 1e-12);
}

TEST(CosineSimilarity, ZeroNormRowsScoreZero) {
  const SimilarityMatrix s = cosine_similarity_matrix<double>(rows({{0, 0}, {1, 2}}), rows({{3, 1}, {0, 0}}));
  EXPECT_EQ(s(0, 0), 0.0);
  EXPECT_EQ(s(0, 1), 0.0);
  EXPECT_EQ(s(1, 1), 0.0);
  EXPECT_GT(s(1, 0), 0.0);
}

TEST(CosineSimilarity, WidthMismatchRejected) {
  EXPECT_THROW(cosine_similarity_matrix<double>(rows({{1, 0, 0}}), rows({{1, 0}})), ShapeError);
}

TEST(Match, DirectArgmax) {
  SimilarityMatrix s(2, 2);
  s << 0.9, 0.2, 0.1, 0.8;
  const MatchResult m = match(s);
  EXPECT_EQ(m.index, (std::vector<int>{0, 1}));
  EXPECT_FLOAT_EQ(m.confidence[0], 0.9f);
  EXPECT_FLOAT_EQ(m.confidence[1], 0.8f);
}

TEST(Match, TiesBreakToLowestIndex) {
  SimilarityMatrix s = SimilarityMatrix::Constant(5, 7, 0.3);
  const MatchResult m = match(s);
  for (std::size_t i = 0; i < m.size(); ++i) {
    EXPECT_EQ(m.index[i], 0);
    EXPECT_FLOAT_EQ(m.confidence[i], 0.3f);
  }
}

TEST(Match, RandomMatrixEqualsExhaustiveScan) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1, 1);
  SimilarityMatrix s(64, 81);
  for (Eigen::Index i = 0; i < s.size(); ++i) s.data()[i] = u(rng);
  const MatchResult m = match(s);
  for (Eigen::Index i = 0; i < 64; ++i) {
    int best = 0;
    for (int j = 0; j < 81; ++j)
      if (s(i, j) > s(i, best)) best = j;
    EXPECT_EQ(m.index[i], best);
    EXPECT_EQ(m.confidence[i], static_cast<float>(s(i, best)));
  }
}

TEST(MatchFeatures, SelfMatchIsIdentity) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 10; ++t) {
    Tensor f = random_tensor(Shape{1, 4, 9, 11}, rng).cast<float>();
    const MatchResult m = match_features(f, f);
    for (std::size_t i = 0; i < m.size(); ++i) {
      EXPECT_EQ(m.index[i], static_cast<int>(i));
      EXPECT_NEAR(m.confidence[i], 1.0f, 1e-5);
    }
  }
}

TEST(MatchFeatures, HorizontalShiftRecovered) {
  std::mt19937_64 rng(13);
  const int H = 10, W = 14;
  Tensor lr = random_tensor(Shape{1, 3, H, W}, rng).cast<float>();
  Tensor ref(lr.shape());
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) ref(0, c, y, x) = lr(0, c, y, (x + 2) % W);
  const MatchResult m = match_features(lr, ref);
  for (int y = 1; y < H - 1; ++y)
    for (int x = 3; x < W - 1; ++x) EXPECT_EQ(m.index[y * W + x], y * W + x - 2) << y << "," << x;
}

TEST(MatchFeatures, EqualsBruteForceOracle) {
  for (int t = 0; t < 100; ++t) {
    std::mt19937_64 rng(1000 + t);
    std::uniform_int_distribution<int> ext(3, 12), ch(1, 8);
    const int c = ch(rng);
    Tensor lr = random_tensor(Shape{1, c, ext(rng), ext(rng)}, rng).cast<float>();
    Tensor ref = random_tensor(Shape{1, c, ext(rng), ext(rng)}, rng).cast<float>();
    const MatchResult a = match_features(lr, ref);
    const MatchResult b = brute_force_match(lr, ref);
    ASSERT_EQ(a.index, b.index) << "trial " << t;
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a.confidence[i], b.confidence[i], 1e-6);
  }
}

TEST(MatchFeatures, Random8Channel12x12PairEqualsOracle) {
  std::mt19937_64 rng(14);
  Tensor lr = random_tensor(Shape{1, 8, 12, 12}, rng).cast<float>();
  Tensor ref = random_tensor(Shape{1, 8, 12, 12}, rng).cast<float>();
  EXPECT_EQ(match_features(lr, ref).index, brute_force_match(lr, ref).index);
}

TEST(MatchFeatures, ConfidenceInvariantToPositivePatchScaling) {
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> scale(0.1, 10.0);
  for (int t = 0; t < 10; ++t) {
    Tensor lr = random_tensor(Shape{1, 3, 8, 8}, rng).cast<float>();
    Tensor ref = random_tensor(Shape{1, 3, 9, 7}, rng).cast<float>();
    PatchMatrix<float> lp = unfold_patches(lr), rp = unfold_patches(ref);
    const MatchResult base = match(cosine_similarity_matrix<float>(lp, rp));
    for (Eigen::Index r = 0; r < rp.rows(); ++r) rp.row(r) *= static_cast<float>(scale(rng));
    for (Eigen::Index r = 0; r < lp.rows(); ++r) lp.row(r) *= static_cast<float>(scale(rng));
    const MatchResult scaled = match(cosine_similarity_matrix<float>(lp, rp));
    EXPECT_EQ(base.index, scaled.index);
    for (std::size_t i = 0; i < base.size(); ++i) EXPECT_NEAR(base.confidence[i], scaled.confidence[i], 1e-5);
  }
}

TEST(MatchFeatures, ChannelMismatchRejected) {
  EXPECT_THROW(match_features(Tensor(Shape{1, 3, 5, 5}), Tensor(Shape{1, 4, 5, 5})), ShapeError);
}

TEST(TiledMatch, FullMarginEqualsMatchFeatures) {
  for (int t = 0; t < 20; ++t) {
    std::mt19937_64 rng(2000 + t);
    Tensor lr = random_tensor(Shape{1, 4, 13, 10}, rng).cast<float>();
    Tensor ref = random_tensor(Shape{1, 4, 11, 15}, rng).cast<float>();
    const MatchResult a = match_features(lr, ref);
    const MatchResult b = tiled_match(lr, ref, 4, 15);
    EXPECT_EQ(a.index, b.index);
    EXPECT_EQ(a.confidence, b.confidence);
  }
}

TEST(TiledMatch, AlignedIdenticalFeaturesGiveIdentity) {
  std::mt19937_64 rng(16);
  Tensor f = random_tensor(Shape{1, 4, 12, 12}, rng).cast<float>();
  for (int margin : {0, 1, 3}) {
    for (int tile : {1, 4, 5}) {
      const MatchResult m = tiled_match(f, f, tile, margin);
      for (std::size_t i = 0; i < m.size(); ++i) EXPECT_EQ(m.index[i], static_cast<int>(i));
    }
  }
}

TEST(TiledMatch, NarrowMarginMissesLargeShift) {
  std::mt19937_64 rng(17);
  const int H = 16, W = 16;
  Tensor lr = random_tensor(Shape{1, 4, H, W}, rng).cast<float>();
  Tensor ref(lr.shape());
  for (int c = 0; c < 4; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) ref(0, c, y, x) = lr(0, c, (y + 3) % H, (x + 3) % W);
  auto mean_conf = [](const MatchResult& m) {
    double s = 0;
    for (float c : m.confidence) s += c;
    return s / m.size();
  };
  const double narrow = mean_conf(tiled_match(lr, ref, 4, 1));
  const double wide = mean_conf(tiled_match(lr, ref, 4, 4));
  EXPECT_LT(narrow, wide);
}

TEST(TiledMatch, InvalidArgumentsRejected) {
  Tensor f(Shape{1, 1, 4, 4});
  EXPECT_THROW(tiled_match(f, f, 0, 1), Error);
  EXPECT_THROW(tiled_match(f, f, 2, -1), Error);
}

TEST(TiledMatch, PeakStorageBoundedByBlockWindow) {
  const std::size_t bytes = tiled_peak_similarity_bytes(256, 256, 256, 256, 32, 8);
  EXPECT_LE(bytes, static_cast<std::size_t>(32 * 32) * (33 + 16) * (33 + 16) * sizeof(double));
  EXPECT_LT(bytes, static_cast<std::size_t>(256 * 256) * 256 * 256 * sizeof(double));
}

TEST(BruteForce, ZeroFeaturesGiveZeroConfidence) {
  const MatchResult m = brute_force_match(Tensor(Shape{1, 2, 4, 5}), Tensor(Shape{1, 2, 6, 3}));
  for (float c : m.confidence) EXPECT_EQ(c, 0.0f);
  const MatchResult f = match_features(Tensor(Shape{1, 2, 4, 5}), Tensor(Shape{1, 2, 6, 3}));
  for (float c : f.confidence) EXPECT_EQ(c, 0.0f);
}

TEST(BruteForce, SinglePatchReference) {
  std::mt19937_64 rng(18);
  const MatchResult m = brute_force_match(random_tensor(Shape{1, 3, 1, 1}, rng), random_tensor(Shape{1, 3, 1, 1}, rng));
  EXPECT_EQ(m.index, std::vector<int>{0});
  const MatchResult many = brute_force_match(random_tensor(Shape{1, 3, 4, 4}, rng), random_tensor(Shape{1, 3, 1, 1}, rng));
  for (int p : many.index) EXPECT_EQ(p, 0);
}

}  // namespace
}  // namespace refsr

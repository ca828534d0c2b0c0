#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "refsr/gradcheck.hpp"
#include "refsr/model.hpp"

namespace refsr {
namespace {

using gradcheck::random_tensor;
using gradcheck::weighted_sum;

ModelConfig small_config() {
  ModelConfig c;
  c.phi_channels = 4;
  c.psi_stem_channels = 4;
  c.hr_channels = 4;
  c.lr_channels = 6;
  c.residual_blocks = 1;
  c.transformer_channels = 4;
  c.gate_channels = 2;
  return c;
}

Tensor random_image(int h, int w, std::mt19937_64& rng) {
  return random_tensor(Shape{1, 3, h, w}, rng, 0.0, 1.0).cast<float>();
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("refsr_test_model_" + name);
}

TEST(ModelConfig, JsonRoundTripAndUnknownKey) {
  ModelConfig c = small_config();
  c.fusion = FusionMode::Soft;
  c.search = SearchMode::Tiled;
  const ModelConfig back = ModelConfig::from_json(c.to_json());
  EXPECT_EQ(back.fingerprint(), c.fingerprint());
  EXPECT_NE(back.fingerprint(), ModelConfig{}.fingerprint());
  nlohmann::json j = c.to_json();
  j["hidden_width"] = 3;
  EXPECT_THROW(ModelConfig::from_json(j), Error);
  j = c.to_json();
  j["lr_channels"] = 0;
  EXPECT_THROW(ModelConfig::from_json(j), Error);
}

TEST(ModelInit, SameSeedSameChecksum) {
  const auto a = init_params<float>(42, ModelConfig{});
  const auto b = init_params<float>(42, ModelConfig{});
  const auto c = init_params<float>(43, ModelConfig{});
  EXPECT_EQ(a.checksum(), b.checksum());
  EXPECT_NE(a.checksum(), c.checksum());
}

TEST(ModelInit, FanInBoundsAndZeroLayers) {
  const auto p = init_params<float>(7, ModelConfig{});
  for (const auto& [name, l] : p.named_layers()) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(l->in_channels() * 9));
    double peak = 0.0;
    for (std::size_t i = 0; i < l->weight.size(); ++i) peak = std::max(peak, std::abs(double(l->weight[i])));
    EXPECT_LE(peak, bound) << name;
    const bool gate = name.find(".g.") != std::string::npos || name.rfind("g_r.", 0) == 0;
    if (gate) {
      for (float b : l->bias) EXPECT_EQ(b, 0.0f) << name;
    }
  }
  const auto& last = p.transformer.layers.back();
  for (std::size_t i = 0; i < last.weight.size(); ++i) ASSERT_EQ(last.weight[i], 0.0f);
  for (float b : last.bias) ASSERT_EQ(b, 0.0f);
}

TEST(ModelInit, LayerNamesAreUnique) {
  const auto p = init_params<float>(1, ModelConfig{});
  std::set<std::string> names;
  for (const auto& [name, l] : p.named_layers()) EXPECT_TRUE(names.insert(name).second) << name;
  EXPECT_TRUE(names.count("transformer.3"));
  EXPECT_TRUE(names.count("g_r.1"));
  EXPECT_FALSE(ModelParams<float>::trainable("phi.0"));
  EXPECT_TRUE(ModelParams<float>::trainable("psi.0"));
}

TEST(ModelForward, ShapesAndRepeatability) {
  std::mt19937_64 rng(3);
  const auto p = init_params<float>(5, small_config());
  const Tensor lr = random_image(16, 20, rng), ref = random_image(24, 18, rng);
  const auto a = forward(p, lr, ref);
  const auto b = forward(p, lr, ref);
  EXPECT_EQ(a.sr.shape(), (Shape{1, 3, 32, 40}));
  EXPECT_EQ(checksum(a.sr), checksum(b.sr));
  EXPECT_TRUE(a.sr.all_finite());
  EXPECT_GT(a.mean_gate(), 0.0);
  EXPECT_LT(a.mean_gate(), 1.0);
}

TEST(ModelForward, RejectsBadExtents) {
  std::mt19937_64 rng(3);
  const auto p = init_params<float>(5, small_config());
  EXPECT_THROW(forward(p, random_image(15, 16, rng), random_image(16, 16, rng)), Error);
  EXPECT_THROW(forward(p, random_image(16, 16, rng), random_image(14, 16, rng)), Error);
  EXPECT_THROW(forward(p, random_tensor(Shape{1, 1, 16, 16}, rng).cast<float>(), random_image(16, 16, rng)), Error);
}

TEST(ModelForward, ClosedGatesReduceToSingleImagePath) {
  std::mt19937_64 rng(4);
  auto p = init_params<float>(9, ModelConfig{});
  p.fuse_lr.g.layers.back().bias[0] = -20.0f;
  p.fuse_hr.g.layers.back().bias[0] = -20.0f;
  p.g_r.layers.back().bias[0] = -20.0f;
  const Tensor lr = random_image(16, 16, rng), ref = random_image(32, 32, rng);
  const auto with_ref = forward(p, lr, ref);
  const auto without = forward(p, lr, ref, ForwardOptions{false});
  EXPECT_LT(max_abs_diff(with_ref.sr, without.sr), 1e-6);
}

TEST(ModelForward, TiledSearchWithFullMarginMatchesFull) {
  std::mt19937_64 rng(8);
  ModelConfig c = small_config();
  const Tensor lr = random_image(16, 16, rng), ref = random_image(16, 16, rng);
  const auto full = forward(init_params<float>(2, c), lr, ref);
  c.search = SearchMode::Tiled;
  c.tile = 4;
  c.margin = 16;
  const auto tiled = forward(init_params<float>(2, c), lr, ref);
  EXPECT_EQ(checksum(full.sr), checksum(tiled.sr));
}

TEST(Checkpoint, RoundTrip) {
  const auto p = init_params<float>(11, small_config());
  const auto path = temp_path("roundtrip.ckpt");
  save_checkpoint(p, path);
  const ModelConfig expected = small_config();
  const auto q = load_checkpoint(path, &expected);
  EXPECT_EQ(q.checksum(), p.checksum());
  EXPECT_EQ(q.seed, 11u);
  std::filesystem::remove(path);
}

TEST(Checkpoint, TruncatedPayloadNamesTensor) {
  const auto p = init_params<float>(11, small_config());
  const auto path = temp_path("truncated.ckpt");
  save_checkpoint(p, path);
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 2);
  try {
    load_checkpoint(path);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("'g_r.1.bias'"), std::string::npos) << e.what();
  }
  std::filesystem::remove(path);
}

TEST(Checkpoint, FingerprintMismatchReportsBoth) {
  const auto p = init_params<float>(11, small_config());
  const auto path = temp_path("mismatch.ckpt");
  save_checkpoint(p, path);
  ModelConfig other = small_config();
  other.fusion = FusionMode::Sum;
  try {
    load_checkpoint(path, &other);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(fingerprint_hex(small_config().fingerprint())), std::string::npos) << msg;
    EXPECT_NE(msg.find(fingerprint_hex(other.fingerprint())), std::string::npos) << msg;
  }
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsGarbage) {
  const auto path = temp_path("garbage.ckpt");
  std::ofstream(path) << "hello\n";
  EXPECT_THROW(load_checkpoint(path), Error);
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path), Error);
}

class ModelGradient : public ::testing::TestWithParam<FusionMode> {};

// End-to-end central differences on random trainable weights. T's last layer is
// made non-zero so the patch affine sits away from integer sample positions.
TEST_P(ModelGradient, EndToEndMatchesFiniteDifferences) {
  std::mt19937_64 rng(21);
  ModelConfig c = small_config();
  c.fusion = GetParam();
  auto p = init_params<double>(13, c);
  for (std::size_t i = 0; i < p.transformer.layers.back().weight.size(); ++i)
    p.transformer.layers.back().weight[i] = std::uniform_real_distribution<double>(-0.1, 0.1)(rng);
  for (auto& l : {&p.fuse_lr.g, &p.fuse_hr.g, &p.g_r})
    for (auto& b : l->layers.back().bias) b = 0.3;
  const TensorD lr = random_tensor(Shape{1, 3, 16, 16}, rng, 0.0, 1.0);
  const TensorD ref = random_tensor(Shape{1, 3, 16, 16}, rng, 0.0, 1.0);
  const auto ctx = build_context(p, lr, ref);
  const auto trace = forward(p, lr, ref, ctx);
  const TensorD w = random_tensor(trace.sr.shape(), rng);
  const auto grads = backward(p, ctx, trace, w);

  auto layers = p.named_layers();
  const auto glayers = grads.named_layers();
  std::vector<std::pair<std::size_t, std::size_t>> picks;  // (layer, flat index into weight+bias)
  std::vector<std::size_t> trainable;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (ModelParams<double>::trainable(layers[i].first)) trainable.push_back(i);
  for (int k = 0; k < 50; ++k) {
    const std::size_t li = trainable[rng() % trainable.size()];
    picks.emplace_back(li, rng() % layers[li].second->parameter_count());
  }
  double worst = 0.0;
  for (const auto& [li, idx] : picks) {
    ConvLayer<double>& l = *layers[li].second;
    const ConvLayer<double>& g = *glayers[li].second;
    const bool is_bias = idx >= l.weight.size();
    double& v = is_bias ? l.bias[idx - l.weight.size()] : l.weight[idx];
    const double analytic = is_bias ? g.bias[idx - l.weight.size()] : g.weight[idx];
    const double h = 1e-5, keep = v;
    v = keep + h;
    const double up = weighted_sum(forward(p, lr, ref, ctx).sr, w);
    v = keep - h;
    const double down = weighted_sum(forward(p, lr, ref, ctx).sr, w);
    v = keep;
    const double err = gradcheck::relative_error(analytic, (up - down) / (2 * h));
    worst = std::max(worst, err);
    EXPECT_LT(err, 1e-3) << layers[li].first << " [" << idx << "] analytic " << analytic;
  }
  RecordProperty("max_rel_error", std::to_string(worst));
}

INSTANTIATE_TEST_SUITE_P(Modes, ModelGradient,
                         ::testing::Values(FusionMode::Adaptive, FusionMode::Soft, FusionMode::Sum),
                         [](const auto& info) { return to_string(info.param); });

TEST(ModelGradient, PhiReceivesNoGradient) {
  std::mt19937_64 rng(2);
  const auto p = init_params<double>(3, small_config());
  const TensorD lr = random_tensor(Shape{1, 3, 16, 16}, rng, 0.0, 1.0);
  const auto ctx = build_context(p, lr, lr);
  const auto trace = forward(p, lr, lr, ctx);
  const auto g = backward(p, ctx, trace, random_tensor(trace.sr.shape(), rng));
  for (const auto& l : g.phi.layers) EXPECT_EQ(max_abs_diff(l.weight, TensorD(l.weight.shape())), 0.0);
}

}  // namespace
}  // namespace refsr

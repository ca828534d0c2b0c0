#pragma once

// Synthetic dual-camera data, training and SRA adaptation loops, metrics.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "refsr/image.hpp"
#include "refsr/losses.hpp"
#include "refsr/model.hpp"

namespace refsr {

// ---------------------------------------------------------------------------
// Synthetic pairs

/// Reference perturbation: rotation and isotropic scale about the crop centre,
/// then a translation in HR pixels. Maps ref pixel q to hr position
/// crop_center + R(angle) * scale * (q - c) + t.
struct RefAffine {
  double angle_deg = 0.0;
  double scale = 1.0;
  double tx = 0.0;
  double ty = 0.0;
};

struct SynthPair {
  Image hr, lr, ref;
  RefAffine affine;
  std::array<double, 3> gain{1.0, 1.0, 1.0};
  int crop_y = 0, crop_x = 0, crop_size = 0;  ///< crop window in hr coordinates
  std::uint64_t texture_seed = 0;

  nlohmann::json meta() const;
};

struct SynthOptions {
  double crop_fraction = 0.75;  ///< ref extent relative to hr, rounded down to a multiple of 4
  double max_angle_deg = 10.0;
  double min_scale = 0.9, max_scale = 1.1;
  double max_shift = 4.0;
  double min_gain = 0.9, max_gain = 1.1;
};

/// Procedural texture: sinusoid mixture background, filled polygons, one line grating.
Image render_texture(std::uint64_t seed, int extent);

/// Bilinear sample at continuous (x, y) with mirrored coordinates outside the image.
float sample_reflect(const Image& image, double x, double y, int channel);

/// Ref before gain: the crop window of `hr` resampled through `affine`.
Image warp_crop(const Image& hr, int crop_y, int crop_x, int crop_size, const RefAffine& affine);

/// Deterministic per seed; extent even and >= 32.
std::vector<SynthPair> synth_dataset(std::uint64_t seed, int n, int extent, const SynthOptions& options = {});

/// pair_%04d/{hr,lr,ref}.png + meta.json under `dir`.
void write_dataset(const std::vector<SynthPair>& pairs, const std::filesystem::path& dir);
/// Reads a directory written by write_dataset (pixel data is 8-bit quantised).
std::vector<SynthPair> read_dataset(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Domain shift for adaptation experiments

/// The "real camera" analog: the scene is blurred (sigma 1.0) and colour-shifted
/// before the x2 bicubic capture model. Tele keeps the original ref.
struct DomainShift {
  double blur_sigma = 1.0;
  std::array<double, 3> gain{1.08, 1.0, 0.92};
};

struct ShiftedPair {
  Image wide;   ///< LR input
  Image tele;   ///< reference
  Image truth;  ///< shifted scene at output resolution (evaluation only)
};

ShiftedPair apply_domain_shift(const SynthPair& pair, const DomainShift& shift = {});

// ---------------------------------------------------------------------------
// Metrics

/// 10 log10(1 / MSE) over all channels, capped at 100 dB.
double psnr(const Image& a, const Image& b);
/// Mean local SSIM on the luminance channel (11x11 Gaussian window, sigma 1.5,
/// k1 = 0.01, k2 = 0.03), over window positions that fit inside the image.
double ssim(const Image& a, const Image& b);
/// ITU-R BT.601 luma; single-channel images pass through.
std::vector<double> luminance(const Image& image);

// ---------------------------------------------------------------------------
// Training

enum class LossMode { Full, L1 };
LossMode parse_loss_mode(const std::string& name);
std::string to_string(LossMode mode);

struct TrainConfig {
  std::uint64_t seed = 1;
  int steps = 2000;
  int batch_size = 1;
  double learning_rate = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  double w_fid = 0.1;
  double lambda = 0.1;  ///< fidelity weight inside the SRA loss
  int extent = 64;
  int pairs = 64;
  int eval_pairs = 8;
  int eval_every = 250;  ///< 0: only at the end
  LossMode loss = LossMode::Full;
  ModelConfig model;

  nlohmann::json to_json() const;
  /// Missing keys keep defaults; unknown keys are rejected. "model" nests a ModelConfig.
  static TrainConfig from_json(const nlohmann::json& j);
  void validate() const;
  /// Seed of the held-out evaluation set.
  std::uint64_t eval_seed() const { return seed * 7919 + 104729; }
};

/// Inputs of one training or evaluation example in tensor form, with everything
/// that depends only on the frozen matching encoder precomputed.
struct Example {
  Tensor lr, ref, hr;  ///< hr may be empty (adaptation pairs)
  MatchContext<float> ctx;
  Tensor ref_feat, hr_feat;
};

Example make_example(const ModelParams<float>& p, const Image& lr, const Image& ref, const Image* hr = nullptr);
std::vector<Example> make_examples(const ModelParams<float>& p, const std::vector<SynthPair>& pairs);
std::vector<Example> make_examples(const ModelParams<float>& p, const std::vector<ShiftedPair>& pairs);

struct LossTerms {
  double total = 0.0, rec = 0.0, fid = 0.0;
  Tensor grad;
};

/// Training objective for one example: rec + w_fid * fid, or l1 in L1 mode.
LossTerms training_loss(const ForwardTrace<float>& trace, const Example& ex, const ModelParams<float>& p,
                        const TrainConfig& config);
/// sra_loss(sr, wide, tele, C, lambda); `rec` holds the consistency term.
LossTerms adaptation_loss(const ForwardTrace<float>& trace, const Example& ex, const ModelParams<float>& p,
                          double lambda);

/// Bias-corrected adaptive moments over the trainable layers.
class Adam {
 public:
  Adam(const ModelParams<float>& like, double lr, double beta1, double beta2, double epsilon);
  void step(ModelParams<float>& params, const ModelParams<float>& grads);
  int steps_taken() const { return t_; }

 private:
  double lr_, beta1_, beta2_, epsilon_;
  int t_ = 0;
  ModelParams<float> m_, v_;
};

struct EvalResult {
  std::vector<double> psnr, ssim, bicubic_psnr, bicubic_ssim, gate;
  double mean_psnr = 0.0, mean_ssim = 0.0, mean_bicubic_psnr = 0.0, mean_bicubic_ssim = 0.0, mean_gate = 0.0;
};

/// Metrics of clamp(sr) and clamp(bicubic up(lr)) against the examples' hr.
EvalResult evaluate(const ModelParams<float>& p, const std::vector<Example>& examples);

struct LogRow {
  int step = 0;
  double loss_total = 0.0, loss_rec = 0.0, loss_fid = 0.0;
  std::optional<double> eval_psnr, eval_ssim;
};

void write_log_csv(const std::vector<LogRow>& rows, const std::filesystem::path& path);

struct TrainResult {
  ModelParams<float> params;
  std::vector<LogRow> log;
  EvalResult eval;
  double initial_loss = 0.0;  ///< mean objective over the training set before the first step
  double final_loss = 0.0;    ///< and after the last
};

using ProgressFn = std::function<void(const LogRow&)>;

/// Trains from init_params(config.seed) on synth_dataset(config.seed, ...), or on
/// `data` when given. Throws Error naming the step on a non-finite loss.
TrainResult train(const TrainConfig& config, const std::vector<SynthPair>* data = nullptr,
                  const ProgressFn& progress = {});

struct AdaptConfig {
  std::uint64_t seed = 1;
  int steps = 200;
  int batch_size = 1;
  double learning_rate = 2e-4;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
  double lambda = 0.1;

  nlohmann::json to_json() const;
  static AdaptConfig from_json(const nlohmann::json& j);
  void validate() const;
};

struct AdaptResult {
  ModelParams<float> params;
  std::vector<LogRow> log;
  double loss_before = 0.0, loss_after = 0.0;              ///< mean sra_loss over the set
  double consistency_before = 0.0, consistency_after = 0.0;  ///< its first term
};

/// Fine-tunes on the sra loss only; hr is never read.
AdaptResult adapt_sra(const ModelParams<float>& start, const std::vector<Example>& examples, const AdaptConfig& config,
                      const ProgressFn& progress = {});

/// Mean adaptation loss and consistency term over a set.
std::pair<double, double> mean_adaptation_loss(const ModelParams<float>& p, const std::vector<Example>& examples,
                                               double lambda);

}  // namespace refsr

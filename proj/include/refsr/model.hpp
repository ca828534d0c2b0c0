#pragma once

// The x2 reference-based SR network: frozen matching encoder phi, reference
// encoder psi, residual backbone, one-stage decoder with two feature fusion sites,
// local transformer T and the image-space residual gate.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "refsr/fusion.hpp"
#include "refsr/layers.hpp"
#include "refsr/matching.hpp"
#include "refsr/warp.hpp"

namespace refsr {

enum class SearchMode { Full, Tiled };

SearchMode parse_search_mode(const std::string& name);
std::string to_string(SearchMode mode);

struct ModelConfig {
  int phi_channels = 16;
  int psi_stem_channels = 16;
  int hr_channels = 32;  ///< decoder width at output resolution (= psi level x1)
  int lr_channels = 64;  ///< backbone width (= psi level /2)
  int residual_blocks = 4;
  int transformer_channels = 32;
  int gate_channels = 8;
  double bound_scale = 0.5;
  double bound_translation = 2.0;
  FusionMode fusion = FusionMode::Adaptive;
  SearchMode search = SearchMode::Full;
  int tile = 32;
  int margin = 8;

  nlohmann::json to_json() const;
  /// Missing keys keep defaults; unknown keys are rejected.
  static ModelConfig from_json(const nlohmann::json& j);
  /// FNV-1a of the canonical JSON text.
  std::uint64_t fingerprint() const;
  void validate() const;
  AffineBounds bounds() const { return {bound_scale, bound_translation}; }
};

std::string fingerprint_hex(std::uint64_t fp);

/// Integer config values; a fractional or non-numeric value throws instead of truncating.
int json_int(const nlohmann::json& v);
std::uint64_t json_u64(const nlohmann::json& v);

/// Calls handle(key, value) for every member of a config object. `handle` returns
/// false for an unknown key; errors are rethrown with the key in the message.
template <typename F>
void read_config_keys(const nlohmann::json& j, const std::string& what, F&& handle) {
  if (!j.is_object()) throw Error(what + " must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    bool known = false;
    try {
      known = handle(key, v);
    } catch (const nlohmann::json::exception& e) {
      throw Error(what + " key '" + key + "': " + e.what());
    } catch (const Error& e) {
      throw Error(what + " key '" + key + "': " + e.what());
    }
    if (!known) throw Error("unknown " + what + " key '" + key + "'");
  }
}

template <typename T>
struct ModelParams {
  ModelConfig config;
  std::uint64_t seed = 0;

  ConvStack<T> phi;  ///< frozen; phi.layers[0] + relu is the loss embedding
  ConvLayer<T> psi0, psi1, psi2;
  ConvLayer<T> head;
  std::vector<ConvLayer<T>> blocks;  ///< two convs per residual block
  ConvLayer<T> up_conv, out_conv;
  ConvStack<T> transformer;
  FusionGate<T> fuse_lr, fuse_hr;
  ConvStack<T> g_r;

  /// Every layer with a stable name, in serialization order.
  std::vector<std::pair<std::string, ConvLayer<T>*>> named_layers();
  std::vector<std::pair<std::string, const ConvLayer<T>*>> named_layers() const;
  static bool trainable(const std::string& name) { return name.rfind("phi.", 0) != 0; }

  /// Same structure, all zeros (gradient accumulator).
  ModelParams zeros_like() const;
  std::size_t parameter_count() const;
  std::uint64_t checksum() const;
  bool all_finite() const;
  const ConvLayer<T>& embedding() const { return phi.layers.front(); }

  template <typename U>
  ModelParams<U> cast() const;
};

/// Deterministic fan-in uniform init; T's last layer and gate biases start at zero.
template <typename T>
ModelParams<T> init_params(std::uint64_t seed, const ModelConfig& config);

/// phi applied to an HR-resolution image, giving features on the half-resolution grid.
template <typename T>
BasicTensor<T> phi_features(const ModelParams<T>& p, const BasicTensor<T>& image);

/// Everything that depends only on (lr, ref) and the frozen matching encoder.
template <typename T>
struct MatchContext {
  MatchResult match;
  BasicTensor<T> lr_up;        ///< bicubic x2 of lr
  BasicTensor<T> ref_matched;  ///< ref warped by the index map
  BasicTensor<T> hf_matched;   ///< hf_residual(ref) warped by the index map
  BasicTensor<T> conf_lr;      ///< C on the LR grid
  BasicTensor<T> conf_hr;      ///< C bilinearly upsampled to the output grid
};

template <typename T>
MatchContext<T> build_context(const ModelParams<T>& p, const BasicTensor<T>& lr, const BasicTensor<T>& ref);

struct ForwardOptions {
  bool use_reference = true;  ///< false: plain SISR path through backbone and decoder
};

template <typename T>
struct ForwardTrace {
  BasicTensor<T> sr;
  BasicTensor<T> ref;
  AlignmentPrediction<T> align;
  // psi
  BasicTensor<T> psi0_pre, psi0_out, psi1_pre, f_ref_hr, f_ref_hr_down, psi2_pre, f_ref_lr;
  BasicTensor<T> f_ref_lr_matched, f_ref_hr_matched, f_ref_lr_aligned, f_ref_hr_aligned;
  // backbone: x[0] = relu(head(lr)), x[k+1] = x[k] + conv2(relu(conv1(x[k])))
  BasicTensor<T> lr, head_pre;
  std::vector<BasicTensor<T>> block_in, block_mid_pre, block_mid;
  BasicTensor<T> f_sr_lr, fused_lr, fused_lr_up, up_pre, f_sr_hr, fused_hr, decoded, hf_aligned;
  FuseCache<T> fuse_lr_cache, fuse_hr_cache;
  ImageFuseCache<T> image_cache;
  bool used_reference = true;

  /// Mean gate value over the three fusion sites (LR, HR, image residual).
  double mean_gate() const;
};

/// Full forward pass with a precomputed context.
template <typename T>
ForwardTrace<T> forward(const ModelParams<T>& p, const BasicTensor<T>& lr, const BasicTensor<T>& ref,
                        const MatchContext<T>& ctx, ForwardOptions options = {});

/// Convenience: builds the context first.
template <typename T>
ForwardTrace<T> forward(const ModelParams<T>& p, const BasicTensor<T>& lr, const BasicTensor<T>& ref,
                        ForwardOptions options = {});

/// Gradients of all trainable parameters given d loss / d sr (phi entries stay zero).
template <typename T>
ModelParams<T> backward(const ModelParams<T>& p, const MatchContext<T>& ctx, const ForwardTrace<T>& trace,
                        const BasicTensor<T>& grad_sr);

/// Smallest accepted LR / Ref extent.
inline constexpr int kMinExtent = 16;

void save_checkpoint(const ModelParams<float>& p, const std::filesystem::path& path);
/// Throws Error naming the offending tensor on truncation, or both fingerprints
/// when the stored config does not match `expected` (if given) or itself.
ModelParams<float> load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr);

}  // namespace refsr

#pragma once

#include <filesystem>
#include <vector>

#include "refsr/tensor.hpp"

namespace refsr {

/// Interleaved height x width x channels image with values in [0, 1].
class Image {
 public:
  Image() = default;
  Image(int height, int width, int channels, float fill = 0.0f);
  /// Values are clamped to [0, 1].
  Image(int height, int width, int channels, std::vector<float> values);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  const std::vector<float>& values() const { return values_; }

  float at(int y, int x, int c) const { return values_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c]; }
  void set(int y, int x, int c, float v);

  bool same_shape(const Image& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }

  /// (1, channels, height, width) tensor.
  Tensor to_tensor() const;
  /// Clamps to [0, 1]; the tensor must have batch 1 and 1 or 3 channels.
  static Image from_tensor(const Tensor& t);

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<float> values_;
};

/// 8-bit PNG; gray and RGB(A) inputs load as 1 or 3 channels (alpha dropped).
Image read_png(const std::filesystem::path& path);
void write_png(const Image& image, const std::filesystem::path& path);

}  // namespace refsr

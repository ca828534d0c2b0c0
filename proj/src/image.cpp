#include "refsr/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

namespace refsr {

namespace {

float clamp01(float v) { return std::isfinite(v) ? std::clamp(v, 0.0f, 1.0f) : 0.0f; }

void check_channels(int c) {
  if (c != 1 && c != 3) throw Error("image channels must be 1 or 3, got " + std::to_string(c));
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

Image::Image(int height, int width, int channels, float fill)
    : height_(height), width_(width), channels_(channels),
      values_(static_cast<std::size_t>(height) * width * channels, clamp01(fill)) {
  check_channels(channels);
}

Image::Image(int height, int width, int channels, std::vector<float> values)
    : height_(height), width_(width), channels_(channels), values_(std::move(values)) {
  check_channels(channels);
  if (values_.size() != static_cast<std::size_t>(height) * width * channels) {
    throw Error("image buffer size mismatch");
  }
  for (auto& v : values_) v = clamp01(v);
}

void Image::set(int y, int x, int c, float v) {
  values_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c] = clamp01(v);
}

Tensor Image::to_tensor() const {
  Tensor t(Shape{1, channels_, height_, width_});
  for (int y = 0; y < height_; ++y)
    for (int x = 0; x < width_; ++x)
      for (int c = 0; c < channels_; ++c) t(0, c, y, x) = at(y, x, c);
  return t;
}

Image Image::from_tensor(const Tensor& t) {
  if (t.n() != 1) throw ShapeError("Image::from_tensor expects batch 1", Shape{1, t.c(), t.h(), t.w()}, t.shape());
  std::vector<float> v(static_cast<std::size_t>(t.h()) * t.w() * t.c());
  for (int y = 0; y < t.h(); ++y)
    for (int x = 0; x < t.w(); ++x)
      for (int c = 0; c < t.c(); ++c) v[(static_cast<std::size_t>(y) * t.w() + x) * t.c() + c] = t(0, c, y, x);
  return Image(t.h(), t.w(), t.c(), std::move(v));
}

Image read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "rb"));
  if (!fp) throw Error("cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw Error("not a PNG file: " + path.string());
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("corrupt PNG: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_packing(png);
  png_set_strip_alpha(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int channels = png_get_channels(png, info);
  std::vector<png_byte> buf(static_cast<std::size_t>(png_get_rowbytes(png, info)) * height);
  std::vector<png_bytep> rows(height);
  for (int y = 0; y < height; ++y) rows[y] = buf.data() + static_cast<std::size_t>(y) * png_get_rowbytes(png, info);
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  if (channels != 1 && channels != 3) throw Error("unsupported PNG channel count in " + path.string());
  std::vector<float> values(buf.size());
  for (std::size_t i = 0; i < buf.size(); ++i) values[i] = buf[i] / 255.0f;
  return Image(height, width, channels, std::move(values));
}

void write_png(const Image& image, const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw Error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("PNG write failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, image.width(), image.height(), 8,
               image.channels() == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<std::size_t>(image.width()) * image.channels());
  for (int y = 0; y < image.height(); ++y) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      const float v = image.values()[static_cast<std::size_t>(y) * row.size() + i];
      row[i] = static_cast<png_byte>(std::lround(clamp01(v) * 255.0f));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace refsr

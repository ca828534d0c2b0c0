#pragma once

// Experiment fixtures shared by unit tests and the acceptance binary.

#include <array>
#include <cmath>
#include <random>
#include <vector>

#include "refsr/image.hpp"
#include "refsr/warp.hpp"

namespace refsr::testing {

/// Smooth three-channel texture: a few random plane waves per channel.
struct WaveTexture {
  struct Wave {
    double kx, ky, phase, amp;
  };
  std::array<std::vector<Wave>, 3> waves;

  explicit WaveTexture(std::mt19937_64& rng, double min_wavelength = 10.0, double max_wavelength = 20.0) {
    const double pi = std::acos(-1.0);
    std::uniform_real_distribution<double> dir(0, pi), wl(min_wavelength, max_wavelength), ph(0, 2 * pi),
        amp(0.3, 1.0);
    for (auto& ch : waves) {
      for (int k = 0; k < 3; ++k) {
        const double a = dir(rng), f = 2 * pi / wl(rng);
        ch.push_back({f * std::cos(a), f * std::sin(a), ph(rng), amp(rng)});
      }
    }
  }

  double operator()(int c, double x, double y) const {
    double v = 0.0;
    for (const Wave& w : waves[c]) v += w.amp * std::sin(w.kx * x + w.ky * y + w.phase);
    return v;
  }

  TensorD render(int h, int w) const {
    TensorD t(Shape{1, 3, h, w});
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) t(0, c, y, x) = (*this)(c, x, y);
    return t;
  }
};

struct AlignmentTrial {
  PatchFitResult fit;
  std::array<double, 6> truth{};
};

/// One synthetic patch pair: the target patch is the texture seen through a known
/// affine (rotation, scale, translation within bounds) about the patch center.
/// Per-patch optimization starts from identity and fits that affine.
inline AlignmentTrial alignment_trial(std::uint64_t seed, int steps = 150, double learning_rate = 0.02,
                                      double max_rotation_deg = 10.0) {
  std::mt19937_64 rng(seed);
  const WaveTexture tex(rng);
  const int s = 4, cells = 12, K = 3 * s;
  const TensorD feat = tex.render(cells * s, cells * s);
  const double pi = std::acos(-1.0);
  std::uniform_real_distribution<double> rot(-max_rotation_deg, max_rotation_deg), scl(0.9, 1.1), tr(-0.5, 0.5);
  const double th = rot(rng) * pi / 180.0, sc = scl(rng);
  const double a00 = sc * std::cos(th), a01 = -sc * std::sin(th), a10 = sc * std::sin(th), a11 = sc * std::cos(th);
  const double tx = tr(rng), ty = tr(rng);
  const int gy = cells / 2, gx = cells / 2;
  const double cy = s * gy + (s - 1) / 2.0, cx = s * gx + (s - 1) / 2.0;
  std::vector<double> target;
  for (int c = 0; c < 3; ++c) {
    for (int dy = 0; dy < K; ++dy) {
      for (int dx = 0; dx < K; ++dx) {
        const double uy = dy - (K - 1) / 2.0, ux = dx - (K - 1) / 2.0;
        target.push_back(tex(c, cx + a00 * ux + a01 * uy + s * tx, cy + a10 * ux + a11 * uy + s * ty));
      }
    }
  }
  AlignmentTrial out;
  out.truth = {a00 - 1.0, a01, a10, a11 - 1.0, tx, ty};
  out.fit = fit_patch_affine(feat, gy, gx, s, target, AffineBounds{}, steps, learning_rate);
  return out;
}

/// 10 log10(1 / MSE) over every sample, straight from the definition.
inline double naive_psnr(const Image& a, const Image& b) {
  double se = 0.0;
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x)
      for (int c = 0; c < a.channels(); ++c) se += std::pow(double(a.at(y, x, c)) - b.at(y, x, c), 2);
  return -10.0 * std::log10(se / (double(a.height()) * a.width() * a.channels()));
}

// SSIM from the textbook formula with a directly built 2-D window.
inline double naive_ssim(const Image& a, const Image& b) {
  double win[11][11], total = 0.0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) total += win[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / 4.5);
  auto luma = [](const Image& im, int y, int x) {
    return 0.299 * im.at(y, x, 0) + 0.587 * im.at(y, x, 1) + 0.114 * im.at(y, x, 2);
  };
  double acc = 0.0;
  int n = 0;
  for (int y = 0; y + 11 <= a.height(); ++y) {
    for (int x = 0; x + 11 <= a.width(); ++x) {
      double ma = 0, mb = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          ma += win[i][j] / total * luma(a, y + i, x + j);
          mb += win[i][j] / total * luma(b, y + i, x + j);
        }
      double va = 0, vb = 0, cov = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          const double da = luma(a, y + i, x + j) - ma, db = luma(b, y + i, x + j) - mb;
          va += win[i][j] / total * da * da;
          vb += win[i][j] / total * db * db;
          cov += win[i][j] / total * da * db;
        }
      acc += (2 * ma * mb + 1e-4) * (2 * cov + 9e-4) / ((ma * ma + mb * mb + 1e-4) * (va + vb + 9e-4));
      ++n;
    }
  }
  return acc / n;
}

}  // namespace refsr::testing

#include "refsr/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Core>

namespace refsr {

namespace {

constexpr double kNormEps = 1e-8;
constexpr double kFidelityEps = 1e-8;
// Candidates this close to the best GEMM score are re-ranked by exact distance.
constexpr double kRefineTol = 1e-10;
constexpr Eigen::Index kBlockRows = 256;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct PixelSet {
  RowMat unit;               // N x C unit rows (zero rows for degenerate pixels)
  std::vector<double> norm;  // original norms
  std::vector<char> zero;
};

template <typename T>
PixelSet pixel_set(const BasicTensor<T>& f) {
  const int C = f.c();
  const Eigen::Index N = static_cast<Eigen::Index>(f.h()) * f.w();
  PixelSet p;
  p.unit.resize(N, C);
  for (int c = 0; c < C; ++c) {
    const T* src = f.data() + static_cast<std::size_t>(c) * N;
    for (Eigen::Index i = 0; i < N; ++i) p.unit(i, c) = static_cast<double>(src[i]);
  }
  p.norm.resize(N);
  p.zero.resize(N);
  for (Eigen::Index i = 0; i < N; ++i) {
    const double n = p.unit.row(i).norm();
    p.norm[i] = n;
    p.zero[i] = n < kNormEps;
    if (p.zero[i]) {
      p.unit.row(i).setZero();
    } else {
      p.unit.row(i) /= n;
    }
  }
  return p;
}

// Two zero vectors coincide; a zero vector is at distance 1 from any other.
double pair_delta(const PixelSet& x, Eigen::Index i, const PixelSet& y, Eigen::Index j) {
  if (x.zero[i] && y.zero[j]) return 0.0;
  if (x.zero[i] || y.zero[j]) return 1.0;
  return 0.5 * (x.unit.row(i) - y.unit.row(j)).squaredNorm();
}

template <typename T>
void check_features(const BasicTensor<T>& x, const BasicTensor<T>& y) {
  if (x.n() != 1 || y.n() != 1 || x.c() != y.c()) {
    throw ShapeError("contextual_distance needs batch-1 features with equal channels", x.shape(), y.shape());
  }
}

template <typename T>
BasicTensor<T> sign_of(const BasicTensor<T>& d, double scale) {
  BasicTensor<T> g(d.shape());
  for (std::size_t i = 0; i < d.size(); ++i) g[i] = static_cast<T>(d[i] > 0 ? scale : (d[i] < 0 ? -scale : 0.0));
  return g;
}

double mean_abs(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += std::abs(x);
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

template <typename T>
double mean_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
  return s / static_cast<double>(a.size());
}

// Chain d(loss)/d(embedding) back to the image through relu(conv(image)).
template <typename T>
BasicTensor<T> embedding_backward(const ConvLayer<T>& embed, const BasicTensor<T>& image,
                                  const BasicTensor<T>& pre, const BasicTensor<T>& grad_feat) {
  return conv2d_backward(image, embed.weight, relu_backward(grad_feat, pre)).input;
}

// Contextual term of a loss: per-pixel weights w_i, returns sum_i w_i delta_i and
// adds its image gradient into `grad`.
template <typename T>
double weighted_contextual(const BasicTensor<T>& sr, const ConvLayer<T>& embed, const BasicTensor<T>& target_feat,
                           const std::vector<double>& weights, const std::vector<int>* assignment,
                           BasicTensor<T>& grad, std::vector<int>& used) {
  const BasicTensor<T> pre = embed(sr);
  const BasicTensor<T> feat = relu(pre);
  const ContextualResult r = assignment ? contextual_distance_assigned(feat, target_feat, *assignment)
                                        : contextual_distance(feat, target_feat);
  double value = 0.0;
  for (std::size_t i = 0; i < r.delta.size(); ++i) value += weights[i] * r.delta[i];
  grad += embedding_backward(embed, sr, pre, contextual_distance_backward(feat, target_feat, r, weights));
  used = r.assignment;
  return value;
}

}  // namespace

template <typename T>
ContextualResult contextual_distance(const BasicTensor<T>& x_feat, const BasicTensor<T>& y_feat) {
  check_features(x_feat, y_feat);
  const PixelSet x = pixel_set(x_feat), y = pixel_set(y_feat);
  const Eigen::Index N = x.unit.rows(), M = y.unit.rows();
  ContextualResult r;
  r.delta.assign(N, 1.0);
  r.assignment.assign(N, -1);
  Eigen::Index first_zero = -1;
  for (Eigen::Index j = 0; j < M && first_zero < 0; ++j)
    if (y.zero[j]) first_zero = j;
  RowMat S;
  std::vector<Eigen::Index> cand;
  for (Eigen::Index b0 = 0; b0 < N; b0 += kBlockRows) {
    const Eigen::Index rows = std::min(kBlockRows, N - b0);
    S.noalias() = x.unit.middleRows(b0, rows) * y.unit.transpose();
    for (Eigen::Index r0 = 0; r0 < rows; ++r0) {
      const Eigen::Index i = b0 + r0;
      if (x.zero[i]) {
        if (first_zero >= 0) {
          r.delta[i] = 0.0;
          r.assignment[i] = static_cast<int>(first_zero);
        }
        continue;
      }
      const double best = S.row(r0).maxCoeff();
      cand.clear();
      for (Eigen::Index j = 0; j < M; ++j)
        if (S(r0, j) >= best - kRefineTol) cand.push_back(j);
      Eigen::Index pick = cand.front();
      double pick_d = pair_delta(x, i, y, pick);
      for (std::size_t k = 1; k < cand.size(); ++k) {
        const double d = pair_delta(x, i, y, cand[k]);
        if (d < pick_d) {
          pick = cand[k];
          pick_d = d;
        }
      }
      r.delta[i] = pick_d;
      r.assignment[i] = static_cast<int>(pick);
    }
  }
  double s = 0.0;
  for (double d : r.delta) s += d;
  r.mean = N ? s / static_cast<double>(N) : 0.0;
  return r;
}

template <typename T>
ContextualResult contextual_distance_assigned(const BasicTensor<T>& x_feat, const BasicTensor<T>& y_feat,
                                              const std::vector<int>& assignment) {
  check_features(x_feat, y_feat);
  const PixelSet x = pixel_set(x_feat), y = pixel_set(y_feat);
  const Eigen::Index N = x.unit.rows();
  if (assignment.size() != static_cast<std::size_t>(N)) throw Error("assignment size does not match x pixels");
  ContextualResult r;
  r.delta.assign(N, 1.0);
  r.assignment = assignment;
  double s = 0.0;
  for (Eigen::Index i = 0; i < N; ++i) {
    const int j = assignment[i];
    if (j >= y.unit.rows()) throw Error("assignment entry " + std::to_string(j) + " outside y");
    if (j >= 0) r.delta[i] = pair_delta(x, i, y, j);
    s += r.delta[i];
  }
  r.mean = N ? s / static_cast<double>(N) : 0.0;
  return r;
}

template <typename T>
BasicTensor<T> contextual_distance_backward(const BasicTensor<T>& x_feat, const BasicTensor<T>& y_feat,
                                            const ContextualResult& result, const std::vector<double>& grad_delta) {
  check_features(x_feat, y_feat);
  const PixelSet x = pixel_set(x_feat), y = pixel_set(y_feat);
  const Eigen::Index N = x.unit.rows();
  const int C = x_feat.c();
  if (grad_delta.size() != static_cast<std::size_t>(N) || result.assignment.size() != grad_delta.size()) {
    throw Error("contextual_distance_backward: gradient size does not match x pixels");
  }
  BasicTensor<T> g(x_feat.shape());
  for (Eigen::Index i = 0; i < N; ++i) {
    const int j = result.assignment[i];
    if (j < 0 || x.zero[i] || y.zero[j] || grad_delta[i] == 0.0) continue;
    // d/dx (1 - <x/|x|, y^>) = (x^ <x^, y^> - y^) / |x|
    const double cs = x.unit.row(i).dot(y.unit.row(j));
    for (int c = 0; c < C; ++c) {
      const double d = (x.unit(i, c) * cs - y.unit(j, c)) / x.norm[i];
      g[static_cast<std::size_t>(c) * N + i] = static_cast<T>(grad_delta[i] * d);
    }
  }
  return g;
}

template <typename T>
BasicTensor<T> embed_features(const ConvLayer<T>& embed, const BasicTensor<T>& image) {
  return relu(embed(image));
}

template <typename T>
LossValue<T> reconstruction_loss(const BasicTensor<T>& sr, const BasicTensor<T>& hr, const ConvLayer<T>& embed,
                                 const std::type_identity_t<BasicTensor<T>>* hr_feat, const std::vector<int>* assignment) {
  require_same_shape("reconstruction_loss", sr.shape(), hr.shape());
  LossValue<T> out;
  const BasicTensor<T> diff = gaussian_blur3x3(sr, kReconstructionBlurSigma) - gaussian_blur3x3(hr, kReconstructionBlurSigma);
  std::vector<double> d(diff.values().begin(), diff.values().end());
  out.term1 = mean_abs(d);
  out.grad = gaussian_blur3x3_backward(sign_of(diff, 1.0 / static_cast<double>(diff.size())), kReconstructionBlurSigma);

  const BasicTensor<T> target = hr_feat ? *hr_feat : embed_features(embed, hr);
  const std::size_t n = static_cast<std::size_t>(sr.h()) * sr.w();
  const std::vector<double> w(n, 1.0 / static_cast<double>(n));
  out.term2 = weighted_contextual(sr, embed, target, w, assignment, out.grad, out.assignment);
  out.value = out.term1 + out.term2;
  return out;
}

template <typename T>
LossValue<T> fidelity_loss(const BasicTensor<T>& sr, const BasicTensor<T>& ref, const BasicTensor<T>& confidence,
                           const ConvLayer<T>& embed, const std::type_identity_t<BasicTensor<T>>* ref_feat,
                           const std::vector<int>* assignment) {
  const Shape expect{1, 1, sr.h(), sr.w()};
  if (confidence.shape() != expect) throw ShapeError("fidelity_loss confidence", expect, confidence.shape());
  if (ref.c() != sr.c()) throw ShapeError("fidelity_loss channels", sr.shape(), ref.shape());
  LossValue<T> out;
  out.grad = BasicTensor<T>(sr.shape());
  std::vector<double> w(confidence.size());
  double total = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = std::clamp(static_cast<double>(confidence[i]), 0.0, 1.0);
    total += w[i];
  }
  if (total < kFidelityEps) return out;
  for (double& v : w) v /= total;
  const BasicTensor<T> target = ref_feat ? *ref_feat : embed_features(embed, ref);
  out.term2 = weighted_contextual(sr, embed, target, w, assignment, out.grad, out.assignment);
  out.value = out.term2;
  return out;
}

template <typename T>
LossValue<T> sra_loss(const BasicTensor<T>& sr, const BasicTensor<T>& wide, const BasicTensor<T>& tele,
                      const BasicTensor<T>& confidence, double lambda, const ConvLayer<T>& embed,
                      const std::type_identity_t<BasicTensor<T>>* tele_feat, const std::vector<int>* assignment) {
  if (lambda < 0) throw Error("sra_loss: lambda must be >= 0");
  const Shape expect{wide.n(), wide.c(), wide.h() * 2, wide.w() * 2};
  if (sr.shape() != expect) throw ShapeError("sra_loss: sr must be twice the extent of wide", expect, sr.shape());
  LossValue<T> out;
  const BasicTensor<T> diff = bicubic_resize(sr, Resample::Down2) - wide;
  out.term1 = mean_abs_diff(bicubic_resize(sr, Resample::Down2), wide);
  out.grad = bicubic_resize_backward(sign_of(diff, 1.0 / static_cast<double>(diff.size())), Resample::Down2, sr.shape());
  if (lambda > 0) {
    LossValue<T> fid = fidelity_loss(sr, tele, confidence, embed, tele_feat, assignment);
    out.term2 = lambda * fid.value;
    out.grad += fid.grad * static_cast<T>(lambda);
    out.assignment = std::move(fid.assignment);
  }
  out.value = out.term1 + out.term2;
  return out;
}

template <typename T>
LossValue<T> l1_loss(const BasicTensor<T>& sr, const BasicTensor<T>& hr) {
  require_same_shape("l1_loss", sr.shape(), hr.shape());
  LossValue<T> out;
  out.term1 = mean_abs_diff(sr, hr);
  out.value = out.term1;
  out.grad = sign_of(sr - hr, 1.0 / static_cast<double>(sr.size()));
  return out;
}

#define REFSR_INSTANTIATE(T)                                                                                     \
  template ContextualResult contextual_distance(const BasicTensor<T>&, const BasicTensor<T>&);                    \
  template ContextualResult contextual_distance_assigned(const BasicTensor<T>&, const BasicTensor<T>&,            \
                                                         const std::vector<int>&);                                \
  template BasicTensor<T> contextual_distance_backward(const BasicTensor<T>&, const BasicTensor<T>&,              \
                                                       const ContextualResult&, const std::vector<double>&);      \
  template BasicTensor<T> embed_features(const ConvLayer<T>&, const BasicTensor<T>&);                             \
  template LossValue<T> reconstruction_loss(const BasicTensor<T>&, const BasicTensor<T>&, const ConvLayer<T>&,    \
                                            const BasicTensor<T>*, const std::vector<int>*);                      \
  template LossValue<T> fidelity_loss(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,        \
                                      const ConvLayer<T>&, const BasicTensor<T>*, const std::vector<int>*);       \
  template LossValue<T> sra_loss(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,             \
                                 const BasicTensor<T>&, double, const ConvLayer<T>&, const BasicTensor<T>*,       \
                                 const std::vector<int>*);                                                        \
  template LossValue<T> l1_loss(const BasicTensor<T>&, const BasicTensor<T>&);

REFSR_INSTANTIATE(float)
REFSR_INSTANTIATE(double)

#undef REFSR_INSTANTIATE

}  // namespace refsr

#include "refsr/matching.hpp"

#include <algorithm>
#include <cmath>

namespace refsr {

namespace {

constexpr double kNormEps = 1e-8;

// Patches stored column-wise (one column per patch) with their norms. Scores are
// <p, q> / (|p| |q|) with every sum running sequentially over the patch vector,
// the same arithmetic as brute_force_match, so ties break identically. The inner
// loop runs across patches, which vectorises without reordering any sum.
struct PatchColumns {
  Eigen::Index dim = 0, count = 0;
  std::vector<double> values;  // dim x count
  std::vector<double> norm;
};

template <typename T>
PatchColumns patch_columns(const PatchMatrix<T>& p, const std::vector<int>* subset = nullptr) {
  PatchColumns out;
  out.dim = p.cols();
  out.count = subset ? static_cast<Eigen::Index>(subset->size()) : p.rows();
  out.values.resize(static_cast<std::size_t>(out.dim * out.count));
  out.norm.resize(out.count);
  for (Eigen::Index j = 0; j < out.count; ++j) {
    const Eigen::Index r = subset ? (*subset)[j] : j;
    double ss = 0.0;
    for (Eigen::Index k = 0; k < out.dim; ++k) {
      const double v = static_cast<double>(p(r, k));
      out.values[k * out.count + j] = v;
      ss += v * v;
    }
    out.norm[j] = std::sqrt(ss);
  }
  return out;
}

template <typename T>
double row_norm(const PatchMatrix<T>& p, Eigen::Index r) {
  double ss = 0.0;
  for (Eigen::Index k = 0; k < p.cols(); ++k) ss += static_cast<double>(p(r, k)) * static_cast<double>(p(r, k));
  return std::sqrt(ss);
}

// Scores of LR patch row `r` against every column; `out` holds q.count values.
template <typename T>
void score_row(const PatchMatrix<T>& lr, Eigen::Index r, const PatchColumns& q, double* out) {
  std::fill(out, out + q.count, 0.0);
  for (Eigen::Index k = 0; k < q.dim; ++k) {
    const double pv = static_cast<double>(lr(r, k));
    const double* col = q.values.data() + k * q.count;
    for (Eigen::Index j = 0; j < q.count; ++j) out[j] += pv * col[j];
  }
  const double np = row_norm(lr, r);
  for (Eigen::Index j = 0; j < q.count; ++j)
    out[j] = (np < kNormEps || q.norm[j] < kNormEps) ? 0.0 : out[j] / (np * q.norm[j]);
}

template <typename T>
void check_pair(const BasicTensor<T>& lr, const BasicTensor<T>& ref) {
  if (lr.n() != 1 || ref.n() != 1 || lr.c() != ref.c()) {
    throw ShapeError("matching needs batch-1 features with equal channels", lr.shape(), ref.shape());
  }
}

MatchResult with_grids(MatchResult m, const Shape& lr, const Shape& ref) {
  m.lr_h = lr.h;
  m.lr_w = lr.w;
  m.ref_h = ref.h;
  m.ref_w = ref.w;
  return m;
}

}  // namespace

template <typename T>
BasicTensor<T> MatchResult::confidence_map() const {
  BasicTensor<T> c(Shape{1, 1, lr_h, lr_w});
  for (std::size_t i = 0; i < confidence.size(); ++i) c[i] = static_cast<T>(confidence[i]);
  return c;
}

MatchResult MatchResult::identity(int h, int w) {
  MatchResult m{h, w, h, w, {}, {}};
  m.index.resize(static_cast<std::size_t>(h) * w);
  for (std::size_t i = 0; i < m.index.size(); ++i) m.index[i] = static_cast<int>(i);
  m.confidence.assign(m.index.size(), 1.0f);
  return m;
}

template <typename T>
SimilarityMatrix cosine_similarity_matrix(const PatchMatrix<T>& lr_patches, const PatchMatrix<T>& ref_patches) {
  if (lr_patches.cols() != ref_patches.cols()) {
    throw ShapeError("cosine_similarity_matrix row width",
                     Shape{1, 1, static_cast<int>(lr_patches.rows()), static_cast<int>(lr_patches.cols())},
                     Shape{1, 1, static_cast<int>(ref_patches.rows()), static_cast<int>(ref_patches.cols())});
  }
  const PatchColumns q = patch_columns(ref_patches);
  SimilarityMatrix s(lr_patches.rows(), q.count);
  for (Eigen::Index i = 0; i < lr_patches.rows(); ++i) score_row(lr_patches, i, q, s.row(i).data());
  return s;
}

MatchResult match(const SimilarityMatrix& s) {
  if (s.rows() == 0 || s.cols() == 0) throw Error("match: empty similarity matrix");
  MatchResult m;
  m.lr_h = static_cast<int>(s.rows());
  m.lr_w = 1;
  m.ref_h = static_cast<int>(s.cols());
  m.ref_w = 1;
  m.index.resize(s.rows());
  m.confidence.resize(s.rows());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < s.cols(); ++j) {
      if (s(i, j) > s(i, best)) best = j;
    }
    m.index[i] = static_cast<int>(best);
    m.confidence[i] = static_cast<float>(s(i, best));
  }
  return m;
}

template <typename T>
MatchResult match_features(const BasicTensor<T>& lr_feat, const BasicTensor<T>& ref_feat) {
  check_pair(lr_feat, ref_feat);
  const SimilarityMatrix s = cosine_similarity_matrix<T>(unfold_patches(lr_feat), unfold_patches(ref_feat));
  return with_grids(match(s), lr_feat.shape(), ref_feat.shape());
}

std::size_t tiled_peak_similarity_bytes(int lr_h, int lr_w, int ref_h, int ref_w, int tile, int margin) {
  // Largest block is tile x tile LR positions against the widest Ref window.
  const auto window = [&](int lr, int ref) {
    const int span = (tile * ref + lr - 1) / lr + 1;
    return std::min(ref, span + 2 * margin);
  };
  const std::size_t rows = static_cast<std::size_t>(std::min(tile, lr_h)) * std::min(tile, lr_w);
  const std::size_t cols = static_cast<std::size_t>(window(lr_h, ref_h)) * window(lr_w, ref_w);
  return rows * cols * sizeof(double);
}

template <typename T>
MatchResult tiled_match(const BasicTensor<T>& lr_feat, const BasicTensor<T>& ref_feat, int tile, int margin) {
  check_pair(lr_feat, ref_feat);
  if (tile < 1 || margin < 0) throw Error("tiled_match: tile must be >= 1 and margin >= 0");
  const PatchMatrix<T> a = unfold_patches(lr_feat);
  const PatchMatrix<T> b = unfold_patches(ref_feat);
  const int H = lr_feat.h(), W = lr_feat.w(), RH = ref_feat.h(), RW = ref_feat.w();
  MatchResult m;
  m.index.assign(static_cast<std::size_t>(H) * W, 0);
  m.confidence.assign(m.index.size(), 0.0f);
  SimilarityMatrix block;
  std::vector<int> cols;
  for (int by = 0; by < H; by += tile) {
    const int y1 = std::min(H, by + tile);
    const int ry0 = std::max(0, static_cast<int>(static_cast<long>(by) * RH / H) - margin);
    const int ry1 = std::min(RH, static_cast<int>((static_cast<long>(y1) * RH + H - 1) / H) + margin);
    for (int bx = 0; bx < W; bx += tile) {
      const int x1 = std::min(W, bx + tile);
      const int rx0 = std::max(0, static_cast<int>(static_cast<long>(bx) * RW / W) - margin);
      const int rx1 = std::min(RW, static_cast<int>((static_cast<long>(x1) * RW + W - 1) / W) + margin);
      cols.clear();
      for (int ry = ry0; ry < ry1; ++ry)
        for (int rx = rx0; rx < rx1; ++rx) cols.push_back(ry * RW + rx);
      const PatchColumns window = patch_columns(b, &cols);
      block.resize((y1 - by) * (x1 - bx), static_cast<Eigen::Index>(cols.size()));
      Eigen::Index r = 0;
      for (int y = by; y < y1; ++y)
        for (int x = bx; x < x1; ++x, ++r) score_row(a, static_cast<Eigen::Index>(y) * W + x, window, block.row(r).data());
      r = 0;
      for (int y = by; y < y1; ++y) {
        for (int x = bx; x < x1; ++x, ++r) {
          std::size_t best = 0;
          for (std::size_t j = 1; j < cols.size(); ++j) {
            if (block(r, j) > block(r, best)) best = j;
          }
          const std::size_t i = static_cast<std::size_t>(y) * W + x;
          m.index[i] = cols[best];
          m.confidence[i] = static_cast<float>(block(r, best));
        }
      }
    }
  }
  return with_grids(std::move(m), lr_feat.shape(), ref_feat.shape());
}

template <typename T>
MatchResult brute_force_match(const BasicTensor<T>& lr_feat, const BasicTensor<T>& ref_feat) {
  check_pair(lr_feat, ref_feat);
  const int C = lr_feat.c();
  const int H = lr_feat.h(), W = lr_feat.w(), RH = ref_feat.h(), RW = ref_feat.w();
  auto patch = [C](const BasicTensor<T>& f, int cy, int cx) {
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(C) * 9);
    for (int c = 0; c < C; ++c)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          v.push_back(f(0, c, reflect_index(cy + dy, f.h()), reflect_index(cx + dx, f.w())));
    return v;
  };
  std::vector<std::vector<double>> ref;
  for (int y = 0; y < RH; ++y)
    for (int x = 0; x < RW; ++x) ref.push_back(patch(ref_feat, y, x));
  MatchResult m;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const std::vector<double> p = patch(lr_feat, y, x);
      int best = -1;
      double best_s = 0.0;
      for (std::size_t j = 0; j < ref.size(); ++j) {
        double dot = 0.0, np = 0.0, nq = 0.0;
        for (std::size_t k = 0; k < p.size(); ++k) {
          dot += p[k] * ref[j][k];
          np += p[k] * p[k];
          nq += ref[j][k] * ref[j][k];
        }
        np = std::sqrt(np);
        nq = std::sqrt(nq);
        const double s = (np < kNormEps || nq < kNormEps) ? 0.0 : dot / (np * nq);
        if (best < 0 || s > best_s) {
          best = static_cast<int>(j);
          best_s = s;
        }
      }
      m.index.push_back(best);
      m.confidence.push_back(static_cast<float>(best_s));
    }
  }
  return with_grids(std::move(m), lr_feat.shape(), ref_feat.shape());
}

#define REFSR_INSTANTIATE(T)                                                                              \
  template BasicTensor<T> MatchResult::confidence_map<T>() const;                                         \
  template SimilarityMatrix cosine_similarity_matrix(const PatchMatrix<T>&, const PatchMatrix<T>&);       \
  template MatchResult match_features(const BasicTensor<T>&, const BasicTensor<T>&);                      \
  template MatchResult tiled_match(const BasicTensor<T>&, const BasicTensor<T>&, int, int);               \
  template MatchResult brute_force_match(const BasicTensor<T>&, const BasicTensor<T>&);

REFSR_INSTANTIATE(float)
REFSR_INSTANTIATE(double)

#undef REFSR_INSTANTIATE

}  // namespace refsr

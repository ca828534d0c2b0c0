#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Core>

#include "refsr/kernels.hpp"
#include "refsr/tensor.hpp"

namespace refsr {

/// Nearest reference patch for every LR patch position.
struct MatchResult {
  int lr_h = 0;   ///< LR patch grid height
  int lr_w = 0;
  int ref_h = 0;  ///< Ref patch grid height
  int ref_w = 0;
  std::vector<int> index;         ///< P: row-major Ref patch index per LR position
  std::vector<float> confidence;  ///< C: cosine similarity of the selected pair

  std::size_t size() const { return index.size(); }
  /// Confidence as a (1, 1, lr_h, lr_w) map.
  template <typename T>
  BasicTensor<T> confidence_map() const;
  /// Index map for the identity correspondence on an h x w grid (confidence 1).
  static MatchResult identity(int h, int w);
};

using SimilarityMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// S(i, j) = <p_i, q_j> / (|p_i| |q_j|); rows with norm < 1e-8 score 0 against everything.
template <typename T>
SimilarityMatrix cosine_similarity_matrix(const PatchMatrix<T>& lr_patches, const PatchMatrix<T>& ref_patches);

/// Row-wise argmax (ties to the lowest column) and max.
MatchResult match(const SimilarityMatrix& s);

/// Dense 3x3 patch matching of two batch-1 feature maps with equal channel counts.
template <typename T>
MatchResult match_features(const BasicTensor<T>& lr_feat, const BasicTensor<T>& ref_feat);

/// Block-restricted search: each tile x tile block of LR positions only scans the
/// proportionally corresponding Ref region grown by `margin` positions.
template <typename T>
MatchResult tiled_match(const BasicTensor<T>& lr_feat, const BasicTensor<T>& ref_feat, int tile = 32,
                        int margin = 8);

/// Bytes of similarity storage live at once in tiled_match for these extents.
std::size_t tiled_peak_similarity_bytes(int lr_h, int lr_w, int ref_h, int ref_w, int tile, int margin);

/// Naive reference implementation (test oracle).
template <typename T>
MatchResult brute_force_match(const BasicTensor<T>& lr_feat, const BasicTensor<T>& ref_feat);

}  // namespace refsr

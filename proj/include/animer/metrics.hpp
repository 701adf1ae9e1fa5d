#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "animer/tensor.hpp"

namespace animer::metric {

/// Similarity transform x -> s R x + t with det(R) = +1.
struct Alignment {
  double scale = 1.0;
  Tensor rotation;     // 3x3
  Tensor translation;  // 3

  /// Applies the transform to (n,3) row vectors.
  Tensor apply(const Tensor& points) const;
};

/// Least-squares similarity alignment of X onto Y (n >= 3, X non-degenerate).
Alignment procrustes_align(const Tensor& X, const Tensor& Y);

/// Mean Euclidean point error after Procrustes alignment of pred onto gt.
/// Units follow the inputs (callers scale meters by 1000 for mm).
double pa_point_error(const Tensor& pred, const Tensor& gt);

/// PCK with silhouette-area normalization: correct iff
/// |pred - gt| <= threshold * sqrt(mask area). Invisible keypoints excluded.
double pck_silhouette(const Tensor& pred2d, const Tensor& gt2d,
                      const std::vector<std::uint8_t>& visibility,
                      const std::vector<std::uint8_t>& mask, double threshold);

/// PCK@HTH: fixed threshold of half the 2D head-to-tail distance.
double pck_hth(const Tensor& pred2d, const Tensor& gt2d,
               const std::vector<std::uint8_t>& visibility, std::size_t head_index,
               std::size_t tail_index);

/// Mean over the grid of PCK(t) where keypoint i is correct iff
/// distances[i] <= t * normalizers[i].
double auc_from_pck(const std::vector<double>& distances, const std::vector<double>& normalizers,
                    const std::vector<double>& grid);

/// 100 uniform thresholds 0.01, 0.02, ..., 1.00.
std::vector<double> auc_default_grid();

/// Symmetric Chamfer distance after Procrustes alignment. Matched vertex sets
/// (n == m) align directly; differing topologies use 20 rounds of
/// ICP-style alternating nearest-neighbour alignment.
double chamfer_pa(const Tensor& pred_points, const Tensor& gt_points);

struct MetricsReport {
  double pa_mpjpe_mm = 0.0;
  double pa_mpvpe_mm = 0.0;
  double pck_010 = 0.0;
  double pck_015 = 0.0;
  double pck_hth = 0.0;
  double auc = 0.0;
  double pa_cd_mm = 0.0;
  std::size_t n_samples = 0;
  std::size_t n_skipped = 0;  // zero-area masks / coincident head-tail pairs

  std::string to_table() const;
  nlohmann::json to_json() const;
};

}  // namespace animer::metric

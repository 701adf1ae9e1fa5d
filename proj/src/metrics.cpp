#include "animer/metrics.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace animer::metric {

namespace {

void check_points(const Tensor& p, const char* what) {
  if (p.rank() != 2 || p.dim(1) != 3)
    throw std::invalid_argument(std::string(what) + ": expected (n,3) points");
  if (p.dim(0) < 3) throw std::invalid_argument(std::string(what) + ": need at least 3 points");
}

Eigen::MatrixXd centered(const Tensor& p, Eigen::RowVector3d& mean) {
  const std::size_t n = p.dim(0);
  Eigen::MatrixXd m(n, 3);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < 3; ++c) m(r, c) = p.at(r, c);
  mean = m.colwise().mean();
  m.rowwise() -= mean;
  return m;
}

double nearest_sq(const Eigen::RowVector3d& x, const Eigen::MatrixXd& cloud) {
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index r = 0; r < cloud.rows(); ++r)
    best = std::min(best, (cloud.row(r) - x).squaredNorm());
  return best;
}

}  // namespace

Tensor Alignment::apply(const Tensor& points) const {
  check_points(points, "Alignment::apply");
  const std::size_t n = points.dim(0);
  Tensor out({n, 3});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < 3; ++c) {
      double acc = translation[c];
      for (std::size_t k = 0; k < 3; ++k) acc += scale * rotation.at(c, k) * points.at(r, k);
      out.at(r, c) = acc;
    }
  return out;
}

Alignment procrustes_align(const Tensor& X, const Tensor& Y) {
  check_points(X, "procrustes_align/X");
  check_points(Y, "procrustes_align/Y");
  if (X.dim(0) != Y.dim(0))
    throw std::invalid_argument("procrustes_align: point counts differ");

  Eigen::RowVector3d mux, muy;
  Eigen::MatrixXd xc = centered(X, mux);
  Eigen::MatrixXd yc = centered(Y, muy);
  const double var_x = xc.squaredNorm();
  if (var_x <= 1e-24) throw std::invalid_argument("procrustes_align: degenerate (coincident) X");

  Eigen::Matrix3d cov = xc.transpose() * yc;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = svd.matrixU(), v = svd.matrixV();
  Eigen::Vector3d s = svd.singularValues();
  Eigen::Vector3d d(1, 1, 1);
  if ((v * u.transpose()).determinant() < 0) d(2) = -1;  // reflection correction
  Eigen::Matrix3d rot = v * d.asDiagonal() * u.transpose();
  const double scale = (s(0) + s(1) + d(2) * s(2)) / var_x;

  Alignment a;
  a.scale = scale;
  a.rotation = Tensor({3, 3});
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) a.rotation.at(r, c) = rot(r, c);
  Eigen::RowVector3d t = muy - scale * (rot * mux.transpose()).transpose();
  a.translation = Tensor({3}, {t(0), t(1), t(2)});
  return a;
}

double pa_point_error(const Tensor& pred, const Tensor& gt) {
  auto aligned = procrustes_align(pred, gt).apply(pred);
  double total = 0;
  for (std::size_t r = 0; r < gt.dim(0); ++r) {
    double d2 = 0;
    for (std::size_t c = 0; c < 3; ++c) {
      const double d = aligned.at(r, c) - gt.at(r, c);
      d2 += d * d;
    }
    total += std::sqrt(d2);
  }
  return total / static_cast<double>(gt.dim(0));
}

namespace {

double pck_fixed(const Tensor& pred2d, const Tensor& gt2d,
                 const std::vector<std::uint8_t>& visibility, double limit) {
  if (pred2d.dim(0) != gt2d.dim(0) || visibility.size() != gt2d.dim(0))
    throw std::invalid_argument("pck: keypoint count mismatch");
  std::size_t visible = 0, correct = 0;
  for (std::size_t i = 0; i < visibility.size(); ++i) {
    if (!visibility[i]) continue;
    ++visible;
    const double dx = pred2d.at(i, 0) - gt2d.at(i, 0);
    const double dy = pred2d.at(i, 1) - gt2d.at(i, 1);
    if (std::sqrt(dx * dx + dy * dy) <= limit) ++correct;
  }
  if (visible == 0) throw std::invalid_argument("pck: no visible keypoints");
  return static_cast<double>(correct) / static_cast<double>(visible);
}

}  // namespace

double pck_silhouette(const Tensor& pred2d, const Tensor& gt2d,
                      const std::vector<std::uint8_t>& visibility,
                      const std::vector<std::uint8_t>& mask, double threshold) {
  std::size_t area = 0;
  for (auto m : mask) area += m != 0;
  if (area == 0) throw std::invalid_argument("pck: zero-area silhouette");
  return pck_fixed(pred2d, gt2d, visibility, threshold * std::sqrt(double(area)));
}

double pck_hth(const Tensor& pred2d, const Tensor& gt2d,
               const std::vector<std::uint8_t>& visibility, std::size_t head_index,
               std::size_t tail_index) {
  const double dx = gt2d.at(head_index, 0) - gt2d.at(tail_index, 0);
  const double dy = gt2d.at(head_index, 1) - gt2d.at(tail_index, 1);
  const double hth = std::sqrt(dx * dx + dy * dy);
  if (hth <= 1e-12) throw std::invalid_argument("pck: coincident head and tail");
  return pck_fixed(pred2d, gt2d, visibility, 0.5 * hth);
}

double auc_from_pck(const std::vector<double>& distances, const std::vector<double>& normalizers,
                    const std::vector<double>& grid) {
  if (grid.empty()) throw std::invalid_argument("auc: empty threshold grid");
  if (distances.size() != normalizers.size() || distances.empty())
    throw std::invalid_argument("auc: distance/normalizer mismatch");
  double acc = 0;
  for (double t : grid) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < distances.size(); ++i)
      if (distances[i] <= t * normalizers[i]) ++correct;
    acc += static_cast<double>(correct) / static_cast<double>(distances.size());
  }
  return acc / static_cast<double>(grid.size());
}

std::vector<double> auc_default_grid() {
  std::vector<double> g(100);
  for (int i = 0; i < 100; ++i) g[i] = 0.01 * (i + 1);
  return g;
}

double chamfer_pa(const Tensor& pred_points, const Tensor& gt_points) {
  check_points(pred_points, "chamfer_pa/pred");
  check_points(gt_points, "chamfer_pa/gt");
  const std::size_t n = pred_points.dim(0), m = gt_points.dim(0);

  Eigen::RowVector3d mup, mug;
  Eigen::MatrixXd pc = centered(pred_points, mup);
  Eigen::MatrixXd gc = centered(gt_points, mug);
  if (pc.squaredNorm() <= 1e-24 || gc.squaredNorm() <= 1e-24)
    throw std::invalid_argument("chamfer_pa: degenerate point cloud");

  Eigen::MatrixXd aligned(n, 3), gt_frame(m, 3);
  if (n == m) {
    // matched vertex sets: one direct alignment in the original gt frame
    Tensor t = procrustes_align(pred_points, gt_points).apply(pred_points);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < 3; ++c) aligned(r, c) = t.at(r, c);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < 3; ++c) gt_frame(r, c) = gt_points.at(r, c);
  } else {
    // ICP-style alternating alignment in the centered gt frame,
    // initialized by centroid + RMS-scale matching
    gt_frame = gc;
    const double s =
        std::sqrt(gc.squaredNorm() / double(m)) / std::sqrt(pc.squaredNorm() / double(n));
    aligned = s * pc;
    for (int iter = 0; iter < 20; ++iter) {
      Tensor matched({n, 3}), current({n, 3});
      for (std::size_t r = 0; r < n; ++r) {
        double best = std::numeric_limits<double>::infinity();
        Eigen::Index arg = 0;
        for (Eigen::Index q = 0; q < gt_frame.rows(); ++q) {
          const double d2 = (gt_frame.row(q) - aligned.row(r)).squaredNorm();
          if (d2 < best) {
            best = d2;
            arg = q;
          }
        }
        for (std::size_t c = 0; c < 3; ++c) {
          matched.at(r, c) = gt_frame(arg, c);
          current.at(r, c) = aligned(r, c);
        }
      }
      Tensor moved = procrustes_align(current, matched).apply(current);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < 3; ++c) aligned(r, c) = moved.at(r, c);
    }
  }

  double fwd = 0, bwd = 0;
  for (std::size_t r = 0; r < n; ++r)
    fwd += std::sqrt(nearest_sq(aligned.row(r), gt_frame));
  for (std::size_t r = 0; r < m; ++r)
    bwd += std::sqrt(nearest_sq(gt_frame.row(r), aligned));
  return fwd / double(n) + bwd / double(m);
}

std::string MetricsReport::to_table() const {
  std::ostringstream os;
  os << "pa_mpjpe_mm " << pa_mpjpe_mm << "\n"
     << "pa_mpvpe_mm " << pa_mpvpe_mm << "\n"
     << "pck@0.10    " << pck_010 << "\n"
     << "pck@0.15    " << pck_015 << "\n"
     << "pck@hth     " << pck_hth << "\n"
     << "auc         " << auc << "\n"
     << "pa_cd_mm    " << pa_cd_mm << "\n"
     << "samples     " << n_samples << "\n"
     << "skipped     " << n_skipped << "\n";
  return os.str();
}

nlohmann::json MetricsReport::to_json() const {
  return nlohmann::json{{"pa_mpjpe_mm", pa_mpjpe_mm}, {"pa_mpvpe_mm", pa_mpvpe_mm},
                        {"pck_0.10", pck_010},        {"pck_0.15", pck_015},
                        {"pck_hth", pck_hth},         {"auc", auc},
                        {"pa_cd_mm", pa_cd_mm},       {"n_samples", n_samples},
                        {"n_skipped", n_skipped}};
}

}  // namespace animer::metric

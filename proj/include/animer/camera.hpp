#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <vector>

#include "animer/autodiff.hpp"
#include "animer/tensor.hpp"

namespace animer::camera {

/// Fixed-intrinsics camera: x = Pi(K(X + T)).
struct CameraSpec {
  double focal = 0.0;                      // pixels
  std::array<double, 2> principal{0, 0};   // pixels
  std::array<double, 3> translation{0, 0, 0};  // meters
  std::size_t height = 0, width = 0;

  /// Default intrinsics: f = 2 max(H, W), principal point at image center.
  static CameraSpec with_defaults(std::size_t height, std::size_t width) {
    CameraSpec c;
    c.height = height;
    c.width = width;
    c.focal = 2.0 * static_cast<double>(height > width ? height : width);
    c.principal = {static_cast<double>(width) / 2.0, static_cast<double>(height) / 2.0};
    return c;
  }
};

struct RenderBuffers {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> mask;  // 0/1
  std::vector<double> depth;       // +inf where mask == 0

  static constexpr double kBackground = std::numeric_limits<double>::infinity();
};

struct Projection {
  Tensor pixels;            // n x 2
  std::vector<bool> valid;  // per point, false when depth <= 1e-6
};

Projection project(const Tensor& points, const CameraSpec& cam);

/// Differentiable projection of (n,3) points through the fixed camera.
ad::Value project_graph(ad::Graph& g, ad::Value points, const CameraSpec& cam);

/// Z-buffered triangle fill with top-left edge rule; depth is
/// perspective-correct camera-space z. Triangles with any vertex at or
/// behind z = 1e-6 are skipped.
RenderBuffers rasterize(const Tensor& vertices, const std::vector<std::array<std::size_t, 3>>& faces,
                        const CameraSpec& cam);

/// visible iff d_k <= d_p + tolerance at the nearest-pixel depth lookup;
/// keypoints projecting off-image are 0.
std::vector<std::uint8_t> keypoint_visibility(const Tensor& keypoints3d, const CameraSpec& cam,
                                              const RenderBuffers& buffers,
                                              double tolerance = 1e-4);

/// |a AND b| / |a OR b|; 1 when both masks are empty.
double mask_iou(const std::vector<std::uint8_t>& a, std::size_t ah, std::size_t aw,
                const std::vector<std::uint8_t>& b, std::size_t bh, std::size_t bw);

/// Per-pixel signed distance (pixels, positive inside) to the union of the
/// projected triangles, clamped to [-clamp, clamp]. Output is (H*W). The soft
/// silhouette is sigmoid(sharpness * distance) of this field.
ad::Value silhouette_distance_graph(ad::Graph& g, ad::Value verts2d,
                                    std::vector<std::array<std::size_t, 3>> faces,
                                    std::size_t height, std::size_t width, double clamp = 0.5);

inline constexpr double kSilhouetteSharpness = 50.0;  // per pixel

}  // namespace animer::camera

#include "animer/camera.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace animer::camera {

namespace {
constexpr double kMinDepth = 1e-6;
}

Projection project(const Tensor& points, const CameraSpec& cam) {
  if (points.rank() != 2 || points.dim(1) != 3)
    throw std::invalid_argument("project expects n x 3 points");
  const std::size_t n = points.dim(0);
  Projection out{Tensor({n, 2}), std::vector<bool>(n, true)};
  for (std::size_t i = 0; i < n; ++i) {
    const double x = points.at(i, 0) + cam.translation[0];
    const double y = points.at(i, 1) + cam.translation[1];
    const double z = points.at(i, 2) + cam.translation[2];
    if (z <= kMinDepth) {
      out.valid[i] = false;
      out.pixels.at(i, 0) = 0.0;
      out.pixels.at(i, 1) = 0.0;
      continue;
    }
    out.pixels.at(i, 0) = cam.focal * x / z + cam.principal[0];
    out.pixels.at(i, 1) = cam.focal * y / z + cam.principal[1];
  }
  return out;
}

ad::Value project_graph(ad::Graph& g, ad::Value points, const CameraSpec& cam) {
  const std::size_t n = points.shape()[0];
  auto t_row =
      g.constant(Tensor({1, 3}, {cam.translation[0], cam.translation[1], cam.translation[2]}));
  auto cam_pts = ad::add(points, t_row);
  auto xy = ad::slice_cols(cam_pts, 0, 2);
  auto z = ad::slice_cols(cam_pts, 2, 1);
  auto c_row = g.constant(Tensor({1, 2}, {cam.principal[0], cam.principal[1]}));
  (void)n;
  return ad::add(ad::scale(ad::divide(xy, z), cam.focal), c_row);
}

RenderBuffers rasterize(const Tensor& vertices,
                        const std::vector<std::array<std::size_t, 3>>& faces,
                        const CameraSpec& cam) {
  if (cam.height == 0 || cam.width == 0 || cam.focal <= 0.0)
    throw std::invalid_argument("rasterize: invalid camera");
  RenderBuffers buf;
  buf.height = cam.height;
  buf.width = cam.width;
  buf.mask.assign(cam.height * cam.width, 0);
  buf.depth.assign(cam.height * cam.width, RenderBuffers::kBackground);

  Projection proj = project(vertices, cam);
  const std::size_t n = vertices.dim(0);
  std::vector<double> inv_z(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    if (proj.valid[i]) inv_z[i] = 1.0 / (vertices.at(i, 2) + cam.translation[2]);

  const double W = static_cast<double>(cam.width), H = static_cast<double>(cam.height);
  for (const auto& f : faces) {
    if (!proj.valid[f[0]] || !proj.valid[f[1]] || !proj.valid[f[2]]) continue;
    double ax = proj.pixels.at(f[0], 0), ay = proj.pixels.at(f[0], 1);
    double bx = proj.pixels.at(f[1], 0), by = proj.pixels.at(f[1], 1);
    double cx = proj.pixels.at(f[2], 0), cy = proj.pixels.at(f[2], 1);
    double wa = inv_z[f[0]], wb = inv_z[f[1]], wc = inv_z[f[2]];

    double area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax);
    if (area == 0.0) continue;
    if (area < 0.0) {  // normalize winding to counter-clockwise
      std::swap(bx, cx);
      std::swap(by, cy);
      std::swap(wb, wc);
      area = -area;
    }

    const int x0 = std::max(0, static_cast<int>(std::floor(std::min({ax, bx, cx}) - 0.5)));
    const int x1 = std::min(static_cast<int>(W) - 1,
                            static_cast<int>(std::ceil(std::max({ax, bx, cx}) + 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min({ay, by, cy}) - 0.5)));
    const int y1 = std::min(static_cast<int>(H) - 1,
                            static_cast<int>(std::ceil(std::max({ay, by, cy}) + 0.5)));

    // top-left rule: an edge counts when strictly inside, or on the edge if
    // the edge is a top or left edge of the CCW triangle
    auto edge_accepts = [](double w, double ex, double ey) {
      if (w > 0.0) return true;
      if (w < 0.0) return false;
      return (ey < 0.0) || (ey == 0.0 && ex > 0.0);
    };

    for (int py = y0; py <= y1; ++py) {
      for (int px = x0; px <= x1; ++px) {
        const double sx = px + 0.5, sy = py + 0.5;
        const double w0 = (bx - ax) * (sy - ay) - (by - ay) * (sx - ax);
        const double w1 = (cx - bx) * (sy - by) - (cy - by) * (sx - bx);
        const double w2 = (ax - cx) * (sy - cy) - (ay - cy) * (sx - cx);
        if (!(edge_accepts(w0, bx - ax, by - ay) && edge_accepts(w1, cx - bx, cy - by) &&
              edge_accepts(w2, ax - cx, ay - cy)))
          continue;
        const double l0 = w1 / area;  // weight of a
        const double l1 = w2 / area;  // weight of b
        const double l2 = w0 / area;  // weight of c
        const double z = 1.0 / (l0 * wa + l1 * wb + l2 * wc);
        const std::size_t idx = static_cast<std::size_t>(py) * cam.width + px;
        if (z < buf.depth[idx]) {
          buf.depth[idx] = z;
          buf.mask[idx] = 1;
        }
      }
    }
  }
  return buf;
}

std::vector<std::uint8_t> keypoint_visibility(const Tensor& keypoints3d, const CameraSpec& cam,
                                              const RenderBuffers& buffers, double tolerance) {
  Projection proj = project(keypoints3d, cam);
  const std::size_t n = keypoints3d.dim(0);
  std::vector<std::uint8_t> flags(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!proj.valid[i]) continue;
    const int px = static_cast<int>(std::floor(proj.pixels.at(i, 0)));
    const int py = static_cast<int>(std::floor(proj.pixels.at(i, 1)));
    if (px < 0 || py < 0 || px >= static_cast<int>(buffers.width) ||
        py >= static_cast<int>(buffers.height))
      continue;
    const double dk = keypoints3d.at(i, 2) + cam.translation[2];
    const double dp = buffers.depth[static_cast<std::size_t>(py) * buffers.width + px];
    if (dk <= dp + tolerance) flags[i] = 1;
  }
  return flags;
}

double mask_iou(const std::vector<std::uint8_t>& a, std::size_t ah, std::size_t aw,
                const std::vector<std::uint8_t>& b, std::size_t bh, std::size_t bw) {
  if (ah != bh || aw != bw) throw std::invalid_argument("mask_iou: resolution mismatch");
  if (a.size() != ah * aw || b.size() != bh * bw)
    throw std::invalid_argument("mask_iou: payload size mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool va = a[i] != 0, vb = b[i] != 0;
    inter += (va && vb);
    uni += (va || vb);
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// ---- differentiable silhouette ----------------------------------------------

namespace {

struct NearestFeature {
  double dist = 0.0;      // unsigned distance to the triangle boundary
  bool inside = false;
  int kind = 0;           // 0 = edge, 1 = vertex
  int e0 = 0, e1 = 0;     // triangle-local endpoints for the edge case
  int v = 0;              // triangle-local vertex for the vertex case
  double t = 0.0;         // foot parameter along the edge
};

NearestFeature nearest_on_triangle(double px, double py, const double x[3], const double y[3]) {
  NearestFeature best;
  best.dist = std::numeric_limits<double>::infinity();
  int pos = 0, neg = 0;
  for (int e = 0; e < 3; ++e) {
    const int a = e, b = (e + 1) % 3;
    const double ex = x[b] - x[a], ey = y[b] - y[a];
    const double side = ex * (py - y[a]) - ey * (px - x[a]);
    (side >= 0.0 ? pos : neg)++;
    const double len2 = ex * ex + ey * ey;
    double t = len2 > 0.0 ? ((px - x[a]) * ex + (py - y[a]) * ey) / len2 : 0.0;
    if (t >= 0.0 && t <= 1.0 && len2 > 0.0) {
      const double qx = x[a] + t * ex, qy = y[a] + t * ey;
      const double d = std::hypot(px - qx, py - qy);
      if (d < best.dist) {
        best.dist = d;
        best.kind = 0;
        best.e0 = a;
        best.e1 = b;
        best.t = t;
      }
    }
    const double dv = std::hypot(px - x[a], py - y[a]);
    if (dv < best.dist) {
      best.dist = dv;
      best.kind = 1;
      best.v = a;
    }
  }
  best.inside = (pos == 3) || (neg == 3);
  return best;
}

}  // namespace

ad::Value silhouette_distance_graph(ad::Graph& g, ad::Value verts2d,
                                    std::vector<std::array<std::size_t, 3>> faces,
                                    std::size_t height, std::size_t width, double clamp) {
  if (verts2d.shape().size() != 2 || verts2d.shape()[1] != 2)
    throw std::invalid_argument("silhouette_distance: expects n x 2 vertices");
  const std::size_t n = verts2d.shape()[0];

  // Visits, per triangle, only the pixels within clamp of its bbox; farther
  // pixels clamp to -clamp exactly, so the truncation is lossless.
  auto scan = [faces, height, width, clamp](const Tensor& v, auto&& visit) {
    for (std::size_t fi = 0; fi < faces.size(); ++fi) {
      const auto& f = faces[fi];
      double x[3], y[3];
      for (int k = 0; k < 3; ++k) {
        x[k] = v.at(f[k], 0);
        y[k] = v.at(f[k], 1);
      }
      const double margin = clamp + 1.0;
      const int x0 = std::max(0, static_cast<int>(std::floor(std::min({x[0], x[1], x[2]}) - margin)));
      const int x1 = std::min(static_cast<int>(width) - 1,
                              static_cast<int>(std::ceil(std::max({x[0], x[1], x[2]}) + margin)));
      const int y0 = std::max(0, static_cast<int>(std::floor(std::min({y[0], y[1], y[2]}) - margin)));
      const int y1 = std::min(static_cast<int>(height) - 1,
                              static_cast<int>(std::ceil(std::max({y[0], y[1], y[2]}) + margin)));
      for (int py = y0; py <= y1; ++py)
        for (int px = x0; px <= x1; ++px) {
          NearestFeature nf =
              nearest_on_triangle(px + 0.5, py + 0.5, x, y);
          const double signed_d = nf.inside ? nf.dist : -nf.dist;
          visit(static_cast<std::size_t>(py) * width + px, fi, nf, signed_d);
        }
    }
  };

  return g.op(
      "silhouette_distance", {verts2d}, {height * width},
      [scan, height, width, clamp](const std::vector<const Tensor*>& in) {
        Tensor out = Tensor::full({height * width}, -clamp);
        scan(*in[0], [&](std::size_t idx, std::size_t, const NearestFeature&, double d) {
          out[idx] = std::max(out[idx], std::min(d, clamp));
        });
        return out;
      },
      [scan, faces, n, height, width, clamp](const std::vector<const Tensor*>& in, const Tensor& out,
                                             const Tensor& grad_out) {
        const Tensor& v = *in[0];
        // recover, per pixel, the triangle and feature achieving the max
        std::vector<double> best(height * width, -clamp);
        std::vector<std::int64_t> best_face(height * width, -1);
        std::vector<NearestFeature> best_nf(height * width);
        scan(v, [&](std::size_t idx, std::size_t fi, const NearestFeature& nf, double d) {
          const double clamped = std::max(-clamp, std::min(d, clamp));
          if (clamped > best[idx]) {
            best[idx] = clamped;
            best_face[idx] = static_cast<std::int64_t>(fi);
            best_nf[idx] = nf;
          }
        });
        Tensor gv({n, 2});
        for (std::size_t idx = 0; idx < height * width; ++idx) {
          if (best_face[idx] < 0) continue;
          if (best[idx] <= -clamp || best[idx] >= clamp) continue;  // saturated
          const double go = grad_out[idx];
          if (go == 0.0) continue;
          const auto& f = faces[static_cast<std::size_t>(best_face[idx])];
          const NearestFeature& nf = best_nf[idx];
          const double px = static_cast<double>(idx % width) + 0.5;
          const double py = static_cast<double>(idx / width) + 0.5;
          const double sign = nf.inside ? 1.0 : -1.0;
          if (nf.kind == 1) {
            const std::size_t vi = f[nf.v];
            const double dx = px - v.at(vi, 0), dy = py - v.at(vi, 1);
            const double d = std::hypot(dx, dy);
            if (d > 0.0) {
              gv.at(vi, 0) += go * sign * (-dx / d);
              gv.at(vi, 1) += go * sign * (-dy / d);
            }
          } else {
            const std::size_t a = f[nf.e0], b = f[nf.e1];
            const double qx = v.at(a, 0) + nf.t * (v.at(b, 0) - v.at(a, 0));
            const double qy = v.at(a, 1) + nf.t * (v.at(b, 1) - v.at(a, 1));
            const double dx = px - qx, dy = py - qy;
            const double d = std::hypot(dx, dy);
            if (d > 0.0) {
              const double ux = -dx / d, uy = -dy / d;
              gv.at(a, 0) += go * sign * (1.0 - nf.t) * ux;
              gv.at(a, 1) += go * sign * (1.0 - nf.t) * uy;
              gv.at(b, 0) += go * sign * nf.t * ux;
              gv.at(b, 1) += go * sign * nf.t * uy;
            }
          }
        }
        (void)out;
        return std::vector<Tensor>{std::move(gv)};
      });
}

}  // namespace animer::camera

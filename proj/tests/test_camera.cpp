#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "animer/bodymodel.hpp"
#include "animer/camera.hpp"
#include "animer/rng.hpp"

using namespace animer;
using namespace animer::camera;

namespace {

CameraSpec test_cam(double focal = 1000.0, double tz = 5.0, std::size_t hw = 256) {
  CameraSpec c;
  c.focal = focal;
  c.principal = {128.0, 128.0};
  c.translation = {0.0, 0.0, tz};
  c.height = hw;
  c.width = hw;
  return c;
}

// front-parallel triangle at depth z (camera space after translation)
Tensor tri(double cx, double cy, double half, double z, double tz) {
  return Tensor({3, 3}, {cx - half, cy + half, z - tz,
                         cx + half, cy + half, z - tz,
                         cx, cy - half, z - tz});
}

}  // namespace

TEST_CASE("project: optical axis hits the principal point") {
  auto p = project(Tensor({1, 3}, {0, 0, 0}), test_cam());
  CHECK(p.valid[0]);
  CHECK(p.pixels.at(0, 0) == 128.0);
  CHECK(p.pixels.at(0, 1) == 128.0);
}

TEST_CASE("project: hand-evaluated offset") {
  auto p = project(Tensor({1, 3}, {1, 0, 0}), test_cam());
  CHECK(p.pixels.at(0, 0) == doctest::Approx(1000.0 / 5.0 + 128.0));  // 328
  CHECK(p.pixels.at(0, 1) == 128.0);
}

TEST_CASE("project: doubling the focal doubles offsets from the principal point") {
  Tensor pts({2, 3}, {0.3, -0.2, 0.4, -0.1, 0.5, -0.3});
  auto a = project(pts, test_cam(1000.0));
  auto b = project(pts, test_cam(2000.0));
  for (std::size_t i = 0; i < 2; ++i)
    for (int c = 0; c < 2; ++c) {
      const double off_a = a.pixels.at(i, c) - 128.0;
      const double off_b = b.pixels.at(i, c) - 128.0;
      CHECK(off_b == doctest::Approx(2.0 * off_a).epsilon(1e-12));
    }
}

TEST_CASE("project: nonpositive depth flags points invalid rather than crashing") {
  auto p = project(Tensor({2, 3}, {0, 0, -10, 0, 0, 0}), test_cam());
  CHECK_FALSE(p.valid[0]);
  CHECK(p.valid[1]);
}

TEST_CASE("project_graph matches eager projection and passes grad_check") {
  Rng rng(3);
  ad::Graph g;
  Tensor pts({4, 3});
  for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = 0.4 * rng.normal();
  auto v = g.param("points", pts);
  auto cam = test_cam();
  g.mark_output("uv", project_graph(g, v, cam));
  g.mark_output("loss", ad::mean(ad::square(project_graph(g, v, cam))));
  Tensor uv = g.evaluate_one("uv");
  auto eager = project(pts, cam);
  for (std::size_t i = 0; i < uv.size(); ++i)
    CHECK(uv[i] == doctest::Approx(eager.pixels[i]).epsilon(1e-12));
  auto report = g.grad_check("loss", {}, 1e-6);
  CHECK(report.all_finite);
  CHECK(report.max_rel_err <= 1e-4);
}

TEST_CASE("rasterize: single front-parallel triangle, per-pixel point-in-triangle oracle") {
  auto cam = test_cam();
  const double z = 5.0;
  Tensor verts = tri(0.0, 0.0, 0.3, z, cam.translation[2]);
  auto buf = rasterize(verts, {{0, 1, 2}}, cam);

  auto proj = project(verts, cam);
  double x[3], y[3];
  for (int k = 0; k < 3; ++k) {
    x[k] = proj.pixels.at(k, 0);
    y[k] = proj.pixels.at(k, 1);
  }
  std::size_t covered = 0;
  for (std::size_t py = 0; py < cam.height; ++py)
    for (std::size_t px = 0; px < cam.width; ++px) {
      const double sx = px + 0.5, sy = py + 0.5;
      auto side = [&](int a, int b) {
        return (x[b] - x[a]) * (sy - y[a]) - (y[b] - y[a]) * (sx - x[a]);
      };
      const double s0 = side(0, 1), s1 = side(1, 2), s2 = side(2, 0);
      const bool strictly_in = (s0 > 0 && s1 > 0 && s2 > 0) || (s0 < 0 && s1 < 0 && s2 < 0);
      const bool strictly_out = !((s0 >= 0 && s1 >= 0 && s2 >= 0) || (s0 <= 0 && s1 <= 0 && s2 <= 0));
      const std::uint8_t got = buf.mask[py * cam.width + px];
      if (strictly_in) {
        CHECK(got == 1);
        CHECK(buf.depth[py * cam.width + px] == doctest::Approx(z).epsilon(1e-12));
      } else if (strictly_out) {
        CHECK(got == 0);
        CHECK(std::isinf(buf.depth[py * cam.width + px]));
      }
      covered += got;
    }
  CHECK(covered > 0);
  CHECK(buf.mask[128 * cam.width + 128] == 1);  // image center
}

TEST_CASE("rasterize: z-buffer keeps the nearer of two stacked triangles") {
  auto cam = test_cam();
  Tensor near_t = tri(0.0, 0.0, 0.3, 4.0, cam.translation[2]);
  Tensor far_t = tri(0.0, 0.0, 0.3, 6.0, cam.translation[2]);
  Tensor both({6, 3});
  for (std::size_t i = 0; i < 9; ++i) {
    both[i] = far_t[i];
    both[9 + i] = near_t[i];
  }
  auto buf = rasterize(both, {{0, 1, 2}, {3, 4, 5}}, cam);
  CHECK(buf.depth[128 * cam.width + 128] == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("rasterize: empty mesh gives empty buffers; mesh behind camera too") {
  auto cam = test_cam();
  auto empty = rasterize(Tensor({1, 3}), {}, cam);
  for (auto m : empty.mask) CHECK(m == 0);
  Tensor behind = tri(0.0, 0.0, 0.3, -2.0, cam.translation[2]);
  auto buf = rasterize(behind, {{0, 1, 2}}, cam);
  for (auto m : buf.mask) CHECK(m == 0);
  for (auto d : buf.depth) CHECK(std::isinf(d));
}

TEST_CASE("rasterize: adjacent triangles sharing an edge cover each pixel once") {
  // quad split along the diagonal; top-left rule must not double-fill or gap
  auto cam = test_cam();
  const double z = 5.0, tz = cam.translation[2];
  Tensor verts({4, 3}, {-0.3, -0.3, z - tz, 0.3, -0.3, z - tz, 0.3, 0.3, z - tz, -0.3, 0.3, z - tz});
  auto whole = rasterize(verts, {{0, 1, 2}, {0, 2, 3}}, cam);
  // interior of the quad is solid
  for (std::size_t py = 80; py < 176; ++py)
    for (std::size_t px = 80; px < 176; ++px) CHECK(whole.mask[py * cam.width + px] == 1);
}

TEST_CASE("keypoint visibility rule d_k <= d_p") {
  auto cam = test_cam();
  Tensor verts = tri(0.0, 0.0, 0.5, 5.0, cam.translation[2]);
  auto buf = rasterize(verts, {{0, 1, 2}}, cam);

  // on the surface -> visible; 0.5 m behind -> occluded; off-image -> 0
  Tensor kps({3, 3}, {0.0, 0.0, 5.0 - cam.translation[2],
                      0.0, 0.0, 5.5 - cam.translation[2],
                      10.0, 10.0, 0.0});
  auto flags = keypoint_visibility(kps, cam, buf);
  CHECK(flags[0] == 1);
  CHECK(flags[1] == 0);
  CHECK(flags[2] == 0);
}

TEST_CASE("mask_iou basics") {
  std::vector<std::uint8_t> a(16, 1), b(16, 1), empty(16, 0);
  CHECK(mask_iou(a, 4, 4, b, 4, 4) == 1.0);
  CHECK(mask_iou(a, 4, 4, empty, 4, 4) == 0.0);
  CHECK(mask_iou(empty, 4, 4, empty, 4, 4) == 1.0);
  CHECK_THROWS_AS(mask_iou(a, 4, 4, std::vector<std::uint8_t>(8, 1), 2, 4), std::invalid_argument);

  // half-overlapping equal-area rectangles: IoU = 1/3
  std::vector<std::uint8_t> r1(32, 0), r2(32, 0);  // 4 x 8
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) r1[y * 8 + x] = 1;
  for (int y = 0; y < 4; ++y)
    for (int x = 2; x < 6; ++x) r2[y * 8 + x] = 1;
  CHECK(mask_iou(r1, 4, 8, r2, 4, 8) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("projected mesh vertices land inside the rendered silhouette") {
  // closed tube mesh from the toy template, posed arbitrarily
  auto tpl = body::build_toy_template(body::Taxon::quadruped, 6, 4, 200, 3);
  Rng rng(11);
  auto params = body::BodyParams::zero(tpl);
  for (std::size_t i = 0; i < params.theta.size(); ++i) params.theta[i] = 0.3 * rng.normal();
  auto mesh = body::model_forward(tpl, params);

  auto cam = CameraSpec::with_defaults(256, 256);
  cam.translation = {0.0, 0.0, 6.0};
  auto buf = rasterize(mesh.vertices, tpl.faces, cam);
  auto proj = project(mesh.vertices, cam);
  std::size_t misses = 0;
  for (std::size_t i = 0; i < mesh.vertices.dim(0); ++i) {
    if (!proj.valid[i]) continue;
    bool hit = false;
    // 1-pixel slack at silhouette boundaries
    const int cx = static_cast<int>(std::floor(proj.pixels.at(i, 0)));
    const int cy = static_cast<int>(std::floor(proj.pixels.at(i, 1)));
    for (int dy = -1; dy <= 1 && !hit; ++dy)
      for (int dx = -1; dx <= 1 && !hit; ++dx) {
        const int px = cx + dx, py = cy + dy;
        if (px >= 0 && py >= 0 && px < 256 && py < 256 && buf.mask[py * 256 + px]) hit = true;
      }
    misses += !hit;
  }
  CHECK(misses == 0);
}

TEST_CASE("silhouette distance field: sign, clamp and gradient") {
  // one triangle roughly centered on a small grid
  ad::Graph g;
  Tensor v0({3, 2}, {3.2, 2.1, 12.6, 3.4, 7.3, 12.2});
  auto v = g.param("verts", v0);
  auto dist = silhouette_distance_graph(g, v, {{0, 1, 2}}, 16, 16);
  g.mark_output("dist", dist);
  auto soft = ad::sigmoid(ad::scale(dist, kSilhouetteSharpness));
  g.mark_output("loss", ad::mean(ad::square(soft)));

  Tensor d = g.evaluate_one("dist");
  // centroid pixel is inside (positive), far corner clamped to -0.5
  const int cx = static_cast<int>((3.2 + 12.6 + 7.3) / 3.0);
  const int cy = static_cast<int>((2.1 + 3.4 + 12.2) / 3.0);
  CHECK(d[cy * 16 + cx] > 0.0);
  CHECK(d[15 * 16 + 15] == -0.5);

  auto report = g.grad_check("loss", {}, 1e-6);
  CHECK(report.all_finite);
  CHECK(report.max_rel_err <= 1e-4);
}

TEST_CASE("soft silhouette approximates the hard mask") {
  auto cam = test_cam(1000.0, 5.0, 64);
  cam.principal = {32.0, 32.0};
  Tensor verts = tri(0.0, 0.0, 0.1, 5.0, cam.translation[2]);
  auto buf = rasterize(verts, {{0, 1, 2}}, cam);
  auto proj = project(verts, cam);

  ad::Graph g;
  auto v = g.constant(proj.pixels);
  g.mark_output("soft",
                ad::sigmoid(ad::scale(silhouette_distance_graph(g, v, {{0, 1, 2}}, 64, 64),
                                      kSilhouetteSharpness)));
  Tensor soft = g.evaluate_one("soft");
  std::size_t disagreements = 0;
  for (std::size_t i = 0; i < soft.size(); ++i) {
    const double hard = buf.mask[i];
    if (std::abs(soft[i] - hard) > 0.5) disagreements++;
  }
  // only boundary pixels may disagree
  CHECK(disagreements < 40);
  double frac = 0;
  for (std::size_t i = 0; i < soft.size(); ++i) frac += soft[i];
  CHECK(frac > 10.0);  // triangle definitely covers pixels
}

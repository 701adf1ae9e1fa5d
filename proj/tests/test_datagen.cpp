#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "animer/datagen.hpp"
#include "animer/io.hpp"

using namespace animer;
using namespace animer::data;

namespace {

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const char* tag) {
    path = std::filesystem::temp_directory_path() / tag;
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

body::ModelTemplate quad_tpl() {
  return body::build_toy_template(body::Taxon::quadruped, 6, 4, 220, 42);
}
body::ModelTemplate avian_tpl() {
  return body::build_toy_template(body::Taxon::avian, 6, 4, 220, 43);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("sample_body_params: determinism and distribution bounds") {
  auto tpl = quad_tpl();
  GenConfig cfg;
  Rng a(7), b(7);
  auto s1 = sample_body_params(a, body::Taxon::quadruped, tpl, cfg);
  auto s2 = sample_body_params(b, body::Taxon::quadruped, tpl, cfg);
  CHECK(s1.family_label == s2.family_label);
  for (std::size_t i = 0; i < s1.params.beta.size(); ++i)
    CHECK(s1.params.beta[i] == s2.params.beta[i]);
  for (std::size_t i = 0; i < s1.params.theta.size(); ++i)
    CHECK(s1.params.theta[i] == s2.params.theta[i]);
  for (int c = 0; c < 3; ++c) CHECK(s1.camera.translation[c] == s2.camera.translation[c]);

  // 1e5 draws: positions inside the box, mean near the center; theta rows < pi
  auto avt = avian_tpl();
  Rng rng(11);
  double mean[3] = {0, 0, 0};
  const int n = 100000;
  std::size_t bad_pos = 0, bad_alpha = 0, bad_theta = 0;
  for (int i = 0; i < n; ++i) {
    auto s = sample_body_params(rng, body::Taxon::avian, avt, cfg);
    for (int c = 0; c < 3; ++c) {
      const double p = s.camera.translation[c];
      if (p < cfg.pos_lo[c] || p > cfg.pos_hi[c]) ++bad_pos;
      mean[c] += p;
    }
    for (std::size_t bn = 0; bn < avt.n_bones(); ++bn)
      if (s.params.alpha[bn] < cfg.alpha_lo || s.params.alpha[bn] > cfg.alpha_hi) ++bad_alpha;
    for (std::size_t j = 1; j < avt.n_joints(); ++j) {
      double r2 = 0;
      for (int c = 0; c < 3; ++c) r2 += s.params.theta.at(j, c) * s.params.theta.at(j, c);
      if (std::sqrt(r2) >= M_PI) ++bad_theta;
    }
  }
  CHECK(bad_pos == 0);
  CHECK(bad_alpha == 0);
  CHECK(bad_theta == 0);
  for (int c = 0; c < 3; ++c) {
    const double center = 0.5 * (cfg.pos_lo[c] + cfg.pos_hi[c]);
    const double span = cfg.pos_hi[c] - cfg.pos_lo[c];
    CHECK(std::abs(mean[c] / n - center) <= 0.01 * span);
  }
}

TEST_CASE("family centers are a fixed partition; per-family beta means converge") {
  auto tpl = quad_tpl();
  GenConfig cfg;
  auto centers = family_centers(cfg, body::Taxon::quadruped, tpl.n_shape());
  auto again = family_centers(cfg, body::Taxon::quadruped, tpl.n_shape());
  REQUIRE(centers.size() == cfg.families_per_taxon);
  for (std::size_t f = 0; f < centers.size(); ++f)
    for (std::size_t i = 0; i < centers[f].size(); ++i)
      CHECK(centers[f][i] == again[f][i]);

  Rng rng(13);
  std::vector<Tensor> sums(centers.size(), Tensor({tpl.n_shape()}));
  std::vector<std::size_t> counts(centers.size(), 0);
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    auto s = sample_body_params(rng, body::Taxon::quadruped, tpl, cfg);
    counts[s.family_label]++;
    for (std::size_t k = 0; k < tpl.n_shape(); ++k) sums[s.family_label][k] += s.params.beta[k];
  }
  for (std::size_t f = 0; f < centers.size(); ++f) {
    REQUIRE(counts[f] > 0);
    const double bound = 3.0 * cfg.beta_sigma / std::sqrt(double(counts[f]));
    for (std::size_t k = 0; k < tpl.n_shape(); ++k)
      CHECK(std::abs(sums[f][k] / counts[f] - centers[f][k]) <= bound);
  }
}

TEST_CASE("synthesize_sample: centered animal renders and annotates consistently") {
  auto tpl = quad_tpl();
  GenConfig cfg;
  auto params = body::BodyParams::zero(tpl);
  auto cam = camera::CameraSpec::with_defaults(cfg.image_h, cfg.image_w);
  cam.translation = {0.0, 0.0, 6.0};  // box midpoint
  auto rec = synthesize_sample(params, cam, tpl, cfg, 0, 99);

  CHECK_FALSE(rec.degenerate);
  std::size_t area = 0;
  for (auto m : rec.mask) area += m;
  CHECK(area > 0);

  // keypoints2d is exactly the projection of keypoints3d
  auto proj = camera::project(rec.keypoints3d, cam);
  for (std::size_t i = 0; i < rec.keypoints2d.size(); ++i)
    CHECK(rec.keypoints2d[i] == proj.pixels[i]);

  // visibility audit: recompute from the render
  auto buf = camera::rasterize(body::model_forward(tpl, params).vertices, tpl.faces, cam);
  auto vis = camera::keypoint_visibility(rec.keypoints3d, cam, buf, cfg.visibility_tolerance);
  CHECK(vis == rec.visibility);
  std::size_t visible = 0;
  for (auto v : vis) visible += v;
  CHECK(visible > 0);

  // image channels: mask matches; depth nonzero exactly on the mask
  for (std::size_t i = 0; i < rec.mask.size(); ++i) {
    CHECK(rec.image[i] == double(rec.mask[i]));
    const double d = rec.image[rec.mask.size() + i];
    if (rec.mask[i]) {
      CHECK(d >= 0.0);
      CHECK(d <= 1.0);
    } else {
      CHECK(d == 0.0);
    }
  }
}

TEST_CASE("occluded keypoints get visibility 0") {
  auto tpl = quad_tpl();
  GenConfig cfg;
  auto params = body::BodyParams::zero(tpl);
  // side view: quarter turn about the vertical axis puts the spine end-on
  params.theta.at(0, 1) = M_PI / 2.0;
  auto cam = camera::CameraSpec::with_defaults(cfg.image_h, cfg.image_w);
  cam.translation = {0.0, 0.0, 5.0};
  auto rec = synthesize_sample(params, cam, tpl, cfg, 0, 100);
  REQUIRE_FALSE(rec.degenerate);
  std::size_t hidden = 0;
  for (auto v : rec.visibility) hidden += v == 0;
  CHECK(hidden > 0);  // keypoints behind the body midline are occluded
}

TEST_CASE("dilate_mask and cycle_consistency_filter") {
  GenConfig cfg;
  auto tpl = quad_tpl();
  auto params = body::BodyParams::zero(tpl);
  auto cam = camera::CameraSpec::with_defaults(cfg.image_h, cfg.image_w);
  cam.translation = {0.0, 0.0, 6.0};
  auto rec = synthesize_sample(params, cam, tpl, cfg, 0, 1);

  CHECK(cycle_consistency_filter(rec, rec.mask, 0.9));                     // IoU 1
  CHECK_FALSE(cycle_consistency_filter(rec, std::vector<std::uint8_t>(rec.mask.size(), 0), 0.9));

  // dilation only grows the mask
  auto grown = dilate_mask(rec.mask, cfg.image_h, cfg.image_w, 2);
  std::size_t before = 0, after = 0;
  for (std::size_t i = 0; i < rec.mask.size(); ++i) {
    before += rec.mask[i];
    after += grown[i];
    if (rec.mask[i]) CHECK(grown[i] == 1);
  }
  CHECK(after > before);

  // erosion only shrinks; closing covers the original mask
  auto shrunk = erode_mask(rec.mask, cfg.image_h, cfg.image_w, 2);
  auto closed = perturb_mask(rec.mask, cfg.image_h, cfg.image_w, 2);
  for (std::size_t i = 0; i < rec.mask.size(); ++i) {
    if (shrunk[i]) CHECK(rec.mask[i] == 1);
    if (rec.mask[i]) CHECK(closed[i] == 1);
  }

  // a solid rectangle is a fixed point of closing away from the border
  std::vector<std::uint8_t> rect(16 * 16, 0);
  for (int y = 4; y < 12; ++y)
    for (int x = 4; x < 12; ++x) rect[y * 16 + x] = 1;
  CHECK(perturb_mask(rect, 16, 16, 2) == rect);

  // half-overlap rectangles: IoU = 1/3 < 0.5 -> drop
  SampleRecord fake;
  fake.camera.height = 4;
  fake.camera.width = 8;
  fake.mask.assign(32, 0);
  std::vector<std::uint8_t> other(32, 0);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) fake.mask[y * 8 + x] = 1;
  for (int y = 0; y < 4; ++y)
    for (int x = 2; x < 6; ++x) other[y * 8 + x] = 1;
  CHECK_FALSE(cycle_consistency_filter(fake, other, 0.5));
  CHECK(cycle_consistency_filter(fake, other, 1.0 / 3.0));

  // degenerate records are always dropped
  fake.degenerate = true;
  CHECK_FALSE(cycle_consistency_filter(fake, other, 0.01));
}

TEST_CASE("build_dataset: counts, filter postcondition, byte-identical rebuilds") {
  std::map<body::Taxon, body::ModelTemplate> templates;
  templates.emplace(body::Taxon::quadruped, quad_tpl());
  templates.emplace(body::Taxon::avian, avian_tpl());

  GenConfig cfg;
  cfg.count_quadruped = 40;
  cfg.count_avian = 40;
  cfg.master_seed = 5;
  cfg.name = "unit";

  TempDir dir("animer_ds_a");
  auto manifest = build_dataset(cfg, templates, dir.path.string());
  const std::size_t kept = manifest.at("records").size();
  std::size_t dropped = 0;
  for (const auto& [taxon, n] : manifest.at("dropped").items()) dropped += n.get<std::size_t>();
  CHECK(kept + dropped == 80);
  CHECK(kept > 0);

  auto ds = load_dataset(dir.path.string());
  REQUIRE(ds.records.size() == kept);
  for (const auto& rec : ds.records) {
    // reprojection identity on the stored annotations
    auto proj = camera::project(rec.keypoints3d, rec.camera);
    for (std::size_t i = 0; i < rec.keypoints2d.size(); ++i)
      CHECK(rec.keypoints2d[i] == doctest::Approx(proj.pixels[i]).epsilon(1e-12));
    CHECK(rec.has_3d);

    // filter postcondition: stored mask survives its own perturbation test
    auto perturbed = perturb_mask(rec.mask, cfg.image_h, cfg.image_w, cfg.perturb_radius_px);
    SampleRecord probe;
    probe.camera = rec.camera;
    probe.mask = rec.mask;
    CHECK(cycle_consistency_filter(probe, perturbed, cfg.iou_threshold));

    // depth channel support matches the mask exactly
    const std::size_t hw = cfg.image_h * cfg.image_w;
    for (std::size_t i = 0; i < hw; ++i)
      if (!rec.mask[i]) CHECK(rec.image[hw + i] == 0.0);
  }

  TempDir dir2("animer_ds_b");
  build_dataset(cfg, templates, dir2.path.string());
  CHECK(slurp(dir.path / "shard0.bin") == slurp(dir2.path / "shard0.bin"));
  CHECK(slurp(dir.path / "manifest.json") == slurp(dir2.path / "manifest.json"));

  // a different master seed changes the shards
  GenConfig cfg3 = cfg;
  cfg3.master_seed = 6;
  TempDir dir3("animer_ds_c");
  build_dataset(cfg3, templates, dir3.path.string());
  CHECK(slurp(dir.path / "shard0.bin") != slurp(dir3.path / "shard0.bin"));
}

TEST_CASE("mark_2d_only datasets advertise no 3D annotations") {
  std::map<body::Taxon, body::ModelTemplate> templates;
  templates.emplace(body::Taxon::quadruped, quad_tpl());
  GenConfig cfg;
  cfg.count_quadruped = 6;
  cfg.count_avian = 0;
  cfg.mark_2d_only = true;
  cfg.name = "unit2d";
  TempDir dir("animer_ds_2d");
  auto manifest = build_dataset(cfg, templates, dir.path.string());
  CHECK(manifest.at("has_3d") == false);
  auto ds = load_dataset(dir.path.string());
  for (const auto& rec : ds.records) CHECK_FALSE(rec.has_3d);
}

TEST_CASE("config validation") {
  GenConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.iou_threshold = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = GenConfig{};
  cfg.alpha_hi = -1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "animer/bodymodel.hpp"
#include "animer/camera.hpp"
#include "animer/rng.hpp"
#include "animer/tensor.hpp"

namespace animer::data {

struct GenConfig {
  std::size_t count_quadruped = 256;
  std::size_t count_avian = 256;
  double beta_sigma = 0.3;
  double theta_sigma = 0.3;
  double alpha_lo = -0.5, alpha_hi = 3.5;
  std::array<double, 3> pos_lo{-0.5, -0.5, 4.0};
  std::array<double, 3> pos_hi{0.5, 0.5, 8.0};
  double viewpoint_range = M_PI;  // root rotation ~ U(-range, range)^3
  double iou_threshold = 0.85;
  std::size_t image_h = 64, image_w = 64;
  std::size_t families_per_taxon = 4;
  double family_center_scale = 1.0;
  int perturb_radius_px = 2;       // simulated segmentation noise for the filter
  double visibility_tolerance = 0.12;  // > tube radius so surface-adjacent joints count
  bool mark_2d_only = false;       // emitted records advertise no 3D annotations
  std::uint64_t master_seed = 1;
  std::string name = "toy";

  void validate() const;
};

struct SampleRecord {
  Tensor image;  // (2, H, W): channel 0 binary mask, channel 1 depth in [0,1]
  body::Taxon taxon = body::Taxon::quadruped;
  int family_label = 0;
  body::BodyParams params;
  camera::CameraSpec camera;
  Tensor keypoints3d;  // n_K x 3
  Tensor keypoints2d;  // n_K x 2, = project(keypoints3d)
  std::vector<std::uint8_t> visibility;
  std::vector<std::uint8_t> mask;  // reference silhouette, H*W
  bool has_3d = true;
  bool degenerate = false;  // empty silhouette
  std::uint64_t seed = 0;
};

/// Fixed per-taxon family centers in beta space (independent of master_seed).
std::vector<Tensor> family_centers(const GenConfig& cfg, body::Taxon taxon, std::size_t n_beta);

struct SampledParams {
  body::BodyParams params;
  camera::CameraSpec camera;
  int family_label = 0;
};

/// beta ~ N(family center, sigma^2 I); per-joint theta rows truncated to
/// |row| < pi; viewpoint rotation folded into the root row ~ U(-pi,pi)^3;
/// camera position uniform over the box; avian alpha ~ U[lo, hi].
SampledParams sample_body_params(Rng& rng, body::Taxon taxon, const body::ModelTemplate& tpl,
                                 const GenConfig& cfg);

SampleRecord synthesize_sample(const body::BodyParams& params, const camera::CameraSpec& cam,
                               const body::ModelTemplate& tpl, const GenConfig& cfg,
                               int family_label, std::uint64_t seed);

/// Binary morphological dilation with a disc of the given radius (pixels).
std::vector<std::uint8_t> dilate_mask(const std::vector<std::uint8_t>& mask, std::size_t height,
                                      std::size_t width, int radius);

/// Binary morphological erosion with a disc of the given radius (pixels).
std::vector<std::uint8_t> erode_mask(const std::vector<std::uint8_t>& mask, std::size_t height,
                                     std::size_t width, int radius);

/// Simulated segmentation noise: morphological closing (dilate, then erode)
/// with the configured disc radius. Well-formed silhouettes survive nearly
/// unchanged; thin or fragmented ones are smeared together and fail the
/// cycle-consistency IoU check.
std::vector<std::uint8_t> perturb_mask(const std::vector<std::uint8_t>& mask, std::size_t height,
                                       std::size_t width, int radius);

/// keep iff the record is non-degenerate and IoU(reference, perturbed) >= threshold.
bool cycle_consistency_filter(const SampleRecord& record,
                              const std::vector<std::uint8_t>& perturbed_mask,
                              double iou_threshold);

/// Generates, filters and writes shards + manifest; returns the manifest.
nlohmann::json build_dataset(const GenConfig& cfg,
                             const std::map<body::Taxon, body::ModelTemplate>& templates,
                             const std::string& out_dir);

struct Dataset {
  std::string name;
  nlohmann::json manifest;
  std::vector<SampleRecord> records;
};

Dataset load_dataset(const std::string& dir);

inline constexpr int kManifestSchemaVersion = 1;

}  // namespace animer::data

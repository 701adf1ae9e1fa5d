#include "animer/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "animer/io.hpp"

namespace animer::data {

namespace {

std::string record_prefix(std::size_t id) { return "r" + std::to_string(id) + "."; }

Tensor tensor_from_bytes(const std::vector<std::uint8_t>& v) {
  Tensor t({v.size()});
  for (std::size_t i = 0; i < v.size(); ++i) t[i] = v[i];
  return t;
}

std::vector<std::uint8_t> bytes_from_tensor(const Tensor& t) {
  std::vector<std::uint8_t> v(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) v[i] = static_cast<std::uint8_t>(t[i]);
  return v;
}

}  // namespace

void GenConfig::validate() const {
  if (iou_threshold <= 0.0 || iou_threshold > 1.0)
    throw std::invalid_argument("datagen: iou_threshold must be in (0,1]");
  if (alpha_hi <= alpha_lo) throw std::invalid_argument("datagen: bad alpha range");
  for (int i = 0; i < 3; ++i)
    if (pos_hi[i] < pos_lo[i]) throw std::invalid_argument("datagen: bad position box");
  if (image_h == 0 || image_w == 0) throw std::invalid_argument("datagen: empty image");
  if (families_per_taxon == 0) throw std::invalid_argument("datagen: need at least one family");
  if (beta_sigma < 0 || theta_sigma < 0) throw std::invalid_argument("datagen: negative sigma");
  if (viewpoint_range < 0 || viewpoint_range > M_PI)
    throw std::invalid_argument("datagen: viewpoint_range must be in [0, pi]");
}

std::vector<Tensor> family_centers(const GenConfig& cfg, body::Taxon taxon, std::size_t n_beta) {
  // fixed partition of the shape space: same centers for every master seed
  Rng rng(splitmix64(0xFA111E5ULL + static_cast<std::uint64_t>(taxon)));
  std::vector<Tensor> centers(cfg.families_per_taxon);
  for (auto& c : centers) {
    c = Tensor({n_beta});
    for (auto& v : c.values()) v = cfg.family_center_scale * rng.normal();
  }
  return centers;
}

SampledParams sample_body_params(Rng& rng, body::Taxon taxon, const body::ModelTemplate& tpl,
                                 const GenConfig& cfg) {
  cfg.validate();
  auto centers = family_centers(cfg, taxon, tpl.n_shape());
  SampledParams out;
  out.family_label = static_cast<int>(rng.index(centers.size()));
  out.params = body::BodyParams::zero(tpl);
  const Tensor& center = centers[out.family_label];
  for (std::size_t i = 0; i < tpl.n_shape(); ++i)
    out.params.beta[i] = center[i] + cfg.beta_sigma * rng.normal();

  for (std::size_t j = 0; j < tpl.n_joints(); ++j) {
    double row[3];
    do {
      for (double& v : row) v = cfg.theta_sigma * rng.normal();
    } while (std::sqrt(row[0] * row[0] + row[1] * row[1] + row[2] * row[2]) >= M_PI);
    for (int c = 0; c < 3; ++c) out.params.theta.at(j, c) = row[c];
  }
  // viewpoint: the camera rotation is folded into the root joint
  for (int c = 0; c < 3; ++c)
    out.params.theta.at(0, c) = rng.uniform(-cfg.viewpoint_range, cfg.viewpoint_range);

  if (taxon == body::Taxon::avian)
    for (std::size_t b = 0; b < tpl.n_bones(); ++b)
      out.params.alpha[b] = rng.uniform(cfg.alpha_lo, cfg.alpha_hi);

  out.camera = camera::CameraSpec::with_defaults(cfg.image_h, cfg.image_w);
  for (int c = 0; c < 3; ++c)
    out.camera.translation[c] = rng.uniform(cfg.pos_lo[c], cfg.pos_hi[c]);
  return out;
}

SampleRecord synthesize_sample(const body::BodyParams& params, const camera::CameraSpec& cam,
                               const body::ModelTemplate& tpl, const GenConfig& cfg,
                               int family_label, std::uint64_t seed) {
  SampleRecord rec;
  rec.taxon = tpl.taxon;
  rec.family_label = family_label;
  rec.params = params;
  rec.camera = cam;
  rec.seed = seed;
  rec.has_3d = !cfg.mark_2d_only;

  auto mesh = body::model_forward(tpl, params);
  auto buf = camera::rasterize(mesh.vertices, tpl.faces, cam);
  rec.mask = buf.mask;
  rec.keypoints3d = mesh.keypoints3d;
  rec.keypoints2d = camera::project(mesh.keypoints3d, cam).pixels;
  rec.visibility = camera::keypoint_visibility(mesh.keypoints3d, cam, buf,
                                               cfg.visibility_tolerance);

  std::size_t area = 0;
  for (auto m : buf.mask) area += m != 0;
  rec.degenerate = area == 0;

  const double near = cfg.pos_lo[2], far = cfg.pos_hi[2];
  rec.image = Tensor({2, cfg.image_h, cfg.image_w});
  for (std::size_t i = 0; i < buf.mask.size(); ++i) {
    rec.image[i] = buf.mask[i];
    const double d = buf.depth[i];
    rec.image[buf.mask.size() + i] =
        buf.mask[i] ? std::clamp((d - near) / (far - near), 0.0, 1.0) : 0.0;
  }
  return rec;
}

std::vector<std::uint8_t> dilate_mask(const std::vector<std::uint8_t>& mask, std::size_t height,
                                      std::size_t width, int radius) {
  if (mask.size() != height * width) throw std::invalid_argument("dilate_mask: size mismatch");
  if (radius <= 0) return mask;
  std::vector<std::uint8_t> out(mask.size(), 0);
  const int r2 = radius * radius;
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      if (!mask[y * width + x]) continue;
      for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
          if (dx * dx + dy * dy > r2) continue;
          const long ny = long(y) + dy, nx = long(x) + dx;
          if (ny >= 0 && nx >= 0 && ny < long(height) && nx < long(width))
            out[std::size_t(ny) * width + std::size_t(nx)] = 1;
        }
    }
  return out;
}

std::vector<std::uint8_t> erode_mask(const std::vector<std::uint8_t>& mask, std::size_t height,
                                     std::size_t width, int radius) {
  if (mask.size() != height * width) throw std::invalid_argument("erode_mask: size mismatch");
  if (radius <= 0) return mask;
  std::vector<std::uint8_t> out(mask.size(), 0);
  const int r2 = radius * radius;
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      bool keep = mask[y * width + x] != 0;
      for (int dy = -radius; dy <= radius && keep; ++dy)
        for (int dx = -radius; dx <= radius && keep; ++dx) {
          if (dx * dx + dy * dy > r2) continue;
          const long ny = long(y) + dy, nx = long(x) + dx;
          if (ny < 0 || nx < 0 || ny >= long(height) || nx >= long(width) ||
              !mask[std::size_t(ny) * width + std::size_t(nx)])
            keep = false;
        }
      out[y * width + x] = keep;
    }
  return out;
}

std::vector<std::uint8_t> perturb_mask(const std::vector<std::uint8_t>& mask, std::size_t height,
                                       std::size_t width, int radius) {
  return erode_mask(dilate_mask(mask, height, width, radius), height, width, radius);
}

bool cycle_consistency_filter(const SampleRecord& record,
                              const std::vector<std::uint8_t>& perturbed_mask,
                              double iou_threshold) {
  if (record.degenerate) return false;
  const double iou = camera::mask_iou(record.mask, record.camera.height, record.camera.width,
                                      perturbed_mask, record.camera.height, record.camera.width);
  return iou >= iou_threshold;
}

nlohmann::json build_dataset(const GenConfig& cfg,
                             const std::map<body::Taxon, body::ModelTemplate>& templates,
                             const std::string& out_dir) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const std::string shard_name = "shard0.bin";
  std::ofstream shard(fs::path(out_dir) / shard_name, std::ios::binary);
  if (!shard) throw std::runtime_error("build_dataset: cannot write " + out_dir + "/" + shard_name);

  nlohmann::json manifest;
  manifest["schema_version"] = kManifestSchemaVersion;
  manifest["name"] = cfg.name;
  manifest["master_seed"] = cfg.master_seed;
  manifest["image_h"] = cfg.image_h;
  manifest["image_w"] = cfg.image_w;
  manifest["iou_threshold"] = cfg.iou_threshold;
  manifest["has_3d"] = !cfg.mark_2d_only;
  manifest["records"] = nlohmann::json::array();

  std::map<std::string, std::size_t> kept_per_taxon, dropped_per_taxon;
  std::map<int, std::size_t> per_family;
  std::size_t record_id = 0;

  auto generate = [&](body::Taxon taxon, std::size_t count) {
    if (count == 0) return;
    const auto& tpl = templates.at(taxon);
    for (std::size_t i = 0; i < count; ++i, ++record_id) {
      Rng rng = Rng::stream(cfg.master_seed, record_id);
      auto sampled = sample_body_params(rng, taxon, tpl, cfg);
      auto rec = synthesize_sample(sampled.params, sampled.camera, tpl, cfg,
                                   sampled.family_label, record_id);
      auto perturbed = perturb_mask(rec.mask, cfg.image_h, cfg.image_w, cfg.perturb_radius_px);
      if (!cycle_consistency_filter(rec, perturbed, cfg.iou_threshold)) {
        dropped_per_taxon[body::taxon_name(taxon)]++;
        continue;
      }
      kept_per_taxon[body::taxon_name(taxon)]++;
      per_family[rec.family_label]++;

      const std::string pre = record_prefix(record_id);
      std::vector<io::Blob> blobs;
      blobs.push_back(io::Blob::from_tensor(pre + "image", rec.image, io::Dtype::f32));
      blobs.push_back(io::Blob::from_tensor(pre + "kp3d", rec.keypoints3d));
      blobs.push_back(io::Blob::from_tensor(pre + "kp2d", rec.keypoints2d));
      blobs.push_back(io::Blob::from_tensor(pre + "beta", rec.params.beta));
      blobs.push_back(io::Blob::from_tensor(pre + "theta", rec.params.theta));
      if (taxon == body::Taxon::avian)
        blobs.push_back(io::Blob::from_tensor(pre + "alpha", rec.params.alpha));
      blobs.push_back(io::Blob::from_tensor(pre + "gamma", rec.params.gamma));
      blobs.push_back(
          io::Blob::from_tensor(pre + "vis", tensor_from_bytes(rec.visibility), io::Dtype::u8));
      blobs.push_back(
          io::Blob::from_tensor(pre + "mask", tensor_from_bytes(rec.mask), io::Dtype::u8));
      auto spans = io::append_blobs(shard, blobs);

      nlohmann::json entry;
      entry["id"] = record_id;
      entry["taxon"] = body::taxon_name(taxon);
      entry["family"] = rec.family_label;
      entry["has_3d"] = rec.has_3d;
      entry["seed"] = rec.seed;
      entry["shard"] = shard_name;
      entry["camera"] = {{"focal", rec.camera.focal},
                         {"principal", rec.camera.principal},
                         {"translation", rec.camera.translation}};
      nlohmann::json offs;
      for (const auto& s : spans) offs[s.name.substr(pre.size())] = s.offset;
      entry["blobs"] = offs;
      manifest["records"].push_back(entry);
    }
  };
  generate(body::Taxon::quadruped, cfg.count_quadruped);
  generate(body::Taxon::avian, cfg.count_avian);
  shard.close();
  if (!shard) throw std::runtime_error("build_dataset: write failed in " + out_dir);

  manifest["kept"] = kept_per_taxon;
  manifest["dropped"] = dropped_per_taxon;
  nlohmann::json fam;
  for (const auto& [label, count] : per_family) fam[std::to_string(label)] = count;
  manifest["per_family"] = fam;

  std::ofstream mf(fs::path(out_dir) / "manifest.json");
  if (!mf) throw std::runtime_error("build_dataset: cannot write manifest in " + out_dir);
  mf << manifest.dump(2) << "\n";
  return manifest;
}

Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw std::runtime_error("load_dataset: cannot open manifest in " + dir);
  nlohmann::json manifest = nlohmann::json::parse(mf);
  if (manifest.at("schema_version").get<int>() != kManifestSchemaVersion)
    throw std::runtime_error("load_dataset: unsupported manifest schema");

  Dataset ds;
  ds.name = manifest.at("name");
  ds.manifest = manifest;
  const std::size_t h = manifest.at("image_h"), w = manifest.at("image_w");
  for (const auto& entry : manifest.at("records")) {
    SampleRecord rec;
    rec.taxon = entry.at("taxon") == "avian" ? body::Taxon::avian : body::Taxon::quadruped;
    rec.family_label = entry.at("family");
    rec.has_3d = entry.at("has_3d");
    rec.seed = entry.at("seed");
    rec.camera.height = h;
    rec.camera.width = w;
    rec.camera.focal = entry.at("camera").at("focal");
    auto pr = entry.at("camera").at("principal");
    auto tr = entry.at("camera").at("translation");
    rec.camera.principal = {pr[0], pr[1]};
    rec.camera.translation = {tr[0], tr[1], tr[2]};

    const std::string shard = (fs::path(dir) / entry.at("shard").get<std::string>()).string();
    auto blob = [&](const char* name) {
      return io::read_blob_at(shard, entry.at("blobs").at(name)).to_tensor();
    };
    Tensor img = blob("image");
    rec.image = Tensor({2, h, w}, img.values());
    rec.keypoints3d = blob("kp3d");
    rec.keypoints2d = blob("kp2d");
    rec.params.beta = blob("beta");
    rec.params.theta = blob("theta");
    if (entry.at("blobs").contains("alpha")) rec.params.alpha = blob("alpha");
    rec.params.gamma = blob("gamma");
    rec.visibility = bytes_from_tensor(blob("vis"));
    rec.mask = bytes_from_tensor(blob("mask"));
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

}  // namespace animer::data

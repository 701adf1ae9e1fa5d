#include "animer/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <stdexcept>

namespace animer::train {

namespace {

bool all_finite(const Tensor& t) {
  for (std::size_t i = 0; i < t.size(); ++i)
    if (!std::isfinite(t[i])) return false;
  return true;
}

std::size_t mask_area(const std::vector<std::uint8_t>& mask) {
  std::size_t area = 0;
  for (auto m : mask) area += m != 0;
  return area;
}

}  // namespace

void TrainConfig::validate() const {
  if (stage1_steps == 0 || stage2_steps == 0)
    throw std::invalid_argument("trainer: stage steps must be > 0");
  if (base_lr <= 0) throw std::invalid_argument("trainer: base_lr must be positive");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
    throw std::invalid_argument("trainer: betas must lie in [0,1)");
  if (eps <= 0) throw std::invalid_argument("trainer: eps must be positive");
  if (weight_decay < 0) throw std::invalid_argument("trainer: negative weight decay");
  if (batch_size == 0) throw std::invalid_argument("trainer: batch size must be > 0");
  if (checkpoint_every == 0) throw std::invalid_argument("trainer: checkpoint cadence must be > 0");
  for (const auto& [name, w] : dataset_weights)
    if (w < 0) throw std::invalid_argument("trainer: negative weight for dataset " + name);
}

nlohmann::json TrainConfig::to_json() const {
  return {{"stage1_steps", stage1_steps},
          {"stage2_steps", stage2_steps},
          {"base_lr", base_lr},
          {"beta1", beta1},
          {"beta2", beta2},
          {"eps", eps},
          {"weight_decay", weight_decay},
          {"batch_size", batch_size},
          {"dataset_weights", dataset_weights},
          {"seed", seed},
          {"checkpoint_every", checkpoint_every},
          {"reset_moments_on_stage2", reset_moments_on_stage2},
          {"use_mask_loss", use_mask_loss}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.stage1_steps = j.value("stage1_steps", c.stage1_steps);
  c.stage2_steps = j.value("stage2_steps", c.stage2_steps);
  c.base_lr = j.value("base_lr", c.base_lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.eps = j.value("eps", c.eps);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
  if (j.contains("dataset_weights"))
    c.dataset_weights = j.at("dataset_weights").get<std::map<std::string, double>>();
  c.seed = j.value("seed", c.seed);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.reset_moments_on_stage2 = j.value("reset_moments_on_stage2", c.reset_moments_on_stage2);
  c.use_mask_loss = j.value("use_mask_loss", c.use_mask_loss);
  return c;
}

SampleStream::SampleStream(const std::vector<const data::Dataset*>& datasets,
                           const std::map<std::string, double>& weights, int stage) {
  if (stage != 1 && stage != 2) throw std::invalid_argument("sampler: stage must be 1 or 2");
  std::vector<double> w;
  for (const data::Dataset* ds : datasets) {
    auto it = weights.find(ds->name);
    if (it == weights.end())
      throw std::invalid_argument("sampler: no weight for dataset " + ds->name);
    if (ds->records.empty()) continue;
    if (stage == 1 && !ds->manifest.value("has_3d", true)) continue;  // 3D data only
    if (it->second <= 0) continue;
    active_.push_back(ds);
    w.push_back(it->second);
  }
  double total = 0;
  for (double x : w) total += x;
  if (active_.empty() || total <= 0)
    throw std::invalid_argument("sampler: no dataset with positive effective weight");
  double acc = 0;
  for (double x : w) cumulative_.push_back(acc += x / total);
  cumulative_.back() = 1.0;
}

const data::SampleRecord& SampleStream::next(Rng& rng) {
  const double u = rng.uniform();
  const std::size_t d =
      std::lower_bound(cumulative_.begin(), cumulative_.end(), u) - cumulative_.begin();
  const auto& records = active_[std::min(d, active_.size() - 1)]->records;
  return records[rng.index(records.size())];
}

bool optimizer_step(net::NetworkState& state, const std::map<std::string, Tensor>& grads,
                    OptimizerState& opt, double lr, const TrainConfig& cfg) {
  for (const auto& [name, g] : grads)
    if (!all_finite(g)) {
      std::cerr << "optimizer_step: non-finite gradient for " << name << ", step skipped\n";
      return false;
    }

  opt.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(opt.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(opt.t));
  for (auto& [name, p] : state.tensors) {
    auto git = grads.find(name);
    const Tensor zero = Tensor::zeros(p.shape());
    const Tensor& g = git == grads.end() ? zero : git->second;
    if (g.shape() != p.shape())
      throw std::invalid_argument("optimizer_step: gradient shape mismatch for " + name);
    Tensor& m = opt.m.try_emplace(name, Tensor::zeros(p.shape())).first->second;
    Tensor& v = opt.v.try_emplace(name, Tensor::zeros(p.shape())).first->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.eps);
      p[i] -= lr * update;
      p[i] *= 1.0 - lr * cfg.weight_decay;  // decoupled decay, not via the gradient
    }
  }
  return true;
}

double lr_at_step(std::size_t step, std::size_t total_steps, double base_lr) {
  if (total_steps == 0 || step > total_steps)
    throw std::invalid_argument("lr_at_step: need 0 <= step <= total_steps, total > 0");
  return base_lr * (1.0 - static_cast<double>(step) / static_cast<double>(total_steps));
}

loss::PriorDistribution default_prior(const body::ModelTemplate& tpl, double alpha_mean) {
  loss::PriorDistribution prior;
  const std::size_t nb = tpl.n_shape(), nt = 3 * tpl.n_joints();
  prior.mu_beta = Tensor::zeros({1, nb});
  prior.sigma_beta = Tensor::eye(nb);
  prior.mu_theta = Tensor::zeros({1, nt});
  prior.sigma_theta = Tensor::eye(nt);
  prior.theta_bar = Tensor::zeros({tpl.n_joints(), 3});
  prior.alpha_bar = Tensor::full({1, tpl.n_bones()}, alpha_mean);
  prior.validate();
  return prior;
}

io::Checkpoint make_checkpoint(const net::NetworkState& state, const OptimizerState& opt,
                               const TrainConfig& cfg, int stage, std::size_t step,
                               const Rng& rng) {
  io::Checkpoint ck;
  ck.meta = {{"stage", stage},
             {"step", step},
             {"opt_t", opt.t},
             {"rng", rng.serialize()},
             {"config", cfg.to_json()}};
  for (const auto& [name, t] : state.tensors) ck.tensors[name] = t;
  for (const auto& [name, t] : opt.m) ck.tensors["opt.m." + name] = t;
  for (const auto& [name, t] : opt.v) ck.tensors["opt.v." + name] = t;
  return ck;
}

void restore_checkpoint(const io::Checkpoint& ck, net::NetworkState& state, OptimizerState& opt,
                        Rng& rng) {
  state.tensors.clear();
  opt.m.clear();
  opt.v.clear();
  for (const auto& [name, t] : ck.tensors) {
    if (name.rfind("opt.m.", 0) == 0)
      opt.m[name.substr(6)] = t;
    else if (name.rfind("opt.v.", 0) == 0)
      opt.v[name.substr(6)] = t;
    else
      state.tensors[name] = t;
  }
  opt.t = ck.meta.at("opt_t").get<std::size_t>();
  rng.deserialize(ck.meta.at("rng").get<std::string>());
}

StageResult run_stage(net::NetworkState& state, OptimizerState& opt, Rng& rng,
                      const net::NetworkConfig& net_cfg,
                      const std::map<body::Taxon, body::ModelTemplate>& templates,
                      const std::map<body::Taxon, loss::PriorDistribution>& priors,
                      const std::vector<const data::Dataset*>& datasets, const TrainConfig& cfg,
                      int stage, std::size_t start_step, std::size_t end_step,
                      const std::string& checkpoint_dir) {
  cfg.validate();
  const std::size_t total = stage == 1 ? cfg.stage1_steps : cfg.stage2_steps;
  if (start_step > total) throw std::invalid_argument("run_stage: start_step past stage end");
  const std::size_t stop = std::min(end_step, total);
  SampleStream stream(datasets, cfg.dataset_weights, stage);
  const std::vector<std::uint8_t> no_mask(net_cfg.image_h * net_cfg.image_w, 0);

  StageResult res;
  res.checkpoint = make_checkpoint(state, opt, cfg, stage, start_step, rng);

  for (std::size_t step = start_step; step < stop; ++step) {
    const double lr = lr_at_step(step, total, cfg.base_lr);

    ad::Graph g;
    auto p = net::bind_params(g, state);
    std::vector<loss::SampleTerms> terms;
    std::vector<ad::Value> embeddings;
    std::vector<int> families;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const data::SampleRecord& rec = stream.next(rng);
      const auto& tpl = templates.at(rec.taxon);
      const auto taxon = static_cast<std::size_t>(rec.taxon);
      auto pred = net::network_forward_graph(g, rec.image, taxon, p, net_cfg);

      ad::Value alpha_v{};
      if (pred.alpha) alpha_v = *pred.alpha;
      auto gamma = g.constant(Tensor::zeros({3}));
      auto fwd = body::model_forward_graph(g, tpl, pred.beta, pred.theta, alpha_v, gamma);

      loss::SampleTerms st;
      st.taxon = rec.taxon;
      if (rec.has_3d)
        st.l3d = loss::loss_3d_graph(g, pred.beta, pred.theta, pred.alpha, fwd.keypoints3d,
                                     rec.params.beta, rec.params.theta, rec.params.alpha,
                                     rec.keypoints3d, cfg.loss_weights.loss3d, rec.taxon);
      if (cfg.use_mask_loss) {
        auto verts2d = camera::project_graph(g, fwd.vertices, rec.camera);
        auto dist = camera::silhouette_distance_graph(g, verts2d, tpl.faces, rec.camera.height,
                                                      rec.camera.width);
        auto soft = ad::sigmoid(ad::scale(dist, camera::kSilhouetteSharpness));
        st.l2d = loss::loss_2d_graph(g, fwd.keypoints3d, rec.camera, rec.keypoints2d,
                                     rec.visibility, soft, rec.mask, cfg.loss_weights.loss2d);
      } else {
        auto soft = g.constant(Tensor::zeros({net_cfg.image_h * net_cfg.image_w}));
        st.l2d = loss::loss_2d_graph(g, fwd.keypoints3d, rec.camera, rec.keypoints2d,
                                     rec.visibility, soft, no_mask, cfg.loss_weights.loss2d);
      }
      const auto& prior = priors.at(rec.taxon);
      st.prior = rec.taxon == body::Taxon::quadruped
                     ? loss::loss_smal_prior_graph(g, pred.beta, pred.theta, prior,
                                                   cfg.loss_weights.smal_prior)
                     : loss::loss_aves_prior_graph(g, pred.beta, pred.theta, *pred.alpha, prior,
                                                   cfg.loss_weights.aves_prior);
      terms.push_back(st);
      embeddings.push_back(pred.z);
      families.push_back(rec.family_label);
    }

    std::optional<ad::Value> l_con;
    if (cfg.batch_size >= 2)
      l_con = loss::loss_con_graph(g, ad::concat_rows(embeddings), families,
                                   cfg.loss_weights.tau);
    g.mark_output("loss", loss::loss_total_graph(g, terms, l_con, cfg.loss_weights));

    const double loss_value = g.evaluate_one("loss")[0];
    if (!std::isfinite(loss_value)) {
      std::cerr << "run_stage: non-finite loss at step " << step << ", aborting stage\n";
      res.diverged = true;
      return res;
    }
    auto grads = g.gradient("loss");
    optimizer_step(state, grads, opt, lr, cfg);

    res.loss_trace.push_back(loss_value);
    res.steps_run += 1;
    res.checkpoint = make_checkpoint(state, opt, cfg, stage, step + 1, rng);
    if (!checkpoint_dir.empty() && (step + 1) % cfg.checkpoint_every == 0)
      io::save_checkpoint(
          (std::filesystem::path(checkpoint_dir) / "ck_latest.bin").string(), res.checkpoint);
  }
  return res;
}

body::BodyParams predict_params(const net::NetworkState& state, const net::NetworkConfig& net_cfg,
                                const body::ModelTemplate& tpl, const Tensor& image) {
  ad::Graph g;
  auto p = net::bind_params(g, state);
  auto pred =
      net::network_forward_graph(g, image, static_cast<std::size_t>(tpl.taxon), p, net_cfg);
  g.mark_output("beta", pred.beta);
  g.mark_output("theta", pred.theta);
  if (pred.alpha) g.mark_output("alpha", *pred.alpha);
  auto out = g.evaluate();

  auto params = body::BodyParams::zero(tpl);
  params.beta = out.at("beta");
  params.theta = out.at("theta");
  if (pred.alpha) params.alpha = out.at("alpha");
  return params;
}

metric::MetricsReport evaluate_predictions(const PredictFn& predict,
                                           const std::map<body::Taxon, body::ModelTemplate>& templates,
                                           const data::Dataset& ds) {
  metric::MetricsReport rep;
  double mpjpe = 0, mpvpe = 0, cd = 0, p10 = 0, p15 = 0, hth = 0;
  std::size_t n_pck = 0, n_hth = 0;
  std::vector<double> distances, normalizers;

  for (const auto& rec : ds.records) {
    const auto& tpl = templates.at(rec.taxon);
    auto params = predict(rec);
    auto pred_mesh = body::model_forward(tpl, params);
    auto gt_mesh = body::model_forward(tpl, rec.params);

    mpjpe += 1000.0 * metric::pa_point_error(pred_mesh.keypoints3d, rec.keypoints3d);
    mpvpe += 1000.0 * metric::pa_point_error(pred_mesh.vertices, gt_mesh.vertices);
    cd += 1000.0 * metric::chamfer_pa(pred_mesh.vertices, gt_mesh.vertices);
    rep.n_samples += 1;

    auto pred2d = camera::project(pred_mesh.keypoints3d, rec.camera).pixels;
    const std::size_t area = mask_area(rec.mask);
    std::size_t visible = 0;
    for (auto v : rec.visibility) visible += v != 0;
    bool skipped = false;
    if (area > 0 && visible > 0) {
      p10 += metric::pck_silhouette(pred2d, rec.keypoints2d, rec.visibility, rec.mask, 0.10);
      p15 += metric::pck_silhouette(pred2d, rec.keypoints2d, rec.visibility, rec.mask, 0.15);
      n_pck += 1;
      const double norm = std::sqrt(static_cast<double>(area));
      for (std::size_t k = 0; k < rec.visibility.size(); ++k) {
        if (!rec.visibility[k]) continue;
        const double dx = pred2d.at(k, 0) - rec.keypoints2d.at(k, 0);
        const double dy = pred2d.at(k, 1) - rec.keypoints2d.at(k, 1);
        distances.push_back(std::sqrt(dx * dx + dy * dy));
        normalizers.push_back(norm);
      }
    } else {
      skipped = true;
    }

    // head/tail proxy: first and last template keypoints
    const std::size_t tail = tpl.n_keypoints() - 1;
    const double hx = rec.keypoints2d.at(0, 0) - rec.keypoints2d.at(tail, 0);
    const double hy = rec.keypoints2d.at(0, 1) - rec.keypoints2d.at(tail, 1);
    if (visible > 0 && hx * hx + hy * hy > 1e-18) {
      hth += metric::pck_hth(pred2d, rec.keypoints2d, rec.visibility, 0, tail);
      n_hth += 1;
    } else {
      skipped = true;
    }
    rep.n_skipped += skipped ? 1 : 0;
  }

  if (rep.n_samples > 0) {
    rep.pa_mpjpe_mm = mpjpe / rep.n_samples;
    rep.pa_mpvpe_mm = mpvpe / rep.n_samples;
    rep.pa_cd_mm = cd / rep.n_samples;
  }
  if (n_pck > 0) {
    rep.pck_010 = p10 / n_pck;
    rep.pck_015 = p15 / n_pck;
  }
  if (n_hth > 0) rep.pck_hth = hth / n_hth;
  if (!distances.empty())
    rep.auc = metric::auc_from_pck(distances, normalizers, metric::auc_default_grid());
  return rep;
}

metric::MetricsReport evaluate_model(const net::NetworkState& state,
                                     const net::NetworkConfig& net_cfg,
                                     const std::map<body::Taxon, body::ModelTemplate>& templates,
                                     const data::Dataset& ds) {
  return evaluate_predictions(
      [&](const data::SampleRecord& rec) {
        return predict_params(state, net_cfg, templates.at(rec.taxon), rec.image);
      },
      templates, ds);
}

}  // namespace animer::train

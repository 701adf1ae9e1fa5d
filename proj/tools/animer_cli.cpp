#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "animer/datagen.hpp"
#include "animer/io.hpp"
#include "animer/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace animer;

namespace {

json load_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config: " + path);
  return json::parse(is);
}

data::GenConfig gen_from_json(const json& j) {
  data::GenConfig c;
  c.count_quadruped = j.value("count_quadruped", c.count_quadruped);
  c.count_avian = j.value("count_avian", c.count_avian);
  c.beta_sigma = j.value("beta_sigma", c.beta_sigma);
  c.theta_sigma = j.value("theta_sigma", c.theta_sigma);
  c.alpha_lo = j.value("alpha_lo", c.alpha_lo);
  c.alpha_hi = j.value("alpha_hi", c.alpha_hi);
  c.iou_threshold = j.value("iou_threshold", c.iou_threshold);
  c.viewpoint_range = j.value("viewpoint_range", c.viewpoint_range);
  if (j.contains("pos_lo")) c.pos_lo = j.at("pos_lo").get<std::array<double, 3>>();
  if (j.contains("pos_hi")) c.pos_hi = j.at("pos_hi").get<std::array<double, 3>>();
  c.image_h = j.value("image_h", c.image_h);
  c.image_w = j.value("image_w", c.image_w);
  c.families_per_taxon = j.value("families_per_taxon", c.families_per_taxon);
  c.family_center_scale = j.value("family_center_scale", c.family_center_scale);
  c.perturb_radius_px = j.value("perturb_radius_px", c.perturb_radius_px);
  c.visibility_tolerance = j.value("visibility_tolerance", c.visibility_tolerance);
  c.mark_2d_only = j.value("mark_2d_only", c.mark_2d_only);
  c.master_seed = j.value("master_seed", c.master_seed);
  c.name = j.value("name", c.name);
  return c;
}

json default_template_spec() {
  return {{"n_joints", 6}, {"n_shape", 4}, {"n_vertices", 220},
          {"seed_quadruped", 42}, {"seed_avian", 43}};
}

std::map<body::Taxon, body::ModelTemplate> templates_from_json(const json& spec) {
  const std::size_t nj = spec.value("n_joints", 6), ns = spec.value("n_shape", 4),
                    nv = spec.value("n_vertices", 220);
  std::map<body::Taxon, body::ModelTemplate> t;
  t.emplace(body::Taxon::quadruped,
            body::build_toy_template(body::Taxon::quadruped, nj, ns, nv,
                                     spec.value("seed_quadruped", 42)));
  t.emplace(body::Taxon::avian,
            body::build_toy_template(body::Taxon::avian, nj, ns, nv, spec.value("seed_avian", 43)));
  return t;
}

net::NetworkConfig net_from_json(const json& j,
                                 const std::map<body::Taxon, body::ModelTemplate>& templates,
                                 std::size_t image_h, std::size_t image_w) {
  net::NetworkConfig c;
  c.image_h = image_h;
  c.image_w = image_w;
  c.channels = 2;
  c.patch = j.value("patch", 16);
  c.embed_dim = j.value("embed_dim", 32);
  c.n_blocks = j.value("n_blocks", 2);
  c.n_heads = j.value("n_heads", 4);
  c.ffn_hidden = j.value("ffn_hidden", 48);
  c.shared_dim = j.value("shared_dim", 24);
  c.specific_dim = j.value("specific_dim", 8);
  c.decoder_dim = j.value("decoder_dim", 16);
  c.predictor_dim = j.value("predictor_dim", 8);
  c.init_gain = j.value("init_gain", 8.0);
  c.heads.clear();
  for (auto taxon : {body::Taxon::quadruped, body::Taxon::avian}) {
    const auto& tpl = templates.at(taxon);
    c.heads.push_back({tpl.n_shape(), tpl.n_joints(),
                       taxon == body::Taxon::avian ? tpl.n_bones() : 0,
                       taxon == body::Taxon::avian});
  }
  c.validate();
  return c;
}

json net_to_json(const net::NetworkConfig& c) {
  return {{"patch", c.patch},           {"embed_dim", c.embed_dim},
          {"n_blocks", c.n_blocks},     {"n_heads", c.n_heads},
          {"ffn_hidden", c.ffn_hidden}, {"shared_dim", c.shared_dim},
          {"specific_dim", c.specific_dim}, {"decoder_dim", c.decoder_dim},
          {"predictor_dim", c.predictor_dim}, {"init_gain", c.init_gain}};
}

std::map<body::Taxon, loss::PriorDistribution> default_priors(
    const std::map<body::Taxon, body::ModelTemplate>& templates) {
  std::map<body::Taxon, loss::PriorDistribution> priors;
  for (const auto& [taxon, tpl] : templates) priors.emplace(taxon, train::default_prior(tpl));
  return priors;
}

int cmd_gen_data(const std::string& config_path, const std::string& out_dir,
                 std::uint64_t seed, bool seed_given) {
  json cfg_json = config_path.empty() ? json::object() : load_json(config_path);
  auto gen = gen_from_json(cfg_json.value("gen", json::object()));
  if (seed_given) gen.master_seed = seed;
  auto templates = templates_from_json(cfg_json.value("templates", default_template_spec()));
  auto manifest = data::build_dataset(gen, templates, out_dir);
  std::size_t kept = manifest.at("records").size();
  std::cout << "wrote " << kept << " records to " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& data_dirs,
              const std::string& out_dir, int stage, const std::string& resume,
              std::uint64_t seed, bool seed_given) {
  if (data_dirs.empty()) throw std::runtime_error("train: at least one --data directory required");
  json cfg_json = config_path.empty() ? json::object() : load_json(config_path);
  auto cfg = train::TrainConfig::from_json(cfg_json.value("train", json::object()));
  if (seed_given) cfg.seed = seed;

  std::vector<data::Dataset> datasets;
  for (const auto& dir : data_dirs) datasets.push_back(data::load_dataset(dir));
  std::vector<const data::Dataset*> ptrs;
  for (auto& ds : datasets) ptrs.push_back(&ds);
  if (cfg.dataset_weights.empty())
    for (const auto& ds : datasets) cfg.dataset_weights[ds.name] = 1.0;

  const std::size_t h = datasets.front().manifest.at("image_h");
  const std::size_t w = datasets.front().manifest.at("image_w");
  const json tpl_spec = cfg_json.value("templates", default_template_spec());
  auto templates = templates_from_json(tpl_spec);
  auto net_cfg = net_from_json(cfg_json.value("network", json::object()), templates, h, w);
  auto priors = default_priors(templates);

  net::NetworkState state;
  train::OptimizerState opt;
  Rng rng(cfg.seed + static_cast<std::uint64_t>(stage));
  std::size_t start_step = 0;
  if (!resume.empty()) {
    auto ck = io::load_checkpoint(resume);
    train::restore_checkpoint(ck, state, opt, rng);
    const int ck_stage = ck.meta.at("stage");
    if (ck_stage == stage) {
      start_step = ck.meta.at("step");
    } else {
      // fresh stage: LR schedule restarts; moments kept unless configured off
      rng = Rng(cfg.seed + static_cast<std::uint64_t>(stage));
      if (cfg.reset_moments_on_stage2) opt = train::OptimizerState{};
    }
  } else {
    state = net::init_state(net_cfg, cfg.seed);
  }

  fs::create_directories(out_dir);
  auto res = train::run_stage(state, opt, rng, net_cfg, templates, priors, ptrs, cfg, stage,
                              start_step, static_cast<std::size_t>(-1), out_dir);
  res.checkpoint.meta["network"] = net_to_json(net_cfg);
  res.checkpoint.meta["templates"] = tpl_spec;
  res.checkpoint.meta["image_h"] = h;
  res.checkpoint.meta["image_w"] = w;
  const std::string ck_path = (fs::path(out_dir) / ("ck_stage" + std::to_string(stage) + ".bin")).string();
  io::save_checkpoint(ck_path, res.checkpoint);
  if (res.diverged) {
    std::cerr << "training diverged; last good checkpoint written to " << ck_path << "\n";
    return 2;
  }
  std::cout << "stage " << stage << " ran " << res.steps_run << " steps; checkpoint " << ck_path;
  if (!res.loss_trace.empty()) std::cout << "; final loss " << res.loss_trace.back();
  std::cout << "\n";
  return 0;
}

struct LoadedModel {
  net::NetworkState state;
  net::NetworkConfig net_cfg;
  std::map<body::Taxon, body::ModelTemplate> templates;
};

LoadedModel load_model(const std::string& ck_path) {
  auto ck = io::load_checkpoint(ck_path);
  LoadedModel m;
  m.templates = templates_from_json(ck.meta.value("templates", default_template_spec()));
  m.net_cfg = net_from_json(ck.meta.value("network", json::object()), m.templates,
                            ck.meta.value("image_h", 64), ck.meta.value("image_w", 64));
  train::OptimizerState opt;
  Rng rng;
  train::restore_checkpoint(ck, m.state, opt, rng);
  return m;
}

int cmd_eval(const std::string& ck_path, const std::string& data_dir, const std::string& format,
             const std::string& out_path) {
  auto model = load_model(ck_path);
  auto ds = data::load_dataset(data_dir);
  auto rep = train::evaluate_model(model.state, model.net_cfg, model.templates, ds);
  if (format == "json")
    std::cout << rep.to_json().dump(2) << "\n";
  else
    std::cout << rep.to_table();
  if (!out_path.empty()) {
    std::ofstream os(out_path);
    if (!os) throw std::runtime_error("cannot write " + out_path);
    os << rep.to_json().dump(2) << "\n";
  }
  return 0;
}

int cmd_infer(const std::string& ck_path, const std::string& data_dir, std::size_t index,
              const std::string& format) {
  auto model = load_model(ck_path);
  auto ds = data::load_dataset(data_dir);
  if (index >= ds.records.size()) throw std::runtime_error("infer: record index out of range");
  const auto& rec = ds.records[index];
  auto params = train::predict_params(model.state, model.net_cfg, model.templates.at(rec.taxon),
                                      rec.image);
  json out = {{"index", index},
              {"taxon", body::taxon_name(rec.taxon)},
              {"beta", params.beta.values()},
              {"theta", params.theta.values()}};
  if (params.alpha.size() > 0) out["alpha"] = params.alpha.values();
  if (format == "json") {
    std::cout << out.dump(2) << "\n";
  } else {
    std::cout << "record " << index << " (" << body::taxon_name(rec.taxon) << ")\n";
    std::cout << "beta:";
    for (double v : params.beta.values()) std::cout << " " << v;
    std::cout << "\ntheta rows: " << params.theta.dim(0) << "\n";
  }
  return 0;
}

int cmd_export_obj(const std::string& ck_path, const std::string& data_dir, std::size_t index,
                   const std::string& out_path) {
  auto ds = data::load_dataset(data_dir);
  if (index >= ds.records.size())
    throw std::runtime_error("export-obj: record index out of range");
  const auto& rec = ds.records[index];

  body::BodyParams params;
  std::map<body::Taxon, body::ModelTemplate> templates;
  if (!ck_path.empty()) {
    auto model = load_model(ck_path);
    templates = std::move(model.templates);
    params = train::predict_params(model.state, model.net_cfg, templates.at(rec.taxon),
                                   rec.image);
  } else {
    templates = templates_from_json(default_template_spec());
    params = rec.params;  // ground-truth mesh
  }
  const auto& tpl = templates.at(rec.taxon);
  auto mesh = body::model_forward(tpl, params);
  io::export_obj(out_path, mesh.vertices, tpl.faces);
  std::cout << "wrote " << mesh.vertices.dim(0) << " vertices to " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"animal mesh recovery pipeline"};
  app.require_subcommand(1);

  std::string config, out, data_dir, checkpoint, resume, format = "table";
  std::vector<std::string> data_dirs;
  std::uint64_t seed = 0;
  int stage = 1;
  std::size_t index = 0;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--config", config);
  gen->add_option("--out", out)->required();
  auto* gen_seed = gen->add_option("--seed", seed);

  auto* tr = app.add_subcommand("train", "run one training stage");
  tr->add_option("--config", config);
  tr->add_option("--data", data_dirs)->required();
  tr->add_option("--out", out)->required();
  tr->add_option("--stage", stage)->check(CLI::Range(1, 2));
  tr->add_option("--resume", resume);
  auto* tr_seed = tr->add_option("--seed", seed);

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  ev->add_option("--checkpoint", checkpoint)->required();
  ev->add_option("--data", data_dir)->required();
  ev->add_option("--format", format)->check(CLI::IsMember({"table", "json"}));
  ev->add_option("--out", out);

  auto* in = app.add_subcommand("infer", "single-record inference");
  in->add_option("--checkpoint", checkpoint)->required();
  in->add_option("--data", data_dir)->required();
  in->add_option("--index", index);
  in->add_option("--format", format)->check(CLI::IsMember({"table", "json"}));

  auto* ex = app.add_subcommand("export-obj", "export a record's mesh as OBJ");
  ex->add_option("--checkpoint", checkpoint);
  ex->add_option("--data", data_dir)->required();
  ex->add_option("--index", index);
  ex->add_option("--out", out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // usage errors -> 1, --help -> 0
  }

  try {
    if (gen->parsed()) return cmd_gen_data(config, out, seed, gen_seed->count() > 0);
    if (tr->parsed())
      return cmd_train(config, data_dirs, out, stage, resume, seed, tr_seed->count() > 0);
    if (ev->parsed()) return cmd_eval(checkpoint, data_dir, format, out);
    if (in->parsed()) return cmd_infer(checkpoint, data_dir, index, format);
    if (ex->parsed()) return cmd_export_obj(checkpoint, data_dir, index, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

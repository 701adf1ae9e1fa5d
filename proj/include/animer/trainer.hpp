#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "animer/datagen.hpp"
#include "animer/io.hpp"
#include "animer/losses.hpp"
#include "animer/metrics.hpp"
#include "animer/network.hpp"
#include "animer/rng.hpp"

namespace animer::train {

struct TrainConfig {
  std::size_t stage1_steps = 200;
  std::size_t stage2_steps = 200;
  double base_lr = 1e-3;  // paper-scale reference with a pretrained backbone: 1.25e-6
  double beta1 = 0.9, beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  std::size_t batch_size = 16;
  std::map<std::string, double> dataset_weights;  // dataset name -> sampling weight
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 100;
  bool reset_moments_on_stage2 = false;  // default: keep moments, restart the LR ramp
  bool use_mask_loss = false;            // soft-silhouette term is costly at train time
  loss::LossWeights loss_weights;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Weighted mixture over datasets: a draw picks dataset d with probability
/// weight_d / sum(weights), then a uniform record from d. Stage 1 excludes
/// datasets without 3D annotations and renormalizes.
class SampleStream {
 public:
  SampleStream(const std::vector<const data::Dataset*>& datasets,
               const std::map<std::string, double>& weights, int stage);

  const data::SampleRecord& next(Rng& rng);
  std::size_t n_active() const { return active_.size(); }
  const std::string& active_name(std::size_t i) const { return active_[i]->name; }

 private:
  std::vector<const data::Dataset*> active_;
  std::vector<double> cumulative_;  // normalized inclusive prefix sums
};

struct OptimizerState {
  std::map<std::string, Tensor> m, v;  // first/second moment estimates
  std::size_t t = 0;                   // completed (non-skipped) steps
};

/// Decoupled-weight-decay adaptive-moment update. Returns false (and leaves
/// everything untouched) when any gradient is non-finite.
bool optimizer_step(net::NetworkState& state, const std::map<std::string, Tensor>& grads,
                    OptimizerState& opt, double lr, const TrainConfig& cfg);

/// Linear decay: base_lr * (1 - step/total_steps).
double lr_at_step(std::size_t step, std::size_t total_steps, double base_lr);

/// Unit-covariance zero-mean prior sized for the template (toy stand-in for
/// a fitted body prior); avian mean pose zero, mean bone offsets alpha_mean
/// (a fitted prior reflects the population's average bone proportions).
loss::PriorDistribution default_prior(const body::ModelTemplate& tpl, double alpha_mean = 0.0);

io::Checkpoint make_checkpoint(const net::NetworkState& state, const OptimizerState& opt,
                               const TrainConfig& cfg, int stage, std::size_t step,
                               const Rng& rng);
void restore_checkpoint(const io::Checkpoint& ck, net::NetworkState& state, OptimizerState& opt,
                        Rng& rng);

struct StageResult {
  io::Checkpoint checkpoint;       // state at the last completed step
  std::vector<double> loss_trace;  // one entry per completed step
  bool diverged = false;
  std::size_t steps_run = 0;
};

/// Runs steps [start_step, min(end_step, stage_steps)) of the given stage; the
/// LR schedule always spans the full stage. Deterministic in (state, opt,
/// rng). Aborts on a non-finite loss, returning the last good checkpoint.
/// Writes "ck_latest.bin" into checkpoint_dir on cadence when the directory
/// name is non-empty.
StageResult run_stage(net::NetworkState& state, OptimizerState& opt, Rng& rng,
                      const net::NetworkConfig& net_cfg,
                      const std::map<body::Taxon, body::ModelTemplate>& templates,
                      const std::map<body::Taxon, loss::PriorDistribution>& priors,
                      const std::vector<const data::Dataset*>& datasets, const TrainConfig& cfg,
                      int stage, std::size_t start_step = 0,
                      std::size_t end_step = static_cast<std::size_t>(-1),
                      const std::string& checkpoint_dir = "");

/// Taxon-routed single-image inference; gamma is fixed at zero (depth lives in
/// the camera translation).
body::BodyParams predict_params(const net::NetworkState& state, const net::NetworkConfig& net_cfg,
                                const body::ModelTemplate& tpl, const Tensor& image);

using PredictFn = std::function<body::BodyParams(const data::SampleRecord&)>;

/// Shared metric aggregation over a dataset given any predictor.
metric::MetricsReport evaluate_predictions(const PredictFn& predict,
                                           const std::map<body::Taxon, body::ModelTemplate>& templates,
                                           const data::Dataset& ds);

metric::MetricsReport evaluate_model(const net::NetworkState& state,
                                     const net::NetworkConfig& net_cfg,
                                     const std::map<body::Taxon, body::ModelTemplate>& templates,
                                     const data::Dataset& ds);

}  // namespace animer::train

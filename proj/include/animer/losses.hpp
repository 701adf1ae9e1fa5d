#pragma once

#include <optional>
#include <vector>

#include "animer/autodiff.hpp"
#include "animer/bodymodel.hpp"
#include "animer/camera.hpp"
#include "animer/tensor.hpp"

namespace animer::loss {

struct Loss3dWeights {
  double lambda_beta = 0.01;
  double lambda_theta = 0.2;
  double lambda_alpha_avian = 0.04;  // 0 for quadrupeds
};

struct Loss2dWeights {
  double lambda_mask = 2.0;
};

struct SmalPriorWeights {
  double lambda_beta = 0.5;
};

struct AvesPriorWeights {
  double lambda_beta = 0.5;
  double lambda_theta = 1.0;
};

struct LossWeights {
  double lambda_3d = 0.05;
  double lambda_2d = 0.01;
  double lambda_smal_prior = 0.001;
  double lambda_con = 0.0005;
  double lambda_aves_prior = 0.002;
  double tau = 0.07;
  Loss3dWeights loss3d;
  Loss2dWeights loss2d;
  SmalPriorWeights smal_prior;
  AvesPriorWeights aves_prior;
};

/// Gaussian body prior; covariances checked SPD on construction.
struct PriorDistribution {
  Tensor mu_beta;       // (1, n_beta)
  Tensor sigma_beta;    // (n_beta, n_beta)
  Tensor mu_theta;      // (1, 3 n_J)
  Tensor sigma_theta;   // (3 n_J, 3 n_J)
  Tensor theta_bar;     // avian mean pose (n_J, 3)
  Tensor alpha_bar;     // avian mean bone lengths (1, n_bone)

  Tensor sigma_beta_inv, sigma_theta_inv;  // cached on validate()

  /// Throws std::invalid_argument unless both covariances are symmetric SPD.
  void validate();
};

/// Supervised contrastive loss over unit embeddings z (B x d).
ad::Value loss_con_graph(ad::Graph& g, ad::Value z, const std::vector<int>& family_labels,
                         double tau);

/// Eq.-4 style 3D supervision. alpha_hat must be set iff taxon is avian.
ad::Value loss_3d_graph(ad::Graph& g, ad::Value beta_hat, ad::Value theta_hat,
                        std::optional<ad::Value> alpha_hat, ad::Value keypoints3d_hat,
                        const Tensor& beta_gt, const Tensor& theta_gt, const Tensor& alpha_gt,
                        const Tensor& keypoints3d_gt, const Loss3dWeights& w, body::Taxon taxon);

/// Reprojection + mask term. Pixel coordinates are normalized to [-1,1]
/// before the L1, averaged over visible keypoints; soft_mask is (H*W).
ad::Value loss_2d_graph(ad::Graph& g, ad::Value keypoints3d_hat, const camera::CameraSpec& cam,
                        const Tensor& keypoints2d_gt, const std::vector<std::uint8_t>& visibility,
                        ad::Value soft_mask, const std::vector<std::uint8_t>& mask_gt,
                        const Loss2dWeights& w);

/// Mahalanobis prior for quadrupeds (prior must be validate()d).
ad::Value loss_smal_prior_graph(ad::Graph& g, ad::Value beta_hat, ad::Value theta_hat,
                                const PriorDistribution& prior, const SmalPriorWeights& w);

/// Mean-pose / mean-bone prior for avians.
ad::Value loss_aves_prior_graph(ad::Graph& g, ad::Value beta_hat, ad::Value theta_hat,
                                ad::Value alpha_hat, const PriorDistribution& prior,
                                const AvesPriorWeights& w);

/// One batch sample's loss components; unset optionals are gated off.
struct SampleTerms {
  std::optional<ad::Value> l3d;    // present only with 3D annotations
  std::optional<ad::Value> l2d;
  std::optional<ad::Value> prior;  // smal or aves prior per taxon
  body::Taxon taxon = body::Taxon::quadruped;
};

/// Weighted batch total: mean over samples, contrastive term once per batch.
ad::Value loss_total_graph(ad::Graph& g, const std::vector<SampleTerms>& samples,
                           std::optional<ad::Value> l_con, const LossWeights& w);

// ---- eager scalar wrappers -------------------------------------------------

double loss_con(const Tensor& z, const std::vector<int>& family_labels, double tau = 0.07);
double loss_3d(const body::BodyParams& pred, const Tensor& keypoints3d_pred,
               const body::BodyParams& gt, const Tensor& keypoints3d_gt, const Loss3dWeights& w,
               body::Taxon taxon);
double loss_smal_prior(const Tensor& beta_hat, const Tensor& theta_hat,
                       const PriorDistribution& prior, const SmalPriorWeights& w);
double loss_aves_prior(const Tensor& beta_hat, const Tensor& theta_hat, const Tensor& alpha_hat,
                       const PriorDistribution& prior, const AvesPriorWeights& w);

}  // namespace animer::loss

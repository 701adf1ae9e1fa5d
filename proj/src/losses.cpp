#include "animer/losses.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace animer::loss {

namespace {

Eigen::MatrixXd to_eigen(const Tensor& t) {
  if (t.rank() != 2) throw std::invalid_argument("covariance must be a matrix");
  Eigen::MatrixXd m(t.dim(0), t.dim(1));
  for (std::size_t r = 0; r < t.dim(0); ++r)
    for (std::size_t c = 0; c < t.dim(1); ++c) m(r, c) = t.at(r, c);
  return m;
}

Tensor from_eigen(const Eigen::MatrixXd& m) {
  Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) t.at(r, c) = m(r, c);
  return t;
}

Tensor spd_inverse(const Tensor& sigma, const char* what) {
  Eigen::MatrixXd m = to_eigen(sigma);
  if (m.rows() != m.cols()) throw std::invalid_argument(std::string(what) + ": not square");
  const double scale = m.cwiseAbs().maxCoeff();
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, scale))
    throw std::invalid_argument(std::string(what) + ": not symmetric");
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument(std::string(what) + ": not positive definite");
  return from_eigen(llt.solve(Eigen::MatrixXd::Identity(m.rows(), m.cols())));
}

// constant with the same payload as `t` but reshaped to match `like`
ad::Value const_like(ad::Graph& g, const Tensor& t, const std::vector<std::size_t>& like,
                     const char* what) {
  std::size_t n = 1;
  for (auto d : like) n *= d;
  if (t.size() != n) throw std::invalid_argument(std::string(what) + ": size mismatch");
  return g.constant(Tensor(like, t.values()));
}

ad::Value zero_scalar(ad::Graph& g) { return g.constant(Tensor::scalar(0.0)); }

// identity pass-through that rejects non-unit rows at evaluation time
ad::Value check_unit_rows(ad::Graph& g, ad::Value z) {
  auto shape = z.shape();
  return g.op(
      "check_unit_rows", {z}, shape,
      [](const std::vector<const Tensor*>& in) {
        const Tensor& x = *in[0];
        const std::size_t rows = x.dim(0), cols = x.rank() == 2 ? x.dim(1) : 1;
        for (std::size_t r = 0; r < rows; ++r) {
          double n2 = 0;
          for (std::size_t c = 0; c < cols; ++c) n2 += x[r * cols + c] * x[r * cols + c];
          if (std::abs(std::sqrt(n2) - 1.0) > 1e-6)
            throw std::invalid_argument("loss_con: embedding row is not unit-norm");
        }
        return x;
      },
      [](const std::vector<const Tensor*>&, const Tensor&, const Tensor& grad) {
        return std::vector<Tensor>{grad};
      });
}

}  // namespace

void PriorDistribution::validate() {
  sigma_beta_inv = spd_inverse(sigma_beta, "sigma_beta");
  sigma_theta_inv = spd_inverse(sigma_theta, "sigma_theta");
  if (mu_beta.size() != sigma_beta.dim(0) || mu_theta.size() != sigma_theta.dim(0))
    throw std::invalid_argument("prior: mean/covariance size mismatch");
}

ad::Value loss_con_graph(ad::Graph& g, ad::Value z, const std::vector<int>& family_labels,
                         double tau) {
  if (tau <= 0) throw std::invalid_argument("loss_con: tau must be positive");
  const std::size_t b = z.shape().at(0);
  if (b < 2) throw std::invalid_argument("loss_con: batch size must be >= 2");
  if (family_labels.size() != b) throw std::invalid_argument("loss_con: label count mismatch");

  auto zc = check_unit_rows(g, z);
  auto sims = ad::scale(ad::matmul(zc, ad::transpose(zc)), 1.0 / tau);

  // self-similarities knocked out of the denominator (exp underflows to 0)
  Tensor diag_mask({b, b});
  for (std::size_t i = 0; i < b; ++i) diag_mask.at(i, i) = -1e4;
  auto lse = ad::log(ad::row_sum(ad::exp(ad::add(sims, g.constant(diag_mask)))));  // (b,1)

  // positives matrix: 1/|P(i)| at same-label pairs, i != j
  Tensor positives({b, b});
  for (std::size_t i = 0; i < b; ++i) {
    std::size_t count = 0;
    for (std::size_t j = 0; j < b; ++j)
      if (j != i && family_labels[j] == family_labels[i]) ++count;
    if (count == 0) continue;
    for (std::size_t j = 0; j < b; ++j)
      if (j != i && family_labels[j] == family_labels[i])
        positives.at(i, j) = 1.0 / static_cast<double>(count);
  }
  return ad::neg(ad::sum(ad::mul(g.constant(positives), ad::sub(sims, lse))));
}

ad::Value loss_3d_graph(ad::Graph& g, ad::Value beta_hat, ad::Value theta_hat,
                        std::optional<ad::Value> alpha_hat, ad::Value keypoints3d_hat,
                        const Tensor& beta_gt, const Tensor& theta_gt, const Tensor& alpha_gt,
                        const Tensor& keypoints3d_gt, const Loss3dWeights& w, body::Taxon taxon) {
  auto beta_term = ad::sum(ad::square(ad::sub(beta_hat, const_like(g, beta_gt, beta_hat.shape(), "beta_gt"))));
  auto theta_term =
      ad::sum(ad::square(ad::sub(theta_hat, const_like(g, theta_gt, theta_hat.shape(), "theta_gt"))));
  const std::size_t n_k = keypoints3d_hat.shape().at(0);
  auto kp_term = ad::scale(
      ad::sum(ad::abs(ad::sub(keypoints3d_hat,
                              const_like(g, keypoints3d_gt, keypoints3d_hat.shape(), "kp3d_gt")))),
      1.0 / static_cast<double>(n_k));
  auto total = ad::add(ad::add(ad::scale(beta_term, w.lambda_beta),
                               ad::scale(theta_term, w.lambda_theta)),
                       kp_term);
  if (taxon == body::Taxon::avian) {
    if (!alpha_hat) throw std::invalid_argument("loss_3d: avian sample requires alpha_hat");
    auto alpha_term = ad::sum(
        ad::abs(ad::sub(*alpha_hat, const_like(g, alpha_gt, alpha_hat->shape(), "alpha_gt"))));
    total = ad::add(total, ad::scale(alpha_term, w.lambda_alpha_avian));
  }
  return total;
}

ad::Value loss_2d_graph(ad::Graph& g, ad::Value keypoints3d_hat, const camera::CameraSpec& cam,
                        const Tensor& keypoints2d_gt, const std::vector<std::uint8_t>& visibility,
                        ad::Value soft_mask, const std::vector<std::uint8_t>& mask_gt,
                        const Loss2dWeights& w) {
  const std::size_t n_k = keypoints3d_hat.shape().at(0);
  if (keypoints2d_gt.dim(0) != n_k || visibility.size() != n_k)
    throw std::invalid_argument("loss_2d: keypoint count mismatch");
  if (soft_mask.shape().at(0) != mask_gt.size())
    throw std::invalid_argument("loss_2d: mask resolution mismatch");

  // pixel -> [-1,1] normalization, shared by prediction and ground truth
  Tensor axis_scale({1, 2}, {2.0 / static_cast<double>(cam.width), 2.0 / static_cast<double>(cam.height)});
  auto normalize = [&](ad::Value px) {
    return ad::add_const(ad::mul(px, g.constant(axis_scale)), -1.0);
  };
  auto proj = normalize(camera::project_graph(g, keypoints3d_hat, cam));
  Tensor gt_norm({n_k, 2});
  for (std::size_t i = 0; i < n_k; ++i) {
    gt_norm.at(i, 0) = 2.0 * keypoints2d_gt.at(i, 0) / static_cast<double>(cam.width) - 1.0;
    gt_norm.at(i, 1) = 2.0 * keypoints2d_gt.at(i, 1) / static_cast<double>(cam.height) - 1.0;
  }
  Tensor vis({n_k, 1});
  std::size_t n_vis = 0;
  for (std::size_t i = 0; i < n_k; ++i) {
    vis.at(i, 0) = visibility[i] ? 1.0 : 0.0;
    n_vis += visibility[i] != 0;
  }
  auto kp_term = ad::scale(
      ad::sum(ad::mul(ad::abs(ad::sub(proj, g.constant(gt_norm))), g.constant(vis))),
      1.0 / static_cast<double>(n_vis == 0 ? 1 : n_vis));

  Tensor gt_mask({mask_gt.size()});
  for (std::size_t i = 0; i < mask_gt.size(); ++i) gt_mask[i] = mask_gt[i] ? 1.0 : 0.0;
  auto mask_term = ad::sum(ad::square(ad::sub(soft_mask, const_like(g, gt_mask, soft_mask.shape(), "mask_gt"))));
  return ad::add(kp_term, ad::scale(mask_term, w.lambda_mask));
}

namespace {

ad::Value mahalanobis(ad::Graph& g, ad::Value x, const Tensor& mu, const Tensor& sigma_inv,
                      const char* what) {
  const std::size_t n = mu.size();
  std::size_t xs = 1;
  for (auto d : x.shape()) xs *= d;
  if (xs != n) throw std::invalid_argument(std::string(what) + ": dimension mismatch");
  auto d = ad::sub(ad::reshape(x, {1, n}), g.constant(Tensor({1, n}, mu.values())));
  return ad::sum(ad::mul(ad::matmul(d, g.constant(sigma_inv)), d));
}

}  // namespace

ad::Value loss_smal_prior_graph(ad::Graph& g, ad::Value beta_hat, ad::Value theta_hat,
                                const PriorDistribution& prior, const SmalPriorWeights& w) {
  if (prior.sigma_beta_inv.size() == 0 || prior.sigma_theta_inv.size() == 0)
    throw std::invalid_argument("loss_smal_prior: prior not validated");
  auto beta_term = mahalanobis(g, beta_hat, prior.mu_beta, prior.sigma_beta_inv, "smal beta");
  auto theta_term = mahalanobis(g, theta_hat, prior.mu_theta, prior.sigma_theta_inv, "smal theta");
  return ad::add(ad::scale(beta_term, w.lambda_beta), theta_term);
}

ad::Value loss_aves_prior_graph(ad::Graph& g, ad::Value beta_hat, ad::Value theta_hat,
                                ad::Value alpha_hat, const PriorDistribution& prior,
                                const AvesPriorWeights& w) {
  auto beta_term = ad::sum(ad::square(beta_hat));
  auto theta_term = ad::sum(ad::square(
      ad::sub(theta_hat, const_like(g, prior.theta_bar, theta_hat.shape(), "theta_bar"))));
  auto alpha_term = ad::sum(ad::square(
      ad::sub(alpha_hat, const_like(g, prior.alpha_bar, alpha_hat.shape(), "alpha_bar"))));
  return ad::add(ad::add(ad::scale(beta_term, w.lambda_beta), ad::scale(theta_term, w.lambda_theta)),
                 alpha_term);
}

ad::Value loss_total_graph(ad::Graph& g, const std::vector<SampleTerms>& samples,
                           std::optional<ad::Value> l_con, const LossWeights& w) {
  auto acc = zero_scalar(g);
  for (const auto& s : samples) {
    if (s.l3d) acc = ad::add(acc, ad::scale(*s.l3d, w.lambda_3d));
    if (s.l2d) acc = ad::add(acc, ad::scale(*s.l2d, w.lambda_2d));
    if (s.prior) {
      const double lp =
          s.taxon == body::Taxon::quadruped ? w.lambda_smal_prior : w.lambda_aves_prior;
      acc = ad::add(acc, ad::scale(*s.prior, lp));
    }
  }
  if (!samples.empty()) acc = ad::scale(acc, 1.0 / static_cast<double>(samples.size()));
  if (l_con) acc = ad::add(acc, ad::scale(*l_con, w.lambda_con));
  return acc;
}

// ---- eager wrappers ---------------------------------------------------------

double loss_con(const Tensor& z, const std::vector<int>& family_labels, double tau) {
  ad::Graph g;
  g.mark_output("loss", loss_con_graph(g, g.constant(z), family_labels, tau));
  return g.evaluate_one("loss")[0];
}

double loss_3d(const body::BodyParams& pred, const Tensor& keypoints3d_pred,
               const body::BodyParams& gt, const Tensor& keypoints3d_gt, const Loss3dWeights& w,
               body::Taxon taxon) {
  ad::Graph g;
  std::optional<ad::Value> alpha;
  if (taxon == body::Taxon::avian) alpha = g.constant(pred.alpha);
  g.mark_output("loss", loss_3d_graph(g, g.constant(pred.beta), g.constant(pred.theta), alpha,
                                      g.constant(keypoints3d_pred), gt.beta, gt.theta, gt.alpha,
                                      keypoints3d_gt, w, taxon));
  return g.evaluate_one("loss")[0];
}

double loss_smal_prior(const Tensor& beta_hat, const Tensor& theta_hat,
                       const PriorDistribution& prior, const SmalPriorWeights& w) {
  ad::Graph g;
  g.mark_output("loss",
                loss_smal_prior_graph(g, g.constant(beta_hat), g.constant(theta_hat), prior, w));
  return g.evaluate_one("loss")[0];
}

double loss_aves_prior(const Tensor& beta_hat, const Tensor& theta_hat, const Tensor& alpha_hat,
                       const PriorDistribution& prior, const AvesPriorWeights& w) {
  if (alpha_hat.size() == 0) throw std::invalid_argument("loss_aves_prior: missing alpha_hat");
  ad::Graph g;
  g.mark_output("loss", loss_aves_prior_graph(g, g.constant(beta_hat), g.constant(theta_hat),
                                              g.constant(alpha_hat), prior, w));
  return g.evaluate_one("loss")[0];
}

}  // namespace animer::loss

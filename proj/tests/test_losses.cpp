#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "animer/losses.hpp"
#include "animer/rng.hpp"

using namespace animer;
using namespace animer::loss;

namespace {

Tensor unit_rows(Rng& rng, std::size_t b, std::size_t d) {
  Tensor z({b, d});
  for (std::size_t r = 0; r < b; ++r) {
    double n2 = 0;
    for (std::size_t c = 0; c < d; ++c) {
      z.at(r, c) = rng.normal();
      n2 += z.at(r, c) * z.at(r, c);
    }
    for (std::size_t c = 0; c < d; ++c) z.at(r, c) /= std::sqrt(n2);
  }
  return z;
}

// brute-force double-loop evaluation of the supervised contrastive loss
double con_oracle(const Tensor& z, const std::vector<int>& labels, double tau) {
  const std::size_t b = z.dim(0), d = z.dim(1);
  auto dot = [&](std::size_t i, std::size_t j) {
    double s = 0;
    for (std::size_t c = 0; c < d; ++c) s += z.at(i, c) * z.at(j, c);
    return s;
  };
  double total = 0;
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<std::size_t> pos;
    for (std::size_t j = 0; j < b; ++j)
      if (j != i && labels[j] == labels[i]) pos.push_back(j);
    if (pos.empty()) continue;
    double denom = 0;
    for (std::size_t o = 0; o < b; ++o)
      if (o != i) denom += std::exp(dot(i, o) / tau);
    double inner = 0;
    for (auto p : pos) inner += std::log(std::exp(dot(i, p) / tau) / denom);
    total += -inner / static_cast<double>(pos.size());
  }
  return total;
}

PriorDistribution random_prior(Rng& rng, std::size_t n_beta, std::size_t n_j, std::size_t n_bone) {
  PriorDistribution p;
  p.mu_beta = Tensor({1, n_beta});
  for (auto& v : p.mu_beta.values()) v = rng.normal();
  p.mu_theta = Tensor({1, 3 * n_j});
  for (auto& v : p.mu_theta.values()) v = 0.2 * rng.normal();
  auto spd = [&](std::size_t n) {
    Tensor a({n, n});
    for (auto& v : a.values()) v = rng.normal();
    Tensor s({n, n});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double acc = i == j ? 0.5 * n : 0.0;  // diagonal boost keeps it PD
        for (std::size_t k = 0; k < n; ++k) acc += a.at(i, k) * a.at(j, k);
        s.at(i, j) = acc;
      }
    return s;
  };
  p.sigma_beta = spd(n_beta);
  p.sigma_theta = spd(3 * n_j);
  p.theta_bar = Tensor({n_j, 3});
  for (auto& v : p.theta_bar.values()) v = 0.1 * rng.normal();
  p.alpha_bar = Tensor({1, n_bone});
  for (auto& v : p.alpha_bar.values()) v = rng.uniform(-0.2, 0.8);
  p.validate();
  return p;
}

}  // namespace

TEST_CASE("loss_con: trivial cases") {
  Tensor same({2, 3}, {1, 0, 0, 1, 0, 0});
  CHECK(loss_con(same, {4, 4}, 1.0) == doctest::Approx(0.0).epsilon(1e-12));

  Rng rng(1);
  Tensor z = unit_rows(rng, 4, 8);
  CHECK(loss_con(z, {0, 1, 2, 3}, 0.07) == 0.0);  // no positives anywhere
}

TEST_CASE("loss_con: matches the brute-force double loop") {
  Rng rng(2);
  for (int trial = 0; trial < 8; ++trial) {
    const std::size_t b = 5;
    Tensor z = unit_rows(rng, b, 16);
    std::vector<int> labels(b);
    for (auto& l : labels) l = static_cast<int>(rng.index(3));
    const double tau = 0.07;
    CHECK(loss_con(z, labels, tau) == doctest::Approx(con_oracle(z, labels, tau)).epsilon(1e-12));
  }
}

TEST_CASE("loss_con: permutation invariance") {
  Rng rng(3);
  Tensor z = unit_rows(rng, 6, 12);
  std::vector<int> labels = {0, 1, 0, 2, 1, 0};
  const double base = loss_con(z, labels, 0.07);
  std::vector<std::size_t> perm = {3, 0, 5, 1, 4, 2};
  Tensor zp({6, 12});
  std::vector<int> lp(6);
  for (std::size_t i = 0; i < 6; ++i) {
    lp[i] = labels[perm[i]];
    for (std::size_t c = 0; c < 12; ++c) zp.at(i, c) = z.at(perm[i], c);
  }
  CHECK(loss_con(zp, lp, 0.07) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("loss_con: invariance under a global orthogonal transform") {
  Rng rng(4);
  const std::size_t d = 8;
  // Householder reflection H = I - 2uu^T
  Tensor u({d});
  double n2 = 0;
  for (auto& v : u.values()) {
    v = rng.normal();
    n2 += v * v;
  }
  for (auto& v : u.values()) v /= std::sqrt(n2);
  Tensor z = unit_rows(rng, 5, d);
  Tensor zr({5, d});
  for (std::size_t r = 0; r < 5; ++r) {
    double proj = 0;
    for (std::size_t c = 0; c < d; ++c) proj += z.at(r, c) * u[c];
    for (std::size_t c = 0; c < d; ++c) zr.at(r, c) = z.at(r, c) - 2.0 * proj * u[c];
  }
  std::vector<int> labels = {0, 1, 0, 1, 1};
  CHECK(loss_con(zr, labels, 0.07) == doctest::Approx(loss_con(z, labels, 0.07)).epsilon(1e-10));
}

TEST_CASE("loss_con: rejects tiny batches and non-unit rows") {
  CHECK_THROWS_AS(loss_con(Tensor({1, 3}, {1, 0, 0}), {0}, 0.07), std::invalid_argument);
  Tensor bad({2, 3}, {1, 0, 0, 2, 0, 0});
  CHECK_THROWS_AS(loss_con(bad, {0, 0}, 0.07), std::invalid_argument);
  CHECK_THROWS_AS(loss_con(Tensor({2, 3}, {1, 0, 0, 1, 0, 0}), {0, 0}, -1.0),
                  std::invalid_argument);
}

TEST_CASE("loss_3d: zero at exact match, alpha gated by taxon, matches oracle") {
  Rng rng(5);
  auto tpl = body::build_toy_template(body::Taxon::avian, 5, 3, 120, 9);
  auto gt = body::BodyParams::zero(tpl);
  for (auto& v : gt.beta.values()) v = rng.normal();
  for (auto& v : gt.theta.values()) v = 0.2 * rng.normal();
  for (auto& v : gt.alpha.values()) v = rng.uniform(-0.2, 1.0);
  Tensor kp_gt({tpl.n_keypoints(), 3});
  for (auto& v : kp_gt.values()) v = rng.normal();

  Loss3dWeights w;
  CHECK(loss_3d(gt, kp_gt, gt, kp_gt, w, body::Taxon::avian) == 0.0);

  auto pred = gt;
  for (auto& v : pred.beta.values()) v += 0.3 * rng.normal();
  for (auto& v : pred.theta.values()) v += 0.1 * rng.normal();
  for (auto& v : pred.alpha.values()) v += 0.2 * rng.normal();
  Tensor kp_pred = kp_gt;
  for (auto& v : kp_pred.values()) v += 0.1 * rng.normal();

  double beta_sq = 0, theta_sq = 0, alpha_l1 = 0, kp_l1 = 0;
  for (std::size_t i = 0; i < gt.beta.size(); ++i) {
    const double d = pred.beta[i] - gt.beta[i];
    beta_sq += d * d;
  }
  for (std::size_t i = 0; i < gt.theta.size(); ++i) {
    const double d = pred.theta[i] - gt.theta[i];
    theta_sq += d * d;
  }
  for (std::size_t i = 0; i < gt.alpha.size(); ++i) alpha_l1 += std::abs(pred.alpha[i] - gt.alpha[i]);
  for (std::size_t i = 0; i < kp_gt.size(); ++i) kp_l1 += std::abs(kp_pred[i] - kp_gt[i]);
  kp_l1 /= static_cast<double>(tpl.n_keypoints());

  const double expected = w.lambda_beta * beta_sq + w.lambda_theta * theta_sq + kp_l1 +
                          w.lambda_alpha_avian * alpha_l1;
  CHECK(loss_3d(pred, kp_pred, gt, kp_gt, w, body::Taxon::avian) ==
        doctest::Approx(expected).epsilon(1e-12));

  // quadruped: identical inputs, alpha term dropped entirely
  const double expected_quad = w.lambda_beta * beta_sq + w.lambda_theta * theta_sq + kp_l1;
  CHECK(loss_3d(pred, kp_pred, gt, kp_gt, w, body::Taxon::quadruped) ==
        doctest::Approx(expected_quad).epsilon(1e-12));
}

TEST_CASE("loss_2d: zero at perfect reprojection, visibility masking, oracle") {
  Rng rng(6);
  auto cam = camera::CameraSpec::with_defaults(32, 32);
  cam.translation = {0.0, 0.0, 5.0};
  const std::size_t n_k = 6;
  Tensor kp3d({n_k, 3});
  for (std::size_t i = 0; i < n_k; ++i) {
    kp3d.at(i, 0) = 0.3 * rng.normal();
    kp3d.at(i, 1) = 0.3 * rng.normal();
    kp3d.at(i, 2) = 0.3 * rng.normal();
  }
  auto proj = camera::project(kp3d, cam);
  std::vector<std::uint8_t> vis(n_k, 1);
  std::vector<std::uint8_t> mask(32 * 32, 0);
  Tensor soft({32 * 32});
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = rng.uniform() < 0.3 ? 1 : 0;
    soft[i] = mask[i];
  }
  Loss2dWeights w;
  ad::Graph g;
  g.mark_output("loss", loss_2d_graph(g, g.constant(kp3d), cam, proj.pixels, vis,
                                      g.constant(soft), mask, w));
  CHECK(g.evaluate_one("loss")[0] == doctest::Approx(0.0).epsilon(1e-12));

  // perturbed keypoints + soft mask, some invisible keypoints
  Tensor kp_pred = kp3d;
  for (auto& v : kp_pred.values()) v += 0.05 * rng.normal();
  vis = {1, 0, 1, 1, 0, 1};
  Tensor soft2 = soft;
  for (auto& v : soft2.values()) v = std::clamp(v + 0.1 * rng.normal(), 0.0, 1.0);

  auto pred_px = camera::project(kp_pred, cam);
  double kp_term = 0;
  std::size_t n_vis = 0;
  for (std::size_t i = 0; i < n_k; ++i) {
    if (!vis[i]) continue;
    ++n_vis;
    kp_term += std::abs(pred_px.pixels.at(i, 0) - proj.pixels.at(i, 0)) * 2.0 / 32.0;
    kp_term += std::abs(pred_px.pixels.at(i, 1) - proj.pixels.at(i, 1)) * 2.0 / 32.0;
  }
  kp_term /= static_cast<double>(n_vis);
  double mask_term = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const double d = soft2[i] - mask[i];
    mask_term += d * d;
  }
  ad::Graph g2;
  g2.mark_output("loss", loss_2d_graph(g2, g2.constant(kp_pred), cam, proj.pixels, vis,
                                       g2.constant(soft2), mask, w));
  CHECK(g2.evaluate_one("loss")[0] ==
        doctest::Approx(kp_term + w.lambda_mask * mask_term).epsilon(1e-12));

  // all keypoints invisible: keypoint term vanishes, mask term alone remains
  ad::Graph g3;
  g3.mark_output("loss", loss_2d_graph(g3, g3.constant(kp_pred), cam, proj.pixels,
                                       std::vector<std::uint8_t>(n_k, 0), g3.constant(soft2),
                                       mask, w));
  CHECK(g3.evaluate_one("loss")[0] == doctest::Approx(w.lambda_mask * mask_term).epsilon(1e-12));
}

TEST_CASE("loss_smal_prior: mean point, identity covariance, solve oracle") {
  Rng rng(7);
  const std::size_t n_beta = 4, n_j = 5;
  auto prior = random_prior(rng, n_beta, n_j, n_j - 1);
  SmalPriorWeights w;

  Tensor beta_mu({n_beta}, prior.mu_beta.values());
  Tensor theta_mu({n_j, 3}, prior.mu_theta.values());
  CHECK(loss_smal_prior(beta_mu, theta_mu, prior, w) == doctest::Approx(0.0).epsilon(1e-12));

  // identity covariances reduce to weighted squared norms
  PriorDistribution iso = prior;
  iso.sigma_beta = Tensor::eye(n_beta);
  iso.sigma_theta = Tensor::eye(3 * n_j);
  iso.validate();
  Tensor beta_hat({n_beta});
  for (auto& v : beta_hat.values()) v = rng.normal();
  Tensor theta_hat({n_j, 3});
  for (auto& v : theta_hat.values()) v = rng.normal();
  double nb = 0, nt = 0;
  for (std::size_t i = 0; i < n_beta; ++i) {
    const double d = beta_hat[i] - prior.mu_beta[i];
    nb += d * d;
  }
  for (std::size_t i = 0; i < 3 * n_j; ++i) {
    const double d = theta_hat[i] - prior.mu_theta[i];
    nt += d * d;
  }
  CHECK(loss_smal_prior(beta_hat, theta_hat, iso, w) ==
        doctest::Approx(w.lambda_beta * nb + nt).epsilon(1e-12));

  // general SPD case against a Gaussian-elimination solve oracle
  auto solve_quad = [](const Tensor& sigma, const std::vector<double>& d) {
    const std::size_t n = d.size();
    std::vector<std::vector<double>> m(n, std::vector<double>(n + 1));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) m[i][j] = sigma.at(i, j);
      m[i][n] = d[i];
    }
    for (std::size_t c = 0; c < n; ++c) {
      std::size_t piv = c;
      for (std::size_t r = c + 1; r < n; ++r)
        if (std::abs(m[r][c]) > std::abs(m[piv][c])) piv = r;
      std::swap(m[c], m[piv]);
      for (std::size_t r = 0; r < n; ++r) {
        if (r == c) continue;
        const double f = m[r][c] / m[c][c];
        for (std::size_t k = c; k <= n; ++k) m[r][k] -= f * m[c][k];
      }
    }
    double quad = 0;
    for (std::size_t i = 0; i < n; ++i) quad += d[i] * (m[i][n] / m[i][i]);
    return quad;
  };
  std::vector<double> db(n_beta), dt(3 * n_j);
  for (std::size_t i = 0; i < n_beta; ++i) db[i] = beta_hat[i] - prior.mu_beta[i];
  for (std::size_t i = 0; i < 3 * n_j; ++i) dt[i] = theta_hat[i] - prior.mu_theta[i];
  const double expected =
      w.lambda_beta * solve_quad(prior.sigma_beta, db) + solve_quad(prior.sigma_theta, dt);
  CHECK(loss_smal_prior(beta_hat, theta_hat, prior, w) == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("prior validation rejects asymmetric and indefinite covariances") {
  PriorDistribution p;
  p.mu_beta = Tensor({1, 2});
  p.mu_theta = Tensor({1, 3});
  p.sigma_beta = Tensor({2, 2}, {1, 0.5, -0.5, 1});
  p.sigma_theta = Tensor::eye(3);
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p.sigma_beta = Tensor({2, 2}, {1, 2, 2, 1});  // symmetric, indefinite
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}

TEST_CASE("loss_aves_prior: prior mode, unit offset, oracle") {
  Rng rng(8);
  const std::size_t n_j = 5, n_bone = 4, n_beta = 3;
  auto prior = random_prior(rng, n_beta, n_j, n_bone);
  AvesPriorWeights w;

  Tensor beta0({n_beta});
  Tensor theta_bar = prior.theta_bar;
  Tensor alpha_bar({n_bone}, prior.alpha_bar.values());
  CHECK(loss_aves_prior(beta0, theta_bar, alpha_bar, prior, w) == 0.0);

  Tensor theta_off = theta_bar;
  theta_off[0] += 1.0;
  CHECK(loss_aves_prior(beta0, theta_off, alpha_bar, prior, w) ==
        doctest::Approx(w.lambda_theta).epsilon(1e-12));

  Tensor beta({n_beta}), theta({n_j, 3}), alpha({n_bone});
  for (auto& v : beta.values()) v = rng.normal();
  for (auto& v : theta.values()) v = rng.normal();
  for (auto& v : alpha.values()) v = rng.normal();
  double sb = 0, st = 0, sa = 0;
  for (std::size_t i = 0; i < beta.size(); ++i) sb += beta[i] * beta[i];
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double d = theta[i] - prior.theta_bar[i];
    st += d * d;
  }
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    const double d = alpha[i] - prior.alpha_bar[i];
    sa += d * d;
  }
  CHECK(loss_aves_prior(beta, theta, alpha, prior, w) ==
        doctest::Approx(w.lambda_beta * sb + w.lambda_theta * st + sa).epsilon(1e-12));
}

TEST_CASE("default loss weights are the paper values") {
  LossWeights w;
  CHECK(w.lambda_3d == 0.05);
  CHECK(w.lambda_2d == 0.01);
  CHECK(w.lambda_smal_prior == 0.001);
  CHECK(w.lambda_con == 0.0005);
  CHECK(w.lambda_aves_prior == 0.002);
  CHECK(w.tau == 0.07);
  CHECK(w.loss3d.lambda_beta == 0.01);
  CHECK(w.loss3d.lambda_theta == 0.2);
  CHECK(w.loss3d.lambda_alpha_avian == 0.04);
  CHECK(w.loss2d.lambda_mask == 2.0);
  CHECK(w.smal_prior.lambda_beta == 0.5);
  CHECK(w.aves_prior.lambda_beta == 0.5);
  CHECK(w.aves_prior.lambda_theta == 1.0);
}

TEST_CASE("loss_total: zero components, gating, batch mean") {
  ad::Graph g;
  LossWeights w;
  std::vector<SampleTerms> samples(2);
  auto zero = g.constant(Tensor::scalar(0.0));
  for (auto& s : samples) {
    s.l3d = zero;
    s.l2d = zero;
    s.prior = zero;
  }
  g.mark_output("loss", loss_total_graph(g, samples, zero, w));
  CHECK(g.evaluate_one("loss")[0] == 0.0);

  ad::Graph g2;
  std::vector<SampleTerms> s2(2);
  s2[0].taxon = body::Taxon::quadruped;
  s2[0].prior = g2.constant(Tensor::scalar(3.0));
  s2[1].taxon = body::Taxon::avian;
  s2[1].prior = g2.constant(Tensor::scalar(5.0));
  s2[1].l3d = g2.constant(Tensor::scalar(7.0));
  g2.mark_output("loss", loss_total_graph(g2, s2, std::nullopt, w));
  const double expected =
      (w.lambda_smal_prior * 3.0 + w.lambda_aves_prior * 5.0 + w.lambda_3d * 7.0) / 2.0;
  CHECK(g2.evaluate_one("loss")[0] == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("loss_total: without 3D annotations the beta gradient flows only through the prior") {
  Rng rng(9);
  const std::size_t n_beta = 3, n_j = 4;
  auto prior = random_prior(rng, n_beta, n_j, n_j - 1);
  LossWeights w;

  auto build = [&](bool with_3d) {
    auto g = std::make_unique<ad::Graph>();
    Tensor beta0({n_beta}, {0.3, -0.2, 0.5});
    Tensor theta0 = Tensor::zeros({n_j, 3});
    auto beta = g->param("beta", beta0);
    auto theta = g->param("theta", theta0, false);
    SampleTerms s;
    s.taxon = body::Taxon::quadruped;
    s.prior = loss_smal_prior_graph(*g, beta, theta, prior, w.smal_prior);
    if (with_3d) {
      Tensor kp = Tensor::zeros({2, 3});
      auto kp_hat = g->constant(kp);
      s.l3d = loss_3d_graph(*g, beta, theta, std::nullopt, kp_hat, Tensor::zeros({n_beta}),
                            theta0, Tensor(), kp, w.loss3d, body::Taxon::quadruped);
    }
    g->mark_output("loss", loss_total_graph(*g, {s}, std::nullopt, w));
    return g;
  };

  auto g_no3d = build(false);
  auto g_3d = build(true);
  auto grad_no3d = g_no3d->gradient("loss").at("beta");
  auto grad_3d = g_3d->gradient("loss").at("beta");

  // prior-only gradient, computed by hand from the validated inverse
  Tensor expected({n_beta});
  for (std::size_t i = 0; i < n_beta; ++i) {
    double acc = 0;
    for (std::size_t j = 0; j < n_beta; ++j) {
      const double dj = g_no3d->param_value("beta")[j] - prior.mu_beta[j];
      acc += 2.0 * prior.sigma_beta_inv.at(i, j) * dj;
    }
    expected[i] = w.lambda_smal_prior * w.smal_prior.lambda_beta * acc;
  }
  for (std::size_t i = 0; i < n_beta; ++i) {
    CHECK(grad_no3d[i] == doctest::Approx(expected[i]).epsilon(1e-10));
    // with 3D supervision the beta gradient picks up the extra path
    CHECK(std::abs(grad_3d[i] - grad_no3d[i]) > 1e-6);
  }
}

TEST_CASE("all losses pass grad_check at random points") {
  Rng rng(10);
  const std::size_t n_beta = 3, n_j = 4, n_bone = 3, n_k = 5;
  auto prior = random_prior(rng, n_beta, n_j, n_bone);
  LossWeights w;
  auto cam = camera::CameraSpec::with_defaults(16, 16);
  cam.translation = {0.0, 0.0, 5.0};

  for (int trial = 0; trial < 10; ++trial) {
    ad::Graph g;
    Tensor beta0({n_beta}), theta0({n_j, 3}), alpha0({n_bone}), kp0({n_k, 3}), z0({4, 6});
    for (auto& v : beta0.values()) v = 0.5 * rng.normal();
    for (auto& v : theta0.values()) v = 0.3 * rng.normal();
    for (auto& v : alpha0.values()) v = 0.3 * rng.normal();
    for (auto& v : kp0.values()) v = 0.4 * rng.normal();
    for (auto& v : z0.values()) v = rng.normal();
    auto beta = g.param("beta", beta0);
    auto theta = g.param("theta", theta0);
    auto alpha = g.param("alpha", alpha0);
    auto kp = g.param("kp", kp0);
    auto z = ad::normalize_rows(g.param("z", z0));

    Tensor beta_gt({n_beta}), theta_gt({n_j, 3}), alpha_gt({n_bone}), kp_gt({n_k, 3});
    for (auto& v : beta_gt.values()) v = 0.5 * rng.normal();
    for (auto& v : theta_gt.values()) v = 0.3 * rng.normal();
    for (auto& v : alpha_gt.values()) v = 0.3 * rng.normal();
    for (auto& v : kp_gt.values()) v = 0.4 * rng.normal();
    Tensor kp2d_gt({n_k, 2});
    for (std::size_t i = 0; i < n_k; ++i) {
      kp2d_gt.at(i, 0) = rng.uniform(0.0, 16.0);
      kp2d_gt.at(i, 1) = rng.uniform(0.0, 16.0);
    }
    std::vector<std::uint8_t> vis = {1, 1, 0, 1, 1};
    std::vector<std::uint8_t> mask_gt(16 * 16);
    for (auto& m : mask_gt) m = rng.uniform() < 0.4 ? 1 : 0;
    Tensor soft0({16 * 16});
    for (auto& v : soft0.values()) v = rng.uniform(0.05, 0.95);
    auto soft = g.param("soft", soft0);

    SampleTerms quad, avi;
    quad.taxon = body::Taxon::quadruped;
    quad.l3d = loss_3d_graph(g, beta, theta, std::nullopt, kp, beta_gt, theta_gt, Tensor(), kp_gt,
                             w.loss3d, body::Taxon::quadruped);
    quad.l2d = loss_2d_graph(g, kp, cam, kp2d_gt, vis, soft, mask_gt, w.loss2d);
    quad.prior = loss_smal_prior_graph(g, beta, theta, prior, w.smal_prior);
    avi.taxon = body::Taxon::avian;
    avi.l3d = loss_3d_graph(g, beta, theta, alpha, kp, beta_gt, theta_gt, alpha_gt, kp_gt,
                            w.loss3d, body::Taxon::avian);
    avi.prior = loss_aves_prior_graph(g, beta, theta, alpha, prior, w.aves_prior);
    auto con = loss_con_graph(g, z, {0, 1, 0, 1}, w.tau);
    g.mark_output("loss", loss_total_graph(g, {quad, avi}, con, w));

    auto report = g.grad_check("loss", {}, 1e-6, 20);
    CHECK(report.all_finite);
    CHECK(report.max_rel_err <= 1e-4);
  }
}

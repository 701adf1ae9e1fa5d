#include "animer/bodymodel.hpp"

#include <cmath>
#include <stdexcept>

#include "animer/io.hpp"
#include "animer/kernels.hpp"
#include "animer/rng.hpp"

namespace animer::body {

using ad::Value;

Tensor ModelTemplate::rest_joints() const {
  Tensor joints({n_joints(), 3});
  kernels::matmul(joint_regressor.data(), rest_vertices.data(), joints.data(), n_joints(),
                  n_vertices(), 3);
  return joints;
}

void ModelTemplate::validate() const {
  const std::size_t nv = n_vertices(), nj = n_joints();
  if (rest_vertices.rank() != 2 || rest_vertices.dim(1) != 3)
    throw std::invalid_argument("template: rest_vertices must be n_V x 3");
  if (parents.empty() || parents[0] != -1)
    throw std::invalid_argument("template: joint 0 must be the root");
  for (std::size_t j = 1; j < nj; ++j)
    if (parents[j] < 0 || static_cast<std::size_t>(parents[j]) >= j)
      throw std::invalid_argument("template: parents must form a tree (parent index < joint)");
  for (const auto& f : faces)
    for (auto idx : f)
      if (idx >= nv) throw std::invalid_argument("template: face index out of range");
  if (skin_weights.shape() != std::vector<std::size_t>{nv, nj})
    throw std::invalid_argument("template: skin_weights must be n_V x n_J");
  for (std::size_t v = 0; v < nv; ++v) {
    double s = 0.0;
    for (std::size_t j = 0; j < nj; ++j) {
      const double w = skin_weights.at(v, j);
      if (w < 0.0) throw std::invalid_argument("template: negative skin weight");
      s += w;
    }
    if (std::abs(s - 1.0) > 1e-9)
      throw std::invalid_argument("template: skin-weight row does not sum to 1");
  }
  if (joint_regressor.shape() != std::vector<std::size_t>{nj, nv})
    throw std::invalid_argument("template: joint_regressor must be n_J x n_V");
  if (shape_basis.rank() != 2 || shape_basis.dim(1) != 3 * nv)
    throw std::invalid_argument("template: shape_basis must be n_beta x 3n_V");
  for (const auto& kp : keypoint_map)
    if (kp.index >= (kp.is_joint ? nj : nv))
      throw std::invalid_argument("template: keypoint reference out of range");
}

BodyParams BodyParams::zero(const ModelTemplate& tpl) {
  BodyParams p;
  p.beta = Tensor::zeros({tpl.n_shape()});
  p.theta = Tensor::zeros({tpl.n_joints(), 3});
  if (tpl.taxon == Taxon::avian) p.alpha = Tensor::zeros({tpl.n_bones()});
  p.gamma = Tensor::zeros({3});
  return p;
}

// ---- toy template -----------------------------------------------------------

ModelTemplate build_toy_template(Taxon taxon, std::size_t n_joints, std::size_t n_shape,
                                 std::size_t n_vertices, std::uint64_t seed) {
  if (n_joints < 2) throw std::invalid_argument("build_toy_template: need at least 2 joints");
  if (n_vertices < 4 * n_joints)
    throw std::invalid_argument("build_toy_template: need n_V >= 4 n_J");

  Rng rng(splitmix64(seed ^ 0xb0d7u));
  const std::size_t n_bones = n_joints - 1;

  // skeleton: a spine chain for the first half, remaining joints branch off
  std::vector<int> parents(n_joints, -1);
  const std::size_t spine = std::max<std::size_t>(2, n_joints / 2);
  for (std::size_t j = 1; j < n_joints; ++j) {
    if (j < spine)
      parents[j] = static_cast<int>(j - 1);
    else
      parents[j] = static_cast<int>(rng.index(spine));
  }

  // rest joints: spine biased along +x, branches drop off sideways
  Tensor joints({n_joints, 3});
  for (std::size_t j = 1; j < n_joints; ++j) {
    double dir[3];
    if (j < spine) {
      dir[0] = 1.0 + 0.2 * rng.normal();
      dir[1] = 0.15 * rng.normal();
      dir[2] = 0.15 * rng.normal();
    } else {
      dir[0] = 0.3 * rng.normal();
      dir[1] = 0.3 * rng.normal();
      dir[2] = -1.0 + 0.2 * rng.normal();
    }
    const double len = rng.uniform(0.25, 0.45);
    const double norm = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
    const int p = parents[j];
    for (int c = 0; c < 3; ++c) joints.at(j, c) = joints.at(p, c) + len * dir[c] / norm;
  }

  // tube mesh: rings of vertices per bone; the first and last ring of each
  // bone sit exactly at the bone's endpoints so ring centroids recover joints
  Tensor verts({n_vertices, 3});
  std::vector<std::array<std::size_t, 3>> faces;
  Tensor weights({n_vertices, n_joints});
  Tensor regressor({n_joints, n_vertices});
  std::vector<bool> joint_has_ring(n_joints, false);

  std::size_t v_cursor = 0;
  const double radius = 0.08;
  for (std::size_t b = 0; b < n_bones; ++b) {
    const std::size_t child = b + 1;
    const int parent = parents[child];
    std::size_t budget = n_vertices / n_bones + (b < n_vertices % n_bones ? 1 : 0);

    // bone frame
    double axis[3], u[3], w[3];
    for (int c = 0; c < 3; ++c) axis[c] = joints.at(child, c) - joints.at(parent, c);
    const double alen = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
    for (int c = 0; c < 3; ++c) axis[c] /= alen;
    // any perpendicular pair
    if (std::abs(axis[0]) < 0.9) {
      u[0] = 0; u[1] = -axis[2]; u[2] = axis[1];
    } else {
      u[0] = -axis[1]; u[1] = axis[0]; u[2] = 0;
    }
    double un = std::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
    for (int c = 0; c < 3; ++c) u[c] /= un;
    w[0] = axis[1] * u[2] - axis[2] * u[1];
    w[1] = axis[2] * u[0] - axis[0] * u[2];
    w[2] = axis[0] * u[1] - axis[1] * u[0];

    const std::size_t n_rings = budget >= 12 ? 3 : 2;
    std::vector<std::size_t> ring_size(n_rings, budget / n_rings);
    for (std::size_t r = 0; r < budget % n_rings; ++r) ring_size[r]++;

    std::vector<std::vector<std::size_t>> rings(n_rings);
    for (std::size_t r = 0; r < n_rings; ++r) {
      const double t = static_cast<double>(r) / static_cast<double>(n_rings - 1);
      for (std::size_t k = 0; k < ring_size[r]; ++k) {
        const double phi = 2.0 * M_PI * static_cast<double>(k) / static_cast<double>(ring_size[r]);
        const double cu = radius * std::cos(phi), cw = radius * std::sin(phi);
        for (int c = 0; c < 3; ++c)
          verts.at(v_cursor, c) = (1.0 - t) * joints.at(parent, c) + t * joints.at(child, c) +
                                  cu * u[c] + cw * w[c];
        weights.at(v_cursor, parent) = 1.0 - t;
        weights.at(v_cursor, child) = t;
        rings[r].push_back(v_cursor);
        ++v_cursor;
      }
    }

    // side faces between consecutive rings
    for (std::size_t r = 0; r + 1 < n_rings; ++r) {
      const auto& a = rings[r];
      const auto& bgn = rings[r + 1];
      const std::size_t n = std::min(a.size(), bgn.size());
      if (n < 2) continue;
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t k1 = (k + 1) % n;
        faces.push_back({a[k], bgn[k], bgn[k1]});
        faces.push_back({a[k], bgn[k1], a[k1]});
      }
    }

    // regressor rows from endpoint ring centroids
    if (!joint_has_ring[parent]) {
      for (auto vi : rings.front()) regressor.at(parent, vi) = 1.0 / rings.front().size();
      joint_has_ring[parent] = true;
    }
    for (auto vi : rings.back()) regressor.at(child, vi) = 1.0 / rings.back().size();
    joint_has_ring[child] = true;
  }

  // weight rows for any unassigned trailing vertices (none by construction)
  // small random shape basis
  Tensor basis({n_shape, 3 * n_vertices});
  for (std::size_t i = 0; i < basis.size(); ++i) basis[i] = 0.02 * rng.normal();

  ModelTemplate tpl;
  tpl.taxon = taxon;
  tpl.rest_vertices = std::move(verts);
  tpl.faces = std::move(faces);
  tpl.shape_basis = std::move(basis);
  tpl.skin_weights = std::move(weights);
  tpl.joint_regressor = std::move(regressor);
  tpl.parents = std::move(parents);
  for (std::size_t j = 0; j < n_joints; ++j) tpl.keypoint_map.push_back({true, j});
  tpl.keypoint_map.push_back({false, 0});                // nose
  tpl.keypoint_map.push_back({false, n_vertices - 1});   // tail
  tpl.validate();
  return tpl;
}

// ---- graph builders ---------------------------------------------------------

RestShapeValues rest_shape_graph(ad::Graph& g, const ModelTemplate& tpl, Value beta, Value alpha) {
  if (beta.shape() != std::vector<std::size_t>{tpl.n_shape()})
    throw std::invalid_argument("rest_shape: beta length mismatch");
  const bool avian = tpl.taxon == Taxon::avian;
  if (avian && alpha.graph == nullptr)
    throw std::invalid_argument("rest_shape: avian template requires alpha");
  if (avian && alpha.shape() != std::vector<std::size_t>{tpl.n_bones()})
    throw std::invalid_argument("rest_shape: alpha length mismatch");

  auto basis = g.constant(tpl.shape_basis);
  auto rest = g.constant(tpl.rest_vertices);
  auto beta_row = ad::reshape(beta, {1, tpl.n_shape()});
  auto offsets = ad::reshape(ad::matmul(beta_row, basis), {tpl.n_vertices(), 3});
  auto verts = ad::add(rest, offsets);

  auto regressor = g.constant(tpl.joint_regressor);
  auto joints = ad::matmul(regressor, verts);

  if (avian) {
    // scale each bone vector by (1 + alpha_b) down the tree, rigidly
    // translating descendant subtrees
    auto alpha_col = ad::reshape(alpha, {tpl.n_bones(), 1});
    std::vector<Value> scaled(tpl.n_joints());
    scaled[0] = ad::slice_rows(joints, 0, 1);
    for (std::size_t j = 1; j < tpl.n_joints(); ++j) {
      const std::size_t p = static_cast<std::size_t>(tpl.parents[j]);
      auto bone = ad::sub(ad::slice_rows(joints, j, 1), ad::slice_rows(joints, p, 1));
      auto factor = ad::add_const(ad::slice_rows(alpha_col, j - 1, 1), 1.0);
      scaled[j] = ad::add(scaled[p], ad::mul(bone, factor));
    }
    joints = ad::concat_rows(scaled);
  }
  return {verts, joints};
}

JointTransforms kinematic_forward_graph(ad::Graph& g, const ModelTemplate& tpl, Value theta,
                                        Value rest_joints, Value gamma) {
  if (theta.shape() != std::vector<std::size_t>{tpl.n_joints(), 3})
    throw std::invalid_argument("kinematic_forward: theta must be n_J x 3");
  JointTransforms out;
  out.rotation.resize(tpl.n_joints());
  out.translation.resize(tpl.n_joints());

  auto gamma_row = ad::reshape(gamma, {1, 3});
  for (std::size_t j = 0; j < tpl.n_joints(); ++j) {
    auto local_rot = ad::rodrigues(ad::slice_rows(theta, j, 1));
    auto joint_pos = ad::slice_rows(rest_joints, j, 1);
    if (j == 0) {
      out.rotation[0] = local_rot;
      out.translation[0] = ad::add(gamma_row, joint_pos);
    } else {
      const std::size_t p = static_cast<std::size_t>(tpl.parents[j]);
      auto offset = ad::sub(joint_pos, ad::slice_rows(rest_joints, p, 1));
      out.rotation[j] = ad::matmul(out.rotation[p], local_rot);
      out.translation[j] =
          ad::add(out.translation[p], ad::matmul(offset, ad::transpose(out.rotation[p])));
    }
  }
  return out;
}

ad::Value lbs_pose_graph(ad::Graph& g, const ModelTemplate& tpl, Value rest_vertices,
                         const JointTransforms& transforms, Value rest_joints) {
  Value posed{};
  for (std::size_t j = 0; j < tpl.n_joints(); ++j) {
    auto rel = ad::sub(rest_vertices, ad::slice_rows(rest_joints, j, 1));
    auto moved = ad::add(ad::matmul(rel, ad::transpose(transforms.rotation[j])),
                         transforms.translation[j]);
    Tensor col({tpl.n_vertices(), 1});
    for (std::size_t v = 0; v < tpl.n_vertices(); ++v) col[v] = tpl.skin_weights.at(v, j);
    auto weighted = ad::mul(moved, g.constant(col));
    posed = (j == 0) ? weighted : ad::add(posed, weighted);
  }
  return posed;
}

ad::Value regress_joints_graph(ad::Graph& g, const ModelTemplate& tpl, Value vertices) {
  return ad::matmul(g.constant(tpl.joint_regressor), vertices);
}

ad::Value keypoints_graph(ad::Graph& g, const ModelTemplate& tpl, Value joints, Value vertices) {
  auto all = ad::concat_rows({joints, vertices});
  std::vector<std::size_t> idx;
  for (const auto& kp : tpl.keypoint_map)
    idx.push_back(kp.is_joint ? kp.index : tpl.n_joints() + kp.index);
  return ad::gather_rows(all, idx);
}

ModelForwardValues model_forward_graph(ad::Graph& g, const ModelTemplate& tpl, Value beta,
                                       Value theta, Value alpha, Value gamma) {
  auto rest = rest_shape_graph(g, tpl, beta, alpha);
  auto transforms = kinematic_forward_graph(g, tpl, theta, rest.joints, gamma);
  auto vertices = lbs_pose_graph(g, tpl, rest.vertices, transforms, rest.joints);
  // posed joints are the transform origins
  std::vector<Value> rows;
  for (std::size_t j = 0; j < tpl.n_joints(); ++j) rows.push_back(transforms.translation[j]);
  auto joints = ad::concat_rows(rows);
  auto keypoints = keypoints_graph(g, tpl, joints, vertices);
  return {vertices, joints, keypoints};
}

// ---- eager wrappers ---------------------------------------------------------

std::pair<Tensor, Tensor> rest_shape(const ModelTemplate& tpl, const Tensor& beta,
                                     const Tensor& alpha) {
  ad::Graph g;
  auto vb = g.param("beta", beta, false);
  ad::Value va{};
  if (tpl.taxon == Taxon::avian) va = g.param("alpha", alpha, false);
  auto rest = rest_shape_graph(g, tpl, vb, va);
  g.mark_output("vertices", rest.vertices);
  g.mark_output("joints", rest.joints);
  auto out = g.evaluate();
  return {out.at("vertices"), out.at("joints")};
}

Tensor regress_joints(const Tensor& regressor, const Tensor& vertices) {
  if (regressor.rank() != 2 || vertices.rank() != 2 || regressor.dim(1) != vertices.dim(0))
    throw std::invalid_argument("regress_joints: shape mismatch");
  Tensor joints({regressor.dim(0), vertices.dim(1)});
  kernels::matmul(regressor.data(), vertices.data(), joints.data(), regressor.dim(0),
                  regressor.dim(1), vertices.dim(1));
  return joints;
}

MeshOutput model_forward(const ModelTemplate& tpl, const BodyParams& params) {
  ad::Graph g;
  auto beta = g.param("beta", params.beta, false);
  auto theta = g.param("theta", params.theta, false);
  ad::Value alpha{};
  if (tpl.taxon == Taxon::avian) alpha = g.param("alpha", params.alpha, false);
  auto gamma = g.param("gamma", params.gamma, false);
  auto fwd = model_forward_graph(g, tpl, beta, theta, alpha, gamma);
  g.mark_output("vertices", fwd.vertices);
  g.mark_output("joints", fwd.joints);
  g.mark_output("keypoints3d", fwd.keypoints3d);
  auto out = g.evaluate();
  return {out.at("vertices"), out.at("joints"), out.at("keypoints3d")};
}

// ---- serialization ----------------------------------------------------------

void save_template(const std::string& path, const ModelTemplate& tpl) {
  io::Checkpoint ck;
  ck.meta = {{"kind", "model_template"}, {"taxon", taxon_name(tpl.taxon)}};
  ck.tensors["rest_vertices"] = tpl.rest_vertices;
  Tensor faces({std::max<std::size_t>(tpl.faces.size(), 1), 3});
  for (std::size_t i = 0; i < tpl.faces.size(); ++i)
    for (int c = 0; c < 3; ++c) faces[i * 3 + c] = static_cast<double>(tpl.faces[i][c]);
  ck.tensors["faces"] = faces;
  ck.tensors["shape_basis"] = tpl.shape_basis;
  ck.tensors["skin_weights"] = tpl.skin_weights;
  ck.tensors["joint_regressor"] = tpl.joint_regressor;
  Tensor parents({tpl.parents.size()});
  for (std::size_t i = 0; i < tpl.parents.size(); ++i) parents[i] = tpl.parents[i];
  ck.tensors["parents"] = parents;
  Tensor kp({tpl.keypoint_map.size(), 2});
  for (std::size_t i = 0; i < tpl.keypoint_map.size(); ++i) {
    kp[i * 2] = tpl.keypoint_map[i].is_joint ? 0.0 : 1.0;
    kp[i * 2 + 1] = static_cast<double>(tpl.keypoint_map[i].index);
  }
  ck.tensors["keypoint_map"] = kp;
  io::save_checkpoint(path, ck);
}

ModelTemplate load_template(const std::string& path) {
  io::Checkpoint ck = io::load_checkpoint(path);
  ModelTemplate tpl;
  tpl.taxon = ck.meta.at("taxon") == "avian" ? Taxon::avian : Taxon::quadruped;
  tpl.rest_vertices = ck.tensors.at("rest_vertices");
  const Tensor& faces = ck.tensors.at("faces");
  for (std::size_t i = 0; i < faces.dim(0); ++i)
    tpl.faces.push_back({static_cast<std::size_t>(faces[i * 3]),
                         static_cast<std::size_t>(faces[i * 3 + 1]),
                         static_cast<std::size_t>(faces[i * 3 + 2])});
  tpl.shape_basis = ck.tensors.at("shape_basis");
  tpl.skin_weights = ck.tensors.at("skin_weights");
  tpl.joint_regressor = ck.tensors.at("joint_regressor");
  const Tensor& parents = ck.tensors.at("parents");
  for (std::size_t i = 0; i < parents.size(); ++i)
    tpl.parents.push_back(static_cast<int>(parents[i]));
  const Tensor& kp = ck.tensors.at("keypoint_map");
  for (std::size_t i = 0; i < kp.dim(0); ++i)
    tpl.keypoint_map.push_back({kp[i * 2] == 0.0, static_cast<std::size_t>(kp[i * 2 + 1])});
  tpl.validate();
  return tpl;
}

}  // namespace animer::body

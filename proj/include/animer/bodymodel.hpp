#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "animer/autodiff.hpp"
#include "animer/tensor.hpp"

namespace animer::body {

enum class Taxon { quadruped = 0, avian = 1 };

inline const char* taxon_name(Taxon t) { return t == Taxon::quadruped ? "quadruped" : "avian"; }

struct KeypointRef {
  bool is_joint = true;  // otherwise a mesh vertex
  std::size_t index = 0;
};

/// Geometric prior for one taxon: rest mesh, blendshapes, skinning, joint
/// regression and the kinematic tree. Immutable and shareable once built.
struct ModelTemplate {
  Taxon taxon = Taxon::quadruped;
  Tensor rest_vertices;                             // n_V x 3
  std::vector<std::array<std::size_t, 3>> faces;    // n_F x 3
  Tensor shape_basis;                               // n_beta x (3 n_V)
  Tensor skin_weights;                              // n_V x n_J, rows sum to 1
  Tensor joint_regressor;                           // n_J x n_V
  std::vector<int> parents;                         // -1 for the root (joint 0)
  std::vector<KeypointRef> keypoint_map;            // n_K evaluation keypoints

  std::size_t n_vertices() const { return rest_vertices.dim(0); }
  std::size_t n_joints() const { return parents.size(); }
  std::size_t n_shape() const { return shape_basis.dim(0); }
  std::size_t n_keypoints() const { return keypoint_map.size(); }
  // one bone per non-root joint; bone b ends at joint b+1
  std::size_t n_bones() const { return parents.size() - 1; }

  Tensor rest_joints() const;

  /// Throws on any violated structural invariant.
  void validate() const;
};

struct BodyParams {
  Tensor beta;   // n_beta
  Tensor theta;  // n_J x 3 axis-angle
  Tensor alpha;  // n_bones, avian only (empty otherwise)
  Tensor gamma;  // 3

  static BodyParams zero(const ModelTemplate& tpl);
};

struct MeshOutput {
  Tensor vertices;     // n_V x 3
  Tensor joints;       // n_J x 3
  Tensor keypoints3d;  // n_K x 3
};

/// Deterministic synthetic template: branched skeleton, tube mesh per bone,
/// two-joint smooth skin weights and a regressor built from bone-end vertex
/// rings so that W * rest_vertices reproduces the rest joints.
ModelTemplate build_toy_template(Taxon taxon, std::size_t n_joints, std::size_t n_shape,
                                 std::size_t n_vertices, std::uint64_t seed);

// ---- graph builders (differentiable path) ----------------------------------

struct RestShapeValues {
  ad::Value vertices;  // n_V x 3
  ad::Value joints;    // n_J x 3, avian bone scaling applied
};

struct JointTransforms {
  std::vector<ad::Value> rotation;     // per joint, 3 x 3 world rotation
  std::vector<ad::Value> translation;  // per joint, 1 x 3 world origin
};

struct ModelForwardValues {
  ad::Value vertices;
  ad::Value joints;
  ad::Value keypoints3d;
};

/// alpha may be {nullptr,0} for quadrupeds.
RestShapeValues rest_shape_graph(ad::Graph& g, const ModelTemplate& tpl, ad::Value beta,
                                 ad::Value alpha);
JointTransforms kinematic_forward_graph(ad::Graph& g, const ModelTemplate& tpl, ad::Value theta,
                                        ad::Value rest_joints, ad::Value gamma);
ad::Value lbs_pose_graph(ad::Graph& g, const ModelTemplate& tpl, ad::Value rest_vertices,
                         const JointTransforms& transforms, ad::Value rest_joints);
ad::Value regress_joints_graph(ad::Graph& g, const ModelTemplate& tpl, ad::Value vertices);
ad::Value keypoints_graph(ad::Graph& g, const ModelTemplate& tpl, ad::Value joints,
                          ad::Value vertices);

/// Full differentiable composition.
ModelForwardValues model_forward_graph(ad::Graph& g, const ModelTemplate& tpl, ad::Value beta,
                                       ad::Value theta, ad::Value alpha, ad::Value gamma);

// ---- eager wrappers ---------------------------------------------------------

std::pair<Tensor, Tensor> rest_shape(const ModelTemplate& tpl, const Tensor& beta,
                                     const Tensor& alpha);
Tensor regress_joints(const Tensor& regressor, const Tensor& vertices);
MeshOutput model_forward(const ModelTemplate& tpl, const BodyParams& params);

// ---- template serialization (manifest tensor-blob format) ------------------

void save_template(const std::string& path, const ModelTemplate& tpl);
ModelTemplate load_template(const std::string& path);

}  // namespace animer::body

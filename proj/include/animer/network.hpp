#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "animer/autodiff.hpp"
#include "animer/tensor.hpp"

namespace animer::net {

/// Regression-head output sizes for one taxon (n_bones used for avians only).
struct HeadDims {
  std::size_t n_beta = 0;
  std::size_t n_joints = 0;
  std::size_t n_bones = 0;
  bool has_alpha = false;
};

struct NetworkConfig {
  std::size_t image_h = 64, image_w = 64, channels = 2;
  std::size_t patch = 16;
  std::size_t embed_dim = 64;
  std::size_t n_blocks = 2;
  std::size_t n_heads = 4;
  std::size_t ffn_hidden = 128;
  std::size_t shared_dim = 48, specific_dim = 16;
  std::size_t decoder_dim = 64;
  std::size_t predictor_dim = 16;  // contrastive embedding width
  double init_gain = 1.0;          // scales the init sigma; >1 warms up from-scratch training
  std::vector<HeadDims> heads;     // one entry per taxon

  std::size_t n_taxa() const { return heads.size(); }
  std::size_t n_patches() const { return (image_h / patch) * (image_w / patch); }
  std::size_t n_tokens() const { return n_patches() + 1; }

  /// Throws std::invalid_argument on any violated invariant.
  void validate() const;
};

/// Flat bag of named trainable tensors.
struct NetworkState {
  std::map<std::string, Tensor> tensors;
};

/// Truncated-normal (sigma = 0.02, clipped at 2 sigma) projections, zero biases.
NetworkState init_state(const NetworkConfig& cfg, std::uint64_t seed);

using ParamMap = std::map<std::string, ad::Value>;

/// Registers every state tensor as a trainable graph parameter.
ParamMap bind_params(ad::Graph& g, const NetworkState& state);

/// Copies (possibly updated) graph parameters back into the state.
void read_back(const ad::Graph& g, NetworkState& state);

/// (channels, H, W) image -> (n_patches, patch*patch*channels) rows, scanning
/// patches row-major, features ordered channel-major within a patch.
Tensor patchify(const Tensor& image, const NetworkConfig& cfg);

/// patches (n_patches, p*p*c) -> tokens (n_tokens, D); class token at row 0.
ad::Value patch_embed_graph(ad::Graph& g, ad::Value patches, const ParamMap& p,
                            const NetworkConfig& cfg);

/// Taxa-partitioned second FC layer: concat(shared | specific[taxon]).
ad::Value moe_ffn_graph(ad::Graph& g, ad::Value hidden, std::size_t taxon, std::size_t block,
                        const ParamMap& p, const NetworkConfig& cfg);

struct EncoderOut {
  ad::Value patch_tokens;   // (n_patches, D)
  ad::Value class_feature;  // (1, D)
};

EncoderOut encoder_forward_graph(ad::Graph& g, ad::Value patches, std::size_t taxon,
                                 const ParamMap& p, const NetworkConfig& cfg);

/// Single learnable query cross-attending to the patch tokens.
ad::Value decoder_forward_graph(ad::Graph& g, ad::Value tokens, const ParamMap& p,
                                const NetworkConfig& cfg);

struct PredictedParams {
  ad::Value beta;                 // (n_beta)
  ad::Value theta;                // (n_joints, 3)
  std::optional<ad::Value> alpha; // (n_bones), avian only
  ad::Value camera;               // (1,3): (t_x, t_y, exp(r)), depth > 0
  ad::Value z;                    // (1, predictor_dim), unit norm
};

PredictedParams heads_forward_graph(ad::Graph& g, ad::Value f, ad::Value class_feature,
                                    std::size_t taxon, const ParamMap& p,
                                    const NetworkConfig& cfg);

/// patchify + full encoder/decoder/heads composition for one image.
PredictedParams network_forward_graph(ad::Graph& g, const Tensor& image, std::size_t taxon,
                                      const ParamMap& p, const NetworkConfig& cfg);

}  // namespace animer::net

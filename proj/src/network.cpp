#include "animer/network.hpp"

#include <cmath>
#include <stdexcept>

#include "animer/rng.hpp"

namespace animer::net {

namespace {

ad::Value get(const ParamMap& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw std::invalid_argument("network: missing parameter " + name);
  return it->second;
}

// y = x W + b, with b broadcast over rows
ad::Value linear(ad::Value x, ad::Value w, ad::Value b) {
  return ad::add(ad::matmul(x, w), b);
}

ad::Value layer_norm(ad::Graph& g, ad::Value x, ad::Value gain, ad::Value bias) {
  const std::size_t d = x.shape().at(1);
  auto mu = ad::scale(ad::row_sum(x), 1.0 / static_cast<double>(d));       // (T,1)
  auto centered = ad::sub(x, mu);
  auto var = ad::scale(ad::row_sum(ad::square(centered)), 1.0 / static_cast<double>(d));
  auto xhat = ad::divide(centered, ad::sqrt(ad::add_const(var, 1e-6)));
  (void)g;
  return ad::add(ad::mul(xhat, gain), bias);
}

// multi-head attention of queries q against keys/values kv (shared weights)
ad::Value attention(ad::Value q_in, ad::Value kv_in, const ParamMap& p, const std::string& prefix,
                    std::size_t n_heads, std::size_t d) {
  auto q = linear(q_in, get(p, prefix + ".wq"), get(p, prefix + ".bq"));
  // no key bias: softmax is shift-invariant, so it would be a dead parameter
  auto k = ad::matmul(kv_in, get(p, prefix + ".wk"));
  auto v = linear(kv_in, get(p, prefix + ".wv"), get(p, prefix + ".bv"));
  const std::size_t dh = d / n_heads;
  std::vector<ad::Value> head_out;
  head_out.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    auto qh = ad::slice_cols(q, h * dh, dh);
    auto kh = ad::slice_cols(k, h * dh, dh);
    auto vh = ad::slice_cols(v, h * dh, dh);
    auto scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), 1.0 / std::sqrt(double(dh)));
    head_out.push_back(ad::matmul(ad::softmax_rows(scores), vh));
  }
  auto merged = n_heads == 1 ? head_out[0] : ad::concat_cols(head_out);
  return linear(merged, get(p, prefix + ".wo"), get(p, prefix + ".bo"));
}

// two-layer GELU MLP head
ad::Value mlp_head(ad::Value x, const ParamMap& p, const std::string& prefix) {
  auto h = ad::gelu(linear(x, get(p, prefix + ".w1"), get(p, prefix + ".b1")));
  return linear(h, get(p, prefix + ".w2"), get(p, prefix + ".b2"));
}

std::string block_name(std::size_t i) { return "enc.block" + std::to_string(i); }

}  // namespace

void NetworkConfig::validate() const {
  if (heads.empty()) throw std::invalid_argument("network: no taxa configured");
  if (patch == 0 || image_h % patch != 0 || image_w % patch != 0)
    throw std::invalid_argument("network: image size not divisible by patch size");
  if (shared_dim + specific_dim != embed_dim)
    throw std::invalid_argument("network: shared_dim + specific_dim must equal embed_dim");
  if (n_heads == 0 || embed_dim % n_heads != 0)
    throw std::invalid_argument("network: embed_dim must be divisible by n_heads");
  if (n_blocks == 0 || channels == 0 || decoder_dim == 0 || predictor_dim == 0)
    throw std::invalid_argument("network: zero-sized component");
  if (!(init_gain > 0.0) || !std::isfinite(init_gain))
    throw std::invalid_argument("network: init_gain must be positive and finite");
  for (const auto& h : heads)
    if (h.n_beta == 0 || h.n_joints == 0 || (h.has_alpha && h.n_bones == 0))
      throw std::invalid_argument("network: invalid head dimensions");
}

NetworkState init_state(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  NetworkState s;
  Rng rng(splitmix64(seed));
  const double sigma = 0.02 * cfg.init_gain;
  auto weight = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    Tensor t({rows, cols});
    for (auto& v : t.values()) v = rng.truncated_normal(sigma, 2.0 * sigma);
    s.tensors[name] = std::move(t);
  };
  auto bias = [&](const std::string& name, std::size_t cols) {
    s.tensors[name] = Tensor::zeros({1, cols});
  };
  const std::size_t d = cfg.embed_dim;

  weight("patch.proj", cfg.patch * cfg.patch * cfg.channels, d);
  bias("patch.bias", d);
  weight("patch.pos", cfg.n_patches(), d);
  weight("patch.cls", 1, d);

  for (std::size_t i = 0; i < cfg.n_blocks; ++i) {
    const std::string b = block_name(i);
    s.tensors[b + ".ln1.gain"] = Tensor::full({1, d}, 1.0);
    bias(b + ".ln1.bias", d);
    s.tensors[b + ".ln2.gain"] = Tensor::full({1, d}, 1.0);
    bias(b + ".ln2.bias", d);
    for (const char* m : {"wq", "wk", "wv", "wo"}) weight(b + ".attn." + m, d, d);
    for (const char* m : {"bq", "bv", "bo"}) bias(b + ".attn." + m, d);
    weight(b + ".fc1.w", d, cfg.ffn_hidden);
    bias(b + ".fc1.b", cfg.ffn_hidden);
    weight(b + ".shared.w", cfg.ffn_hidden, cfg.shared_dim);
    bias(b + ".shared.b", cfg.shared_dim);
    for (std::size_t t = 0; t < cfg.n_taxa(); ++t) {
      const std::string e = b + ".specific" + std::to_string(t);
      weight(e + ".w", cfg.ffn_hidden, cfg.specific_dim);
      bias(e + ".b", cfg.specific_dim);
    }
  }

  weight("dec.query", 1, d);
  for (const char* m : {"wq", "wk", "wv", "wo"}) weight(std::string("dec.attn.") + m, d, d);
  for (const char* m : {"bq", "bv", "bo"}) bias(std::string("dec.attn.") + m, d);
  weight("dec.out.w", d, cfg.decoder_dim);
  bias("dec.out.b", cfg.decoder_dim);

  for (std::size_t t = 0; t < cfg.n_taxa(); ++t) {
    const auto& hd = cfg.heads[t];
    const std::string h = "head" + std::to_string(t);
    auto mlp = [&](const std::string& name, std::size_t out) {
      weight(h + "." + name + ".w1", cfg.decoder_dim, cfg.decoder_dim);
      bias(h + "." + name + ".b1", cfg.decoder_dim);
      weight(h + "." + name + ".w2", cfg.decoder_dim, out);
      bias(h + "." + name + ".b2", out);
    };
    mlp("beta", hd.n_beta);
    mlp("theta", hd.n_joints * 3);
    if (hd.has_alpha) mlp("alpha", hd.n_bones);
    mlp("cam", 3);
  }

  weight("pred.w1", d, d);
  bias("pred.b1", d);
  weight("pred.w2", d, cfg.predictor_dim);
  bias("pred.b2", cfg.predictor_dim);
  return s;
}

ParamMap bind_params(ad::Graph& g, const NetworkState& state) {
  ParamMap p;
  for (const auto& [name, value] : state.tensors) {
    for (double v : value.values())
      if (!std::isfinite(v)) throw std::invalid_argument("network: non-finite tensor " + name);
    p.emplace(name, g.param(name, value));
  }
  return p;
}

void read_back(const ad::Graph& g, NetworkState& state) {
  for (auto& [name, value] : state.tensors) value = g.param_value(name);
}

Tensor patchify(const Tensor& image, const NetworkConfig& cfg) {
  if (image.rank() != 3 || image.dim(0) != cfg.channels || image.dim(1) != cfg.image_h ||
      image.dim(2) != cfg.image_w)
    throw std::invalid_argument("patchify: image does not match config");
  const std::size_t p = cfg.patch;
  const std::size_t gy = cfg.image_h / p, gx = cfg.image_w / p;
  Tensor out({gy * gx, p * p * cfg.channels});
  for (std::size_t py = 0; py < gy; ++py)
    for (std::size_t px = 0; px < gx; ++px) {
      const std::size_t row = py * gx + px;
      std::size_t f = 0;
      for (std::size_t c = 0; c < cfg.channels; ++c)
        for (std::size_t y = 0; y < p; ++y)
          for (std::size_t x = 0; x < p; ++x)
            out.at(row, f++) =
                image[(c * cfg.image_h + py * p + y) * cfg.image_w + px * p + x];
    }
  return out;
}

ad::Value patch_embed_graph(ad::Graph& g, ad::Value patches, const ParamMap& p,
                            const NetworkConfig& cfg) {
  if (patches.shape().at(0) != cfg.n_patches() ||
      patches.shape().at(1) != cfg.patch * cfg.patch * cfg.channels)
    throw std::invalid_argument("patch_embed: patch matrix does not match config");
  auto tok = ad::add(linear(patches, get(p, "patch.proj"), get(p, "patch.bias")),
                     get(p, "patch.pos"));
  (void)g;
  return ad::concat_rows({get(p, "patch.cls"), tok});
}

ad::Value moe_ffn_graph(ad::Graph& g, ad::Value hidden, std::size_t taxon, std::size_t block,
                        const ParamMap& p, const NetworkConfig& cfg) {
  if (taxon >= cfg.n_taxa()) throw std::invalid_argument("moe_ffn: unknown taxon");
  const std::string b = block_name(block);
  auto shared = linear(hidden, get(p, b + ".shared.w"), get(p, b + ".shared.b"));
  const std::string e = b + ".specific" + std::to_string(taxon);
  auto specific = linear(hidden, get(p, e + ".w"), get(p, e + ".b"));
  (void)g;
  return ad::concat_cols({shared, specific});  // shared features first
}

EncoderOut encoder_forward_graph(ad::Graph& g, ad::Value patches, std::size_t taxon,
                                 const ParamMap& p, const NetworkConfig& cfg) {
  auto x = patch_embed_graph(g, patches, p, cfg);
  for (std::size_t i = 0; i < cfg.n_blocks; ++i) {
    const std::string b = block_name(i);
    auto normed = layer_norm(g, x, get(p, b + ".ln1.gain"), get(p, b + ".ln1.bias"));
    x = ad::add(x, attention(normed, normed, p, b + ".attn", cfg.n_heads, cfg.embed_dim));
    auto normed2 = layer_norm(g, x, get(p, b + ".ln2.gain"), get(p, b + ".ln2.bias"));
    auto hidden = ad::gelu(linear(normed2, get(p, b + ".fc1.w"), get(p, b + ".fc1.b")));
    x = ad::add(x, moe_ffn_graph(g, hidden, taxon, i, p, cfg));
  }
  return {ad::slice_rows(x, 1, cfg.n_patches()), ad::slice_rows(x, 0, 1)};
}

ad::Value decoder_forward_graph(ad::Graph& g, ad::Value tokens, const ParamMap& p,
                                const NetworkConfig& cfg) {
  auto attended =
      attention(get(p, "dec.query"), tokens, p, "dec.attn", cfg.n_heads, cfg.embed_dim);
  auto q = ad::add(get(p, "dec.query"), attended);  // residual on the query
  (void)g;
  return linear(q, get(p, "dec.out.w"), get(p, "dec.out.b"));
}

PredictedParams heads_forward_graph(ad::Graph& g, ad::Value f, ad::Value class_feature,
                                    std::size_t taxon, const ParamMap& p,
                                    const NetworkConfig& cfg) {
  if (taxon >= cfg.n_taxa()) throw std::invalid_argument("heads_forward: unknown taxon");
  const auto& hd = cfg.heads[taxon];
  const std::string h = "head" + std::to_string(taxon);
  PredictedParams out{
      .beta = ad::reshape(mlp_head(f, p, h + ".beta"), {hd.n_beta}),
      .theta = ad::reshape(mlp_head(f, p, h + ".theta"), {hd.n_joints, 3}),
      .alpha = std::nullopt,
      .camera = {},
      .z = {},
  };
  if (hd.has_alpha) out.alpha = ad::reshape(mlp_head(f, p, h + ".alpha"), {hd.n_bones});
  auto cam_raw = mlp_head(f, p, h + ".cam");  // (1,3)
  auto txy = ad::slice_cols(cam_raw, 0, 2);
  auto tz = ad::exp(ad::slice_cols(cam_raw, 2, 1));  // strictly positive depth
  out.camera = ad::concat_cols({txy, tz});
  auto z_raw = linear(ad::gelu(linear(class_feature, get(p, "pred.w1"), get(p, "pred.b1"))),
                      get(p, "pred.w2"), get(p, "pred.b2"));
  out.z = ad::normalize_rows(z_raw);
  (void)g;
  return out;
}

PredictedParams network_forward_graph(ad::Graph& g, const Tensor& image, std::size_t taxon,
                                      const ParamMap& p, const NetworkConfig& cfg) {
  auto patches = g.constant(patchify(image, cfg));
  auto enc = encoder_forward_graph(g, patches, taxon, p, cfg);
  auto f = decoder_forward_graph(g, enc.patch_tokens, p, cfg);
  return heads_forward_graph(g, f, enc.class_feature, taxon, p, cfg);
}

}  // namespace animer::net

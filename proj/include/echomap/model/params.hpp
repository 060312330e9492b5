#pragma once

#include <cmath>
#include <map>
#include <string>

#include "echomap/autodiff/tensor.hpp"
#include "echomap/common.hpp"
#include "echomap/model/config.hpp"

namespace echomap::model {

// ---------------------------------------------------------------------------
// Named parameter store. Creation order never matters: each tensor draws from
// a stream keyed by its own name, and the map keeps names sorted, so two
// stores built from the same (config, seed) agree bit-for-bit.
// ---------------------------------------------------------------------------
struct Parameters {
  std::map<std::string, ad::NdArray> tensors;

  ad::NdArray& at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::invalid_argument("parameters: unknown name " + name);
    return it->second;
  }
  const ad::NdArray& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::invalid_argument("parameters: unknown name " + name);
    return it->second;
  }
};

namespace detail {

inline void add_uniform(Parameters& p, std::uint64_t seed, const std::string& name,
                        ad::Shape shape, int fan_in) {
  Rng rng(derive_seed(seed, name));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  ad::NdArray a = ad::NdArray::zeros(std::move(shape));
  for (double& v : a.data) v = rng.uniform(-bound, bound);
  if (!p.tensors.emplace(name, std::move(a)).second)
    throw std::logic_error("parameters: duplicate name " + name);
}

inline void add_zeros(Parameters& p, const std::string& name, ad::Shape shape) {
  if (!p.tensors.emplace(name, ad::NdArray::zeros(std::move(shape))).second)
    throw std::logic_error("parameters: duplicate name " + name);
}

// conv weight [Cout,Cin,kh,kw] + bias
inline void add_conv(Parameters& p, std::uint64_t seed, const std::string& stem, int cout,
                     int cin, int kh, int kw) {
  add_uniform(p, seed, stem + ".w", {cout, cin, kh, kw}, cin * kh * kw);
  add_uniform(p, seed, stem + ".b", {cout}, cin * kh * kw);
}

// transposed-conv weight [Cin,Cout,kh,kw] + bias
inline void add_convt(Parameters& p, std::uint64_t seed, const std::string& stem, int cin,
                      int cout, int kh, int kw) {
  add_uniform(p, seed, stem + ".w", {cin, cout, kh, kw}, cin * kh * kw);
  add_uniform(p, seed, stem + ".b", {cout}, cin * kh * kw);
}

inline void add_linear(Parameters& p, std::uint64_t seed, const std::string& stem, int din,
                       int dout) {
  add_uniform(p, seed, stem + ".w", {din, dout}, din);
  add_uniform(p, seed, stem + ".b", {dout}, din);
}

inline void add_layer_norm(Parameters& p, const std::string& stem, int d) {
  ad::NdArray g = ad::NdArray::full({d}, 1.0);
  if (!p.tensors.emplace(stem + ".g", std::move(g)).second)
    throw std::logic_error("parameters: duplicate name " + stem);
  add_zeros(p, stem + ".b", {d});
}

inline void add_attention(Parameters& p, std::uint64_t seed, const std::string& stem,
                          const ModelConfig& cfg) {
  const int dh = cfg.d_model / cfg.heads;
  for (int h = 0; h < cfg.heads; ++h) {
    const std::string hs = stem + ".h" + std::to_string(h);
    add_uniform(p, seed, hs + ".wq", {cfg.d_model, dh}, cfg.d_model);
    add_uniform(p, seed, hs + ".wk", {cfg.d_model, dh}, cfg.d_model);
    add_uniform(p, seed, hs + ".wv", {cfg.d_model, dh}, cfg.d_model);
  }
  add_linear(p, seed, stem + ".out", cfg.d_model, cfg.d_model);
}

inline void add_ff(Parameters& p, std::uint64_t seed, const std::string& stem,
                   const ModelConfig& cfg) {
  add_linear(p, seed, stem + ".1", cfg.d_model, cfg.d_model * cfg.ff_mult);
  add_linear(p, seed, stem + ".2", cfg.d_model * cfg.ff_mult, cfg.d_model);
}

}  // namespace detail

// Builds the full parameter set: uniform fan-in init throughout, except the
// anticipation U-Net's output layer, which starts at zero so the map residual
// begins as an exact identity.
inline Parameters init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  using namespace detail;
  Parameters p;

  add_uniform(p, seed, "material_embed", {8, 8}, 8);

  // visual 1D U-Net over [9, 1, W]
  const int v0 = cfg.vis_channels[0], v1 = cfg.vis_channels[1];
  add_conv(p, seed, "vis.down0", v0, 9, 1, 3);
  add_conv(p, seed, "vis.down1", v1, v0, 1, 3);
  add_convt(p, seed, "vis.up0", v1, v0, 1, 4);
  add_convt(p, seed, "vis.up1", v0, cfg.c_f, 1, 4);

  // anticipation 2D U-Net over [c_f, m, m]
  int cin = cfg.c_f;
  for (int i = 0; i < cfg.ant_depth; ++i) {
    add_conv(p, seed, "ant.down" + std::to_string(i), cfg.ant_channels[static_cast<std::size_t>(i)],
             cin, 3, 3);
    cin = cfg.ant_channels[static_cast<std::size_t>(i)];
  }
  for (int i = cfg.ant_depth - 1; i > 0; --i)
    add_convt(p, seed, "ant.up" + std::to_string(i), cfg.ant_channels[static_cast<std::size_t>(i)],
              cfg.ant_channels[static_cast<std::size_t>(i - 1)], 4, 4);
  add_zeros(p, "ant.up0.w", {cfg.ant_channels[0], cfg.c_f, 4, 4});
  add_zeros(p, "ant.up0.b", {cfg.c_f});

  // map patch embedding + modality/query plumbing
  add_conv(p, seed, "patch", cfg.d_model, cfg.c_f, cfg.patch, cfg.patch);
  add_uniform(p, seed, "map_token", {cfg.d_model}, cfg.d_model);
  add_uniform(p, seed, "audio_token", {cfg.d_mod_token}, cfg.d_mod_token);
  add_uniform(p, seed, "visual_token", {cfg.d_mod_token}, cfg.d_mod_token);

  // audio conv encoder over [2, F, T]
  cin = 2;
  for (int i = 0; i < 4; ++i) {
    add_conv(p, seed, "aud.conv" + std::to_string(i), cfg.aud_channels[static_cast<std::size_t>(i)],
             cin, 3, 3);
    cin = cfg.aud_channels[static_cast<std::size_t>(i)];
  }
  add_linear(p, seed, "aud.proj", cfg.aud_channels[3] + cfg.d_mod_token + cfg.pose_dim(),
             cfg.d_model);
  // fusion for the map-free ablation: pooled visual features as tokens
  add_linear(p, seed, "vfuse", cfg.c_f + cfg.d_mod_token + cfg.pose_dim(), cfg.d_model);

  for (int i = 0; i < cfg.enc_layers; ++i) {
    const std::string stem = "enc" + std::to_string(i);
    add_layer_norm(p, stem + ".ln1", cfg.d_model);
    add_attention(p, seed, stem + ".attn", cfg);
    add_layer_norm(p, stem + ".ln2", cfg.d_model);
    add_ff(p, seed, stem + ".ff", cfg);
  }
  add_linear(p, seed, "qlift", cfg.pose_dim(), cfg.d_model);
  for (int i = 0; i < cfg.dec_layers; ++i) {
    const std::string stem = "dec" + std::to_string(i);
    add_layer_norm(p, stem + ".lnq", cfg.d_model);
    add_layer_norm(p, stem + ".lnm", cfg.d_model);
    add_attention(p, seed, stem + ".attn", cfg);
    add_layer_norm(p, stem + ".ln2", cfg.d_model);
    add_ff(p, seed, stem + ".ff", cfg);
  }
  add_layer_norm(p, "dec.final", cfg.d_model);

  // spectrogram head
  add_linear(p, seed, "head.seed", cfg.d_model,
             cfg.head_seed_ch * cfg.head_seed_h() * cfg.head_seed_w());
  cin = cfg.head_seed_ch;
  for (int i = 0; i < cfg.head_blocks; ++i) {
    add_convt(p, seed, "head.up" + std::to_string(i),
              cin, cfg.head_channels[static_cast<std::size_t>(i)], 4, 4);
    cin = cfg.head_channels[static_cast<std::size_t>(i)];
  }
  return p;
}

// Per-graph view of the parameters as (optionally trainable) leaf tensors.
struct Bound {
  std::map<std::string, ad::Tensor> tensors;

  const ad::Tensor& operator()(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::invalid_argument("bound parameters: unknown " + name);
    return it->second;
  }
};

inline Bound bind(ad::Graph& g, const Parameters& p, bool trainable = true) {
  Bound b;
  for (const auto& [name, value] : p.tensors) b.tensors.emplace(name, g.leaf(value, trainable));
  return b;
}

}  // namespace echomap::model

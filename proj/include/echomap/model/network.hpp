#pragma once

#include <optional>
#include <string>
#include <vector>

#include "echomap/autodiff/ops.hpp"
#include "echomap/dsp/spectrogram.hpp"
#include "echomap/mapping/feature_map.hpp"
#include "echomap/mapping/pose_embed.hpp"
#include "echomap/model/params.hpp"

namespace echomap::model {

// ---------------------------------------------------------------------------
// Visual encoder: per-ray [depth ‖ material embedding] through a small 1D
// U-Net (two stride-2 down convs, two transposed up convs, additive skips).
// Returns one feature row per ray.
// ---------------------------------------------------------------------------
inline ad::Tensor visual_encoder(ad::Graph& g, const Bound& p, const ModelConfig& cfg,
                                 const scene::RaycastScan& scan) {
  const int w = scan.width();
  if (w != cfg.scan_width || w % 4 != 0)
    throw std::invalid_argument("visual_encoder: scan width must match config and divide by 4");

  ad::NdArray depth = ad::NdArray::zeros({w, 1});
  ad::NdArray onehot = ad::NdArray::zeros({w, 8});
  for (int i = 0; i < w; ++i) {
    depth.data[static_cast<std::size_t>(i)] = scan.depth[static_cast<std::size_t>(i)];
    const int mat = scan.material[static_cast<std::size_t>(i)];
    if (mat < 0 || mat >= 8) throw std::invalid_argument("visual_encoder: bad material id");
    onehot.data[static_cast<std::size_t>(i) * 8 + mat] = 1.0;
  }
  ad::Tensor memb = ad::matmul(g.constant(onehot), p("material_embed"));  // [W,8]
  ad::Tensor x = ad::concat_cols({g.constant(depth), memb});              // [W,9]
  x = ad::reshape(ad::transpose2d(x), {9, 1, w});

  auto convb = [&](const ad::Tensor& in, const std::string& stem, int sh, int sw, int ph,
                   int pw) {
    return ad::bias_channels(ad::conv2d(in, p(stem + ".w"), sh, sw, ph, pw), p(stem + ".b"));
  };
  auto convtb = [&](const ad::Tensor& in, const std::string& stem, int sh, int sw, int ph,
                    int pw) {
    return ad::bias_channels(ad::conv_transpose2d(in, p(stem + ".w"), sh, sw, ph, pw),
                             p(stem + ".b"));
  };

  ad::Tensor h0 = ad::relu(convb(x, "vis.down0", 1, 2, 0, 1));    // [v0,1,W/2]
  ad::Tensor h1 = ad::relu(convb(h0, "vis.down1", 1, 2, 0, 1));   // [v1,1,W/4]
  ad::Tensor u0 = ad::relu(ad::add(convtb(h1, "vis.up0", 1, 2, 0, 1), h0));
  ad::Tensor out = convtb(u0, "vis.up1", 1, 2, 0, 1);             // [c_f,1,W]
  return ad::transpose2d(ad::reshape(out, {cfg.c_f, w}));         // [W,c_f]
}

// ---------------------------------------------------------------------------
// Anticipation: a residual 2D U-Net over the observation map. The output
// layer starts zero-initialized, so at init this is exactly the identity.
// ---------------------------------------------------------------------------
inline ad::Tensor anticipate(const Bound& p, const ModelConfig& cfg, const ad::Tensor& m_osm,
                             bool enabled, bool skip = true) {
  if (m_osm.shape() != ad::Shape{cfg.c_f, cfg.m, cfg.m})
    throw std::invalid_argument("anticipate: map shape mismatch");
  if (!enabled) return m_osm;

  ad::Tensor x = m_osm;
  std::vector<ad::Tensor> levels;
  for (int i = 0; i < cfg.ant_depth; ++i) {
    const std::string stem = "ant.down" + std::to_string(i);
    x = ad::relu(ad::bias_channels(ad::conv2d(x, p(stem + ".w"), 2, 1), p(stem + ".b")));
    levels.push_back(x);
  }
  for (int i = cfg.ant_depth - 1; i > 0; --i) {
    const std::string stem = "ant.up" + std::to_string(i);
    x = ad::bias_channels(ad::conv_transpose2d(x, p(stem + ".w"), 2, 1), p(stem + ".b"));
    x = ad::relu(ad::add(x, levels[static_cast<std::size_t>(i - 1)]));
  }
  x = ad::bias_channels(ad::conv_transpose2d(x, p("ant.up0.w"), 2, 1), p("ant.up0.b"));
  return skip ? ad::add(m_osm, x) : x;
}

// Fixed 2D sinusoidal features for the patch grid: half the width encodes the
// row index, half the column.
inline ad::NdArray patch_position_features(const ModelConfig& cfg) {
  const int P = cfg.m / cfg.patch;
  const int half = cfg.d_model / 2;
  ad::NdArray out = ad::NdArray::zeros({P * P, cfg.d_model});
  for (int r = 0; r < P; ++r)
    for (int c = 0; c < P; ++c) {
      const auto re = mapping::sinusoidal_embed_scalars({static_cast<double>(r)}, half);
      const auto ce = mapping::sinusoidal_embed_scalars({static_cast<double>(c)}, half);
      double* row = &out.data[static_cast<std::size_t>(r * P + c) * cfg.d_model];
      std::copy(re.data.begin(), re.data.end(), row);
      std::copy(ce.data.begin(), ce.data.end(), row + half);
    }
  return out;
}

// Patch tokens before any position/modality information is added.
inline ad::Tensor patch_embed_raw(const Bound& p, const ModelConfig& cfg,
                                  const ad::Tensor& m_ssm) {
  const int P = cfg.m / cfg.patch;
  ad::Tensor x = ad::bias_channels(ad::conv2d(m_ssm, p("patch.w"), cfg.patch, 0), p("patch.b"));
  return ad::transpose2d(ad::reshape(x, {cfg.d_model, P * P}));  // [P²,d]
}

inline ad::Tensor patch_tokens(ad::Graph& g, const Bound& p, const ModelConfig& cfg,
                               const ad::Tensor& m_ssm) {
  ad::Tensor t = ad::add(patch_embed_raw(p, cfg, m_ssm), g.constant(patch_position_features(cfg)));
  return ad::bias_rows(t, p("map_token"));
}

// ---------------------------------------------------------------------------
// Audio encoder: conv stack over the echo spectrogram, mean-pooled, then one
// linear over [echo feature ‖ modality token ‖ pose embedding].
// ---------------------------------------------------------------------------
inline ad::Tensor audio_token(ad::Graph& g, const Bound& p, const ModelConfig& cfg,
                              const dsp::Spectrogram& echo, const ad::NdArray& pose_emb) {
  if (echo.values.shape != ad::Shape{2, cfg.n_freq, cfg.n_time})
    throw std::invalid_argument("audio_token: echo shape mismatch");
  if (pose_emb.shape != ad::Shape{cfg.pose_dim()})
    throw std::invalid_argument("audio_token: pose embedding width mismatch");

  ad::Tensor x = g.constant(echo.values);
  for (int i = 0; i < 4; ++i) {
    const std::string stem = "aud.conv" + std::to_string(i);
    x = ad::relu(ad::bias_channels(ad::conv2d(x, p(stem + ".w"), 2, 1), p(stem + ".b")));
  }
  const auto& s = x.shape();
  ad::Tensor pooled = ad::reduce(ad::reshape(x, {s[0], s[1] * s[2]}), 1, ad::Reduce::Mean);
  ad::Tensor cat = ad::concat_first({pooled, p("audio_token"), g.constant(pose_emb)});
  cat = ad::reshape(cat, {1, cat.shape()[0]});
  return ad::bias_rows(ad::matmul(cat, p("aud.proj.w")), p("aud.proj.b"));  // [1,d]
}

// Mean-pooled visual features fused the same way (map-free ablation path).
inline ad::Tensor visual_pooled_token(ad::Graph& g, const Bound& p, const ModelConfig& cfg,
                                      const ad::Tensor& ray_features,
                                      const ad::NdArray& pose_emb) {
  ad::Tensor pooled = ad::reduce(ray_features, 0, ad::Reduce::Mean);  // [c_f]
  ad::Tensor cat = ad::concat_first({pooled, p("visual_token"), g.constant(pose_emb)});
  cat = ad::reshape(cat, {1, cat.shape()[0]});
  return ad::bias_rows(ad::matmul(cat, p("vfuse.w")), p("vfuse.b"));
}

// ---------------------------------------------------------------------------
// Transformer pieces. Attention reduces over the token axis with
// order-insensitive sums, so shuffling memory tokens cannot change outputs.
// ---------------------------------------------------------------------------
inline ad::Tensor multihead_attention(const Bound& p, const ModelConfig& cfg,
                                      const std::string& stem, const ad::Tensor& q,
                                      const ad::Tensor& kv) {
  const int dh = cfg.d_model / cfg.heads;
  std::vector<ad::Tensor> heads;
  for (int h = 0; h < cfg.heads; ++h) {
    const std::string hs = stem + ".h" + std::to_string(h);
    ad::Tensor qh = ad::matmul(q, p(hs + ".wq"));
    ad::Tensor kh = ad::matmul(kv, p(hs + ".wk"));
    ad::Tensor vh = ad::matmul(kv, p(hs + ".wv"));
    ad::Tensor scores = ad::scale(ad::matmul(qh, ad::transpose2d(kh)),
                                  1.0 / std::sqrt(static_cast<double>(dh)));
    heads.push_back(ad::matmul_sorted(ad::softmax(scores), vh));
  }
  ad::Tensor cat = cfg.heads == 1 ? heads[0] : ad::concat_cols(heads);
  return ad::bias_rows(ad::matmul(cat, p(stem + ".out.w")), p(stem + ".out.b"));
}

namespace detail {

inline ad::Tensor ln(const Bound& p, const std::string& stem, const ad::Tensor& x) {
  return ad::layer_norm(x, p(stem + ".g"), p(stem + ".b"));
}

inline ad::Tensor ff(const Bound& p, const std::string& stem, const ad::Tensor& x) {
  ad::Tensor h = ad::relu(ad::bias_rows(ad::matmul(x, p(stem + ".1.w")), p(stem + ".1.b")));
  return ad::bias_rows(ad::matmul(h, p(stem + ".2.w")), p(stem + ".2.b"));
}

}  // namespace detail

// Encoder self-attention over the fused memory, then per-query cross-attention
// decoding. Queries never attend to each other.
inline ad::Tensor encode_decode(ad::Graph& g, const Bound& p, const ModelConfig& cfg,
                                const ad::Tensor& memory_in,
                                const std::vector<ad::NdArray>& query_pose_embs) {
  ad::Tensor mem = memory_in;
  for (int i = 0; i < cfg.enc_layers; ++i) {
    const std::string stem = "enc" + std::to_string(i);
    ad::Tensor n = detail::ln(p, stem + ".ln1", mem);
    mem = ad::add(mem, multihead_attention(p, cfg, stem + ".attn", n, n));
    mem = ad::add(mem, detail::ff(p, stem + ".ff", detail::ln(p, stem + ".ln2", mem)));
  }

  const int nq = static_cast<int>(query_pose_embs.size());
  ad::NdArray qe = ad::NdArray::zeros({nq, cfg.pose_dim()});
  for (int j = 0; j < nq; ++j) {
    if (query_pose_embs[static_cast<std::size_t>(j)].shape != ad::Shape{cfg.pose_dim()})
      throw std::invalid_argument("encode_decode: pose embedding width mismatch");
    std::copy(query_pose_embs[static_cast<std::size_t>(j)].data.begin(),
              query_pose_embs[static_cast<std::size_t>(j)].data.end(),
              qe.data.begin() + static_cast<std::size_t>(j) * cfg.pose_dim());
  }
  ad::Tensor q = ad::bias_rows(ad::matmul(g.constant(qe), p("qlift.w")), p("qlift.b"));
  for (int i = 0; i < cfg.dec_layers; ++i) {
    const std::string stem = "dec" + std::to_string(i);
    q = ad::add(q, multihead_attention(p, cfg, stem + ".attn",
                                       detail::ln(p, stem + ".lnq", q),
                                       detail::ln(p, stem + ".lnm", mem)));
    q = ad::add(q, detail::ff(p, stem + ".ff", detail::ln(p, stem + ".ln2", q)));
  }
  return detail::ln(p, "dec.final", q);  // [N',d]
}

// ---------------------------------------------------------------------------
// Spectrogram head: linear seed, four stride-2 transposed-conv blocks, final
// relu to keep predictions in the log1p codomain.
// ---------------------------------------------------------------------------
inline ad::Tensor spectrogram_head(const Bound& p, const ModelConfig& cfg,
                                   const ad::Tensor& dec_out) {
  if (dec_out.shape().size() != 2 || dec_out.shape()[1] != cfg.d_model)
    throw std::invalid_argument("spectrogram_head: decoder width mismatch");
  const int nq = dec_out.shape()[0];
  ad::Tensor seed = ad::bias_rows(ad::matmul(dec_out, p("head.seed.w")), p("head.seed.b"));
  std::vector<ad::Tensor> outs;
  for (int j = 0; j < nq; ++j) {
    ad::Tensor x = ad::reshape(ad::slice_first(seed, j, 1),
                               {cfg.head_seed_ch, cfg.head_seed_h(), cfg.head_seed_w()});
    for (int i = 0; i < cfg.head_blocks; ++i) {
      const std::string stem = "head.up" + std::to_string(i);
      x = ad::bias_channels(ad::conv_transpose2d(x, p(stem + ".w"), 2, 1), p(stem + ".b"));
      if (i + 1 < cfg.head_blocks) x = ad::relu(x);
    }
    outs.push_back(ad::reshape(ad::relu(x), {1, 2, cfg.n_freq, cfg.n_time}));
  }
  return outs.size() == 1 ? outs[0] : ad::concat_first(outs);  // [N',2,F,T]
}

// ---------------------------------------------------------------------------
// Full forward pass.
// ---------------------------------------------------------------------------
struct EpisodeInputs {
  std::vector<scene::RaycastScan> scans;
  std::vector<dsp::Spectrogram> echoes;
  std::vector<scene::Pose> context_poses;
  double ref_x = 0.0, ref_y = 0.0;  // shared episode reference point
  double fov = 1.5707963267948966;
};

struct AblationFlags {
  bool no_mapper = false;
  bool no_anticipation = false;
  bool no_skip = false;
};

struct ForwardResult {
  ad::Tensor pred;  // [N',2,F,T]
  std::optional<ad::Tensor> m_osm, m_ssm;
};

inline ForwardResult predict_rir(ad::Graph& g, const Bound& p, const ModelConfig& cfg,
                                 const EpisodeInputs& in,
                                 const std::vector<scene::Pose>& query_poses,
                                 const AblationFlags& flags = {}) {
  const std::size_t n = in.scans.size();
  if (n == 0 || in.echoes.size() != n || in.context_poses.size() != n)
    throw std::invalid_argument("predict_rir: context streams must align and be nonempty");
  if (query_poses.empty()) throw std::invalid_argument("predict_rir: no queries");

  std::vector<ad::Tensor> ray_features;
  ray_features.reserve(n);
  for (const auto& scan : in.scans) ray_features.push_back(visual_encoder(g, p, cfg, scan));

  ForwardResult res{ad::Tensor{}, std::nullopt, std::nullopt};
  std::vector<ad::Tensor> memory_parts;
  if (!flags.no_mapper) {
    mapping::MapGeometry geom{cfg.m, cfg.map_res, in.ref_x, in.ref_y};
    ad::Tensor fused = mapping::fuse_scans(ray_features, in.scans, geom, in.fov);
    ad::Tensor m_osm = mapping::grid_to_image(fused, cfg.m, cfg.c_f);
    ad::Tensor m_ssm = anticipate(p, cfg, m_osm, !flags.no_anticipation, !flags.no_skip);
    res.m_osm = m_osm;
    res.m_ssm = m_ssm;
    memory_parts.push_back(patch_tokens(g, p, cfg, m_ssm));
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const auto pe = mapping::sinusoidal_pose_embed(in.context_poses[i], in.ref_x, in.ref_y,
                                                     cfg.d_pe);
      memory_parts.push_back(visual_pooled_token(g, p, cfg, ray_features[i], pe));
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto pe = mapping::sinusoidal_pose_embed(in.context_poses[i], in.ref_x, in.ref_y,
                                                   cfg.d_pe);
    memory_parts.push_back(audio_token(g, p, cfg, in.echoes[i], pe));
  }
  ad::Tensor memory = ad::concat_first(memory_parts);

  std::vector<ad::NdArray> qembs;
  qembs.reserve(query_poses.size());
  for (const auto& qp : query_poses)
    qembs.push_back(mapping::sinusoidal_pose_embed(qp, in.ref_x, in.ref_y, cfg.d_pe));
  ad::Tensor dec = encode_decode(g, p, cfg, memory, qembs);
  res.pred = spectrogram_head(p, cfg, dec);
  return res;
}

// Reference point shared by the map frame and every pose embedding: centroid
// of the context listener positions, snapped to the pose lattice.
inline std::pair<double, double> episode_reference(const std::vector<scene::Pose>& contexts,
                                                   double grid = 0.5) {
  if (contexts.empty()) throw std::invalid_argument("episode_reference: no context poses");
  double sx = 0.0, sy = 0.0;
  for (const auto& p : contexts) {
    sx += p.lx;
    sy += p.ly;
  }
  const double n = static_cast<double>(contexts.size());
  return {std::llround(sx / n / grid) * grid, std::llround(sy / n / grid) * grid};
}

}  // namespace echomap::model

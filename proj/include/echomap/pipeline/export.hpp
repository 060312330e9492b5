#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "echomap/dsp/wav.hpp"
#include "echomap/pipeline/dataset.hpp"
#include "echomap/pipeline/evaluate.hpp"

namespace echomap::pipeline {

// ---- flat-file helpers ----

// Rank-2 array to CSV, one row per line, %.17g cells (lossless for doubles).
inline void write_matrix_csv(const ad::NdArray& a, const std::string& path) {
  if (a.shape.size() != 2) throw std::invalid_argument("matrix csv: want rank 2");
  std::ofstream f(path);
  if (!f) throw std::runtime_error("matrix csv: cannot open " + path + " for writing");
  char buf[64];
  for (int r = 0; r < a.shape[0]; ++r) {
    for (int c = 0; c < a.shape[1]; ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", a.data[static_cast<std::size_t>(r) * a.shape[1] + c]);
      f << (c ? "," : "") << buf;
    }
    f << "\n";
  }
  if (!f) throw std::runtime_error("matrix csv: write failure on " + path);
}

inline ad::NdArray read_matrix_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("matrix csv: cannot open " + path);
  std::vector<double> data;
  int cols = -1, rows = 0;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    int c = 0;
    while (std::getline(ls, cell, ',')) {
      data.push_back(std::strtod(cell.c_str(), nullptr));
      ++c;
    }
    if (cols < 0) cols = c;
    if (c != cols) throw std::runtime_error("matrix csv: ragged rows in " + path);
    ++rows;
  }
  if (rows == 0) throw std::runtime_error("matrix csv: empty file " + path);
  return ad::NdArray({rows, cols}, std::move(data));
}

namespace detail {

inline std::string heat_color(double t) {
  // dark blue to yellow ramp
  t = std::clamp(t, 0.0, 1.0);
  const int r = static_cast<int>(std::lround(13 + t * (240 - 13)));
  const int g = static_cast<int>(std::lround(8 + t * (249 - 8)));
  const int b = static_cast<int>(std::lround(135 + t * (33 - 135)));
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

inline void svg_cells(std::ostream& os, const ad::NdArray& img, int x0, double lo, double hi) {
  const int H = img.shape[0], W = img.shape[1];
  const double span = hi > lo ? hi - lo : 1.0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double v = img.data[static_cast<std::size_t>(y) * W + x];
      os << "<rect x=\"" << x0 + x << "\" y=\"" << y << "\" width=\"1\" height=\"1\" fill=\""
         << heat_color((v - lo) / span) << "\"/>\n";
    }
}

}  // namespace detail

// One heatmap; the SVG canvas is exactly the grid: width = columns, height =
// rows (unit cells).
inline void write_heatmap_svg(const ad::NdArray& img, const std::string& path) {
  if (img.shape.size() != 2) throw std::invalid_argument("heatmap: want rank 2");
  double lo = img.data.empty() ? 0.0 : img.data[0], hi = lo;
  for (double v : img.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::ofstream f(path);
  if (!f) throw std::runtime_error("heatmap: cannot open " + path + " for writing");
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << img.shape[1] << "\" height=\""
    << img.shape[0] << "\" viewBox=\"0 0 " << img.shape[1] << " " << img.shape[0] << "\">\n";
  detail::svg_cells(f, img, 0, lo, hi);
  f << "</svg>\n";
  if (!f) throw std::runtime_error("heatmap: write failure on " + path);
}

// Two same-size heatmaps side by side (shared color scale, one-column gap).
inline void write_heatmap_pair_svg(const ad::NdArray& a, const ad::NdArray& b,
                                   const std::string& path) {
  if (a.shape != b.shape || a.shape.size() != 2)
    throw std::invalid_argument("heatmap pair: want two equal rank-2 arrays");
  double lo = a.data[0], hi = lo;
  for (double v : a.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (double v : b.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const int H = a.shape[0], W = a.shape[1];
  std::ofstream f(path);
  if (!f) throw std::runtime_error("heatmap pair: cannot open " + path + " for writing");
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << 2 * W + 1 << "\" height=\"" << H
    << "\" viewBox=\"0 0 " << 2 * W + 1 << " " << H << "\">\n";
  detail::svg_cells(f, a, 0, lo, hi);
  detail::svg_cells(f, b, W + 1, lo, hi);
  f << "</svg>\n";
  if (!f) throw std::runtime_error("heatmap pair: write failure on " + path);
}

// ---- qualitative export for one query ----

// Per-cell feature norm of a [c,m,m] map, as an [m,m] image.
inline ad::NdArray map_norm_image(const ad::NdArray& map) {
  if (map.shape.size() != 3) throw std::invalid_argument("map_norm: want [c,m,m]");
  const int C = map.shape[0], H = map.shape[1], W = map.shape[2];
  ad::NdArray img = ad::NdArray::zeros({H, W});
  for (int c = 0; c < C; ++c)
    for (std::size_t i = 0; i < static_cast<std::size_t>(H) * W; ++i) {
      const double v = map.data[static_cast<std::size_t>(c) * H * W + i];
      img.data[i] += v * v;
    }
  for (double& v : img.data) v = std::sqrt(v);
  return img;
}

// Stacks the two channels of a [2,F,T] spectrogram into a [2F,T] matrix
// (left block on top) for CSV emission.
inline ad::NdArray stack_channels(const ad::NdArray& spec) {
  if (spec.shape.size() != 3 || spec.shape[0] != 2)
    throw std::invalid_argument("stack_channels: want [2,F,T]");
  return ad::NdArray({spec.shape[1] * 2, spec.shape[2]}, spec.data);
}

// Everything the qualitative inspection needs for one scene seed + pose:
//   pred_spectrogram.csv / target_spectrogram.csv   [2F x T] stacked channels
//   {pred,target}_spec_{left,right}.svg             F x T heatmaps
//   map.svg                                         observed | anticipated norms
//   pred.wav / target.wav                           Griffin-Lim reconstructions
inline void predict_and_export(const RunConfig& cfg, const Checkpoint& ck,
                               std::uint64_t scene_seed, const scene::Pose& query,
                               const std::string& out_dir) {
  const auto sc = scene::sample_scene_spec(scene_seed, cfg.episode);
  scene::validate_pose(sc, query);

  EpisodeRecord rec;
  rec.scene_seed = scene_seed;
  detail::fill_contexts(rec, sc, cfg.episode);
  auto in = inputs_from_record(rec, cfg.episode);

  ad::Graph g;
  auto out = model::predict_rir(g, model::bind(g, ck.params, false), cfg.model, in, {query},
                                ck.ablate);
  auto pv = out.pred.values();
  ad::NdArray pred({2, cfg.model.n_freq, cfg.model.n_time},
                   std::vector<double>(pv.begin(), pv.end()));
  const auto target_rir = scene::render_rir(sc, query, cfg.episode.render);
  const auto target = dsp::stft_log_mag(target_rir);

  write_matrix_csv(stack_channels(pred), out_dir + "/pred_spectrogram.csv");
  write_matrix_csv(stack_channels(target.values), out_dir + "/target_spectrogram.csv");

  const int F = cfg.model.n_freq, T = cfg.model.n_time;
  auto channel = [&](const ad::NdArray& s, int c) {
    return ad::NdArray({F, T},
                       std::vector<double>(s.data.begin() + static_cast<std::size_t>(c) * F * T,
                                           s.data.begin() + static_cast<std::size_t>(c + 1) * F * T));
  };
  write_heatmap_svg(channel(pred, 0), out_dir + "/pred_spec_left.svg");
  write_heatmap_svg(channel(pred, 1), out_dir + "/pred_spec_right.svg");
  write_heatmap_svg(channel(target.values, 0), out_dir + "/target_spec_left.svg");
  write_heatmap_svg(channel(target.values, 1), out_dir + "/target_spec_right.svg");

  if (out.m_osm && out.m_ssm) {
    const ad::Shape mshape{cfg.model.c_f, cfg.model.m, cfg.model.m};
    auto ov = out.m_osm->values();
    auto sv = out.m_ssm->values();
    ad::NdArray osm(mshape, std::vector<double>(ov.begin(), ov.end()));
    ad::NdArray ssm(mshape, std::vector<double>(sv.begin(), sv.end()));
    write_heatmap_pair_svg(map_norm_image(osm), map_norm_image(ssm), out_dir + "/map.svg");
  }

  dsp::Spectrogram pred_spec;
  pred_spec.values = pred;
  pred_spec.sample_rate = cfg.episode.render.sample_rate;
  const auto pred_wav = dsp::griffin_lim(pred_spec, 64);
  const auto target_wav = dsp::griffin_lim(target, 64);
  auto wav_channels = [](const dsp::Rir& r) {
    const std::size_t L = static_cast<std::size_t>(r.samples.shape[1]);
    std::vector<double> left(r.samples.data.begin(), r.samples.data.begin() + L);
    std::vector<double> right(r.samples.data.begin() + L, r.samples.data.end());
    return std::pair{left, right};
  };
  const auto [pl, pr] = wav_channels(pred_wav);
  dsp::write_wav_stereo(out_dir + "/pred.wav", pl, pr, cfg.episode.render.sample_rate);
  const auto [tl, tr] = wav_channels(target_wav);
  dsp::write_wav_stereo(out_dir + "/target.wav", tl, tr, cfg.episode.render.sample_rate);
}

}  // namespace echomap::pipeline

#pragma once

#include <vector>

#include "echomap/dsp/spectrogram.hpp"
#include "echomap/model/network.hpp"
#include "echomap/pipeline/archive.hpp"
#include "echomap/pipeline/run_config.hpp"

// Glue between stored episode records and the model's inputs. Everything here
// works from the archive arrays (or the scene seed for train-time queries);
// query targets are only materialized where losses/metrics are computed.

namespace echomap::pipeline {

inline dsp::Rir rir_from_rows(const ad::NdArray& arr, int index, double sample_rate) {
  const int L = arr.shape.back();
  dsp::Rir r;
  r.sample_rate = sample_rate;
  r.samples = ad::NdArray::zeros({2, L});
  const std::size_t off = static_cast<std::size_t>(index) * 2 * static_cast<std::size_t>(L);
  std::copy(arr.data.begin() + off, arr.data.begin() + off + 2 * static_cast<std::size_t>(L),
            r.samples.data.begin());
  return r;
}

inline scene::RaycastScan scan_from_record(const EpisodeRecord& rec, int i) {
  const int W = rec.scan_depth.shape[1];
  scene::RaycastScan s;
  s.camera = rec.context_pose(i);
  s.depth.resize(static_cast<std::size_t>(W));
  s.material.resize(static_cast<std::size_t>(W));
  for (int r = 0; r < W; ++r) {
    s.depth[static_cast<std::size_t>(r)] = rec.scan_depth.data[static_cast<std::size_t>(i * W + r)];
    s.material[static_cast<std::size_t>(r)] =
        static_cast<int>(rec.scan_material.data[static_cast<std::size_t>(i * W + r)]);
  }
  return s;
}

inline dsp::Spectrogram echo_spectrogram(const EpisodeRecord& rec, int i, double sample_rate) {
  return dsp::stft_log_mag(rir_from_rows(rec.echo_rirs, i, sample_rate));
}

// Model-facing view of a stored episode. Reads contexts only — query targets
// stay untouched here.
inline model::EpisodeInputs inputs_from_record(const EpisodeRecord& rec,
                                               const scene::EpisodeConfig& ecfg) {
  model::EpisodeInputs in;
  in.fov = ecfg.fov;
  std::vector<scene::Pose> poses;
  for (int i = 0; i < rec.n_context(); ++i) {
    poses.push_back(rec.context_pose(i));
    in.scans.push_back(scan_from_record(rec, i));
    in.echoes.push_back(echo_spectrogram(rec, i, ecfg.render.sample_rate));
  }
  in.context_poses = poses;
  const auto [rx, ry] = model::episode_reference(poses);
  in.ref_x = rx;
  in.ref_y = ry;
  return in;
}

// Spectrogram targets packed [nq,2,F,T] from freshly rendered impulse
// responses (train-time queries).
inline ad::NdArray render_query_targets(const scene::SceneSpec& sc,
                                        const std::vector<scene::Pose>& poses,
                                        const scene::RenderConfig& render) {
  std::vector<ad::NdArray> specs;
  for (const auto& p : poses) {
    const auto rir = scene::render_rir(sc, p, render);
    specs.push_back(dsp::stft_log_mag(rir).values);
  }
  const int F = specs.front().shape[1], T = specs.front().shape[2];
  ad::NdArray out = ad::NdArray::zeros({static_cast<int>(specs.size()), 2, F, T});
  for (std::size_t i = 0; i < specs.size(); ++i)
    std::copy(specs[i].data.begin(), specs[i].data.end(),
              out.data.begin() + i * specs[i].data.size());
  return out;
}

// Spectrogram targets for the stored eval queries; only metric/loss code
// should call this (the leak contract).
inline std::vector<dsp::Spectrogram> target_spectrograms(const EpisodeRecord& rec,
                                                         double sample_rate) {
  std::vector<dsp::Spectrogram> out;
  for (int i = 0; i < rec.n_query(); ++i)
    out.push_back(dsp::stft_log_mag(rir_from_rows(rec.query_rirs, i, sample_rate)));
  return out;
}

inline ad::NdArray pack_spectrograms(const std::vector<dsp::Spectrogram>& specs) {
  const int F = specs.front().values.shape[1], T = specs.front().values.shape[2];
  ad::NdArray out = ad::NdArray::zeros({static_cast<int>(specs.size()), 2, F, T});
  for (std::size_t i = 0; i < specs.size(); ++i)
    std::copy(specs[i].values.data.begin(), specs[i].values.data.end(),
              out.data.begin() + i * specs[i].values.data.size());
  return out;
}

// Fresh query poses for one training visit of a scene; keyed by epoch so each
// pass sees new queries while a fixed-query run (refresh off) reuses epoch 0.
inline std::vector<scene::Pose> train_query_poses(const scene::SceneSpec& sc,
                                                  const RunConfig& cfg, long long epoch) {
  const std::uint64_t stream =
      derive_seed(sc.seed, "train-query", static_cast<std::uint64_t>(epoch));
  return scene::sample_query_poses(sc, cfg.queries_per_episode(), stream, cfg.episode);
}

}  // namespace echomap::pipeline

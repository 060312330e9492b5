#pragma once

#include <set>
#include <vector>

#include "echomap/pipeline/archive.hpp"
#include "echomap/pipeline/run_config.hpp"
#include "echomap/scene/episode.hpp"
#include "echomap/scene/image_source.hpp"
#include "echomap/scene/raycast.hpp"

namespace echomap::pipeline {

namespace detail {

inline ad::NdArray pack_poses(const std::vector<scene::Pose>& poses) {
  ad::NdArray a = ad::NdArray::zeros({static_cast<int>(poses.size()), 5});
  for (std::size_t i = 0; i < poses.size(); ++i) {
    a.data[i * 5 + 0] = poses[i].sx;
    a.data[i * 5 + 1] = poses[i].sy;
    a.data[i * 5 + 2] = poses[i].lx;
    a.data[i * 5 + 3] = poses[i].ly;
    a.data[i * 5 + 4] = static_cast<double>(poses[i].orient);
  }
  return a;
}

inline ad::NdArray pack_rirs(const std::vector<dsp::Rir>& rirs, int length) {
  ad::NdArray a = ad::NdArray::zeros({static_cast<int>(rirs.size()), 2, length});
  for (std::size_t i = 0; i < rirs.size(); ++i) {
    if (rirs[i].samples.shape != ad::Shape{2, length})
      throw std::invalid_argument("pack_rirs: length mismatch");
    std::copy(rirs[i].samples.data.begin(), rirs[i].samples.data.end(),
              a.data.begin() + i * static_cast<std::size_t>(2 * length));
  }
  return a;
}

// Contexts for one scene: poses, scans, and echo recordings, flattened.
inline void fill_contexts(EpisodeRecord& rec, const scene::SceneSpec& sc,
                          const scene::EpisodeConfig& ecfg) {
  const auto poses = scene::sample_context_poses(sc, ecfg.n_context, ecfg);
  const int n = static_cast<int>(poses.size()), W = ecfg.scan_width;
  rec.context_poses = pack_poses(poses);
  rec.scan_depth = ad::NdArray::zeros({n, W});
  rec.scan_material = ad::NdArray::zeros({n, W});
  std::vector<dsp::Rir> echoes;
  for (int i = 0; i < n; ++i) {
    const auto scan = scene::raycast_scan(sc, poses[static_cast<std::size_t>(i)], W, ecfg.fov);
    for (int r = 0; r < W; ++r) {
      rec.scan_depth.data[static_cast<std::size_t>(i * W + r)] =
          scan.depth[static_cast<std::size_t>(r)];
      rec.scan_material.data[static_cast<std::size_t>(i * W + r)] =
          static_cast<double>(scan.material[static_cast<std::size_t>(r)]);
    }
    echoes.push_back(scene::render_rir(sc, poses[static_cast<std::size_t>(i)], ecfg.render));
  }
  rec.echo_rirs = pack_rirs(echoes, ecfg.render.length);
}

inline void fill_queries(EpisodeRecord& rec, const scene::SceneSpec& sc,
                         const scene::EpisodeConfig& ecfg, std::uint64_t stream) {
  std::vector<scene::Pose> avoid;
  for (int i = 0; i < rec.n_context(); ++i) avoid.push_back(rec.context_pose(i));
  const auto poses = scene::sample_query_poses(sc, ecfg.n_query, stream, ecfg, avoid);
  rec.query_poses = pack_poses(poses);
  std::vector<dsp::Rir> targets;
  for (const auto& p : poses) targets.push_back(scene::render_rir(sc, p, ecfg.render));
  rec.query_rirs = pack_rirs(targets, ecfg.render.length);
}

// Distinct scene seeds for a split, never colliding with `taken`.
inline std::vector<std::uint64_t> scene_seeds(std::uint64_t base, const char* tag, int n,
                                              std::set<std::uint64_t>& taken) {
  std::vector<std::uint64_t> out;
  for (int i = 0; i < n; ++i) {
    std::uint64_t s = 0;
    for (std::uint64_t salt = 0;; ++salt) {
      s = derive_seed(base, tag, static_cast<std::uint64_t>(i), salt);
      if (taken.insert(s).second) break;
    }
    out.push_back(s);
  }
  return out;
}

}  // namespace detail

// The full corpus for one run: train episodes store contexts only (queries
// are drawn fresh at train time from the scene seed); seen-eval episodes
// reuse the first train scenes with held-out queries; unseen-eval episodes
// use disjoint scene seeds.
inline DatasetArchive gen_dataset(const RunConfig& cfg) {
  cfg.validate();
  DatasetArchive ar;
  ar.fingerprint = cfg.fingerprint();
  ar.profile = cfg.profile;

  std::set<std::uint64_t> taken;
  const auto train_seeds = detail::scene_seeds(cfg.seed, "train-scene", cfg.train_scenes, taken);
  const auto unseen_seeds = detail::scene_seeds(cfg.seed, "unseen-scene", cfg.unseen_eval, taken);

  for (std::uint64_t s : train_seeds) {
    EpisodeRecord rec;
    rec.split = Split::Train;
    rec.scene_seed = s;
    const auto sc = scene::sample_scene_spec(s, cfg.episode);
    detail::fill_contexts(rec, sc, cfg.episode);
    rec.query_poses = ad::NdArray::zeros({0, 5});
    rec.query_rirs = ad::NdArray::zeros({0, 2, cfg.episode.render.length});
    ar.episodes.push_back(std::move(rec));
  }
  for (int i = 0; i < cfg.seen_eval; ++i) {
    EpisodeRecord rec;
    rec.split = Split::Seen;
    rec.scene_seed = train_seeds[static_cast<std::size_t>(i)];
    const auto sc = scene::sample_scene_spec(rec.scene_seed, cfg.episode);
    detail::fill_contexts(rec, sc, cfg.episode);
    detail::fill_queries(rec, sc, cfg.episode, derive_seed(rec.scene_seed, "eval-query"));
    ar.episodes.push_back(std::move(rec));
  }
  for (std::uint64_t s : unseen_seeds) {
    EpisodeRecord rec;
    rec.split = Split::Unseen;
    rec.scene_seed = s;
    const auto sc = scene::sample_scene_spec(s, cfg.episode);
    detail::fill_contexts(rec, sc, cfg.episode);
    detail::fill_queries(rec, sc, cfg.episode, derive_seed(s, "eval-query"));
    ar.episodes.push_back(std::move(rec));
  }
  return ar;
}

}  // namespace echomap::pipeline

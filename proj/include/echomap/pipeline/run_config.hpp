#pragma once

#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

#include "echomap/autodiff/optim.hpp"
#include "echomap/common.hpp"
#include "echomap/model/config.hpp"
#include "echomap/model/network.hpp"
#include "echomap/scene/episode.hpp"

namespace echomap::pipeline {

// Everything one run needs: the profile pins all shape-bearing fields, the
// rest are training/evaluation knobs. The fingerprint hashes the fields that
// define dataset identity, so archives and checkpoints can refuse mismatched
// partners.
struct RunConfig {
  std::string profile = "desk";  // desk | large
  std::uint64_t seed = 7;

  model::ModelConfig model;
  scene::EpisodeConfig episode;

  int train_scenes = 64;
  int seen_eval = 16;
  int unseen_eval = 16;

  long long steps = 1200;
  int batch = 2;
  int train_queries = 0;         // queries per training episode; 0 = episode.n_query
  bool refresh_queries = true;   // redraw query sets each pass over the data
  double base_lr = 1e-4;
  ad::LrSchedule schedule = ad::LrSchedule::Constant;
  long long checkpoint_every = 0;  // extra periodic saves; 0 = final only
  model::AblationFlags ablate;

  int queries_per_episode() const {
    return train_queries > 0 ? train_queries : episode.n_query;
  }

  void apply_profile(const std::string& name) {
    profile = name;
    if (name == "desk") {
      model = model::ModelConfig::desk();
      episode = scene::EpisodeConfig{};
      train_scenes = 64;
      seen_eval = 16;
      unseen_eval = 16;
      steps = 1200;
      batch = 2;
    } else if (name == "large") {
      model = model::ModelConfig::large();
      episode = scene::EpisodeConfig{};
      episode.n_context = 20;
      episode.n_query = 60;
      train_scenes = 56;
      seen_eval = 16;
      unseen_eval = 16;
      steps = 20000;
      batch = 4;
    } else {
      throw std::invalid_argument("unknown profile: " + name);
    }
  }

  void validate() const {
    model.validate();
    if (model.scan_width != episode.scan_width)
      throw std::invalid_argument("config: scan width differs between model and episode");
    if (episode.n_context < 1 || episode.n_query < 1)
      throw std::invalid_argument("config: need at least one context and query");
    if (train_scenes < 1 || seen_eval < 0 || unseen_eval < 0)
      throw std::invalid_argument("config: bad split sizes");
    if (seen_eval > train_scenes)
      throw std::invalid_argument("config: seen-eval episodes reuse train scenes");
    if (steps < 1 || batch < 1) throw std::invalid_argument("config: bad step/batch counts");
    if (!(base_lr >= 0.0)) throw std::invalid_argument("config: negative learning rate");
    const int expect_t = episode.render.length / 32;  // stft hop
    if (model.n_time != expect_t)
      throw std::invalid_argument("config: rir length does not yield the model's time axis");
  }

  // Dataset identity: every field that changes stored bytes or array shapes.
  // Training knobs (steps, lr, ablations) deliberately excluded so ablated
  // checkpoints still evaluate against the shared archive.
  std::uint64_t fingerprint() const {
    char buf[512];
    std::snprintf(
        buf, sizeof buf,
        "%s|%llu|cf%d dm%d h%d e%d d%d p%d F%d T%d m%d W%d pe%d|res%a|n%d q%d grid%a ext%a %a "
        "fov%a obs%d|fs%a len%d ord%d c%a ear%a|tr%d se%d un%d",
        profile.c_str(), static_cast<unsigned long long>(seed), model.c_f, model.d_model,
        model.heads, model.enc_layers, model.dec_layers, model.patch, model.n_freq, model.n_time,
        model.m, model.scan_width, model.d_pe, model.map_res, episode.n_context, episode.n_query,
        episode.pose_grid, episode.extent_min, episode.extent_max, episode.fov,
        episode.max_obstacles, episode.render.sample_rate, episode.render.length,
        episode.render.max_order, episode.render.sound_speed, episode.render.ear_separation,
        train_scenes, seen_eval, unseen_eval);
    return fnv1a(buf);
  }
};

}  // namespace echomap::pipeline

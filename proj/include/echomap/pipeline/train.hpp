#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "echomap/autodiff/optim.hpp"
#include "echomap/model/loss.hpp"
#include "echomap/pipeline/checkpoint.hpp"
#include "echomap/pipeline/runtime.hpp"

namespace echomap::pipeline {

struct TraceRow {
  long long step = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_stft = 0.0;
  double loss_edm = 0.0;
  double smoothed = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<TraceRow> trace;
};

inline void write_trace_csv(const std::vector<TraceRow>& trace, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("trace: cannot open " + path + " for writing");
  f << "step,lr,loss_total,loss_stft,loss_edm,smoothed\n";
  char buf[256];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.step, r.lr,
                  r.loss_total, r.loss_stft, r.loss_edm, r.smoothed);
    f << buf;
  }
  if (!f) throw std::runtime_error("trace: write failure on " + path);
}

// Deterministic episodic training: every stochastic choice at step s is a
// pure function of (seed, epoch, scene), so a resumed run replays the exact
// step stream. One backward pass per episode; gradients averaged over the
// batch before each Adam update. Non-finite values anywhere abort by
// exception (the divergence guard).
inline TrainResult train(const RunConfig& cfg, const DatasetArchive& ar,
                         const std::string& out_dir = "",
                         const Checkpoint* resume = nullptr,
                         const std::function<void(const TraceRow&)>& on_step = {}) {
  cfg.validate();
  if (ar.fingerprint != cfg.fingerprint())
    throw std::invalid_argument("train: archive fingerprint does not match the configuration");

  const auto train_idx = ar.split_indices(Split::Train);
  if (train_idx.empty()) throw std::invalid_argument("train: archive has no train episodes");
  const long long n_train = static_cast<long long>(train_idx.size());
  const long long steps_per_epoch = (n_train + cfg.batch - 1) / cfg.batch;

  model::Parameters params =
      resume ? resume->params : model::init_parameters(cfg.model, derive_seed(cfg.seed, "init"));
  std::map<std::string, ad::AdamState> adam = resume ? resume->adam
                                                     : std::map<std::string, ad::AdamState>{};
  const long long start = resume ? resume->next_step : 0;
  if (resume && resume->next_step > cfg.steps)
    throw std::invalid_argument("train: checkpoint is already past the requested step count");

  // per-episode caches: scene geometry and the fixed context inputs
  std::vector<std::optional<scene::SceneSpec>> scenes(ar.episodes.size());
  std::vector<std::optional<model::EpisodeInputs>> inputs(ar.episodes.size());
  auto scene_of = [&](int idx) -> const scene::SceneSpec& {
    auto& slot = scenes[static_cast<std::size_t>(idx)];
    if (!slot)
      slot = scene::sample_scene_spec(ar.episodes[static_cast<std::size_t>(idx)].scene_seed,
                                      cfg.episode);
    return *slot;
  };
  auto inputs_of = [&](int idx) -> const model::EpisodeInputs& {
    auto& slot = inputs[static_cast<std::size_t>(idx)];
    if (!slot) slot = inputs_from_record(ar.episodes[static_cast<std::size_t>(idx)], cfg.episode);
    return *slot;
  };

  std::vector<TraceRow> trace;
  double ema = resume ? resume->ema : 0.0;
  bool have_ema = resume ? resume->have_ema : false;

  for (long long s = start; s < cfg.steps; ++s) {
    const long long epoch = s / steps_per_epoch;
    const long long pos = s % steps_per_epoch;
    std::vector<int> order = train_idx;
    Rng order_rng(derive_seed(cfg.seed, "order", static_cast<std::uint64_t>(epoch)));
    order_rng.shuffle(order);
    const long long lo = pos * cfg.batch;
    const long long hi = std::min<long long>(n_train, lo + cfg.batch);

    std::map<std::string, ad::NdArray> gacc;
    double sum_lt = 0.0, sum_ls = 0.0, sum_le = 0.0;
    for (long long b = lo; b < hi; ++b) {
      const int idx = order[static_cast<std::size_t>(b)];
      const auto& sc = scene_of(idx);
      const long long qepoch = cfg.refresh_queries ? epoch : 0;
      const auto qposes = train_query_poses(sc, cfg, qepoch);
      const ad::NdArray targets = render_query_targets(sc, qposes, cfg.episode.render);

      ad::Graph g;
      auto bound = model::bind(g, params, true);
      auto out = model::predict_rir(g, bound, cfg.model, inputs_of(idx), qposes, cfg.ablate);
      auto ls = model::loss_stft(out.pred, targets);
      auto le = model::loss_edm(out.pred, targets);
      auto lt = ad::add(ls, ad::scale(le, cfg.model.lambda_edm));
      g.backward(lt);
      sum_ls += ls.scalar();
      sum_le += le.scalar();
      sum_lt += lt.scalar();
      for (const auto& [name, t] : bound.tensors) {
        auto gr = t.grad();
        auto [it, fresh] = gacc.try_emplace(
            name, ad::NdArray(params.at(name).shape, std::vector<double>(gr.size(), 0.0)));
        for (std::size_t i = 0; i < gr.size(); ++i) it->second.data[i] += gr[i];
      }
    }
    const double inv = 1.0 / static_cast<double>(hi - lo);
    ad::AdamConfig acfg;
    acfg.lr = ad::lr_at(s, cfg.steps, cfg.base_lr, cfg.schedule);
    for (auto& [name, grad] : gacc) {
      for (double& v : grad.data) v *= inv;
      adam_step(params.at(name), grad, adam[name], acfg);
    }

    TraceRow row;
    row.step = s;
    row.lr = acfg.lr;
    row.loss_total = sum_lt * inv;
    row.loss_stft = sum_ls * inv;
    row.loss_edm = sum_le * inv;
    ema = have_ema ? 0.95 * ema + 0.05 * row.loss_total : row.loss_total;
    have_ema = true;
    row.smoothed = ema;
    trace.push_back(row);
    if (on_step) on_step(row);

    if (!out_dir.empty() && cfg.checkpoint_every > 0 && (s + 1) % cfg.checkpoint_every == 0 &&
        s + 1 < cfg.steps) {
      Checkpoint ck{cfg.fingerprint(), cfg.seed, s + 1,    cfg.steps, cfg.base_lr,
                    cfg.schedule,      ema,      have_ema, cfg.ablate, params,
                    adam};
      char name[64];
      std::snprintf(name, sizeof name, "/checkpoint_step%lld.bin", s + 1);
      save_checkpoint(ck, out_dir + name);
    }
  }

  TrainResult res;
  res.checkpoint = Checkpoint{cfg.fingerprint(), cfg.seed, cfg.steps, cfg.steps,
                              cfg.base_lr,       cfg.schedule, ema,   have_ema,
                              cfg.ablate,        std::move(params),   std::move(adam)};
  res.trace = std::move(trace);
  if (!out_dir.empty()) {
    save_checkpoint(res.checkpoint, out_dir + "/checkpoint.bin");
    write_trace_csv(res.trace, out_dir + "/trace.csv");
  }
  return res;
}

}  // namespace echomap::pipeline

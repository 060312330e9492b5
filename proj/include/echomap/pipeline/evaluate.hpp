#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "echomap/dsp/acoustics.hpp"
#include "echomap/pipeline/baselines.hpp"
#include "echomap/pipeline/checkpoint.hpp"
#include "echomap/pipeline/runtime.hpp"

namespace echomap::pipeline {

struct QueryScore {
  Split split = Split::Seen;
  int episode = 0;
  int query = 0;
  dsp::Metrics metrics;
};

struct SplitSummary {
  double stft = 0.0;
  double rte = 0.0;
  double drre = 0.0;
  long long n = 0;        // queries scored
  long long n_rte = 0;    // with a measurable decay on both sides
  long long n_drre = 0;
};

struct EvalTable {
  std::vector<QueryScore> rows;

  SplitSummary summary(Split s) const {
    SplitSummary out;
    for (const auto& r : rows) {
      if (r.split != s) continue;
      out.stft += r.metrics.stft_error;
      out.n += 1;
      if (r.metrics.rte) {
        out.rte += *r.metrics.rte;
        out.n_rte += 1;
      }
      if (r.metrics.drre) {
        out.drre += *r.metrics.drre;
        out.n_drre += 1;
      }
    }
    if (out.n > 0) out.stft /= static_cast<double>(out.n);
    if (out.n_rte > 0) out.rte /= static_cast<double>(out.n_rte);
    if (out.n_drre > 0) out.drre /= static_cast<double>(out.n_drre);
    return out;
  }
};

// ---- prediction phase (no target access) ----

// Model predictions for every query of one stored episode.
inline std::vector<dsp::Spectrogram> predict_record(const model::Parameters& params,
                                                    const RunConfig& cfg,
                                                    const EpisodeRecord& rec,
                                                    const model::AblationFlags& ablate) {
  auto in = inputs_from_record(rec, cfg.episode);
  std::vector<scene::Pose> queries;
  for (int i = 0; i < rec.n_query(); ++i) queries.push_back(rec.query_pose(i));
  ad::Graph g;
  auto out = model::predict_rir(g, model::bind(g, params, false), cfg.model, in, queries, ablate);
  const auto vals = out.pred.values();
  const int F = cfg.model.n_freq, T = cfg.model.n_time;
  std::vector<dsp::Spectrogram> specs;
  for (int q = 0; q < rec.n_query(); ++q) {
    dsp::Spectrogram sp;
    sp.sample_rate = cfg.episode.render.sample_rate;
    sp.values = ad::NdArray::zeros({2, F, T});
    const std::size_t off = static_cast<std::size_t>(q) * 2 * F * T;
    std::copy(vals.begin() + off, vals.begin() + off + static_cast<std::size_t>(2 * F * T),
              sp.values.data.begin());
    specs.push_back(std::move(sp));
  }
  return specs;
}

inline std::vector<dsp::Spectrogram> predict_record_nearest(const RunConfig& cfg,
                                                            const EpisodeRecord& rec) {
  std::vector<dsp::Spectrogram> ctx;
  std::vector<scene::Pose> poses;
  for (int i = 0; i < rec.n_context(); ++i) {
    ctx.push_back(echo_spectrogram(rec, i, cfg.episode.render.sample_rate));
    poses.push_back(rec.context_pose(i));
  }
  std::vector<dsp::Spectrogram> out;
  for (int q = 0; q < rec.n_query(); ++q)
    out.push_back(baseline_nearest(ctx, poses, rec.query_pose(q)));
  return out;
}

inline std::vector<dsp::Spectrogram> predict_record_interp(const RunConfig& cfg,
                                                           const EpisodeRecord& rec) {
  std::vector<dsp::Spectrogram> ctx;
  std::vector<scene::Pose> poses;
  for (int i = 0; i < rec.n_context(); ++i) {
    ctx.push_back(echo_spectrogram(rec, i, cfg.episode.render.sample_rate));
    poses.push_back(rec.context_pose(i));
  }
  std::vector<dsp::Spectrogram> out;
  for (int q = 0; q < rec.n_query(); ++q)
    out.push_back(baseline_interp(ctx, poses, rec.query_pose(q)));
  return out;
}

// ---- scoring phase ----

inline void score_episode(EvalTable& table, Split split, int episode,
                          const std::vector<dsp::Spectrogram>& preds,
                          const std::vector<dsp::Spectrogram>& targets) {
  if (preds.size() != targets.size())
    throw std::invalid_argument("score_episode: prediction/target count mismatch");
  for (std::size_t q = 0; q < preds.size(); ++q) {
    QueryScore row;
    row.split = split;
    row.episode = episode;
    row.query = static_cast<int>(q);
    row.metrics = dsp::evaluate_metrics(preds[q], targets[q]);
    table.rows.push_back(row);
  }
}

enum class Predictor { Model, Nearest, Interp };

// Full pass over one split of the archive with the chosen predictor.
// Baselines and the model consume the exact same records; targets are only
// opened after the predictions exist.
inline EvalTable evaluate_split(const RunConfig& cfg, const DatasetArchive& ar, Split split,
                                Predictor which, const Checkpoint* ck = nullptr) {
  if (which == Predictor::Model && ck == nullptr)
    throw std::invalid_argument("evaluate_split: model predictor needs a checkpoint");
  EvalTable table;
  for (int idx : ar.split_indices(split)) {
    const auto& rec = ar.episodes[static_cast<std::size_t>(idx)];
    if (rec.n_query() == 0) continue;
    std::vector<dsp::Spectrogram> preds;
    switch (which) {
      case Predictor::Model: preds = predict_record(ck->params, cfg, rec, ck->ablate); break;
      case Predictor::Nearest: preds = predict_record_nearest(cfg, rec); break;
      case Predictor::Interp: preds = predict_record_interp(cfg, rec); break;
    }
    const auto targets = target_spectrograms(rec, cfg.episode.render.sample_rate);
    score_episode(table, split, idx, preds, targets);
  }
  return table;
}

// Metrics CSV: one row per query plus a trailing summary row per split; the
// stored numbers are unscaled (display scaling happens in reports only).
inline void write_metrics_csv(const EvalTable& table, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("metrics: cannot open " + path + " for writing");
  f << "split,episode,query,stft_error,rte_s,drre_db\n";
  char buf[256];
  bool seen[3] = {false, false, false};
  for (const auto& r : table.rows) {
    seen[static_cast<int>(r.split)] = true;
    std::snprintf(buf, sizeof buf, "%s,%d,%d,%.17g", split_name(r.split), r.episode, r.query,
                  r.metrics.stft_error);
    f << buf;
    if (r.metrics.rte) {
      std::snprintf(buf, sizeof buf, ",%.17g", *r.metrics.rte);
      f << buf;
    } else {
      f << ",";
    }
    if (r.metrics.drre) {
      std::snprintf(buf, sizeof buf, ",%.17g", *r.metrics.drre);
      f << buf;
    } else {
      f << ",";
    }
    f << "\n";
  }
  for (int s = 0; s < 3; ++s) {
    if (!seen[s]) continue;
    const auto sum = table.summary(static_cast<Split>(s));
    std::snprintf(buf, sizeof buf, "%s,summary,,%.17g,%.17g,%.17g\n",
                  split_name(static_cast<Split>(s)), sum.stft, sum.rte, sum.drre);
    f << buf;
  }
  if (!f) throw std::runtime_error("metrics: write failure on " + path);
}

}  // namespace echomap::pipeline

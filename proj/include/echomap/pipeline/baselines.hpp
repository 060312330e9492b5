#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "echomap/dsp/spectrogram.hpp"
#include "echomap/scene/types.hpp"

namespace echomap::pipeline {

namespace detail {

inline double listener_dist(const scene::Pose& context, const scene::Pose& query) {
  const double dx = context.lx - query.lx, dy = context.ly - query.ly;
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace detail

// Echo of the context whose (co-located) pose is nearest the query listener;
// ties go to the lowest context index.
inline dsp::Spectrogram baseline_nearest(const std::vector<dsp::Spectrogram>& context_specs,
                                         const std::vector<scene::Pose>& context_poses,
                                         const scene::Pose& query) {
  if (context_specs.empty() || context_specs.size() != context_poses.size())
    throw std::invalid_argument("baseline_nearest: empty or misaligned context");
  std::size_t best = 0;
  double best_d = detail::listener_dist(context_poses[0], query);
  for (std::size_t i = 1; i < context_poses.size(); ++i) {
    const double d = detail::listener_dist(context_poses[i], query);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return context_specs[best];
}

// Inverse-distance interpolation of the four nearest context echoes (all of
// them when fewer than four exist); weights normalized to sum to one.
inline dsp::Spectrogram baseline_interp(const std::vector<dsp::Spectrogram>& context_specs,
                                        const std::vector<scene::Pose>& context_poses,
                                        const scene::Pose& query) {
  if (context_specs.empty() || context_specs.size() != context_poses.size())
    throw std::invalid_argument("baseline_interp: empty or misaligned context");
  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t i = 0; i < context_poses.size(); ++i)
    order.emplace_back(detail::listener_dist(context_poses[i], query), i);
  std::sort(order.begin(), order.end());  // distance, then index on ties
  const std::size_t k = std::min<std::size_t>(4, order.size());

  double total = 0.0;
  std::vector<double> w(k);
  for (std::size_t j = 0; j < k; ++j) {
    w[j] = 1.0 / std::max(order[j].first, 1e-6);
    total += w[j];
  }
  dsp::Spectrogram out = context_specs[order[0].second];
  for (double& v : out.values.data) v = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    const double wj = w[j] / total;
    const auto& src = context_specs[order[j].second].values.data;
    for (std::size_t i = 0; i < src.size(); ++i) out.values.data[i] += wj * src[i];
  }
  return out;
}

}  // namespace echomap::pipeline

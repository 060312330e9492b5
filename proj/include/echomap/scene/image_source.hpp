#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <tuple>
#include <vector>

#include "echomap/dsp/spectrogram.hpp"
#include "echomap/scene/types.hpp"

namespace echomap::scene {

// One mirrored copy of the speaker. Position is absolute; wall_uses counts how
// many times each wall participated in the mirror sequence.
struct ImageSource {
  double x = 0.0, y = 0.0;
  std::array<int, 4> wall_uses{0, 0, 0, 0};
  int order = 0;
};

// ---------------------------------------------------------------------------
// Image-source enumeration for a rectangular room.
//
// Along one axis the mirrored coordinate is (1-2q)*s + 2*m*L for q in {0,1}
// and integer m; the low wall is used |m-q| times and the high wall |m| times,
// for a per-axis order of |2m-q|. The two axes combine independently.
// ---------------------------------------------------------------------------
namespace detail {

struct AxisImage {
  double coord;  // mirrored coordinate, relative to the room origin
  int low, high, order;
};

inline std::vector<AxisImage> axis_images(double s, double extent, int max_order) {
  std::vector<AxisImage> out;
  const int mmax = max_order / 2 + 1;
  for (int m = -mmax; m <= mmax; ++m)
    for (int q = 0; q <= 1; ++q) {
      const int order = std::abs(2 * m - q);
      if (order > max_order) continue;
      out.push_back({(1 - 2 * q) * s + 2.0 * m * extent, std::abs(m - q), std::abs(m), order});
    }
  return out;
}

// Enumerates in room-relative coordinates; distance computations stay in this
// frame so the result cannot depend on where the room sits in the world.
inline std::vector<ImageSource> image_sources_rel(const SceneSpec& scene, double rsx, double rsy,
                                                 int max_order) {
  const auto xs = axis_images(rsx, scene.extent_x, max_order);
  const auto ys = axis_images(rsy, scene.extent_y, max_order);
  std::vector<ImageSource> out;
  for (const AxisImage& ax : xs)
    for (const AxisImage& ay : ys) {
      if (ax.order + ay.order > max_order) continue;
      ImageSource src;
      src.x = ax.coord;
      src.y = ay.coord;
      src.wall_uses = {ax.low, ax.high, ay.low, ay.high};
      src.order = ax.order + ay.order;
      out.push_back(src);
    }
  return out;
}

}  // namespace detail

inline std::vector<ImageSource> image_sources(const SceneSpec& scene, double sx, double sy,
                                              int max_order) {
  if (max_order < 0) throw std::invalid_argument("image_sources: negative order");
  if (!scene.contains(sx, sy)) throw std::invalid_argument("image_sources: speaker outside room");
  auto out = detail::image_sources_rel(scene, sx - scene.origin_x, sy - scene.origin_y, max_order);
  for (ImageSource& src : out) {
    src.x += scene.origin_x;
    src.y += scene.origin_y;
  }
  return out;
}

struct RenderConfig {
  int max_order = 12;
  double sample_rate = 8000.0;
  int length = 4096;
  double sound_speed = 343.0;
  double ear_separation = 0.2;
};

// ---------------------------------------------------------------------------
// Binaural impulse response via the image-source sum. Each arrival lands with
// amplitude (prod of beta^uses) / max(distance, 0.1) split linearly across the
// two nearest samples. Contributions are sorted before accumulation so the
// result is independent of enumeration order (this is what makes the
// swap-speaker/listener and translate-everything identities hold bit-for-bit).
//
// The explicit-material overload serves rooms outside the shared palette,
// e.g. fully absorbent walls (alpha=1, beta=0), which leave only the direct
// arrival in the response.
// ---------------------------------------------------------------------------
inline dsp::Rir render_rir(const SceneSpec& scene, const Pose& pose,
                           const std::array<Material, 4>& walls, const RenderConfig& cfg = {}) {
  if (cfg.length <= 0) throw std::invalid_argument("render_rir: bad length");
  if (cfg.sample_rate <= 0 || cfg.sound_speed <= 0)
    throw std::invalid_argument("render_rir: bad rate/speed");
  validate_pose(scene, pose);

  const auto sources = detail::image_sources_rel(scene, pose.sx - scene.origin_x,
                                                 pose.sy - scene.origin_y, cfg.max_order);

  // Ears sit on the axis perpendicular to the facing direction, room-relative.
  const auto [px, py] = rot90(0.0, 1.0, pose.orient);
  const double half = cfg.ear_separation / 2.0;
  const double rlx = pose.lx - scene.origin_x, rly = pose.ly - scene.origin_y;
  const double ear_x[2] = {rlx + half * px, rlx - half * px};
  const double ear_y[2] = {rly + half * py, rly - half * py};

  std::vector<std::tuple<int, int, double>> hits;  // (ear, sample, value)
  hits.reserve(sources.size() * 4);
  for (const ImageSource& src : sources) {
    double beta_prod = 1.0;
    for (int w = 0; w < 4; ++w) {
      const double b = walls[static_cast<std::size_t>(w)].beta();
      for (int u = 0; u < src.wall_uses[w]; ++u) beta_prod *= b;
    }
    if (beta_prod == 0.0) continue;
    for (int e = 0; e < 2; ++e) {
      const double d = std::hypot(src.x - ear_x[e], src.y - ear_y[e]);
      const double amp = beta_prod / std::max(d, 0.1);
      const double delay = cfg.sample_rate * d / cfg.sound_speed;
      const int i0 = static_cast<int>(std::floor(delay));
      const double frac = delay - i0;
      if (i0 < cfg.length) hits.emplace_back(e, i0, amp * (1.0 - frac));
      if (i0 + 1 < cfg.length && frac > 0.0) hits.emplace_back(e, i0 + 1, amp * frac);
    }
  }
  std::sort(hits.begin(), hits.end());

  dsp::Rir rir;
  rir.sample_rate = cfg.sample_rate;
  rir.samples = ad::NdArray::zeros({2, cfg.length});
  for (const auto& [e, i, v] : hits) rir.samples.data[static_cast<std::size_t>(e) * cfg.length + i] += v;
  return rir;
}

inline dsp::Rir render_rir(const SceneSpec& scene, const Pose& pose, const RenderConfig& cfg = {}) {
  const auto& palette = material_palette();
  std::array<Material, 4> walls{};
  for (int w = 0; w < 4; ++w)
    walls[static_cast<std::size_t>(w)] = palette.at(static_cast<std::size_t>(scene.wall_materials[static_cast<std::size_t>(w)]));
  return render_rir(scene, pose, walls, cfg);
}

}  // namespace echomap::scene

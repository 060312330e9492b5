#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "echomap/scene/types.hpp"

namespace echomap::scene {

// Depth + material id per ray, taken from the listener position.
struct RaycastScan {
  Pose camera;
  std::vector<double> depth;
  std::vector<int> material;

  int width() const { return static_cast<int>(depth.size()); }
};

namespace detail {

struct RayHit {
  double t = std::numeric_limits<double>::infinity();
  int material = -1;
};

// Nearest intersection of p + t*dir (t > 0) with the four walls.
inline RayHit hit_walls(const SceneSpec& scene, double px, double py, double dx, double dy) {
  RayHit best;
  const double x0 = scene.origin_x, x1 = scene.origin_x + scene.extent_x;
  const double y0 = scene.origin_y, y1 = scene.origin_y + scene.extent_y;
  auto consider = [&](double t, int wall) {
    if (t > 0.0 && t < best.t) best = {t, scene.wall_materials[static_cast<std::size_t>(wall)]};
  };
  if (dx < 0.0) consider((x0 - px) / dx, kWest);
  if (dx > 0.0) consider((x1 - px) / dx, kEast);
  if (dy < 0.0) consider((y0 - py) / dy, kSouth);
  if (dy > 0.0) consider((y1 - py) / dy, kNorth);
  return best;
}

// Slab test against an axis-aligned box.
inline RayHit hit_box(const Obstacle& box, double px, double py, double dx, double dy) {
  double tmin = 0.0, tmax = std::numeric_limits<double>::infinity();
  for (int axis = 0; axis < 2; ++axis) {
    const double p = axis == 0 ? px : py;
    const double d = axis == 0 ? dx : dy;
    const double lo = axis == 0 ? box.x0 : box.y0;
    const double hi = axis == 0 ? box.x1 : box.y1;
    if (d == 0.0) {
      if (p < lo || p > hi) return {};
    } else {
      double t0 = (lo - p) / d, t1 = (hi - p) / d;
      if (t0 > t1) std::swap(t0, t1);
      tmin = std::max(tmin, t0);
      tmax = std::min(tmax, t1);
      if (tmin > tmax) return {};
    }
  }
  if (tmin <= 0.0) return {};  // starts inside or behind
  return {tmin, box.material_id};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Casts `width` rays from the listener across `fov` radians centered on the
// facing direction (endpoints included). The facing direction is applied as an
// exact quarter-turn so rotated scenes scan identically.
// ---------------------------------------------------------------------------
inline RaycastScan raycast_scan(const SceneSpec& scene, const Pose& pose, int width,
                                double fov = 1.5707963267948966) {
  if (width < 2) throw std::invalid_argument("raycast_scan: need at least two rays");
  if (!(fov > 0.0)) throw std::invalid_argument("raycast_scan: bad field of view");
  validate_pose(scene, pose);

  RaycastScan scan;
  scan.camera = pose;
  scan.depth.resize(static_cast<std::size_t>(width));
  scan.material.resize(static_cast<std::size_t>(width));
  for (int i = 0; i < width; ++i) {
    const double off = -fov / 2.0 + fov * i / (width - 1);
    const auto [dx, dy] = rot90(std::cos(off), std::sin(off), pose.orient);
    detail::RayHit best = detail::hit_walls(scene, pose.lx, pose.ly, dx, dy);
    for (const Obstacle& box : scene.obstacles) {
      const detail::RayHit h = detail::hit_box(box, pose.lx, pose.ly, dx, dy);
      if (h.material >= 0 && h.t < best.t) best = h;
    }
    scan.depth[static_cast<std::size_t>(i)] = best.t;
    scan.material[static_cast<std::size_t>(i)] = best.material;
  }
  return scan;
}

}  // namespace echomap::scene

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

namespace echomap::scene {

struct Material {
  int id = 0;
  double absorption = 0.0;  // energy absorption coefficient, in [0,1]

  double beta() const { return std::sqrt(1.0 - absorption); }  // amplitude reflection factor
};

// Eight surface materials spanning near-reflective to near-absorbent.
inline const std::array<Material, 8>& material_palette() {
  static const std::array<Material, 8> palette = {{{0, 0.05},
                                                   {1, 0.1},
                                                   {2, 0.2},
                                                   {3, 0.3},
                                                   {4, 0.45},
                                                   {5, 0.6},
                                                   {6, 0.75},
                                                   {7, 0.9}}};
  return palette;
}

enum Wall : int { kWest = 0, kEast = 1, kSouth = 2, kNorth = 3 };

// Axis-aligned box that blocks sight lines but not sound.
struct Obstacle {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;
  int material_id = 0;
};

struct SceneSpec {
  double extent_x = 4.0, extent_y = 3.0;  // room spans [origin, origin+extent]
  double origin_x = 0.0, origin_y = 0.0;
  std::array<int, 4> wall_materials{0, 0, 0, 0};  // indexed by Wall
  std::vector<Obstacle> obstacles;
  std::uint64_t seed = 0;

  bool contains(double x, double y, double margin = 0.0) const {
    return x >= origin_x + margin && x <= origin_x + extent_x - margin &&
           y >= origin_y + margin && y <= origin_y + extent_y - margin;
  }
};

// Exact quarter-turn rotation, counter-clockwise.
inline std::pair<double, double> rot90(double x, double y, int k) {
  k = ((k % 4) + 4) % 4;
  for (int i = 0; i < k; ++i) {
    const double t = x;
    x = -y;
    y = t;
  }
  return {x, y};
}

// Speaker/listener pair. Orientation is stored as a quarter-turn count so
// cardinal directions stay exact under rotation.
struct Pose {
  double sx = 0.0, sy = 0.0;  // speaker
  double lx = 0.0, ly = 0.0;  // listener
  int orient = 0;             // quarter-turns CCW from +x, in {0,1,2,3}

  double theta() const { return orient * 1.5707963267948966; }
  bool colocated() const { return sx == lx && sy == ly; }
};

inline void validate_pose(const SceneSpec& scene, const Pose& pose, double wall_margin = 0.5) {
  if (pose.orient < 0 || pose.orient > 3) throw std::invalid_argument("pose: bad orientation");
  if (!scene.contains(pose.sx, pose.sy, wall_margin) ||
      !scene.contains(pose.lx, pose.ly, wall_margin))
    throw std::invalid_argument("pose: speaker/listener outside the valid interior");
}

}  // namespace echomap::scene

#pragma once

#include <set>
#include <utility>
#include <vector>

#include "echomap/common.hpp"
#include "echomap/scene/image_source.hpp"
#include "echomap/scene/raycast.hpp"

namespace echomap::scene {

struct EpisodeConfig {
  int n_context = 8;
  int n_query = 16;
  double pose_grid = 0.5;        // pose lattice step; also the wall margin
  double extent_min = 3.0;
  double extent_max = 6.0;
  int scan_width = 64;
  double fov = 1.5707963267948966;
  int max_obstacles = 0;         // obstacles are off unless asked for
  RenderConfig render;
  bool queries_avoid_context = false;  // keep query listeners off context cells
};

struct ContextRecord {
  Pose pose;       // co-located speaker/listener
  dsp::Rir echo;
  RaycastScan scan;
};

struct QueryRecord {
  Pose pose;
  dsp::Rir target;
};

struct Episode {
  SceneSpec scene;
  std::vector<ContextRecord> contexts;
  std::vector<QueryRecord> queries;
};

namespace detail {

// Interior pose lattice: points a multiple of `step` from the origin and at
// least `step` from every wall.
struct PoseGrid {
  int nx = 0, ny = 0;
  double step = 0.5;
  double x0 = 0.0, y0 = 0.0;

  std::pair<double, double> at(int cell) const {
    const int r = cell / nx, c = cell % nx;
    return {x0 + (c + 1) * step, y0 + (r + 1) * step};
  }
  int count() const { return nx * ny; }
};

inline PoseGrid pose_grid(const SceneSpec& scene, double step) {
  PoseGrid g;
  g.step = step;
  g.x0 = scene.origin_x;
  g.y0 = scene.origin_y;
  g.nx = static_cast<int>(std::llround(scene.extent_x / step)) - 1;
  g.ny = static_cast<int>(std::llround(scene.extent_y / step)) - 1;
  if (g.nx < 1 || g.ny < 1) throw std::invalid_argument("pose_grid: room too small");
  return g;
}

}  // namespace detail

// Room geometry and surfaces for one scene seed. Extents land on the pose
// lattice so every sampled coordinate is an exact binary fraction.
inline SceneSpec sample_scene_spec(std::uint64_t seed, const EpisodeConfig& cfg = {}) {
  Rng rng(derive_seed(seed, "scene-spec"));
  SceneSpec scene;
  scene.seed = seed;
  const int steps =
      static_cast<int>(std::llround((cfg.extent_max - cfg.extent_min) / cfg.pose_grid)) + 1;
  scene.extent_x = cfg.extent_min + cfg.pose_grid * rng.below_int(steps);
  scene.extent_y = cfg.extent_min + cfg.pose_grid * rng.below_int(steps);
  const int n_mat = static_cast<int>(material_palette().size());
  for (int w = 0; w < 4; ++w)
    scene.wall_materials[static_cast<std::size_t>(w)] = rng.below_int(n_mat);
  for (int i = 0; i < cfg.max_obstacles; ++i) {
    // Boxes snap to the half-step lattice and keep clear of the pose margin.
    const auto grid = detail::pose_grid(scene, cfg.pose_grid);
    if (grid.nx < 4 || grid.ny < 4) break;
    Obstacle box;
    const int cx = 1 + rng.below_int(grid.nx - 2);
    const int cy = 1 + rng.below_int(grid.ny - 2);
    box.x0 = scene.origin_x + cx * cfg.pose_grid;
    box.y0 = scene.origin_y + cy * cfg.pose_grid;
    box.x1 = box.x0 + cfg.pose_grid;
    box.y1 = box.y0 + cfg.pose_grid;
    box.material_id = rng.below_int(n_mat);
    scene.obstacles.push_back(box);
  }
  return scene;
}

// N distinct co-located context poses with random facing directions.
inline std::vector<Pose> sample_context_poses(const SceneSpec& scene, int n,
                                              const EpisodeConfig& cfg = {}) {
  const auto grid = detail::pose_grid(scene, cfg.pose_grid);
  if (n > grid.count())
    throw std::invalid_argument("sample_context_poses: more contexts than grid cells");
  Rng rng(derive_seed(scene.seed, "context"));
  std::vector<Pose> poses;
  for (int cell : rng.sample_without_replacement(grid.count(), n)) {
    const auto [x, y] = grid.at(cell);
    poses.push_back({x, y, x, y, rng.below_int(4)});
  }
  return poses;
}

// Query poses draw speaker and listener cells independently. When asked, the
// listener avoids the given cells (context positions) so held-out queries stay
// disjoint from the observations.
inline std::vector<Pose> sample_query_poses(const SceneSpec& scene, int n, std::uint64_t stream,
                                            const EpisodeConfig& cfg = {},
                                            const std::vector<Pose>& avoid = {}) {
  const auto grid = detail::pose_grid(scene, cfg.pose_grid);
  std::set<std::pair<double, double>> blocked;
  for (const Pose& p : avoid) blocked.insert({p.lx, p.ly});
  if (static_cast<int>(blocked.size()) >= grid.count())
    throw std::invalid_argument("sample_query_poses: no free cells left");
  Rng rng(stream);
  std::vector<Pose> poses;
  for (int i = 0; i < n; ++i) {
    const auto [sx, sy] = grid.at(rng.below_int(grid.count()));
    double lx = 0.0, ly = 0.0;
    for (;;) {
      std::tie(lx, ly) = grid.at(rng.below_int(grid.count()));
      if (!blocked.count({lx, ly})) break;
    }
    poses.push_back({sx, sy, lx, ly, rng.below_int(4)});
  }
  return poses;
}

// Full episode: scene, rendered context observations, rendered query targets.
inline Episode sample_episode(std::uint64_t seed, const EpisodeConfig& cfg = {}) {
  Episode ep;
  ep.scene = sample_scene_spec(seed, cfg);
  for (const Pose& p : sample_context_poses(ep.scene, cfg.n_context, cfg)) {
    ContextRecord rec;
    rec.pose = p;
    rec.echo = render_rir(ep.scene, p, cfg.render);
    rec.scan = raycast_scan(ep.scene, p, cfg.scan_width, cfg.fov);
    ep.contexts.push_back(std::move(rec));
  }
  std::vector<Pose> avoid;
  if (cfg.queries_avoid_context)
    for (const ContextRecord& c : ep.contexts) avoid.push_back(c.pose);
  const std::uint64_t qstream = derive_seed(seed, "query");
  for (const Pose& p : sample_query_poses(ep.scene, cfg.n_query, qstream, cfg, avoid)) {
    QueryRecord rec;
    rec.pose = p;
    rec.target = render_rir(ep.scene, p, cfg.render);
    ep.queries.push_back(std::move(rec));
  }
  return ep;
}

}  // namespace echomap::scene

#pragma once

#include <cmath>
#include <vector>

#include "echomap/autodiff/ops.hpp"
#include "echomap/scene/raycast.hpp"

namespace echomap::mapping {

struct MapGeometry {
  int m = 32;               // cells per side
  double resolution = 0.25;  // world units per cell
  double origin_x = 0.0;    // world point under cell (m/2, m/2)
  double origin_y = 0.0;
};

// Top-down feature grid [c_f, m, m] living on the autodiff graph.
struct FeatureMap {
  ad::Tensor grid;
  MapGeometry geom;
};

// Row/col of a world point, or -1 when it falls off the grid.
inline long long map_cell(const MapGeometry& g, double x, double y) {
  const long long row = g.m / 2 + std::llround((y - g.origin_y) / g.resolution);
  const long long col = g.m / 2 + std::llround((x - g.origin_x) / g.resolution);
  if (row < 0 || row >= g.m || col < 0 || col >= g.m) return -1;
  return row * g.m + col;
}

inline std::pair<double, double> cell_center(const MapGeometry& g, int row, int col) {
  return {g.origin_x + (col - g.m / 2) * g.resolution,
          g.origin_y + (row - g.m / 2) * g.resolution};
}

// Grid cell hit by each ray of a scan: the endpoint at the reported depth,
// quantized onto the map.
inline std::vector<long long> scan_cells(const MapGeometry& g, const scene::RaycastScan& scan,
                                         double fov = 1.5707963267948966) {
  const int w = scan.width();
  if (w < 2) throw std::invalid_argument("scan_cells: degenerate scan");
  std::vector<long long> cells(static_cast<std::size_t>(w));
  for (int i = 0; i < w; ++i) {
    const double off = -fov / 2.0 + fov * i / (w - 1);
    const auto [dx, dy] = scene::rot90(std::cos(off), std::sin(off), scan.camera.orient);
    const double d = scan.depth[static_cast<std::size_t>(i)];
    cells[static_cast<std::size_t>(i)] = map_cell(g, scan.camera.lx + d * dx,
                                                  scan.camera.ly + d * dy);
  }
  return cells;
}

// ---------------------------------------------------------------------------
// Fuses per-ray features from several scans into one map by channelwise max.
// Features arrive as one [W, c_f] tensor per scan; all rays scatter into a
// single [m*m, c_f] grid, so the result cannot depend on scan order. Cells no
// ray reaches stay exactly zero.
// ---------------------------------------------------------------------------
inline ad::Tensor fuse_scans(const std::vector<ad::Tensor>& ray_features,
                             const std::vector<scene::RaycastScan>& scans,
                             const MapGeometry& geom, double fov = 1.5707963267948966) {
  if (ray_features.size() != scans.size() || ray_features.empty())
    throw std::invalid_argument("fuse_scans: need one feature block per scan");
  std::vector<long long> cells;
  for (const scene::RaycastScan& s : scans) {
    const auto c = scan_cells(geom, s, fov);
    cells.insert(cells.end(), c.begin(), c.end());
  }
  ad::Tensor stacked = ray_features.size() == 1 ? ray_features[0] : ad::concat_first(ray_features);
  return ad::scatter_max(stacked, cells, geom.m * geom.m);
}

// [m*m, c_f] cell rows -> [c_f, m, m] image layout.
inline ad::Tensor grid_to_image(const ad::Tensor& grid_rows, int m, int c_f) {
  return ad::reshape(ad::transpose2d(grid_rows), {c_f, m, m});
}

}  // namespace echomap::mapping

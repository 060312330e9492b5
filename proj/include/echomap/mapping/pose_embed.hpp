#pragma once

#include <cmath>
#include <stdexcept>

#include "echomap/autodiff/tensor.hpp"
#include "echomap/scene/types.hpp"

namespace echomap::mapping {

// ---------------------------------------------------------------------------
// Sinusoidal features for a speaker/listener pose. Five scalars — speaker and
// listener offsets from a reference point plus the facing angle — each expand
// into d_pe interleaved sin/cos values over a geometric frequency ladder, so
// the vector has length 5*d_pe. Offsets from the reference keep the embedding
// unchanged when pose and reference translate together.
// ---------------------------------------------------------------------------
inline ad::NdArray sinusoidal_embed_scalars(const std::vector<double>& scalars, int d_pe) {
  if (d_pe < 2 || d_pe % 2 != 0)
    throw std::invalid_argument("sinusoidal_embed: d_pe must be even and >= 2");
  ad::NdArray out = ad::NdArray::zeros({static_cast<int>(scalars.size()) * d_pe});
  std::size_t at = 0;
  for (double s : scalars)
    for (int k = 0; k < d_pe / 2; ++k) {
      const double freq = std::pow(10000.0, -2.0 * k / d_pe);
      out.data[at++] = std::sin(s * freq);
      out.data[at++] = std::cos(s * freq);
    }
  return out;
}

inline ad::NdArray sinusoidal_pose_embed(const scene::Pose& pose, double ref_x, double ref_y,
                                         int d_pe) {
  return sinusoidal_embed_scalars({pose.sx - ref_x, pose.sy - ref_y, pose.lx - ref_x,
                                   pose.ly - ref_y, pose.theta()},
                                  d_pe);
}

}  // namespace echomap::mapping

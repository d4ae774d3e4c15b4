#pragma once

#include <cmath>
#include <limits>

#include "mmworld/scene.hpp"

namespace mmw {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Ray {
  Vec3 origin;
  Vec3 dir;  // unit length
};

/// Nearest positive hit distance of `ray` against the oriented box, or +inf.
/// Slab test in the box frame (yaw about z at the box center).
inline double ray_box_distance(const Ray& ray, const SceneBox& box) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  // World -> box frame: rotate by -yaw around the box center.
  const double ox = ray.origin[0] - box.center[0];
  const double oy = ray.origin[1] - box.center[1];
  const double oz = ray.origin[2] - box.center[2];
  const double o[3] = {c * ox + s * oy, -s * ox + c * oy, oz};
  const double d[3] = {c * ray.dir[0] + s * ray.dir[1], -s * ray.dir[0] + c * ray.dir[1], ray.dir[2]};
  const double half[3] = {box.size[0] * 0.5, box.size[1] * 0.5, box.size[2] * 0.5};
  double tmin = -kInf, tmax = kInf;
  for (int i = 0; i < 3; ++i) {
    if (std::fabs(d[i]) < 1e-12) {
      if (o[i] < -half[i] || o[i] > half[i]) return kInf;
      continue;
    }
    double t0 = (-half[i] - o[i]) / d[i];
    double t1 = (half[i] - o[i]) / d[i];
    if (t0 > t1) std::swap(t0, t1);
    tmin = std::max(tmin, t0);
    tmax = std::min(tmax, t1);
    if (tmin > tmax) return kInf;
  }
  if (tmax < 1e-9) return kInf;
  return tmin > 1e-9 ? tmin : tmax;
}

/// Positive hit distance against the ground plane z=0, or +inf.
inline double ray_ground_distance(const Ray& ray) {
  if (std::fabs(ray.dir[2]) < 1e-12) return kInf;
  const double t = -ray.origin[2] / ray.dir[2];
  return t > 1e-9 ? t : kInf;
}

}  // namespace mmw

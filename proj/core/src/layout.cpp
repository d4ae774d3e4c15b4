#include "mmworld/layout.hpp"

#include <cmath>
#include <stdexcept>

#include "geom.hpp"
#include "mmworld/blocks.hpp"
#include "raster.hpp"

namespace mmw {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kSensorHeight = 1.8;

}  // namespace

ImageRGB project_camera(const SceneLayout& scene, int frame_idx, int cam_idx, const Palette& palette) {
  RasterOptions opt;
  opt.shaded = false;
  opt.background = {0.0, 0.0, 0.0};
  opt.palette = &palette;
  return rasterize_scene(scene, frame_idx, cam_idx, opt);
}

LayoutImageRange project_range(const SceneLayout& scene, int frame_idx, const RangeSpec& spec) {
  spec.validate();
  if (frame_idx < 0 || frame_idx >= static_cast<int>(scene.frames.size()))
    throw std::invalid_argument("project_range: frame index out of range");
  const SceneFrame& frame = scene.frames[static_cast<size_t>(frame_idx)];
  const Pose& ego = frame.ego_pose;
  const Pose ego_inv = ego.inverse();
  const Vec3 origin_world = ego.apply({0.0, 0.0, kSensorHeight});

  LayoutImageRange out;
  out.spec = spec;
  out.dist = Tensor::zeros({spec.beams, spec.azimuth_bins});
  const int64_t H = spec.beams, W = spec.azimuth_bins;
  const double down = spec.fov_down_rad();
  const double span = spec.fov_span_rad();

  auto write_min = [&](int64_t v, int64_t u, double r) {
    double& cell = out.dist[v * W + u];
    if (cell == 0.0 || r < cell) cell = r;
  };

  // Boxes: analytic hit per bin-center ray (same slab core as the simulator).
  for (int64_t v = 0; v < H; ++v) {
    const double theta = down + (1.0 - (static_cast<double>(v) + 0.5) / H) * span;
    const double ct = std::cos(theta), st = std::sin(theta);
    for (int64_t u = 0; u < W; ++u) {
      const double phi = kPi * (1.0 - 2.0 * (static_cast<double>(u) + 0.5) / W);
      const Vec3 dir_sensor{ct * std::cos(phi), ct * std::sin(phi), st};
      Ray ray{origin_world, ego.rotate(dir_sensor)};
      double best = kInf;
      for (const SceneBox& box : frame.boxes) best = std::min(best, ray_box_distance(ray, box));
      if (best <= spec.r_max) write_min(v, u, best);
    }
  }

  // Lanes: dense samples along each segment, projected with their true range.
  for (const LanePolyline& pl : frame.polylines) {
    for (size_t i = 0; i + 1 < pl.points.size(); ++i) {
      const Vec3& a = pl.points[i];
      const Vec3& b = pl.points[i + 1];
      const double seg_len = std::sqrt((b[0] - a[0]) * (b[0] - a[0]) +
                                       (b[1] - a[1]) * (b[1] - a[1]) +
                                       (b[2] - a[2]) * (b[2] - a[2]));
      const int steps = std::max(1, static_cast<int>(std::ceil(seg_len / 0.1)));
      for (int s = 0; s <= steps; ++s) {
        const double t = static_cast<double>(s) / steps;
        const Vec3 pw{a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]), a[2] + t * (b[2] - a[2])};
        Vec3 ps = ego_inv.apply(pw);
        ps[2] -= kSensorHeight;
        const double r = std::sqrt(ps[0] * ps[0] + ps[1] * ps[1] + ps[2] * ps[2]);
        if (!(r > 0.0) || r > spec.r_max) continue;
        const double phi = std::atan2(ps[1], ps[0]);
        const double theta = std::asin(ps[2] / r);
        if (theta < down || theta > down + span) continue;
        int64_t u = static_cast<int64_t>(std::floor(0.5 * (1.0 - phi / kPi) * W));
        int64_t v = static_cast<int64_t>(std::floor((1.0 - (theta - down) / span) * H));
        u = std::min<int64_t>(W - 1, std::max<int64_t>(0, u));
        v = std::min<int64_t>(H - 1, std::max<int64_t>(0, v));
        write_min(v, u, r);
      }
    }
  }
  return out;
}

Tensor replicate3(const Tensor& single_channel) {
  if (single_channel.ndim() != 2)
    throw std::invalid_argument("replicate3: expected a 2-D map, got " +
                                shape_str(single_channel.shape()));
  const int64_t H = single_channel.shape()[0], W = single_channel.shape()[1];
  Tensor out({H, W, 3});
  for (int64_t i = 0; i < H * W; ++i) {
    out[i * 3 + 0] = single_channel[i];
    out[i * 3 + 1] = single_channel[i];
    out[i * 3 + 2] = single_channel[i];
  }
  return out;
}

Var encode_layout(Var seq, const LayoutEncoderRefs& refs) {
  const Shape& s = seq.shape();
  if (s.size() != 5 || s[4] != 3)
    throw std::invalid_argument("encode_layout: expected [N,F,H,W,3], got " + shape_str(s));
  if ((s[1] - 1) % 4 != 0)
    throw std::invalid_argument("encode_layout: sequence length must be 1+T with T % 4 == 0, got " +
                                std::to_string(s[1]));
  if (s[2] % 8 != 0 || s[3] % 8 != 0)
    throw std::invalid_argument("encode_layout: H and W must be divisible by 8, got " + shape_str(s));
  Var x = gelu(patch_project(seq, 1, 2, 2, refs.s1w, refs.s1b));
  x = gelu(causal_patch_downsample(x, refs.s2w, refs.s2b));
  return causal_patch_downsample(x, refs.s3w, refs.s3b);
}

}  // namespace mmw

#pragma once

#include <cstdint>
#include <string>

#include "mmworld/image.hpp"
#include "mmworld/range_codec.hpp"
#include "mmworld/scene.hpp"

namespace mmw {

struct SceneGenParams {
  uint64_t seed = 0;
  int frames_t = 16;         // sequence length is 1+frames_t
  int n_boxes = 6;
  double ego_speed = 5.0;    // m/s along +x
  double lane_spacing = 3.5; // m
  double frame_dt = 0.5;     // s
  int n_cameras = 2;
  int cam_width = 64;
  int cam_height = 64;

  void validate() const;
};

/// 10-entry category palette used by layout projections and render targets.
/// Entries 0..7 are object categories; 8..9 are lane-marking types.
using Palette = std::array<std::array<double, 3>, 10>;
const Palette& default_palette();

/// Straight-road scene with constant-velocity vehicles on the lanes; fully
/// determined by the params (same params, byte-identical JSON).
SceneLayout generate_scene(const SceneGenParams& params);

/// Casts one ray per range-image bin center from the roof sensor (ego +1.8 m)
/// against the ground plane and all boxes; returns hits in the sensor frame.
PointCloud raycast_lidar(const SceneLayout& scene, int frame_idx, const RangeSpec& spec,
                         bool include_ground = true);

/// Shaded rasterization of boxes and lanes; category colors scaled by
/// d_ref/depth, gray 0.5 background. The learnable camera-modality target.
ImageRGB render_camera_target(const SceneLayout& scene, int frame_idx, int cam_idx);

/// Deterministic short text descriptors for conditioning.
std::string scene_prompt(const SceneLayout& scene);
std::string view_prompt(const SceneLayout& scene, int cam_idx);

}  // namespace mmw

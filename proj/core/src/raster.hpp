#pragma once

#include "mmworld/image.hpp"
#include "mmworld/scene.hpp"
#include "mmworld/scenegen.hpp"

namespace mmw {

struct RasterOptions {
  bool shaded = false;          // multiply colors by d_ref/depth
  double d_ref = 2.0;           // meters
  std::array<double, 3> background{0, 0, 0};
  double near_clip = 0.1;       // meters
  const Palette* palette = nullptr;
};

/// Painter's-algorithm rasterization of the frame's lanes (first) and box
/// faces (far-to-near by face centroid depth) into the given camera.
ImageRGB rasterize_scene(const SceneLayout& scene, int frame_idx, int cam_idx,
                         const RasterOptions& opt);

}  // namespace mmw

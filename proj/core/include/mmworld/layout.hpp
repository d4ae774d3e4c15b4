#pragma once

#include "mmworld/image.hpp"
#include "mmworld/range_codec.hpp"
#include "mmworld/scene.hpp"
#include "mmworld/scenegen.hpp"
#include "mmworld/tape.hpp"

namespace mmw {

/// Flat-color projection of boxes (filled faces, painter-sorted) and lane
/// polylines (2 px) into a camera view; black background.
ImageRGB project_camera(const SceneLayout& scene, int frame_idx, int cam_idx,
                        const Palette& palette = default_palette());

/// Single-channel distance map of boxes (analytic ray hits) and lane
/// polylines (projected vertices with their true range) in the range view.
/// Nearest value wins per pixel; empty bins hold 0. Ground is not part of
/// the conditioning signal.
struct LayoutImageRange {
  RangeSpec spec;
  Tensor dist;  // [beams, azimuth_bins] meters, 0 = empty
};
LayoutImageRange project_range(const SceneLayout& scene, int frame_idx, const RangeSpec& spec);

/// Exact channel triplication [H,W] -> [H,W,3].
Tensor replicate3(const Tensor& single_channel);

/// Shared layout encoder: one spatial then two causal spatiotemporal
/// downsampling projections (8x space, 4x time; frame 0 -> latent 0).
struct LayoutEncoderConfig {
  int c1 = 8;
  int c2 = 16;
  int c_cond = 4;
};
struct LayoutEncoderRefs {
  Var s1w, s1b, s2w, s2b, s3w, s3b;
};
/// seq: [N, 1+T, H, W, 3] with T % 4 == 0 and H, W % 8 == 0.
Var encode_layout(Var seq, const LayoutEncoderRefs& refs);

}  // namespace mmw

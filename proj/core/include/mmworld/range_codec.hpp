#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mmworld/tensor.hpp"

namespace mmw {

/// Beam/azimuth geometry of a spinning LiDAR plus the row-repetition factor
/// applied before the grid is handed to dense models.
struct RangeSpec {
  int beams = 32;          // grid rows before repetition
  int azimuth_bins = 1024; // grid columns
  double fov_up = 10.0;    // degrees
  double fov_down = -30.0; // degrees, < fov_up
  double r_max = 70.0;     // meters
  int repeat_k = 4;        // row repetition factor, one of {1,2,4}

  enum class Normalization { kLinear, kLog };
  Normalization normalization = Normalization::kLinear;

  void validate() const;  // throws std::invalid_argument
  double fov_up_rad() const;
  double fov_down_rad() const;
  double fov_span_rad() const;
  /// Mean round-trip bound from bin-center quantization:
  /// r_max * (pi/W + fov_span/(2 H)).
  double quantization_bound() const;
};

struct PointCloud {
  std::vector<std::array<double, 3>> points;  // meters, sensor frame

  size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

/// Range grid of arbitrary height (used for the repeated-row form).
struct RangeGrid {
  Tensor ranges;               // [H, W] meters, 0 where invalid
  std::vector<uint8_t> valid;  // H*W row-major

  int64_t rows() const { return ranges.shape()[0]; }
  int64_t cols() const { return ranges.shape()[1]; }
};

/// Range image at the spec's native beam count (pre-repetition height).
struct RangeImage {
  RangeSpec spec;
  Tensor ranges;               // [beams, azimuth_bins]
  std::vector<uint8_t> valid;  // beams*azimuth_bins

  bool valid_at(int64_t v, int64_t u) const {
    return valid[static_cast<size_t>(v * spec.azimuth_bins + u)] != 0;
  }
};

/// Spherical projection; per-pixel collisions keep the minimum range.
/// Points beyond r_max or outside the vertical FOV are dropped.
RangeImage encode(const PointCloud& pc, const RangeSpec& spec);

/// Emits one point per valid pixel along the bin-center ray.
PointCloud decode(const RangeImage& img);

/// Duplicates each row k times in place-order (k must equal spec.repeat_k).
RangeGrid repeat_rows(const RangeImage& img, int k);
/// Averages each consecutive k-row group over its valid entries; a group with
/// no valid entry is invalid. Exact inverse of repeat_rows on duplicated rows.
RangeImage collapse_rows(const RangeGrid& grid, int k, const RangeSpec& spec);

/// Valid range r -> 2r/r_max - 1 in (-1,1] (or the log variant); invalid -> -1.
Tensor normalize_grid(const Tensor& ranges, const std::vector<uint8_t>& valid,
                      const RangeSpec& spec);
Tensor normalize(const RangeImage& img);
/// Values <= -1+1e-3 become invalid; the rest are clamped to (0, r_max].
RangeGrid denormalize_grid(const Tensor& t, const RangeSpec& spec);
RangeImage denormalize(const Tensor& t, const RangeSpec& spec);

// RIMG container: "RIMG", u8 version=1, u32 H, u32 W, f32 fov_up, f32
// fov_down, f32 r_max, u32 repeat_k, f32 ranges row-major, u8 validity.
void save_rimg(const std::string& path, const RangeImage& img);
RangeImage load_rimg(const std::string& path);

// ASCII PLY with float x,y,z vertex properties.
void save_ply(const std::string& path, const PointCloud& pc);
PointCloud load_ply(const std::string& path);

}  // namespace mmw

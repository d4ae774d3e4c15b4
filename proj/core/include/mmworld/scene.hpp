#pragma once

#include <array>
#include <string>
#include <vector>

namespace mmw {

using Vec3 = std::array<double, 3>;

/// Rigid transform (SE3). Rotation stored row-major.
struct Pose {
  std::array<double, 9> rot{1, 0, 0, 0, 1, 0, 0, 0, 1};
  Vec3 trans{0, 0, 0};

  static Pose identity() { return Pose{}; }
  Vec3 apply(const Vec3& p) const;
  Vec3 rotate(const Vec3& v) const;
  Pose inverse() const;
  /// Composition: (*this) after `other`, i.e. x -> this(other(x)).
  Pose compose(const Pose& other) const;
  bool orthonormal(double tol = 1e-6) const;
  std::array<double, 16> matrix4() const;  // row-major homogeneous
  static Pose from_matrix4(const std::array<double, 16>& m);
};

struct SceneBox {
  Vec3 center{0, 0, 0};   // meters, world frame
  Vec3 size{1, 1, 1};     // length (x), width (y), height (z) in box frame
  double yaw = 0.0;       // radians about world z
  int category = 0;
  int track = 0;
};

struct LanePolyline {
  std::vector<Vec3> points;  // world frame, on the ground
  int lane_type = 0;
};

/// Pinhole camera: OpenCV-style axes (+z forward, +x right, +y down).
struct CameraRig {
  double fx = 0, fy = 0, cx = 0, cy = 0;  // pixels
  int width = 0, height = 0;
  Pose sensor_from_ego;
};

struct SceneFrame {
  Pose ego_pose;  // world-from-ego
  std::vector<SceneBox> boxes;
  std::vector<LanePolyline> polylines;
};

struct SceneLayout {
  std::vector<SceneFrame> frames;  // 1+T entries
  std::vector<CameraRig> cameras;

  void validate() const;  // throws on broken invariants
};

std::string scene_to_json(const SceneLayout& scene);
SceneLayout scene_from_json(const std::string& text, const std::string& origin);
void save_scene(const std::string& path, const SceneLayout& scene);
SceneLayout load_scene(const std::string& path);

}  // namespace mmw

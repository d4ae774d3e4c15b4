#include "mmworld/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "geom.hpp"
#include "mmworld/rng.hpp"
#include "raster.hpp"

namespace mmw {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kSensorHeight = 1.8;  // roof LiDAR z-offset above ego origin

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

void SceneGenParams::validate() const {
  require(frames_t >= 0, "scenegen: frames_t must be >= 0");
  require(n_boxes >= 0, "scenegen: n_boxes must be >= 0");
  require(lane_spacing > 0.5, "scenegen: lane_spacing too small");
  require(frame_dt > 0, "scenegen: frame_dt must be positive");
  require(n_cameras >= 0 && n_cameras <= 6, "scenegen: n_cameras must be in [0,6]");
  require(cam_width >= 8 && cam_height >= 8, "scenegen: camera resolution too small");
}

const Palette& default_palette() {
  static const Palette pal = {{{0.20, 0.40, 1.00},    // 0 car
                               {1.00, 0.50, 0.10},    // 1 truck
                               {1.00, 0.90, 0.10},    // 2 bus
                               {0.60, 0.20, 0.80},    // 3 van
                               {1.00, 0.20, 0.20},    // 4 pedestrian
                               {0.20, 1.00, 0.40},    // 5 cyclist
                               {0.55, 0.55, 0.55},    // 6 barrier
                               {1.00, 0.60, 0.80},    // 7 cone
                               {0.20, 0.95, 0.20},    // 8 lane boundary
                               {0.90, 0.95, 0.90}}};  // 9 lane center
  return pal;
}

namespace {

// Camera yaw offsets (degrees) assigned in rig order.
constexpr double kCamYawDeg[6] = {0.0, 55.0, -55.0, 110.0, -110.0, 180.0};

CameraRig make_camera(double yaw_deg, int width, int height) {
  CameraRig cam;
  cam.width = width;
  cam.height = height;
  cam.fx = cam.fy = 0.714 * width;  // ~70 degree horizontal FOV
  cam.cx = width / 2.0;
  cam.cy = height / 2.0;
  const double psi = yaw_deg * kPi / 180.0;
  // Rows are the camera axes (right, down, forward) expressed in ego coords.
  const Vec3 fwd{std::cos(psi), std::sin(psi), 0.0};
  const Vec3 right{std::sin(psi), -std::cos(psi), 0.0};
  const Vec3 down{0.0, 0.0, -1.0};
  Pose se;
  se.rot = {right[0], right[1], right[2], down[0], down[1], down[2], fwd[0], fwd[1], fwd[2]};
  const Vec3 center_ego{1.2, 0.0, 1.6};
  const Vec3 rc = se.rotate(center_ego);
  se.trans = {-rc[0], -rc[1], -rc[2]};
  cam.sensor_from_ego = se;
  return cam;
}

}  // namespace

SceneLayout generate_scene(const SceneGenParams& params) {
  params.validate();
  Rng rng(Rng::derive(params.seed, 0x5ce7e));
  const int F = params.frames_t + 1;
  SceneLayout scene;

  // Lane boundaries: five lines covering two lanes per direction.
  const double road_end = params.ego_speed * params.frame_dt * params.frames_t + 90.0;
  std::vector<LanePolyline> lanes;
  for (int i = 0; i < 5; ++i) {
    LanePolyline pl;
    pl.lane_type = (i == 2) ? 1 : 0;
    const double y = (i - 2) * params.lane_spacing;
    for (double x = -20.0; x <= road_end; x += 5.0) pl.points.push_back({x, y, 0.0});
    lanes.push_back(std::move(pl));
  }

  // Vehicles on the four lane centers, constant velocity, no overlap at t=0.
  struct Tracked {
    SceneBox box;
    double vx;
  };
  std::vector<Tracked> vehicles;
  std::vector<std::pair<int, double>> occupied;  // (lane, x)
  for (int i = 0; i < params.n_boxes; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 128 && !placed; ++attempt) {
      const int lane = static_cast<int>(rng.uniform_int(4));
      const double lane_y = (lane - 1.5) * params.lane_spacing;
      const double x = rng.uniform(6.0, 70.0);
      const double l = rng.uniform(4.0, 5.2);
      bool clash = false;
      for (const auto& [olane, ox] : occupied)
        if (olane == lane && std::fabs(ox - x) < l + 2.0) clash = true;
      if (clash) continue;
      Tracked tr;
      tr.box.center = {x, lane_y, 0.0};
      tr.box.size = {l, rng.uniform(1.7, 2.0), rng.uniform(1.4, 1.8)};
      tr.box.center[2] = tr.box.size[2] * 0.5;
      const bool oncoming = lane_y > 0.0;
      tr.box.yaw = oncoming ? kPi : 0.0;
      tr.vx = (oncoming ? -1.0 : 1.0) * rng.uniform(3.0, 8.0);
      tr.box.category = static_cast<int>(rng.uniform_int(4));
      tr.box.track = i;
      vehicles.push_back(tr);
      occupied.emplace_back(lane, x);
      placed = true;
    }
    if (!placed)
      throw std::invalid_argument("scenegen: n_boxes=" + std::to_string(params.n_boxes) +
                                  " infeasible for the lane area");
  }

  for (int f = 0; f < F; ++f) {
    SceneFrame frame;
    frame.ego_pose.trans = {params.ego_speed * params.frame_dt * f, 0.0, 0.0};
    frame.polylines = lanes;
    for (const Tracked& tr : vehicles) {
      SceneBox b = tr.box;
      b.center[0] += tr.vx * params.frame_dt * f;
      frame.boxes.push_back(b);
    }
    scene.frames.push_back(std::move(frame));
  }

  for (int c = 0; c < params.n_cameras; ++c)
    scene.cameras.push_back(make_camera(kCamYawDeg[c], params.cam_width, params.cam_height));

  scene.validate();
  return scene;
}

PointCloud raycast_lidar(const SceneLayout& scene, int frame_idx, const RangeSpec& spec,
                         bool include_ground) {
  spec.validate();
  if (frame_idx < 0 || frame_idx >= static_cast<int>(scene.frames.size()))
    throw std::invalid_argument("raycast: frame index out of range");
  const SceneFrame& frame = scene.frames[static_cast<size_t>(frame_idx)];
  const Pose& ego = frame.ego_pose;
  const Vec3 origin_world = ego.apply({0.0, 0.0, kSensorHeight});
  const double down = spec.fov_down_rad();
  const double span = spec.fov_span_rad();
  PointCloud pc;
  for (int64_t v = 0; v < spec.beams; ++v) {
    const double theta = down + (1.0 - (static_cast<double>(v) + 0.5) / spec.beams) * span;
    const double ct = std::cos(theta), st = std::sin(theta);
    for (int64_t u = 0; u < spec.azimuth_bins; ++u) {
      const double phi = kPi * (1.0 - 2.0 * (static_cast<double>(u) + 0.5) / spec.azimuth_bins);
      const Vec3 dir_sensor{ct * std::cos(phi), ct * std::sin(phi), st};
      Ray ray{origin_world, ego.rotate(dir_sensor)};
      double best = include_ground ? ray_ground_distance(ray) : kInf;
      for (const SceneBox& box : frame.boxes) best = std::min(best, ray_box_distance(ray, box));
      if (best <= spec.r_max) {
        pc.points.push_back({dir_sensor[0] * best, dir_sensor[1] * best, dir_sensor[2] * best});
      }
    }
  }
  return pc;
}

ImageRGB render_camera_target(const SceneLayout& scene, int frame_idx, int cam_idx) {
  RasterOptions opt;
  opt.shaded = true;
  opt.d_ref = 2.0;
  opt.background = {0.5, 0.5, 0.5};
  return rasterize_scene(scene, frame_idx, cam_idx, opt);
}

std::string scene_prompt(const SceneLayout& scene) {
  const size_t n = scene.frames.empty() ? 0 : scene.frames[0].boxes.size();
  return "straight road driving scene with " + std::to_string(n) + " vehicles";
}

std::string view_prompt(const SceneLayout& scene, int cam_idx) {
  return scene_prompt(scene) + ", camera " + std::to_string(cam_idx);
}

}  // namespace mmw

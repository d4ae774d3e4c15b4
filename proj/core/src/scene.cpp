#include "mmworld/scene.hpp"

#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "mmworld/tensor_io.hpp"

namespace mmw {

using nlohmann::json;

Vec3 Pose::apply(const Vec3& p) const {
  Vec3 r = rotate(p);
  return {r[0] + trans[0], r[1] + trans[1], r[2] + trans[2]};
}

Vec3 Pose::rotate(const Vec3& v) const {
  return {rot[0] * v[0] + rot[1] * v[1] + rot[2] * v[2],
          rot[3] * v[0] + rot[4] * v[1] + rot[5] * v[2],
          rot[6] * v[0] + rot[7] * v[1] + rot[8] * v[2]};
}

Pose Pose::inverse() const {
  Pose inv;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) inv.rot[static_cast<size_t>(i * 3 + j)] = rot[static_cast<size_t>(j * 3 + i)];
  const Vec3 t = inv.rotate(trans);
  inv.trans = {-t[0], -t[1], -t[2]};
  return inv;
}

Pose Pose::compose(const Pose& other) const {
  Pose out;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k)
        s += rot[static_cast<size_t>(i * 3 + k)] * other.rot[static_cast<size_t>(k * 3 + j)];
      out.rot[static_cast<size_t>(i * 3 + j)] = s;
    }
  out.trans = apply(other.trans);
  return out;
}

bool Pose::orthonormal(double tol) const {
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k)
        s += rot[static_cast<size_t>(k * 3 + i)] * rot[static_cast<size_t>(k * 3 + j)];
      if (std::fabs(s - (i == j ? 1.0 : 0.0)) > tol) return false;
    }
  return true;
}

std::array<double, 16> Pose::matrix4() const {
  std::array<double, 16> m{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) m[static_cast<size_t>(i * 4 + j)] = rot[static_cast<size_t>(i * 3 + j)];
    m[static_cast<size_t>(i * 4 + 3)] = trans[static_cast<size_t>(i)];
  }
  m[15] = 1.0;
  return m;
}

Pose Pose::from_matrix4(const std::array<double, 16>& m) {
  Pose p;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) p.rot[static_cast<size_t>(i * 3 + j)] = m[static_cast<size_t>(i * 4 + j)];
    p.trans[static_cast<size_t>(i)] = m[static_cast<size_t>(i * 4 + 3)];
  }
  return p;
}

void SceneLayout::validate() const {
  if (frames.empty()) throw std::invalid_argument("scene: no frames");
  for (const SceneFrame& f : frames) {
    if (!f.ego_pose.orthonormal())
      throw std::invalid_argument("scene: ego pose rotation is not orthonormal");
    for (const SceneBox& b : f.boxes)
      if (!(b.size[0] > 0 && b.size[1] > 0 && b.size[2] > 0))
        throw std::invalid_argument("scene: box sizes must be positive");
  }
  for (const CameraRig& c : cameras) {
    if (!c.sensor_from_ego.orthonormal())
      throw std::invalid_argument("scene: camera extrinsic rotation is not orthonormal");
    if (c.width < 1 || c.height < 1 || c.fx <= 0 || c.fy <= 0)
      throw std::invalid_argument("scene: camera intrinsics invalid");
  }
}

namespace {

json pose_to_json(const Pose& p) {
  const auto m = p.matrix4();
  return json(std::vector<double>(m.begin(), m.end()));
}

Pose pose_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 16) throw std::runtime_error("pose must be a 16-entry row-major 4x4 matrix");
  std::array<double, 16> m;
  std::copy(v.begin(), v.end(), m.begin());
  return Pose::from_matrix4(m);
}

}  // namespace

std::string scene_to_json(const SceneLayout& scene) {
  json root;
  root["frames"] = json::array();
  for (const SceneFrame& f : scene.frames) {
    json jf;
    jf["ego_pose"] = pose_to_json(f.ego_pose);
    jf["boxes"] = json::array();
    for (const SceneBox& b : f.boxes) {
      jf["boxes"].push_back({{"center", b.center},
                             {"size", b.size},
                             {"yaw", b.yaw},
                             {"category", b.category},
                             {"track", b.track}});
    }
    jf["polylines"] = json::array();
    for (const LanePolyline& pl : f.polylines) {
      json jp;
      jp["lane_type"] = pl.lane_type;
      jp["points"] = json::array();
      for (const Vec3& p : pl.points) jp["points"].push_back(p);
      jf["polylines"].push_back(std::move(jp));
    }
    root["frames"].push_back(std::move(jf));
  }
  root["cameras"] = json::array();
  for (const CameraRig& c : scene.cameras) {
    root["cameras"].push_back({{"fx", c.fx},
                               {"fy", c.fy},
                               {"cx", c.cx},
                               {"cy", c.cy},
                               {"width", c.width},
                               {"height", c.height},
                               {"sensor_from_ego", pose_to_json(c.sensor_from_ego)}});
  }
  return root.dump(2) + "\n";
}

SceneLayout scene_from_json(const std::string& text, const std::string& origin) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(origin + ": malformed JSON at byte " + std::to_string(e.byte));
  }
  try {
    SceneLayout scene;
    for (const json& jf : root.at("frames")) {
      SceneFrame f;
      f.ego_pose = pose_from_json(jf.at("ego_pose"));
      if (jf.contains("boxes"))
        for (const json& jb : jf["boxes"]) {
          SceneBox b;
          b.center = jb.at("center").get<Vec3>();
          b.size = jb.at("size").get<Vec3>();
          b.yaw = jb.at("yaw").get<double>();
          b.category = jb.at("category").get<int>();
          b.track = jb.at("track").get<int>();
          f.boxes.push_back(b);
        }
      if (jf.contains("polylines"))
        for (const json& jp : jf["polylines"]) {
          LanePolyline pl;
          pl.lane_type = jp.at("lane_type").get<int>();
          for (const json& pt : jp.at("points")) pl.points.push_back(pt.get<Vec3>());
          f.polylines.push_back(std::move(pl));
        }
      scene.frames.push_back(std::move(f));
    }
    if (root.contains("cameras"))
      for (const json& jc : root["cameras"]) {
        CameraRig c;
        c.fx = jc.at("fx").get<double>();
        c.fy = jc.at("fy").get<double>();
        c.cx = jc.at("cx").get<double>();
        c.cy = jc.at("cy").get<double>();
        c.width = jc.at("width").get<int>();
        c.height = jc.at("height").get<int>();
        c.sensor_from_ego = pose_from_json(jc.at("sensor_from_ego"));
        scene.cameras.push_back(c);
      }
    scene.validate();
    return scene;
  } catch (const json::exception& e) {
    throw std::runtime_error(origin + ": bad scene schema: " + e.what());
  }
}

void save_scene(const std::string& path, const SceneLayout& scene) {
  atomic_write_file(path, scene_to_json(scene));
}

SceneLayout load_scene(const std::string& path) {
  return scene_from_json(read_file(path), path);
}

}  // namespace mmw

#include "raster.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace mmw {

namespace {

struct CamPoint {
  double x, y, z;  // camera frame
};

struct Face {
  std::vector<CamPoint> poly;  // camera frame, pre-clip
  std::array<double, 3> color;
  double depth;  // centroid camera z
  int order;     // deterministic tie-break
};

CamPoint to_cam(const Pose& cam_from_world, const Vec3& p) {
  const Vec3 c = cam_from_world.apply(p);
  return {c[0], c[1], c[2]};
}

// Sutherland-Hodgman clip against z >= near.
std::vector<CamPoint> clip_near(const std::vector<CamPoint>& poly, double near) {
  std::vector<CamPoint> out;
  const size_t n = poly.size();
  for (size_t i = 0; i < n; ++i) {
    const CamPoint& a = poly[i];
    const CamPoint& b = poly[(i + 1) % n];
    const bool ina = a.z >= near, inb = b.z >= near;
    if (ina) out.push_back(a);
    if (ina != inb) {
      const double t = (near - a.z) / (b.z - a.z);
      out.push_back({a.x + t * (b.x - a.x), a.y + t * (b.y - a.y), near});
    }
  }
  return out;
}

struct Px {
  double u, v;
};

Px project(const CameraRig& cam, const CamPoint& p) {
  return {cam.fx * p.x / p.z + cam.cx, cam.fy * p.y / p.z + cam.cy};
}

void fill_triangle(ImageRGB& img, const Px& a, const Px& b, const Px& c,
                   const std::array<double, 3>& color) {
  const double minx = std::min({a.u, b.u, c.u}), maxx = std::max({a.u, b.u, c.u});
  const double miny = std::min({a.v, b.v, c.v}), maxy = std::max({a.v, b.v, c.v});
  const int x0 = std::max(0, static_cast<int>(std::floor(minx)));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(maxx)));
  const int y0 = std::max(0, static_cast<int>(std::floor(miny)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(maxy)));
  const double area = (b.u - a.u) * (c.v - a.v) - (b.v - a.v) * (c.u - a.u);
  if (std::fabs(area) < 1e-12) return;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const double w0 = (b.u - a.u) * (py - a.v) - (b.v - a.v) * (px - a.u);
      const double w1 = (c.u - b.u) * (py - b.v) - (c.v - b.v) * (px - b.u);
      const double w2 = (a.u - c.u) * (py - c.v) - (a.v - c.v) * (px - c.u);
      const bool inside = area > 0 ? (w0 >= 0 && w1 >= 0 && w2 >= 0)
                                   : (w0 <= 0 && w1 <= 0 && w2 <= 0);
      if (inside) img.set(x, y, color);
    }
}

void fill_polygon(ImageRGB& img, const std::vector<Px>& poly, const std::array<double, 3>& color) {
  for (size_t i = 1; i + 1 < poly.size(); ++i) fill_triangle(img, poly[0], poly[i], poly[i + 1], color);
}

// 2 px wide segment: plot 2x2 blocks along the projected line.
void draw_segment(ImageRGB& img, const Px& a, const Px& b, const std::array<double, 3>& color) {
  const double len = std::hypot(b.u - a.u, b.v - a.v);
  const int steps = std::max(1, static_cast<int>(std::ceil(len * 2.0)));
  for (int i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) / steps;
    const int x = static_cast<int>(std::floor(a.u + t * (b.u - a.u)));
    const int y = static_cast<int>(std::floor(a.v + t * (b.v - a.v)));
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const int xx = x + dx, yy = y + dy;
        if (xx >= 0 && xx < img.width && yy >= 0 && yy < img.height) img.set(xx, yy, color);
      }
  }
}

std::array<double, 3> shade(const std::array<double, 3>& c, double depth, const RasterOptions& opt) {
  if (!opt.shaded) return c;
  const double f = opt.d_ref / std::max(depth, 1e-6);
  return {std::min(1.0, c[0] * f), std::min(1.0, c[1] * f), std::min(1.0, c[2] * f)};
}

std::vector<Vec3> box_corners(const SceneBox& b) {
  const double cy = std::cos(b.yaw), sy = std::sin(b.yaw);
  std::vector<Vec3> out;
  out.reserve(8);
  for (int i = 0; i < 8; ++i) {
    const double sx = (i & 1) ? 0.5 : -0.5;
    const double sy_ = (i & 2) ? 0.5 : -0.5;
    const double sz = (i & 4) ? 0.5 : -0.5;
    const double lx = sx * b.size[0], ly = sy_ * b.size[1], lz = sz * b.size[2];
    out.push_back({b.center[0] + cy * lx - sy * ly, b.center[1] + sy * lx + cy * ly,
                   b.center[2] + lz});
  }
  return out;
}

// Corner indices per face (quads), consistent with box_corners bit layout.
constexpr int kFaces[6][4] = {
    {0, 1, 3, 2},  // bottom (z-)
    {4, 5, 7, 6},  // top (z+)
    {0, 1, 5, 4},  // y-
    {2, 3, 7, 6},  // y+
    {0, 2, 6, 4},  // x-
    {1, 3, 7, 5},  // x+
};

}  // namespace

ImageRGB rasterize_scene(const SceneLayout& scene, int frame_idx, int cam_idx,
                         const RasterOptions& opt) {
  if (frame_idx < 0 || frame_idx >= static_cast<int>(scene.frames.size()))
    throw std::invalid_argument("rasterize: frame index out of range");
  if (cam_idx < 0 || cam_idx >= static_cast<int>(scene.cameras.size()))
    throw std::invalid_argument("rasterize: camera index out of range");
  const SceneFrame& frame = scene.frames[static_cast<size_t>(frame_idx)];
  const CameraRig& cam = scene.cameras[static_cast<size_t>(cam_idx)];
  const Palette& pal = opt.palette ? *opt.palette : default_palette();
  const Pose cam_from_world = cam.sensor_from_ego.compose(frame.ego_pose.inverse());

  ImageRGB img(cam.width, cam.height, opt.background);

  // Lanes first: they lie on the ground under everything else.
  for (const LanePolyline& pl : frame.polylines) {
    const auto color_base = pal[static_cast<size_t>(8 + std::abs(pl.lane_type) % 2)];
    for (size_t i = 0; i + 1 < pl.points.size(); ++i) {
      CamPoint a = to_cam(cam_from_world, pl.points[i]);
      CamPoint b = to_cam(cam_from_world, pl.points[i + 1]);
      if (a.z < opt.near_clip && b.z < opt.near_clip) continue;
      if (a.z < opt.near_clip || b.z < opt.near_clip) {
        const double t = (opt.near_clip - a.z) / (b.z - a.z);
        const CamPoint cut{a.x + t * (b.x - a.x), a.y + t * (b.y - a.y), opt.near_clip};
        if (a.z < opt.near_clip) a = cut; else b = cut;
      }
      const double depth = 0.5 * (a.z + b.z);
      draw_segment(img, project(cam, a), project(cam, b), shade(color_base, depth, opt));
    }
  }

  std::vector<Face> faces;
  int order = 0;
  for (const SceneBox& box : frame.boxes) {
    const auto corners = box_corners(box);
    const auto color = pal[static_cast<size_t>(std::abs(box.category) % 8)];
    for (const auto& idx : kFaces) {
      Face f;
      f.color = color;
      f.order = order++;
      double zsum = 0.0;
      for (int k = 0; k < 4; ++k) {
        f.poly.push_back(to_cam(cam_from_world, corners[static_cast<size_t>(idx[k])]));
        zsum += f.poly.back().z;
      }
      f.depth = zsum / 4.0;
      faces.push_back(std::move(f));
    }
  }
  std::sort(faces.begin(), faces.end(), [](const Face& a, const Face& b) {
    if (a.depth != b.depth) return a.depth > b.depth;  // far to near
    return a.order < b.order;
  });
  for (const Face& f : faces) {
    const auto clipped = clip_near(f.poly, opt.near_clip);
    if (clipped.size() < 3) continue;
    std::vector<Px> px;
    px.reserve(clipped.size());
    for (const CamPoint& p : clipped) px.push_back(project(cam, p));
    fill_polygon(img, px, shade(f.color, f.depth, opt));
  }
  return img;
}

}  // namespace mmw

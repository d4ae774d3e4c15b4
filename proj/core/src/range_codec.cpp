#include "mmworld/range_codec.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "binary_io.hpp"
#include "mmworld/tensor_io.hpp"

namespace mmw {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kDeg2Rad = kPi / 180.0;
constexpr double kInvalidNorm = -1.0;
constexpr double kInvalidThreshold = -1.0 + 1e-3;

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

void RangeSpec::validate() const {
  require(beams >= 1, "range spec: beams must be >= 1");
  require(azimuth_bins >= 1, "range spec: azimuth_bins must be >= 1");
  require(fov_up > fov_down, "range spec: fov_up must exceed fov_down");
  require(r_max > 0.0, "range spec: r_max must be positive");
  require(repeat_k == 1 || repeat_k == 2 || repeat_k == 4,
          "range spec: repeat_k must be one of {1,2,4}, got " + std::to_string(repeat_k));
}

double RangeSpec::fov_up_rad() const { return fov_up * kDeg2Rad; }
double RangeSpec::fov_down_rad() const { return fov_down * kDeg2Rad; }
double RangeSpec::fov_span_rad() const { return (fov_up - fov_down) * kDeg2Rad; }

double RangeSpec::quantization_bound() const {
  return r_max * (kPi / azimuth_bins + fov_span_rad() / (2.0 * beams));
}

RangeImage encode(const PointCloud& pc, const RangeSpec& spec) {
  spec.validate();
  const int64_t H = spec.beams, W = spec.azimuth_bins;
  RangeImage img;
  img.spec = spec;
  img.ranges = Tensor::zeros({H, W});
  img.valid.assign(static_cast<size_t>(H * W), 0);
  const double up = spec.fov_up_rad(), down = spec.fov_down_rad();
  const double span = up - down;
  for (const auto& p : pc.points) {
    const double r = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
    if (!(r > 0.0) || r > spec.r_max) continue;
    const double phi = std::atan2(p[1], p[0]);
    const double theta = std::asin(p[2] / r);
    if (theta < down || theta > up) continue;
    int64_t u = static_cast<int64_t>(std::floor(0.5 * (1.0 - phi / kPi) * W));
    int64_t v = static_cast<int64_t>(std::floor((1.0 - (theta - down) / span) * H));
    u = std::min<int64_t>(W - 1, std::max<int64_t>(0, u));
    v = std::min<int64_t>(H - 1, std::max<int64_t>(0, v));
    const int64_t k = v * W + u;
    if (!img.valid[static_cast<size_t>(k)] || r < img.ranges[k]) {
      img.ranges[k] = r;
      img.valid[static_cast<size_t>(k)] = 1;
    }
  }
  return img;
}

PointCloud decode(const RangeImage& img) {
  const RangeSpec& spec = img.spec;
  const int64_t H = spec.beams, W = spec.azimuth_bins;
  const double down = spec.fov_down_rad();
  const double span = spec.fov_span_rad();
  PointCloud pc;
  for (int64_t v = 0; v < H; ++v) {
    const double theta = down + (1.0 - (static_cast<double>(v) + 0.5) / H) * span;
    const double ct = std::cos(theta), st = std::sin(theta);
    for (int64_t u = 0; u < W; ++u) {
      if (!img.valid[static_cast<size_t>(v * W + u)]) continue;
      const double r = img.ranges[v * W + u];
      const double phi = kPi * (1.0 - 2.0 * (static_cast<double>(u) + 0.5) / W);
      pc.points.push_back({r * ct * std::cos(phi), r * ct * std::sin(phi), r * st});
    }
  }
  return pc;
}

RangeGrid repeat_rows(const RangeImage& img, int k) {
  require(k == img.spec.repeat_k, "repeat_rows: k must equal spec.repeat_k");
  const int64_t H = img.spec.beams, W = img.spec.azimuth_bins;
  RangeGrid grid;
  grid.ranges = Tensor::zeros({H * k, W});
  grid.valid.assign(static_cast<size_t>(H * k * W), 0);
  for (int64_t v = 0; v < H; ++v)
    for (int j = 0; j < k; ++j) {
      const int64_t vo = v * k + j;
      for (int64_t u = 0; u < W; ++u) {
        grid.ranges[vo * W + u] = img.ranges[v * W + u];
        grid.valid[static_cast<size_t>(vo * W + u)] = img.valid[static_cast<size_t>(v * W + u)];
      }
    }
  return grid;
}

RangeImage collapse_rows(const RangeGrid& grid, int k, const RangeSpec& spec) {
  spec.validate();
  require(k == spec.repeat_k, "collapse_rows: k must equal spec.repeat_k");
  require(grid.rows() % k == 0, "collapse_rows: grid height " + std::to_string(grid.rows()) +
                                    " not divisible by k=" + std::to_string(k));
  require(grid.rows() / k == spec.beams && grid.cols() == spec.azimuth_bins,
          "collapse_rows: grid does not match spec geometry");
  const int64_t H = spec.beams, W = spec.azimuth_bins;
  RangeImage img;
  img.spec = spec;
  img.ranges = Tensor::zeros({H, W});
  img.valid.assign(static_cast<size_t>(H * W), 0);
  for (int64_t v = 0; v < H; ++v)
    for (int64_t u = 0; u < W; ++u) {
      double acc = 0.0;
      int count = 0;
      for (int j = 0; j < k; ++j) {
        const int64_t vi = v * k + j;
        if (grid.valid[static_cast<size_t>(vi * W + u)]) {
          acc += grid.ranges[vi * W + u];
          ++count;
        }
      }
      if (count > 0) {
        img.ranges[v * W + u] = acc / count;
        img.valid[static_cast<size_t>(v * W + u)] = 1;
      }
    }
  return img;
}

namespace {

double normalize_value(double r, const RangeSpec& spec) {
  if (spec.normalization == RangeSpec::Normalization::kLog)
    return 2.0 * std::log1p(r) / std::log1p(spec.r_max) - 1.0;
  return 2.0 * r / spec.r_max - 1.0;
}

double denormalize_value(double v, const RangeSpec& spec) {
  double r;
  if (spec.normalization == RangeSpec::Normalization::kLog)
    r = std::expm1(0.5 * (v + 1.0) * std::log1p(spec.r_max));
  else
    r = 0.5 * (v + 1.0) * spec.r_max;
  return std::min(spec.r_max, std::max(r, 1e-9));
}

}  // namespace

Tensor normalize_grid(const Tensor& ranges, const std::vector<uint8_t>& valid, const RangeSpec& spec) {
  Tensor out(ranges.shape());
  for (int64_t i = 0; i < ranges.numel(); ++i)
    out[i] = valid[static_cast<size_t>(i)] ? normalize_value(ranges[i], spec) : kInvalidNorm;
  return out;
}

Tensor normalize(const RangeImage& img) { return normalize_grid(img.ranges, img.valid, img.spec); }

RangeGrid denormalize_grid(const Tensor& t, const RangeSpec& spec) {
  RangeGrid grid;
  grid.ranges = Tensor::zeros(t.shape());
  grid.valid.assign(static_cast<size_t>(t.numel()), 0);
  for (int64_t i = 0; i < t.numel(); ++i) {
    if (t[i] <= kInvalidThreshold) continue;
    grid.ranges[i] = denormalize_value(t[i], spec);
    grid.valid[static_cast<size_t>(i)] = 1;
  }
  return grid;
}

RangeImage denormalize(const Tensor& t, const RangeSpec& spec) {
  require(t.ndim() == 2 && t.shape()[0] == spec.beams && t.shape()[1] == spec.azimuth_bins,
          "denormalize: tensor shape " + shape_str(t.shape()) + " does not match spec");
  RangeGrid grid = denormalize_grid(t, spec);
  RangeImage img;
  img.spec = spec;
  img.ranges = std::move(grid.ranges);
  img.valid = std::move(grid.valid);
  return img;
}

void save_rimg(const std::string& path, const RangeImage& img) {
  ByteWriter w;
  w.magic("RIMG", 4);
  w.u8(1);
  w.u32(static_cast<uint32_t>(img.spec.beams));
  w.u32(static_cast<uint32_t>(img.spec.azimuth_bins));
  w.f32(static_cast<float>(img.spec.fov_up));
  w.f32(static_cast<float>(img.spec.fov_down));
  w.f32(static_cast<float>(img.spec.r_max));
  w.u32(static_cast<uint32_t>(img.spec.repeat_k));
  for (int64_t i = 0; i < img.ranges.numel(); ++i) w.f32(static_cast<float>(img.ranges[i]));
  w.raw(img.valid.data(), img.valid.size());
  atomic_write_file(path, w.bytes());
}

RangeImage load_rimg(const std::string& path) {
  const std::string buf = read_file(path);
  ByteReader r(buf, path);
  r.expect_magic("RIMG", 4);
  const uint8_t version = r.u8();
  if (version != 1) r.fail("unsupported RIMG version " + std::to_string(version), r.pos() - 1);
  RangeImage img;
  img.spec.beams = static_cast<int>(r.u32());
  img.spec.azimuth_bins = static_cast<int>(r.u32());
  img.spec.fov_up = r.f32();
  img.spec.fov_down = r.f32();
  img.spec.r_max = r.f32();
  img.spec.repeat_k = static_cast<int>(r.u32());
  try {
    img.spec.validate();
  } catch (const std::exception& e) {
    r.fail(std::string("invalid header: ") + e.what(), 5);
  }
  const int64_t n = static_cast<int64_t>(img.spec.beams) * img.spec.azimuth_bins;
  img.ranges = Tensor::zeros({img.spec.beams, img.spec.azimuth_bins});
  for (int64_t i = 0; i < n; ++i) img.ranges[i] = r.f32();
  img.valid.assign(static_cast<size_t>(n), 0);
  r.raw(img.valid.data(), static_cast<size_t>(n), "validity");
  if (r.remaining() != 0) r.fail("trailing bytes");
  return img;
}

void save_ply(const std::string& path, const PointCloud& pc) {
  std::ostringstream os;
  os << "ply\nformat ascii 1.0\nelement vertex " << pc.points.size()
     << "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  char line[96];
  for (const auto& p : pc.points) {
    std::snprintf(line, sizeof(line), "%.9g %.9g %.9g\n", p[0], p[1], p[2]);
    os << line;
  }
  atomic_write_file(path, os.str());
}

PointCloud load_ply(const std::string& path) {
  const std::string buf = read_file(path);
  size_t pos = 0;
  auto next_line = [&](std::string& out) -> bool {
    if (pos >= buf.size()) return false;
    const size_t end = buf.find('\n', pos);
    out = buf.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
    pos = end == std::string::npos ? buf.size() : end + 1;
    if (!out.empty() && out.back() == '\r') out.pop_back();
    return true;
  };
  auto fail_at = [&](const std::string& what, size_t at) -> void {
    throw std::runtime_error(path + ": " + what + " at byte " + std::to_string(at));
  };
  std::string line;
  size_t at = pos;
  if (!next_line(line) || line != "ply") fail_at("expected \"ply\"", at);
  at = pos;
  if (!next_line(line) || line != "format ascii 1.0") fail_at("expected \"format ascii 1.0\"", at);
  size_t n = 0;
  bool have_vertex = false, in_vertex = false;
  int xyz_props = 0;
  while (true) {
    at = pos;
    if (!next_line(line)) fail_at("missing end_header", at);
    if (line == "end_header") break;
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "comment") continue;
    if (tok == "element") {
      std::string what;
      ls >> what >> n;
      in_vertex = what == "vertex";
      have_vertex = have_vertex || in_vertex;
      continue;
    }
    if (tok == "property") {
      std::string type, name;
      ls >> type >> name;
      if (in_vertex && (type == "float" || type == "double") &&
          (name == "x" || name == "y" || name == "z"))
        ++xyz_props;
      continue;
    }
    fail_at("unexpected header line \"" + line + "\"", at);
  }
  if (!have_vertex) fail_at("no vertex element", 0);
  if (xyz_props != 3) fail_at("vertex element must have float x,y,z properties", 0);
  PointCloud pc;
  pc.points.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    at = pos;
    if (!next_line(line)) fail_at("truncated vertex list", at);
    std::istringstream ls(line);
    std::array<double, 3> p{};
    if (!(ls >> p[0] >> p[1] >> p[2])) fail_at("malformed vertex \"" + line + "\"", at);
    pc.points.push_back(p);
  }
  return pc;
}

}  // namespace mmw

#include "mmworld/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace mmw {

using nlohmann::json;

namespace {

constexpr double kInfD = std::numeric_limits<double>::infinity();

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

double sq(double v) { return v * v; }

double dist2(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  return sq(a[0] - b[0]) + sq(a[1] - b[1]) + sq(a[2] - b[2]);
}

/// Uniform voxel grid over a point set with an exact nearest-neighbor query
/// (expanding Chebyshev rings; a ring at distance R can only contain points
/// at least (R-1)*cell away, so the scan stops once that bound exceeds the
/// incumbent).
class PointGrid {
 public:
  explicit PointGrid(const std::vector<std::array<double, 3>>& pts) : pts_(pts) {
    lo_ = {kInfD, kInfD, kInfD};
    std::array<double, 3> hi{-kInfD, -kInfD, -kInfD};
    for (const auto& p : pts) {
      for (int i = 0; i < 3; ++i) {
        lo_[i] = std::min(lo_[i], p[i]);
        hi[i] = std::max(hi[i], p[i]);
      }
    }
    const double diag = std::sqrt(dist2(lo_, hi));
    const double target = diag / std::max(1.0, std::cbrt(static_cast<double>(pts.size())));
    cell_ = target > 1e-9 ? target : 1.0;  // degenerate spread: one fat cell
    for (int i = 0; i < 3; ++i)
      n_[i] = std::max<int64_t>(1, static_cast<int64_t>((hi[i] - lo_[i]) / cell_) + 1);
    cells_.assign(static_cast<size_t>(n_[0] * n_[1] * n_[2]), {});
    for (size_t i = 0; i < pts.size(); ++i)
      cells_[static_cast<size_t>(cell_index(coords(pts[i], true)))].push_back(static_cast<int>(i));
  }

  /// Squared distance to the nearest stored point.
  double nearest_sq(const std::array<double, 3>& q) const {
    const auto qc = coords(q, false);
    double best = kInfD;
    // First ring that touches the grid at all, and the last one that can.
    int64_t first_ring = 0, max_ring = 0;
    for (int i = 0; i < 3; ++i) {
      if (qc[i] < 0) first_ring = std::max(first_ring, -qc[i]);
      if (qc[i] > n_[i] - 1) first_ring = std::max(first_ring, qc[i] - (n_[i] - 1));
      max_ring = std::max({max_ring, std::abs(qc[i]), std::abs(qc[i] - (n_[i] - 1))});
    }
    for (int64_t ring = first_ring; ring <= max_ring; ++ring) {
      if (best < kInfD && static_cast<double>(ring - 1) * cell_ > std::sqrt(best)) break;
      scan_ring(q, qc, ring, best);
    }
    return best;
  }

 private:
  std::array<int64_t, 3> coords(const std::array<double, 3>& p, bool clamp) const {
    std::array<int64_t, 3> c;
    for (int i = 0; i < 3; ++i) {
      c[i] = static_cast<int64_t>(std::floor((p[i] - lo_[i]) / cell_));
      if (clamp) c[i] = std::min(n_[i] - 1, std::max<int64_t>(0, c[i]));
    }
    return c;
  }

  int64_t cell_index(const std::array<int64_t, 3>& c) const {
    return (c[0] * n_[1] + c[1]) * n_[2] + c[2];
  }

  // Scans grid cells at Chebyshev distance `ring` from qc (loops clamped to
  // the grid so far-away queries stay cheap).
  void scan_ring(const std::array<double, 3>& q, const std::array<int64_t, 3>& qc, int64_t ring,
                 double& best) const {
    const int64_t x0 = std::max<int64_t>(qc[0] - ring, 0), x1 = std::min(qc[0] + ring, n_[0] - 1);
    const int64_t y0 = std::max<int64_t>(qc[1] - ring, 0), y1 = std::min(qc[1] + ring, n_[1] - 1);
    const int64_t z0 = std::max<int64_t>(qc[2] - ring, 0), z1 = std::min(qc[2] + ring, n_[2] - 1);
    for (int64_t x = x0; x <= x1; ++x) {
      const bool x_edge = (x == qc[0] - ring || x == qc[0] + ring);
      for (int64_t y = y0; y <= y1; ++y) {
        const bool y_edge = (y == qc[1] - ring || y == qc[1] + ring);
        for (int64_t z = z0; z <= z1; ++z) {
          const bool z_edge = (z == qc[2] - ring || z == qc[2] + ring);
          if (ring > 0 && !x_edge && !y_edge && !z_edge) continue;  // interior already scanned
          for (int idx : cells_[static_cast<size_t>(cell_index({x, y, z}))])
            best = std::min(best, dist2(q, pts_[static_cast<size_t>(idx)]));
        }
      }
    }
  }

  const std::vector<std::array<double, 3>>& pts_;
  std::array<double, 3> lo_;
  std::array<int64_t, 3> n_;
  double cell_ = 1.0;
  std::vector<std::vector<int>> cells_;
};

std::vector<double> nearest_distances(const PointCloud& from, const PointCloud& to) {
  PointGrid grid(to.points);
  std::vector<double> out;
  out.reserve(from.points.size());
  for (const auto& p : from.points) out.push_back(std::sqrt(grid.nearest_sq(p)));
  return out;
}

}  // namespace

double chamfer(const PointCloud& x, const PointCloud& y, bool squared) {
  require(!x.empty() && !y.empty(), "chamfer: point clouds must be nonempty");
  const auto dx = nearest_distances(x, y);
  const auto dy = nearest_distances(y, x);
  double mx = 0.0, my = 0.0;
  for (double d : dx) mx += squared ? d * d : d;
  for (double d : dy) my += squared ? d * d : d;
  return 0.5 * (mx / dx.size() + my / dy.size());
}

double fscore(const PointCloud& x, const PointCloud& y, double tau) {
  require(!x.empty() && !y.empty(), "fscore: point clouds must be nonempty");
  require(tau > 0.0, "fscore: tau must be positive");
  const auto dx = nearest_distances(x, y);
  const auto dy = nearest_distances(y, x);
  size_t px = 0, ry = 0;
  for (double d : dx)
    if (d <= tau) ++px;
  for (double d : dy)
    if (d <= tau) ++ry;
  const double precision = static_cast<double>(px) / dx.size();
  const double recall = static_cast<double>(ry) / dy.size();
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

BevHistogram bev_histogram(const PointCloud& pc, int bins, double extent, double z_min,
                           double z_max) {
  require(bins >= 1, "bev_histogram: bins must be >= 1");
  require(extent > 0.0 && z_max > z_min, "bev_histogram: bad extents");
  BevHistogram h;
  h.bins = bins;
  h.extent = extent;
  h.z_min = z_min;
  h.z_max = z_max;
  h.p.assign(static_cast<size_t>(bins) * bins, 0.0);
  int64_t count = 0;
  const double inv = static_cast<double>(bins) / (2.0 * extent);
  for (const auto& p : pc.points) {
    if (p[2] < z_min || p[2] > z_max) continue;
    const double fx = (p[0] + extent) * inv;
    const double fy = (p[1] + extent) * inv;
    if (fx < 0.0 || fy < 0.0) continue;
    const int64_t bx = static_cast<int64_t>(fx);
    const int64_t by = static_cast<int64_t>(fy);
    if (bx >= bins || by >= bins) continue;
    h.p[static_cast<size_t>(bx * bins + by)] += 1.0;
    ++count;
  }
  if (count == 0) {
    h.empty = true;
    return h;
  }
  for (double& v : h.p) v /= static_cast<double>(count);
  return h;
}

double jsd(const BevHistogram& p, const BevHistogram& q) {
  require(!p.empty && !q.empty, "jsd: empty histogram");
  require(p.p.size() == q.p.size(), "jsd: histogram sizes disagree");
  double sp = 0.0, sq_ = 0.0;
  for (double v : p.p) sp += v;
  for (double v : q.p) sq_ += v;
  require(std::fabs(sp - 1.0) < 1e-9 && std::fabs(sq_ - 1.0) < 1e-9,
          "jsd: histograms must be normalized");
  double out = 0.0;
  for (size_t i = 0; i < p.p.size(); ++i) {
    const double a = p.p[i], b = q.p[i];
    const double m = 0.5 * (a + b);
    if (a > 0.0) out += 0.5 * a * std::log(a / m);
    if (b > 0.0) out += 0.5 * b * std::log(b / m);
  }
  return out;
}

namespace {

double hist_dist(const BevHistogram& a, const BevHistogram& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.p.size(); ++i) s += sq(a.p[i] - b.p[i]);
  return std::sqrt(s);
}

double median_pairwise_distance(const std::vector<const BevHistogram*>& pool) {
  std::vector<double> d;
  for (size_t i = 0; i < pool.size(); ++i)
    for (size_t j = i + 1; j < pool.size(); ++j) d.push_back(hist_dist(*pool[i], *pool[j]));
  if (d.empty()) return 1.0;
  std::sort(d.begin(), d.end());
  const size_t n = d.size();
  return n % 2 ? d[n / 2] : 0.5 * (d[n / 2 - 1] + d[n / 2]);
}

}  // namespace

double mmd_raw(const std::vector<BevHistogram>& gen, const std::vector<BevHistogram>& ref,
               double gamma_override) {
  require(gen.size() >= 2 && ref.size() >= 2, "mmd: each set needs at least 2 histograms");
  const size_t dim = gen[0].p.size();
  for (const auto& h : gen) require(!h.empty && h.p.size() == dim, "mmd: bad histogram in gen set");
  for (const auto& h : ref) require(!h.empty && h.p.size() == dim, "mmd: bad histogram in ref set");
  std::vector<const BevHistogram*> pool;
  for (const auto& h : gen) pool.push_back(&h);
  for (const auto& h : ref) pool.push_back(&h);
  double gamma = gamma_override > 0.0 ? gamma_override : median_pairwise_distance(pool);
  gamma = std::max(gamma, 1e-12);
  const double denom = 2.0 * gamma * gamma;
  auto kern = [&](const BevHistogram& a, const BevHistogram& b) {
    const double d = hist_dist(a, b);
    return std::exp(-d * d / denom);
  };
  const size_t m = gen.size(), n = ref.size();
  double kxx = 0.0, kyy = 0.0;
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < m; ++j)
      if (i != j) kxx += kern(gen[i], gen[j]);
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < n; ++j)
      if (i != j) kyy += kern(ref[i], ref[j]);
  kxx /= static_cast<double>(m * (m - 1));
  kyy /= static_cast<double>(n * (n - 1));
  double kxy = 0.0;
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) kxy += kern(gen[i], ref[j]);
  kxy /= static_cast<double>(m * n);
  return kxx + kyy - 2.0 * kxy;
}

double mmd(const std::vector<BevHistogram>& gen, const std::vector<BevHistogram>& ref,
           double scale, double gamma_override) {
  return std::max(0.0, mmd_raw(gen, ref, gamma_override)) * scale;
}

namespace {

BevHistogram aggregate(const std::vector<BevHistogram>& hists) {
  BevHistogram out = hists[0];
  for (size_t i = 1; i < hists.size(); ++i)
    for (size_t j = 0; j < out.p.size(); ++j) out.p[j] += hists[i].p[j];
  double s = 0.0;
  for (double v : out.p) s += v;
  if (s > 0.0)
    for (double& v : out.p) v /= s;
  else
    out.empty = true;
  return out;
}

}  // namespace

MetricReport evaluate_cloud_sets(const std::vector<PointCloud>& gen,
                                 const std::vector<PointCloud>& ref, const MetricsConfig& config) {
  require(!gen.empty() && !ref.empty(), "evaluate: empty cloud set");
  MetricReport report;
  report.config = config;
  report.n_gen = static_cast<int>(gen.size());
  report.n_ref = static_cast<int>(ref.size());
  const size_t paired = std::min(gen.size(), ref.size());
  report.n_paired = static_cast<int>(paired);
  double ch = 0.0, fs = 0.0;
  for (size_t i = 0; i < paired; ++i) {
    ch += chamfer(gen[i], ref[i], config.chamfer_squared);
    fs += fscore(gen[i], ref[i], config.fscore_tau);
  }
  report.chamfer_m = ch / static_cast<double>(paired);
  report.fscore = fs / static_cast<double>(paired);

  auto hists = [&](const std::vector<PointCloud>& clouds) {
    std::vector<BevHistogram> out;
    for (const PointCloud& c : clouds)
      out.push_back(
          bev_histogram(c, config.bev_bins, config.bev_extent, config.bev_z_min, config.bev_z_max));
    return out;
  };
  const auto hg = hists(gen);
  const auto hr = hists(ref);
  report.mmd_scaled = (hg.size() >= 2 && hr.size() >= 2)
                          ? mmd(hg, hr, config.mmd_scale, config.mmd_gamma)
                          : 0.0;
  report.jsd_nats = jsd(aggregate(hg), aggregate(hr));
  return report;
}

std::string report_to_json(const MetricReport& r) {
  json j;
  j["chamfer"] = r.chamfer_m;
  j["fscore"] = r.fscore;
  j["mmd_scaled"] = r.mmd_scaled;
  j["jsd"] = r.jsd_nats;
  j["n_gen"] = r.n_gen;
  j["n_ref"] = r.n_ref;
  j["n_paired"] = r.n_paired;
  j["config"] = {{"bev_bins", r.config.bev_bins},
                 {"bev_extent", r.config.bev_extent},
                 {"bev_z_min", r.config.bev_z_min},
                 {"bev_z_max", r.config.bev_z_max},
                 {"fscore_tau", r.config.fscore_tau},
                 {"chamfer_squared", r.config.chamfer_squared},
                 {"mmd_scale", r.config.mmd_scale},
                 {"mmd_gamma", r.config.mmd_gamma}};
  return j.dump(2) + "\n";
}

MetricReport report_from_json(const std::string& text, const std::string& origin) {
  try {
    const json j = json::parse(text);
    MetricReport r;
    r.chamfer_m = j.at("chamfer").get<double>();
    r.fscore = j.at("fscore").get<double>();
    r.mmd_scaled = j.at("mmd_scaled").get<double>();
    r.jsd_nats = j.at("jsd").get<double>();
    r.n_gen = j.at("n_gen").get<int>();
    r.n_ref = j.at("n_ref").get<int>();
    r.n_paired = j.at("n_paired").get<int>();
    const json& c = j.at("config");
    r.config.bev_bins = c.at("bev_bins").get<int>();
    r.config.bev_extent = c.at("bev_extent").get<double>();
    r.config.bev_z_min = c.at("bev_z_min").get<double>();
    r.config.bev_z_max = c.at("bev_z_max").get<double>();
    r.config.fscore_tau = c.at("fscore_tau").get<double>();
    r.config.chamfer_squared = c.at("chamfer_squared").get<bool>();
    r.config.mmd_scale = c.at("mmd_scale").get<double>();
    r.config.mmd_gamma = c.at("mmd_gamma").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw std::runtime_error(origin + ": bad report JSON: " + e.what());
  }
}

}  // namespace mmw

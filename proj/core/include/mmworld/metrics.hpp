#pragma once

#include <string>
#include <vector>

#include "mmworld/range_codec.hpp"

namespace mmw {

/// Symmetric mean nearest-neighbor distance (Euclidean by default):
/// 0.5 * (mean_x min_y |x-y| + mean_y min_x |x-y|). Grid-accelerated with an
/// exact expanding-ring search.
double chamfer(const PointCloud& x, const PointCloud& y, bool squared = false);

/// Harmonic mean of precision/recall at threshold tau (distance <= tau).
double fscore(const PointCloud& x, const PointCloud& y, double tau = 0.2);

/// Normalized top-down occupancy histogram over [-extent, extent)^2 after a
/// z-band filter.
struct BevHistogram {
  int bins = 0;
  double extent = 0.0;
  double z_min = 0.0, z_max = 0.0;
  std::vector<double> p;  // bins*bins, sums to 1 unless empty
  bool empty = false;
};

BevHistogram bev_histogram(const PointCloud& pc, int bins = 100, double extent = 50.0,
                           double z_min = -3.0, double z_max = 3.0);

/// Jensen-Shannon divergence (natural log), in [0, ln 2].
double jsd(const BevHistogram& p, const BevHistogram& q);

/// Squared MMD (unbiased estimator: within-set diagonals excluded, full
/// cross term) with a Gaussian kernel; bandwidth is the median pairwise
/// distance over the pooled sets unless overridden. Order-invariant within
/// each set; can be slightly negative. Unscaled and unclamped.
double mmd_raw(const std::vector<BevHistogram>& gen, const std::vector<BevHistogram>& ref,
               double gamma_override = 0.0);
/// max(0, mmd_raw) * scale (reported scaled by 1e4 by default).
double mmd(const std::vector<BevHistogram>& gen, const std::vector<BevHistogram>& ref,
           double scale = 1e4, double gamma_override = 0.0);

struct MetricsConfig {
  int bev_bins = 100;
  double bev_extent = 50.0;
  double bev_z_min = -3.0;
  double bev_z_max = 3.0;
  double fscore_tau = 0.2;
  bool chamfer_squared = false;
  double mmd_scale = 1e4;
  double mmd_gamma = 0.0;  // 0 = median heuristic
};

struct MetricReport {
  double chamfer_m = 0.0;
  double fscore = 0.0;
  double mmd_scaled = 0.0;
  double jsd_nats = 0.0;
  int n_gen = 0;
  int n_ref = 0;
  int n_paired = 0;
  MetricsConfig config;
};

/// Pairs clouds positionally (chamfer/F-score averaged over pairs), compares
/// per-cloud BEV histogram sets with MMD, and aggregate histograms with JSD.
MetricReport evaluate_cloud_sets(const std::vector<PointCloud>& gen,
                                 const std::vector<PointCloud>& ref,
                                 const MetricsConfig& config = {});

std::string report_to_json(const MetricReport& report);
MetricReport report_from_json(const std::string& text, const std::string& origin);

}  // namespace mmw

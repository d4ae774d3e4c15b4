#include "mmworld/range_codec.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "mmworld/rng.hpp"
#include "mmworld/tensor_io.hpp"

using namespace mmw;

namespace {

constexpr double kPi = 3.14159265358979323846;

RangeSpec default_spec() {
  RangeSpec spec;
  spec.beams = 32;
  spec.azimuth_bins = 1024;
  spec.fov_up = 10.0;
  spec.fov_down = -30.0;
  spec.r_max = 70.0;
  spec.repeat_k = 4;
  return spec;
}

PointCloud random_cloud_in_fov(const RangeSpec& spec, int n, uint64_t seed) {
  Rng rng(seed);
  PointCloud pc;
  // Stay inside the FOV with margin so no point straddles a boundary.
  const double up = spec.fov_up_rad() - 1e-3;
  const double down = spec.fov_down_rad() + 1e-3;
  for (int i = 0; i < n; ++i) {
    const double r = rng.uniform(1.0, spec.r_max - 1.0);
    const double theta = rng.uniform(down, up);
    const double phi = rng.uniform(-kPi + 1e-3, kPi - 1e-3);
    pc.points.push_back(
        {r * std::cos(theta) * std::cos(phi), r * std::cos(theta) * std::sin(phi), r * std::sin(theta)});
  }
  return pc;
}

double nearest_distance(const std::array<double, 3>& p, const PointCloud& pc) {
  double best = 1e300;
  for (const auto& q : pc.points) {
    const double d = std::sqrt((p[0] - q[0]) * (p[0] - q[0]) + (p[1] - q[1]) * (p[1] - q[1]) +
                               (p[2] - q[2]) * (p[2] - q[2]));
    best = std::min(best, d);
  }
  return best;
}

}  // namespace

TEST(Encode, EmptyCloudGivesAllInvalid) {
  RangeImage img = encode(PointCloud{}, default_spec());
  for (uint8_t v : img.valid) EXPECT_EQ(v, 0);
  for (int64_t i = 0; i < img.ranges.numel(); ++i) EXPECT_EQ(img.ranges[i], 0.0);
}

TEST(Encode, SinglePointLandsInDerivedBin) {
  RangeImage img = encode(PointCloud{{{10.0, 0.0, 0.0}}}, default_spec());
  // phi=0 -> u=512; theta=0 with fov +10/-30 -> v = floor((1-30/40)*32) = 8.
  EXPECT_TRUE(img.valid_at(8, 512));
  EXPECT_DOUBLE_EQ(img.ranges[8 * 1024 + 512], 10.0);
  int n_valid = 0;
  for (uint8_t v : img.valid) n_valid += v;
  EXPECT_EQ(n_valid, 1);
}

TEST(Encode, CollisionKeepsMinimumRange) {
  const RangeSpec spec = default_spec();
  PointCloud pc{{{9.0, 0.0, 0.0}, {5.0, 0.0, 0.0}}};
  RangeImage img = encode(pc, spec);
  EXPECT_DOUBLE_EQ(img.ranges[8 * 1024 + 512], 5.0);
}

TEST(Encode, DropsOutOfRangeAndOutOfFov) {
  const RangeSpec spec = default_spec();
  PointCloud pc{{{80.0, 0.0, 0.0},   // beyond r_max
                 {1.0, 0.0, 5.0},    // theta ~ 79 degrees, above fov_up
                 {0.0, 0.0, 0.0}}};  // degenerate
  RangeImage img = encode(pc, spec);
  for (uint8_t v : img.valid) EXPECT_EQ(v, 0);
}

TEST(Encode, PermutationInvariant) {
  const RangeSpec spec = default_spec();
  PointCloud pc = random_cloud_in_fov(spec, 500, 3);
  PointCloud shuffled = pc;
  Rng rng(9);
  for (size_t i = shuffled.points.size(); i > 1; --i)
    std::swap(shuffled.points[i - 1], shuffled.points[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(i)))]);
  RangeImage a = encode(pc, spec);
  RangeImage b = encode(shuffled, spec);
  EXPECT_EQ(a.valid, b.valid);
  for (int64_t i = 0; i < a.ranges.numel(); ++i) EXPECT_EQ(a.ranges[i], b.ranges[i]);
}

TEST(Decode, AllInvalidGivesEmptyCloud) {
  RangeImage img;
  img.spec = default_spec();
  img.ranges = Tensor::zeros({32, 1024});
  img.valid.assign(32 * 1024, 0);
  EXPECT_TRUE(decode(img).empty());
}

TEST(Decode, RoundTripWithinBinCenterBound) {
  const RangeSpec spec = default_spec();
  PointCloud pc{{{10.0, 0.0, 0.0}}};
  PointCloud out = decode(encode(pc, spec));
  ASSERT_EQ(out.size(), 1u);
  const double bound = 10.0 * (kPi / spec.azimuth_bins + spec.fov_span_rad() / (2.0 * spec.beams));
  EXPECT_LE(nearest_distance(out.points[0], pc), bound);
}

TEST(Decode, MeanRoundTripErrorWithinQuantizationBound) {
  const RangeSpec spec = default_spec();
  PointCloud pc = random_cloud_in_fov(spec, 10000, 4);
  PointCloud out = decode(encode(pc, spec));
  ASSERT_GT(out.size(), 0u);
  double mean = 0.0;
  for (const auto& p : out.points) mean += nearest_distance(p, pc);
  mean /= static_cast<double>(out.size());
  EXPECT_LE(mean, spec.quantization_bound());
}

TEST(Decode, ProjectionIdempotence) {
  const RangeSpec spec = default_spec();
  PointCloud pc = random_cloud_in_fov(spec, 2000, 5);
  RangeImage once = encode(pc, spec);
  RangeImage twice = encode(decode(once), spec);
  EXPECT_EQ(once.valid, twice.valid);  // same pixels, exactly
  // Ranges survive up to the rounding of |r * unit_dir| re-normalization.
  for (int64_t i = 0; i < once.ranges.numel(); ++i)
    EXPECT_NEAR(once.ranges[i], twice.ranges[i], 1e-12 * (1.0 + once.ranges[i]));
}

TEST(RepeatRows, KOneIsIdentityBothWays) {
  RangeSpec spec = default_spec();
  spec.repeat_k = 1;
  PointCloud pc = random_cloud_in_fov(spec, 300, 6);
  RangeImage img = encode(pc, spec);
  RangeGrid grid = repeat_rows(img, 1);
  EXPECT_EQ(grid.rows(), img.spec.beams);
  RangeImage back = collapse_rows(grid, 1, spec);
  EXPECT_EQ(back.valid, img.valid);
  for (int64_t i = 0; i < img.ranges.numel(); ++i) EXPECT_EQ(back.ranges[i], img.ranges[i]);
}

TEST(RepeatRows, KFourDuplicatesEachRow) {
  const RangeSpec spec = default_spec();
  PointCloud pc = random_cloud_in_fov(spec, 500, 7);
  RangeImage img = encode(pc, spec);
  RangeGrid grid = repeat_rows(img, 4);
  EXPECT_EQ(grid.rows(), 128);
  const int64_t W = spec.azimuth_bins;
  for (int64_t u = 0; u < W; ++u)
    for (int j = 0; j < 4; ++j) EXPECT_EQ(grid.ranges[j * W + u], img.ranges[u]);  // rows 0..3
}

TEST(RepeatRows, CollapseRepeatExactForAllSupportedK) {
  for (int k : {1, 2, 4}) {
    RangeSpec spec = default_spec();
    spec.repeat_k = k;
    PointCloud pc = random_cloud_in_fov(spec, 800, 10 + static_cast<uint64_t>(k));
    RangeImage img = encode(pc, spec);
    RangeImage back = collapse_rows(repeat_rows(img, k), k, spec);
    EXPECT_EQ(back.valid, img.valid) << "k=" << k;
    for (int64_t i = 0; i < img.ranges.numel(); ++i)
      EXPECT_EQ(back.ranges[i], img.ranges[i]) << "k=" << k;  // bit-equal
  }
}

TEST(RepeatRows, CollapseAveragesOverValidEntries) {
  RangeSpec spec = default_spec();
  spec.beams = 1;
  spec.azimuth_bins = 2;
  spec.repeat_k = 2;
  RangeGrid grid;
  grid.ranges = Tensor({2, 2}, {6.0, 0.0, 10.0, 0.0});
  grid.valid = {1, 0, 1, 0};
  RangeImage img = collapse_rows(grid, 2, spec);
  EXPECT_DOUBLE_EQ(img.ranges[0], 8.0);  // mean of 6 and 10
  EXPECT_TRUE(img.valid_at(0, 0));
  EXPECT_FALSE(img.valid_at(0, 1));  // no valid entry in the group
  EXPECT_EQ(img.ranges[1], 0.0);
}

TEST(RepeatRows, RejectsMismatchedK) {
  const RangeSpec spec = default_spec();  // repeat_k = 4
  RangeImage img = encode(PointCloud{{{10, 0, 0}}}, spec);
  EXPECT_THROW(repeat_rows(img, 2), std::invalid_argument);
  RangeSpec bad = spec;
  bad.repeat_k = 3;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Normalize, EndpointsAndMidpoint) {
  RangeSpec spec = default_spec();
  spec.beams = 1;
  spec.azimuth_bins = 3;
  RangeImage img;
  img.spec = spec;
  img.ranges = Tensor({1, 3}, {70.0, 0.0, 35.0});
  img.valid = {1, 0, 1};
  Tensor t = normalize(img);
  EXPECT_DOUBLE_EQ(t[0], 1.0);   // r_max -> +1
  EXPECT_DOUBLE_EQ(t[1], -1.0);  // invalid -> -1
  EXPECT_DOUBLE_EQ(t[2], 0.0);   // r_max/2 -> 0
  RangeImage back = denormalize(t, spec);
  EXPECT_TRUE(back.valid_at(0, 0));
  EXPECT_FALSE(back.valid_at(0, 1));
  EXPECT_NEAR(back.ranges[0], 70.0, 1e-9);
  EXPECT_NEAR(back.ranges[2], 35.0, 1e-9);
}

TEST(Normalize, LogVariantRoundTrips) {
  RangeSpec spec = default_spec();
  spec.normalization = RangeSpec::Normalization::kLog;
  PointCloud pc = random_cloud_in_fov(spec, 200, 11);
  RangeImage img = encode(pc, spec);
  Tensor t = normalize(img);
  EXPECT_LE(max_abs(t), 1.0);
  RangeImage back = denormalize(t, spec);
  EXPECT_EQ(back.valid, img.valid);
  for (int64_t i = 0; i < img.ranges.numel(); ++i)
    EXPECT_NEAR(back.ranges[i], img.ranges[i], 1e-9);
}

TEST(RimgFormat, RoundTripAndErrors) {
  const RangeSpec spec = default_spec();
  PointCloud pc = random_cloud_in_fov(spec, 400, 12);
  RangeImage img = encode(pc, spec);
  const std::string path = (std::filesystem::temp_directory_path() / "codec.rimg").string();
  save_rimg(path, img);
  RangeImage loaded = load_rimg(path);
  EXPECT_EQ(loaded.spec.beams, spec.beams);
  EXPECT_EQ(loaded.spec.repeat_k, spec.repeat_k);
  EXPECT_EQ(loaded.valid, img.valid);
  for (int64_t i = 0; i < img.ranges.numel(); ++i)
    EXPECT_EQ(static_cast<float>(loaded.ranges[i]), static_cast<float>(img.ranges[i]));

  atomic_write_file(path, "RIMGxx");
  try {
    load_rimg(path);
    FAIL() << "expected error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("byte"), std::string::npos);
  }
  std::filesystem::remove(path);
}

TEST(PlyFormat, RoundTripAndErrors) {
  PointCloud pc;
  Rng rng(13);
  for (int i = 0; i < 100; ++i)
    pc.points.push_back({rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-3, 3)});
  const std::string path = (std::filesystem::temp_directory_path() / "codec.ply").string();
  save_ply(path, pc);
  PointCloud loaded = load_ply(path);
  ASSERT_EQ(loaded.size(), pc.size());
  for (size_t i = 0; i < pc.size(); ++i)
    for (int d = 0; d < 3; ++d) EXPECT_NEAR(loaded.points[i][d], pc.points[i][d], 1e-6);

  atomic_write_file(path, "not a ply\n");
  EXPECT_THROW(load_ply(path), std::runtime_error);
  std::filesystem::remove(path);
}

#include "mmworld/cli.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "mmworld/metrics.hpp"
#include "mmworld/range_codec.hpp"
#include "mmworld/rng.hpp"
#include "mmworld/tensor_io.hpp"

using namespace mmw;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& sub) const { return (path / sub).string(); }
};

int run(std::vector<std::string> args) { return run_cli(std::move(args)); }

std::string micro_config_path(const TempDir& dir) {
  const std::string path = dir / "micro.json";
  std::ofstream out(path);
  out << R"({
    "scene.count": 2, "scene.frames": 4, "scene.boxes": 3, "scene.cameras": 2,
    "scene.cam_width": 32, "scene.cam_height": 32,
    "range.beams": 8, "range.azimuth": 64, "range.repeat_k": 4,
    "vae.c1": 6, "vae.c2": 8, "vae.c3": 12, "vae.latent_channels": 4,
    "vae.steps": 30, "vae.batch": 2, "vae.lr": 1e-3,
    "dit.dim": 32, "dit.depth": 1, "dit.heads": 2, "dit.steps": 15, "dit.lr": 1e-3,
    "sample.steps": 4, "seed": 7
  })";
  return path;
}

bool same_bytes(const std::string& a, const std::string& b) {
  return read_file(a) == read_file(b);
}

}  // namespace

TEST(Cli, ScenegenIsDeterministic) {
  TempDir dir("mmw_cli_scenegen");
  const std::string cfg = micro_config_path(dir);
  ASSERT_EQ(run({"scenegen", "--config", cfg, "--out", dir / "a"}), 0);
  ASSERT_EQ(run({"scenegen", "--config", cfg, "--out", dir / "b"}), 0);
  EXPECT_TRUE(same_bytes(dir / "a/manifest.json", dir / "b/manifest.json"));
  EXPECT_TRUE(same_bytes(dir / "a/scene_0000.json", dir / "b/scene_0000.json"));
  EXPECT_TRUE(same_bytes(dir / "a/scene_0001.json", dir / "b/scene_0001.json"));
}

TEST(Cli, UnknownConfigKeyFails) {
  TempDir dir("mmw_cli_badkey");
  EXPECT_NE(run({"scenegen", "--set", "nope=1", "--out", dir / "x"}), 0);
}

TEST(Cli, MissingInputFails) {
  TempDir dir("mmw_cli_missing");
  EXPECT_NE(run({"decode-range", "--in", dir / "absent.rimg", "--out", dir / "x.ply"}), 0);
  EXPECT_NE(run({"eval", "--gen", dir / "nope", "--ref", dir / "nope", "--out", dir / "r.json"}), 0);
}

TEST(Cli, EncodeDecodeRoundTripFiles) {
  TempDir dir("mmw_cli_codec");
  PointCloud pc;
  Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    const double r = rng.uniform(2.0, 60.0);
    const double phi = rng.uniform(-3.0, 3.0);
    const double theta = rng.uniform(-0.4, 0.1);
    pc.points.push_back(
        {r * std::cos(theta) * std::cos(phi), r * std::cos(theta) * std::sin(phi), r * std::sin(theta)});
  }
  save_ply(dir / "in.ply", pc);
  ASSERT_EQ(run({"encode-range", "--in", dir / "in.ply", "--out", dir / "img.rimg"}), 0);
  ASSERT_EQ(run({"decode-range", "--in", dir / "img.rimg", "--out", dir / "out.ply"}), 0);
  const PointCloud out = load_ply(dir / "out.ply");
  EXPECT_GT(out.size(), 0u);
  EXPECT_LE(out.size(), pc.size());
}

TEST(Cli, ProjectLayoutWritesBothViews) {
  TempDir dir("mmw_cli_layout");
  const std::string cfg = micro_config_path(dir);
  ASSERT_EQ(run({"scenegen", "--config", cfg, "--out", dir / "scenes"}), 0);
  ASSERT_EQ(run({"project-layout", "--config", cfg, "--scene", dir / "scenes/scene_0000.json",
                 "--frame", "0", "--camera", "0", "--out", dir / "cam.ppm"}),
            0);
  ASSERT_EQ(run({"project-layout", "--config", cfg, "--scene", dir / "scenes/scene_0000.json",
                 "--frame", "0", "--range", "--out", dir / "range.rimg"}),
            0);
  EXPECT_TRUE(fs::exists(dir / "cam.ppm"));
  RangeImage img = load_rimg(dir / "range.rimg");
  EXPECT_EQ(img.spec.beams, 8);
}

TEST(Cli, FullPipelineSmokeAndDeterminism) {
  TempDir dir("mmw_cli_pipeline");
  const std::string cfg = micro_config_path(dir);
  ASSERT_EQ(run({"scenegen", "--config", cfg, "--out", dir / "scenes"}), 0);

  auto run_pipeline = [&](const std::string& tag) {
    const std::string base = dir / tag;
    fs::create_directories(base);
    EXPECT_EQ(run({"train-vae", "--config", cfg, "--scenes", dir / "scenes", "--modality", "lidar",
                   "--out", base + "/vae_l"}),
              0);
    EXPECT_EQ(run({"train-vae", "--config", cfg, "--scenes", dir / "scenes", "--modality", "camera",
                   "--out", base + "/vae_c"}),
              0);
    EXPECT_EQ(run({"ula-stats", "--config", cfg, "--scenes", dir / "scenes", "--vae",
                   base + "/vae_l", "--modality", "lidar", "--out", base + "/stats_l.json"}),
              0);
    EXPECT_EQ(run({"ula-stats", "--config", cfg, "--scenes", dir / "scenes", "--vae",
                   base + "/vae_c", "--modality", "camera", "--out", base + "/stats_c.json"}),
              0);
    EXPECT_EQ(run({"ula-calibrate", "--stats-l", base + "/stats_l.json", "--stats-c",
                   base + "/stats_c.json", "--out", base + "/ula_l.json"}),
              0);
    EXPECT_EQ(run({"ula-calibrate", "--stats-l", base + "/stats_c.json", "--stats-c",
                   base + "/stats_c.json", "--out", base + "/ula_c.json"}),
              0);
    EXPECT_EQ(run({"train-dit", "--config", cfg, "--scenes", dir / "scenes", "--vae-cam",
                   base + "/vae_c", "--vae-lidar", base + "/vae_l", "--ula-cam",
                   base + "/ula_c.json", "--ula-lidar", base + "/ula_l.json", "--out",
                   base + "/dit"}),
              0);
    EXPECT_EQ(run({"sample", "--config", cfg, "--ckpt", base + "/dit", "--scene",
                   dir / "scenes/scene_0000.json", "--vae-cam", base + "/vae_c", "--vae-lidar",
                   base + "/vae_l", "--ula-cam", base + "/ula_c.json", "--ula-lidar",
                   base + "/ula_l.json", "--out", base + "/samples"}),
              0);
    EXPECT_EQ(run({"eval", "--config", cfg, "--gen", base + "/samples", "--ref", base + "/samples",
                   "--out", base + "/self.json"}),
              0);
  };
  run_pipeline("run1");
  run_pipeline("run2");

  // Identity eval: a directory against itself.
  const std::string report_text = read_file(dir / "run1/self.json");
  const MetricReport report = report_from_json(report_text, "self");
  EXPECT_DOUBLE_EQ(report.chamfer_m, 0.0);
  EXPECT_DOUBLE_EQ(report.fscore, 1.0);
  EXPECT_DOUBLE_EQ(report.jsd_nats, 0.0);

  // Identical (config, seed): bit-identical checkpoints, samples, and reports.
  EXPECT_TRUE(same_bytes(dir / "run1/dit/params.json", dir / "run2/dit/params.json"));
  EXPECT_TRUE(same_bytes(dir / "run1/dit/dit.patch_cam.w.tnsr", dir / "run2/dit/dit.patch_cam.w.tnsr"));
  EXPECT_TRUE(
      same_bytes(dir / "run1/samples/sample_lidar.tnsr", dir / "run2/samples/sample_lidar.tnsr"));
  EXPECT_TRUE(
      same_bytes(dir / "run1/samples/lidar_f001.ply", dir / "run2/samples/lidar_f001.ply"));
  EXPECT_TRUE(same_bytes(dir / "run1/self.json", dir / "run2/self.json"));
  // Sampled artifacts exist in the documented formats.
  EXPECT_TRUE(fs::exists(dir / "run1/samples/cam_v1_f004.ppm"));
  EXPECT_TRUE(fs::exists(dir / "run1/samples/manifest.json"));
}

TEST(Cli, GradcheckCommandPasses) { EXPECT_EQ(run({"gradcheck", "--level", "ops"}), 0); }

#include "mmworld/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "mmworld/config.hpp"
#include "mmworld/layout.hpp"
#include "mmworld/tensor_io.hpp"
#include "mmworld/text.hpp"

namespace mmw {

namespace fs = std::filesystem;

namespace {

char path_buf[512];

std::string seq_name(const char* fmt, int a) {
  std::snprintf(path_buf, sizeof(path_buf), fmt, a);
  return path_buf;
}

std::string seq_name2(const char* fmt, int a, int b) {
  std::snprintf(path_buf, sizeof(path_buf), fmt, a, b);
  return path_buf;
}

std::vector<std::string> sorted_files(const std::string& dir, const std::string& ext) {
  if (!fs::is_directory(dir)) throw std::runtime_error(dir + ": not a directory");
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path().filename().string());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<SceneLayout> load_scene_dir(const std::string& dir) {
  std::vector<SceneLayout> scenes;
  for (const std::string& name : sorted_files(dir, ".json")) {
    if (name == "manifest.json") continue;
    scenes.push_back(load_scene(dir + "/" + name));
  }
  if (scenes.empty()) throw std::runtime_error(dir + ": no scene JSON files");
  return scenes;
}

Palette palette_from_config(const RunConfig& cfg) {
  const auto v = cfg.numbers("layout.palette");
  if (v.size() != 30)
    throw std::invalid_argument("config: layout.palette must hold 10 RGB triples (30 numbers)");
  Palette pal;
  for (size_t i = 0; i < 10; ++i) pal[i] = {v[3 * i], v[3 * i + 1], v[3 * i + 2]};
  return pal;
}

struct CommonOpts {
  std::string config_file;
  std::vector<std::string> sets;
  int64_t seed = -1;
};

void add_common(CLI::App* sub, CommonOpts& c) {
  sub->add_option("--config", c.config_file, "JSON config file (flat dotted keys)");
  sub->add_option("--set", c.sets, "override one key, e.g. --set range.beams=16")->take_all();
  sub->add_option("--seed", c.seed, "shorthand for --set seed=N");
}

RunConfig build_config(const CommonOpts& c) {
  RunConfig cfg;
  if (!c.config_file.empty()) cfg.load_file(c.config_file);
  for (const std::string& s : c.sets) cfg.set_override(s);
  if (c.seed >= 0) cfg.set_override("seed=" + std::to_string(c.seed));
  return cfg;
}

// ---- command bodies ----

int cmd_scenegen(const RunConfig& cfg, const std::string& out) {
  fs::create_directories(out);
  SceneGenParams params = cfg.scenegen_params();
  const int count = static_cast<int>(cfg.integer("scene.count"));
  for (int i = 0; i < count; ++i) {
    params.seed = Rng::derive(cfg.seed(), static_cast<uint64_t>(i));
    save_scene(out + "/" + seq_name("scene_%04d.json", i), generate_scene(params));
  }
  write_manifest(out, "scenegen", cfg);
  std::cout << "wrote " << count << " scenes to " << out << "\n";
  return 0;
}

int cmd_encode_range(const RunConfig& cfg, const std::string& in, const std::string& out) {
  save_rimg(out, encode(load_ply(in), cfg.range_spec()));
  std::cout << "encoded " << in << " -> " << out << "\n";
  return 0;
}

int cmd_decode_range(const std::string& in, const std::string& out) {
  save_ply(out, decode(load_rimg(in)));
  std::cout << "decoded " << in << " -> " << out << "\n";
  return 0;
}

int cmd_project_layout(const RunConfig& cfg, const std::string& scene_path, int frame, int camera,
                       bool range_view, const std::string& out) {
  const SceneLayout scene = load_scene(scene_path);
  if (range_view) {
    const RangeSpec spec = cfg.range_spec();
    const LayoutImageRange li = project_range(scene, frame, spec);
    RangeImage img;
    img.spec = spec;
    img.ranges = li.dist;
    img.valid.assign(static_cast<size_t>(li.dist.numel()), 0);
    for (int64_t i = 0; i < li.dist.numel(); ++i)
      img.valid[static_cast<size_t>(i)] = li.dist[i] > 0.0 ? 1 : 0;
    save_rimg(out, img);
  } else {
    save_ppm(out, project_camera(scene, frame, camera, palette_from_config(cfg)));
  }
  std::cout << "projected layout -> " << out << "\n";
  return 0;
}

int cmd_ula_stats(const RunConfig& cfg, const std::string& scenes_dir, const std::string& vae_dir,
                  const std::string& modality, const std::string& out) {
  if (modality != "lidar" && modality != "camera")
    throw std::invalid_argument("ula-stats: --modality must be lidar or camera");
  const Checkpoint ck = load_checkpoint(vae_dir);
  const RangeSpec spec = cfg.range_spec();
  std::vector<Tensor> latents;
  for (const SceneLayout& scene : load_scene_dir(scenes_dir)) {
    const Tensor seq =
        modality == "lidar" ? lidar_sequence_tensor(scene, spec) : camera_sequence_tensor(scene);
    latents.push_back(vae_encode_mean(ck.params, "vae", seq));
  }
  save_stats(out, compute_stats(latents));
  std::cout << "wrote latent stats to " << out << "\n";
  return 0;
}

int cmd_ula_calibrate(const std::string& stats_l_path, const std::string& stats_c_path,
                      const std::string& prior_path, const std::string& out) {
  const LatentStats stats_l = load_stats(stats_l_path);
  const LatentStats stats_c = load_stats(stats_c_path);
  const LatentStats prior = prior_path.empty() ? stats_c : load_stats(prior_path);
  save_ula_params(out, ula_derive(stats_l, stats_c, prior));
  std::cout << "wrote calibrated params to " << out << "\n";
  return 0;
}

int cmd_ula_apply(const std::string& params_path, const std::string& in, const std::string& out,
                  bool invert) {
  const UlaParams p = load_ula_params(params_path);
  const Tensor z = read_tnsr(in);
  write_tnsr(out, invert ? ula_invert(z, p) : ula_apply(z, p));
  std::cout << (invert ? "inverted " : "applied ") << params_path << ": " << in << " -> " << out
            << "\n";
  return 0;
}

int cmd_train_vae(const RunConfig& cfg, const std::string& scenes_dir, const std::string& modality,
                  const std::string& out) {
  if (modality != "lidar" && modality != "camera")
    throw std::invalid_argument("train-vae: --modality must be lidar or camera");
  const bool camera = modality == "camera";
  const RangeSpec spec = cfg.range_spec();
  std::vector<Tensor> sequences;
  for (const SceneLayout& scene : load_scene_dir(scenes_dir)) {
    if (camera) {
      const Tensor all = camera_sequence_tensor(scene);  // [V,F,H,W,3]
      const Shape& s = all.shape();
      for (int64_t v = 0; v < s[0]; ++v)
        sequences.push_back(slice(all, 0, v, 1).reshaped({s[1], s[2], s[3], s[4]}));
    } else {
      const Tensor seq = lidar_sequence_tensor(scene, spec);  // [1,F,H,W,1]
      const Shape& s = seq.shape();
      sequences.push_back(seq.reshaped({s[1], s[2], s[3], s[4]}));
    }
  }
  const VaeTrainConfig train_cfg = cfg.vae_train_config(camera);
  ParamStore store;
  Rng rng(Rng::derive(cfg.seed(), camera ? 0xca3 : 0x11d));
  init_vae_params(store, "vae", train_cfg.vae, rng);
  Adam opt({train_cfg.lr}, store);
  const TrainTrace trace = train_vae(store, "vae", train_cfg, sequences, &opt);
  fs::create_directories(out);
  save_checkpoint(out, store, cfg.dump(0), train_cfg.steps, &opt);
  write_manifest(out, "train-vae", cfg);
  std::cout << "train-vae " << modality << ": loss " << trace.initial_loss << " -> "
            << trace.final_loss << " over " << train_cfg.steps << " steps\n";
  return 0;
}

struct SamplingBundle {
  Checkpoint vae_cam, vae_lidar;
  UlaParams ula_cam, ula_lidar;
};

SamplingBundle load_bundle(const std::string& vae_cam, const std::string& vae_lidar,
                           const std::string& ula_cam, const std::string& ula_lidar) {
  SamplingBundle b;
  b.vae_cam = load_checkpoint(vae_cam);
  b.vae_lidar = load_checkpoint(vae_lidar);
  b.ula_cam = load_ula_params(ula_cam);
  b.ula_lidar = load_ula_params(ula_lidar);
  return b;
}

int cmd_train_dit(const RunConfig& cfg, const std::string& scenes_dir, const std::string& vae_cam,
                  const std::string& vae_lidar, const std::string& ula_cam,
                  const std::string& ula_lidar, const std::string& out) {
  const SamplingBundle bundle = load_bundle(vae_cam, vae_lidar, ula_cam, ula_lidar);
  const RangeSpec spec = cfg.range_spec();
  const DitTrainConfig train_cfg = cfg.dit_train_config();
  std::vector<SceneTensors> pool;
  for (const SceneLayout& scene : load_scene_dir(scenes_dir))
    pool.push_back(prepare_scene_tensors(scene, spec, bundle.vae_cam.params,
                                         bundle.vae_lidar.params, bundle.ula_cam,
                                         bundle.ula_lidar, train_cfg.model));
  ParamStore store;
  Rng rng(Rng::derive(cfg.seed(), 0xd135));
  init_dit_params(store, train_cfg.model, rng, cfg.flag("dit.zero_init_out"));
  Adam opt({train_cfg.lr}, store);
  const TrainTrace trace = train_dit(store, train_cfg, pool, &opt);
  fs::create_directories(out);
  save_checkpoint(out, store, cfg.dump(0), train_cfg.steps, &opt);
  write_manifest(out, "train-dit", cfg);
  std::cout << "train-dit: loss " << trace.initial_loss << " -> " << trace.final_loss << " over "
            << train_cfg.steps << " steps\n";
  return 0;
}

int cmd_sample(const RunConfig& cfg, const std::string& ckpt, const std::string& scene_path,
               const std::string& vae_cam, const std::string& vae_lidar, const std::string& ula_cam,
               const std::string& ula_lidar, const std::string& out) {
  const SamplingBundle bundle = load_bundle(vae_cam, vae_lidar, ula_cam, ula_lidar);
  const Checkpoint dit_ck = load_checkpoint(ckpt);
  const SceneLayout scene = load_scene(scene_path);
  const RangeSpec spec = cfg.range_spec();
  const DiTConfig model = cfg.dit_config();
  const SceneTensors conds =
      prepare_scene_tensors(scene, spec, bundle.vae_cam.params, bundle.vae_lidar.params,
                            bundle.ula_cam, bundle.ula_lidar, model);
  const int steps = static_cast<int>(cfg.integer("sample.steps"));
  const auto [z_cam, z_lidar] = euler_sample(dit_ck.params, model, conds, steps, cfg.seed());
  fs::create_directories(out);
  write_tnsr(out + "/sample_cam.tnsr", z_cam);
  write_tnsr(out + "/sample_lidar.tnsr", z_lidar);
  const auto clouds = decode_lidar_latent(z_lidar, bundle.vae_lidar.params, bundle.ula_lidar, spec);
  for (size_t f = 0; f < clouds.size(); ++f)
    save_ply(out + "/" + seq_name("lidar_f%03d.ply", static_cast<int>(f)), clouds[f]);
  const auto images =
      decode_camera_latent(z_cam, bundle.vae_cam.params, bundle.ula_cam,
                           static_cast<int>(cfg.integer("scene.cam_height")),
                           static_cast<int>(cfg.integer("scene.cam_width")));
  for (size_t v = 0; v < images.size(); ++v)
    for (size_t f = 0; f < images[v].size(); ++f)
      save_ppm(out + "/" + seq_name2("cam_v%d_f%03d.ppm", static_cast<int>(v), static_cast<int>(f)),
               images[v][f]);
  write_manifest(out, "sample", cfg);
  std::cout << "sampled " << clouds.size() << " frames into " << out << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& gen_dir, const std::string& ref_dir,
             const std::string& out) {
  const auto gen_names = sorted_files(gen_dir, ".ply");
  const auto ref_names = sorted_files(ref_dir, ".ply");
  std::vector<std::string> common;
  std::set_intersection(gen_names.begin(), gen_names.end(), ref_names.begin(), ref_names.end(),
                        std::back_inserter(common));
  if (common.empty())
    throw std::runtime_error("eval: no matching .ply filenames between " + gen_dir + " and " +
                             ref_dir);
  std::vector<PointCloud> gen, ref;
  for (const std::string& name : common) {
    gen.push_back(load_ply(gen_dir + "/" + name));
    ref.push_back(load_ply(ref_dir + "/" + name));
  }
  const MetricReport report = evaluate_cloud_sets(gen, ref, cfg.metrics_config());
  atomic_write_file(out, report_to_json(report));
  std::cout << "chamfer=" << report.chamfer_m << " fscore=" << report.fscore
            << " mmd(x1e4)=" << report.mmd_scaled << " jsd=" << report.jsd_nats << " pairs="
            << report.n_paired << "\n";
  return 0;
}

int cmd_gradcheck(const std::string& level) {
  Rng rng(1234);
  auto random_tensor = [&rng](Shape shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
  };
  double worst = 0.0;
  if (level == "ops" || level == "all") {
    auto chain = [](Tape&, const std::vector<Var>& p) {
      Var att = softmax(matmul(p[0], p[1]), -1);
      return sum_all(mul(att, gelu(matmul(p[0], p[1]))));
    };
    const double e = grad_check(chain, {random_tensor({4, 5}), random_tensor({5, 3})});
    std::cout << "gradcheck ops: max relative error " << e << " (tolerance 1e-4)\n";
    worst = std::max(worst, e / 1e-4);
  }
  if (level == "model" || level == "all") {
    DiTConfig micro;
    micro.views = 2;
    micro.frames_t = 4;
    micro.cam_latent_h = micro.cam_latent_w = 4;
    micro.lidar_latent_h = 4;
    micro.lidar_latent_w = 4;
    micro.latent_channels = 2;
    micro.cond_channels = 2;
    micro.emb_channels = 2;
    micro.dim = 16;
    micro.depth = 1;
    micro.heads = 2;
    micro.text_dim = 8;
    micro.n_text_tokens = 4;
    micro.text_vocab = 64;
    ParamStore store;
    Rng init_rng(5);
    init_dit_params(store, micro, init_rng, false);
    const int F = micro.latent_frames();
    DiTConds conds;
    conds.layout_cam = random_tensor({2, 5, 32, 32, 3}, 0.0, 1.0);
    conds.layout_lidar = random_tensor({1, 5, 32, 32, 3}, 0.0, 1.0);
    conds.frame0_cam = random_tensor({2, 1, 4, 4, 2});
    conds.frame0_lidar = random_tensor({1, 1, 4, 4, 2});
    for (int i = 0; i < 2 * micro.n_text_tokens; ++i)
      conds.text_ids_cam.push_back(rng.uniform_int(micro.text_vocab));
    for (int i = 0; i < micro.n_text_tokens; ++i)
      conds.text_ids_lidar.push_back(rng.uniform_int(micro.text_vocab));
    const Tensor z0c = random_tensor({2, F, 4, 4, 2}), z1c = random_tensor({2, F, 4, 4, 2});
    const Tensor z0l = random_tensor({1, F, 4, 4, 2}), z1l = random_tensor({1, F, 4, 4, 2});
    const FlowSample fs = make_flow_sample(z0c, z0l, z1c, z1l, 0.4);
    std::vector<Tensor> params;
    for (const std::string& name : store.names()) params.push_back(store.get(name));
    auto f = [&](Tape& tape, const std::vector<Var>& vars) {
      std::unordered_map<std::string, Var> by_name;
      for (size_t i = 0; i < store.names().size(); ++i) by_name[store.names()[i]] = vars[i];
      DiTRefs refs = bind_dit_from([&](const std::string& n) { return by_name.at(n); }, micro);
      DiTOutput u = model_forward(refs, micro, tape.constant(fs.z_t_cam),
                                  tape.constant(fs.z_t_lidar), conds, fs.t);
      return flow_loss(u.u_cam, u.u_lidar, fs);
    };
    const double e = grad_check(f, params, 1e-3, 4, 99);
    std::cout << "gradcheck model: max relative error " << e << " (tolerance 1e-3)\n";
    worst = std::max(worst, e / 1e-3);
  }
  if (worst >= 1.0) {
    std::cerr << "error: gradcheck: tolerance exceeded\n";
    return 1;
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"camera+LiDAR driving world model toolkit"};
  app.require_subcommand(1);
  app.footer("Config keys:\n" + RunConfig::help());

  CommonOpts common;
  std::string out, in, scenes, scene_path, modality = "lidar";
  std::string vae_cam, vae_lidar, ula_cam, ula_lidar, ckpt;
  std::string stats_l, stats_c, prior, gen_dir, ref_dir, params_path;
  std::string level = "all";
  int frame = 0, camera = 0;
  bool range_view = false, invert = false;

  auto* sc_scenegen = app.add_subcommand("scenegen", "generate deterministic synthetic scenes");
  add_common(sc_scenegen, common);
  sc_scenegen->add_option("--out", out, "output directory")->required();

  auto* sc_enc = app.add_subcommand("encode-range", "PLY point cloud -> RIMG range image");
  add_common(sc_enc, common);
  sc_enc->add_option("--in", in, "input .ply")->required();
  sc_enc->add_option("--out", out, "output .rimg")->required();

  auto* sc_dec = app.add_subcommand("decode-range", "RIMG range image -> PLY point cloud");
  add_common(sc_dec, common);
  sc_dec->add_option("--in", in, "input .rimg")->required();
  sc_dec->add_option("--out", out, "output .ply")->required();

  auto* sc_proj = app.add_subcommand("project-layout", "project scene layout into a view");
  add_common(sc_proj, common);
  sc_proj->add_option("--scene", scene_path, "scene JSON")->required();
  sc_proj->add_option("--frame", frame, "frame index");
  sc_proj->add_option("--camera", camera, "camera index (camera view)");
  sc_proj->add_flag("--range", range_view, "project the range view instead of a camera");
  sc_proj->add_option("--out", out, "output file (.ppm or .rimg)")->required();

  auto* sc_stats = app.add_subcommand("ula-stats", "per-channel latent statistics of a dataset");
  add_common(sc_stats, common);
  sc_stats->add_option("--scenes", scenes, "scene directory")->required();
  sc_stats->add_option("--vae", ckpt, "VAE checkpoint directory")->required();
  sc_stats->add_option("--modality", modality, "lidar|camera")->required();
  sc_stats->add_option("--out", out, "output stats JSON")->required();

  auto* sc_cal = app.add_subcommand("ula-calibrate", "derive calibrated normalization parameters");
  add_common(sc_cal, common);
  sc_cal->add_option("--stats-l", stats_l, "modality stats JSON")->required();
  sc_cal->add_option("--stats-c", stats_c, "reference data stats JSON")->required();
  sc_cal->add_option("--prior", prior, "prior stats JSON (defaults to --stats-c)");
  sc_cal->add_option("--out", out, "output params JSON")->required();

  auto* sc_apply = app.add_subcommand("ula-apply", "apply or invert calibrated normalization");
  add_common(sc_apply, common);
  sc_apply->add_option("--params", params_path, "params JSON")->required();
  sc_apply->add_option("--in", in, "input TNSR")->required();
  sc_apply->add_option("--out", out, "output TNSR")->required();
  sc_apply->add_flag("--invert", invert, "apply the inverse map");

  auto* sc_tvae = app.add_subcommand("train-vae", "train a modality VAE on scenes");
  add_common(sc_tvae, common);
  sc_tvae->add_option("--scenes", scenes, "scene directory")->required();
  sc_tvae->add_option("--modality", modality, "lidar|camera")->required();
  sc_tvae->add_option("--out", out, "checkpoint directory")->required();

  auto* sc_tdit = app.add_subcommand("train-dit", "train the dual-modality flow model");
  add_common(sc_tdit, common);
  sc_tdit->add_option("--scenes", scenes, "scene directory")->required();
  sc_tdit->add_option("--vae-cam", vae_cam, "camera VAE checkpoint")->required();
  sc_tdit->add_option("--vae-lidar", vae_lidar, "LiDAR VAE checkpoint")->required();
  sc_tdit->add_option("--ula-cam", ula_cam, "camera normalization params JSON")->required();
  sc_tdit->add_option("--ula-lidar", ula_lidar, "LiDAR normalization params JSON")->required();
  sc_tdit->add_option("--out", out, "checkpoint directory")->required();

  auto* sc_sample = app.add_subcommand("sample", "generate a multimodal rollout for a scene");
  add_common(sc_sample, common);
  sc_sample->add_option("--ckpt", ckpt, "flow model checkpoint")->required();
  sc_sample->add_option("--scene", scene_path, "conditioning scene JSON")->required();
  sc_sample->add_option("--vae-cam", vae_cam, "camera VAE checkpoint")->required();
  sc_sample->add_option("--vae-lidar", vae_lidar, "LiDAR VAE checkpoint")->required();
  sc_sample->add_option("--ula-cam", ula_cam, "camera normalization params JSON")->required();
  sc_sample->add_option("--ula-lidar", ula_lidar, "LiDAR normalization params JSON")->required();
  sc_sample->add_option("--out", out, "output directory")->required();

  auto* sc_eval = app.add_subcommand("eval", "point-cloud metrics between two directories");
  add_common(sc_eval, common);
  sc_eval->add_option("--gen", gen_dir, "generated clouds directory")->required();
  sc_eval->add_option("--ref", ref_dir, "reference clouds directory")->required();
  sc_eval->add_option("--out", out, "report JSON path")->required();

  auto* sc_grad = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  add_common(sc_grad, common);
  sc_grad->add_option("--level", level, "ops|model|all");

  std::vector<const char*> argv;
  argv.push_back("mmworld");
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const RunConfig cfg = build_config(common);
    if (sc_scenegen->parsed()) return cmd_scenegen(cfg, out);
    if (sc_enc->parsed()) return cmd_encode_range(cfg, in, out);
    if (sc_dec->parsed()) return cmd_decode_range(in, out);
    if (sc_proj->parsed()) return cmd_project_layout(cfg, scene_path, frame, camera, range_view, out);
    if (sc_stats->parsed()) return cmd_ula_stats(cfg, scenes, ckpt, modality, out);
    if (sc_cal->parsed()) return cmd_ula_calibrate(stats_l, stats_c, prior, out);
    if (sc_apply->parsed()) return cmd_ula_apply(params_path, in, out, invert);
    if (sc_tvae->parsed()) return cmd_train_vae(cfg, scenes, modality, out);
    if (sc_tdit->parsed())
      return cmd_train_dit(cfg, scenes, vae_cam, vae_lidar, ula_cam, ula_lidar, out);
    if (sc_sample->parsed())
      return cmd_sample(cfg, ckpt, scene_path, vae_cam, vae_lidar, ula_cam, ula_lidar, out);
    if (sc_eval->parsed()) return cmd_eval(cfg, gen_dir, ref_dir, out);
    if (sc_grad->parsed()) return cmd_gradcheck(level);
    std::cerr << "error: no subcommand\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace mmw

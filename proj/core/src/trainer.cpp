#include "mmworld/trainer.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "mmworld/layout.hpp"
#include "mmworld/text.hpp"

namespace mmw {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

Tensor image_to_tensor(const ImageRGB& img, double lo, double hi) {
  Tensor t({img.height, img.width, 3});
  for (size_t i = 0; i < img.pix.size(); ++i) t[static_cast<int64_t>(i)] = lo + (hi - lo) * img.pix[i];
  return t;
}

Tensor randn_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal();
  return t;
}

// Copies `src` into dst[*, frame, ...] along axis 1 of a 5-D tensor.
void pin_frame(Tensor& dst, const Tensor& src, int64_t frame) {
  const int64_t N = dst.shape()[0], F = dst.shape()[1];
  const int64_t inner = dst.numel() / (N * F);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t i = 0; i < inner; ++i)
      dst[(n * F + frame) * inner + i] = src[n * inner + i];
}

}  // namespace

Tensor lidar_sequence_tensor(const SceneLayout& scene, const RangeSpec& spec) {
  const int64_t F = static_cast<int64_t>(scene.frames.size());
  const int64_t H = static_cast<int64_t>(spec.beams) * spec.repeat_k;
  const int64_t W = spec.azimuth_bins;
  Tensor out({1, F, H, W, 1});
  for (int64_t f = 0; f < F; ++f) {
    RangeImage img = encode(raycast_lidar(scene, static_cast<int>(f), spec), spec);
    RangeGrid grid = repeat_rows(img, spec.repeat_k);
    Tensor norm = normalize_grid(grid.ranges, grid.valid, spec);
    for (int64_t i = 0; i < H * W; ++i) out[(f * H * W + i)] = norm[i];
  }
  return out;
}

Tensor camera_sequence_tensor(const SceneLayout& scene) {
  require(!scene.cameras.empty(), "camera_sequence_tensor: scene has no cameras");
  const int64_t V = static_cast<int64_t>(scene.cameras.size());
  const int64_t F = static_cast<int64_t>(scene.frames.size());
  const int64_t H = scene.cameras[0].height, W = scene.cameras[0].width;
  Tensor out({V, F, H, W, 3});
  for (int64_t v = 0; v < V; ++v)
    for (int64_t f = 0; f < F; ++f) {
      ImageRGB img = render_camera_target(scene, static_cast<int>(f), static_cast<int>(v));
      Tensor t = image_to_tensor(img, -1.0, 1.0);
      for (int64_t i = 0; i < H * W * 3; ++i) out[((v * F + f) * H * W * 3) + i] = t[i];
    }
  return out;
}

Tensor camera_layout_stack(const SceneLayout& scene, const Palette& palette) {
  require(!scene.cameras.empty(), "camera_layout_stack: scene has no cameras");
  const int64_t V = static_cast<int64_t>(scene.cameras.size());
  const int64_t F = static_cast<int64_t>(scene.frames.size());
  const int64_t H = scene.cameras[0].height, W = scene.cameras[0].width;
  Tensor out({V, F, H, W, 3});
  for (int64_t v = 0; v < V; ++v)
    for (int64_t f = 0; f < F; ++f) {
      ImageRGB img = project_camera(scene, static_cast<int>(f), static_cast<int>(v), palette);
      Tensor t = image_to_tensor(img, 0.0, 1.0);
      for (int64_t i = 0; i < H * W * 3; ++i) out[((v * F + f) * H * W * 3) + i] = t[i];
    }
  return out;
}

Tensor lidar_layout_stack(const SceneLayout& scene, const RangeSpec& spec, const Palette&) {
  const int64_t F = static_cast<int64_t>(scene.frames.size());
  const int64_t H = static_cast<int64_t>(spec.beams) * spec.repeat_k;
  const int64_t W = spec.azimuth_bins;
  Tensor out({1, F, H, W, 3});
  for (int64_t f = 0; f < F; ++f) {
    LayoutImageRange li = project_range(scene, static_cast<int>(f), spec);
    // Repeat rows like the data path, scale to [0,1], then triplicate.
    Tensor rep({H, W});
    for (int64_t v = 0; v < spec.beams; ++v)
      for (int j = 0; j < spec.repeat_k; ++j)
        for (int64_t u = 0; u < W; ++u)
          rep[(v * spec.repeat_k + j) * W + u] = li.dist[v * W + u] / spec.r_max;
    Tensor tri = replicate3(rep);
    for (int64_t i = 0; i < H * W * 3; ++i) out[f * H * W * 3 + i] = tri[i];
  }
  return out;
}

std::vector<PointCloud> scene_ground_truth_clouds(const SceneLayout& scene, const RangeSpec& spec) {
  std::vector<PointCloud> out;
  for (size_t f = 0; f < scene.frames.size(); ++f)
    out.push_back(raycast_lidar(scene, static_cast<int>(f), spec));
  return out;
}

TrainTrace train_vae(ParamStore& store, const std::string& prefix, const VaeTrainConfig& cfg,
                     const std::vector<Tensor>& sequences, Adam* opt) {
  require(!sequences.empty(), "train_vae: no sequences");
  for (const Tensor& s : sequences)
    require(s.ndim() == 4 && s.same_shape(sequences[0]),
            "train_vae: sequences must share shape [F,H,W,ch]");
  const Shape item = sequences[0].shape();
  Adam local({cfg.lr}, store);
  Adam& optimizer = opt ? *opt : local;
  Rng rng(Rng::derive(cfg.seed, 0xae));
  const PerceptualFn feat = gradient_feature_distance();
  TrainTrace trace;
  for (int step = 0; step < cfg.steps; ++step) {
    const int batch = std::min<int>(cfg.batch, static_cast<int>(sequences.size()));
    Tensor v({batch, item[0], item[1], item[2], item[3]});
    for (int b = 0; b < batch; ++b) {
      const int64_t idx = rng.uniform_int(static_cast<int64_t>(sequences.size()));
      const Tensor& src = sequences[static_cast<size_t>(idx)];
      for (int64_t i = 0; i < src.numel(); ++i) v[b * src.numel() + i] = src[i];
    }
    Tape tape;
    std::vector<Var> bound = bind_params(tape, store, true);
    std::unordered_map<std::string, Var> by_name;
    for (size_t i = 0; i < store.names().size(); ++i) by_name[store.names()[i]] = bound[i];
    VaeRefs refs = bind_vae_from([&](const std::string& n) { return by_name.at(n); }, prefix);
    Var vc = tape.constant(v);
    GaussianPosterior post = vae_encode(vc, refs);
    Tensor noise = randn_tensor(post.mu.shape(), rng);
    Var z = add(post.mu, mul(exp_(scale(post.logvar, 0.5)), tape.constant(noise)));
    Var v_hat = vae_decode(z, refs);
    VaeLossBreakdown bd;
    Var loss = vae_loss(vc, v_hat, post, cfg.weights, feat, &bd);
    const double lv = loss.value()[0];
    if (!std::isfinite(lv))
      throw std::runtime_error("train_vae: non-finite loss at step " + std::to_string(step));
    tape.backward(loss);
    optimizer.step(store, collect_grads(tape, bound));
    trace.losses.push_back(lv);
  }
  trace.initial_loss = trace.losses.front();
  trace.final_loss = trace.losses.back();
  return trace;
}

SceneTensors prepare_scene_tensors(const SceneLayout& scene, const RangeSpec& spec,
                                   const ParamStore& vae_cam, const ParamStore& vae_lidar,
                                   const UlaParams& ula_cam, const UlaParams& ula_lidar,
                                   const DiTConfig& cfg) {
  cfg.validate();
  require(static_cast<int>(scene.cameras.size()) == cfg.views,
          "prepare_scene: scene has " + std::to_string(scene.cameras.size()) +
              " cameras, config expects " + std::to_string(cfg.views));
  require(static_cast<int>(scene.frames.size()) == cfg.frames_t + 1,
          "prepare_scene: scene frame count does not match config");
  SceneTensors st;
  st.z1_cam = ula_apply(vae_encode_mean(vae_cam, "vae", camera_sequence_tensor(scene)), ula_cam);
  Tensor zl = vae_encode_mean(vae_lidar, "vae", lidar_sequence_tensor(scene, spec));
  const Shape& ls = zl.shape();  // [1, F', h, w, C]
  st.z1_lidar = ula_apply(zl.reshaped({ls[1], ls[2], ls[3], ls[4]}), ula_lidar);
  require(st.z1_cam.shape()[2] == cfg.cam_latent_h && st.z1_cam.shape()[3] == cfg.cam_latent_w,
          "prepare_scene: camera latent extents " + shape_str(st.z1_cam.shape()) +
              " do not match config");
  require(st.z1_lidar.shape()[1] == cfg.lidar_latent_h && st.z1_lidar.shape()[2] == cfg.lidar_latent_w,
          "prepare_scene: lidar latent extents " + shape_str(st.z1_lidar.shape()) +
              " do not match config");
  require(st.z1_cam.shape()[4] == cfg.latent_channels, "prepare_scene: latent channel mismatch");
  st.layout_cam = camera_layout_stack(scene);
  st.layout_lidar = lidar_layout_stack(scene, spec);
  const Tokenizer tok = make_hash_tokenizer(cfg.n_text_tokens, cfg.text_vocab);
  for (int v = 0; v < cfg.views; ++v) {
    const auto ids = tok(view_prompt(scene, v));
    st.text_ids_cam.insert(st.text_ids_cam.end(), ids.begin(), ids.end());
  }
  st.text_ids_lidar = tok(scene_prompt(scene));
  return st;
}

namespace {

struct StackedBatch {
  Tensor z1_cam;    // [B*V, F', h, w, C]
  Tensor z1_lidar;  // [B, F', h, w, C]
  DiTConds conds;
};

StackedBatch stack_scenes(const std::vector<const SceneTensors*>& scenes, const DiTConfig& cfg) {
  StackedBatch sb;
  std::vector<Tensor> zc, zl, lc, ll;
  for (const SceneTensors* st : scenes) {
    zc.push_back(st->z1_cam);
    const Shape& s = st->z1_lidar.shape();
    zl.push_back(st->z1_lidar.reshaped({1, s[0], s[1], s[2], s[3]}));
    lc.push_back(st->layout_cam);
    ll.push_back(st->layout_lidar);
    sb.conds.text_ids_cam.insert(sb.conds.text_ids_cam.end(), st->text_ids_cam.begin(),
                                 st->text_ids_cam.end());
    sb.conds.text_ids_lidar.insert(sb.conds.text_ids_lidar.end(), st->text_ids_lidar.begin(),
                                   st->text_ids_lidar.end());
  }
  sb.z1_cam = concat(zc, 0);
  sb.z1_lidar = concat(zl, 0);
  sb.conds.layout_cam = concat(lc, 0);
  sb.conds.layout_lidar = concat(ll, 0);
  sb.conds.frame0_cam = slice(sb.z1_cam, 1, 0, 1);
  sb.conds.frame0_lidar = slice(sb.z1_lidar, 1, 0, 1);
  (void)cfg;
  return sb;
}

}  // namespace

double dit_train_step(ParamStore& store, Adam& opt, const DitTrainConfig& cfg,
                      const std::vector<SceneTensors>& pool, Rng& rng) {
  require(!pool.empty(), "dit_train_step: empty scene pool");
  require(cfg.model.frames_t >= 4, "dit_train_step: need T >= 4 so frames past the first exist");
  std::vector<const SceneTensors*> batch;
  const int B = std::min<int>(cfg.batch, static_cast<int>(pool.size()));
  for (int b = 0; b < B; ++b)
    batch.push_back(&pool[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(pool.size())))]);
  StackedBatch sb = stack_scenes(batch, cfg.model);

  const double t = sample_timestep(rng, cfg.time_m, cfg.time_s);
  Tensor z0_cam = randn_tensor(sb.z1_cam.shape(), rng);
  Tensor z0_lidar = randn_tensor(sb.z1_lidar.shape(), rng);
  FlowSample fs = make_flow_sample(z0_cam, z0_lidar, sb.z1_cam, sb.z1_lidar, t);
  // First latent frame rides clean through the model and carries no loss.
  pin_frame(fs.z_t_cam, sb.conds.frame0_cam, 0);
  pin_frame(fs.z_t_lidar, sb.conds.frame0_lidar, 0);

  Tape tape;
  std::vector<Var> bound = bind_params(tape, store, true);
  std::unordered_map<std::string, Var> by_name;
  for (size_t i = 0; i < store.names().size(); ++i) by_name[store.names()[i]] = bound[i];
  DiTRefs refs =
      bind_dit_from([&](const std::string& n) { return by_name.at(n); }, cfg.model);
  DiTOutput u = model_forward(refs, cfg.model, tape.constant(fs.z_t_cam),
                              tape.constant(fs.z_t_lidar), sb.conds, t);
  const int64_t F = cfg.model.latent_frames();
  FlowSample sliced;
  sliced.t = t;
  sliced.nu_cam = slice(fs.nu_cam, 1, 1, F - 1);
  sliced.nu_lidar = slice(fs.nu_lidar, 1, 1, F - 1);
  Var loss = flow_loss(slice(u.u_cam, 1, 1, F - 1), slice(u.u_lidar, 1, 1, F - 1), sliced);
  const double lv = loss.value()[0];
  if (!std::isfinite(lv))
    throw std::runtime_error("dit_train_step: non-finite loss at optimizer step " +
                             std::to_string(opt.steps_taken() + 1));
  tape.backward(loss);
  opt.step(store, collect_grads(tape, bound));
  return lv;
}

TrainTrace train_dit(ParamStore& store, const DitTrainConfig& cfg,
                     const std::vector<SceneTensors>& pool, Adam* opt) {
  Adam local({cfg.lr}, store);
  Adam& optimizer = opt ? *opt : local;
  Rng rng(Rng::derive(cfg.seed, 0xd17));
  TrainTrace trace;
  for (int step = 0; step < cfg.steps; ++step)
    trace.losses.push_back(dit_train_step(store, optimizer, cfg, pool, rng));
  trace.initial_loss = trace.losses.front();
  trace.final_loss = trace.losses.back();
  return trace;
}

std::pair<Tensor, Tensor> euler_integrate(Tensor z_cam, Tensor z_lidar, const VelocityFn& u,
                                          int steps, const Tensor* pin_cam,
                                          const Tensor* pin_lidar) {
  require(steps >= 1, "euler_integrate: steps must be >= 1");
  if (pin_cam) pin_frame(z_cam, *pin_cam, 0);
  if (pin_lidar) pin_frame(z_lidar, *pin_lidar, 0);
  const double dt = 1.0 / steps;
  for (int k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) / steps;
    const auto [u_cam, u_lidar] = u(z_cam, z_lidar, t);
    add_inplace(z_cam, scale(u_cam, dt));
    add_inplace(z_lidar, scale(u_lidar, dt));
    if (pin_cam) pin_frame(z_cam, *pin_cam, 0);
    if (pin_lidar) pin_frame(z_lidar, *pin_lidar, 0);
  }
  return {std::move(z_cam), std::move(z_lidar)};
}

std::pair<Tensor, Tensor> euler_sample(const ParamStore& store, const DiTConfig& cfg,
                                       const SceneTensors& conds, int steps, uint64_t seed) {
  cfg.validate();
  std::vector<const SceneTensors*> one = {&conds};
  StackedBatch sb = stack_scenes(one, cfg);
  Rng rng(Rng::derive(seed, 0x5a3));
  Tensor z_cam = randn_tensor(sb.z1_cam.shape(), rng);
  Tensor z_lidar = randn_tensor(sb.z1_lidar.shape(), rng);
  VelocityFn velocity = [&](const Tensor& zc, const Tensor& zl, double t) {
    Tape tape;
    DiTRefs refs = bind_dit(tape, store, cfg, false);
    DiTOutput u = model_forward(refs, cfg, tape.constant(zc), tape.constant(zl), sb.conds, t);
    return std::make_pair(u.u_cam.value(), u.u_lidar.value());
  };
  auto out = euler_integrate(std::move(z_cam), std::move(z_lidar), velocity, steps,
                             &sb.conds.frame0_cam, &sb.conds.frame0_lidar);
  const Shape& ls = out.second.shape();
  return {std::move(out.first), out.second.reshaped({ls[1], ls[2], ls[3], ls[4]})};
}

std::vector<PointCloud> decode_lidar_latent(const Tensor& zn, const ParamStore& vae_lidar,
                                            const UlaParams& ula, const RangeSpec& spec) {
  const Tensor z = ula_invert(zn, ula);
  const Shape& s = z.shape();  // [F', h, w, C]
  Tensor v = vae_decode_value(vae_lidar, "vae", z.reshaped({1, s[0], s[1], s[2], s[3]}));
  const int64_t F = v.shape()[1], H = v.shape()[2], W = v.shape()[3];
  std::vector<PointCloud> out;
  for (int64_t f = 0; f < F; ++f) {
    Tensor grid({H, W});
    for (int64_t i = 0; i < H * W; ++i) grid[i] = v[f * H * W + i];
    RangeGrid rg = denormalize_grid(grid, spec);
    out.push_back(decode(collapse_rows(rg, spec.repeat_k, spec)));
  }
  return out;
}

std::vector<std::vector<ImageRGB>> decode_camera_latent(const Tensor& zn,
                                                        const ParamStore& vae_cam,
                                                        const UlaParams& ula, int height,
                                                        int width) {
  const Tensor z = ula_invert(zn, ula);  // [V, F', h, w, C]
  Tensor v = vae_decode_value(vae_cam, "vae", z);
  const int64_t V = v.shape()[0], F = v.shape()[1], H = v.shape()[2], W = v.shape()[3];
  require(H == height && W == width, "decode_camera_latent: decoded extents mismatch");
  std::vector<std::vector<ImageRGB>> out(static_cast<size_t>(V));
  for (int64_t view = 0; view < V; ++view)
    for (int64_t f = 0; f < F; ++f) {
      ImageRGB img(static_cast<int>(W), static_cast<int>(H));
      for (int64_t i = 0; i < H * W * 3; ++i) {
        const double val = 0.5 * (v[((view * F + f) * H * W * 3) + i] + 1.0);
        img.pix[static_cast<size_t>(i)] = std::min(1.0, std::max(0.0, val));
      }
      out[static_cast<size_t>(view)].push_back(std::move(img));
    }
  return out;
}

std::vector<PointCloud> vae_reconstruction_clouds(const SceneLayout& scene, const RangeSpec& spec,
                                                  const ParamStore& vae_lidar) {
  Tensor v = lidar_sequence_tensor(scene, spec);
  Tensor z = vae_encode_mean(vae_lidar, "vae", v);
  Tensor rec = vae_decode_value(vae_lidar, "vae", z);
  const int64_t F = rec.shape()[1], H = rec.shape()[2], W = rec.shape()[3];
  std::vector<PointCloud> out;
  for (int64_t f = 0; f < F; ++f) {
    Tensor grid({H, W});
    for (int64_t i = 0; i < H * W; ++i) grid[i] = rec[f * H * W + i];
    RangeGrid rg = denormalize_grid(grid, spec);
    out.push_back(decode(collapse_rows(rg, spec.repeat_k, spec)));
  }
  return out;
}

}  // namespace mmw

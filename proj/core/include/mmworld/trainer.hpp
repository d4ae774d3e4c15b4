#pragma once

#include <string>
#include <vector>

#include "mmworld/dit.hpp"
#include "mmworld/metrics.hpp"
#include "mmworld/scenegen.hpp"
#include "mmworld/ula.hpp"
#include "mmworld/vae.hpp"

namespace mmw {

// ---- scene -> model tensors ----

/// [1, 1+T, repeat_k*beams, W, 1], ranges normalized to [-1,1], invalid -1.
Tensor lidar_sequence_tensor(const SceneLayout& scene, const RangeSpec& spec);
/// [V, 1+T, H, W, 3] scaled to [-1,1].
Tensor camera_sequence_tensor(const SceneLayout& scene);
/// Conditioning stacks in [0,1]: camera [V, 1+T, H, W, 3]; range view
/// replicated to three channels after row repetition, [1, 1+T, k*beams, W, 3].
Tensor camera_layout_stack(const SceneLayout& scene, const Palette& palette = default_palette());
Tensor lidar_layout_stack(const SceneLayout& scene, const RangeSpec& spec,
                          const Palette& palette = default_palette());
/// Simulator ground truth, one cloud per frame.
std::vector<PointCloud> scene_ground_truth_clouds(const SceneLayout& scene, const RangeSpec& spec);

// ---- sequence VAE training ----

struct TrainTrace {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<double> losses;
};

struct VaeTrainConfig {
  VaeConfig vae;
  VaeLossWeights weights{1.0, 1e-3, 0.3};
  double lr = 5e-5;
  int steps = 300;
  int batch = 2;
  uint64_t seed = 0;
};

/// Trains "<prefix>.*" on the given same-shaped sequences ([F,H,W,ch] each).
/// Uses `opt` when given (so its moments can be checkpointed), otherwise a
/// fresh Adam at cfg.lr. Throws on a non-finite loss.
TrainTrace train_vae(ParamStore& store, const std::string& prefix, const VaeTrainConfig& cfg,
                     const std::vector<Tensor>& sequences, Adam* opt = nullptr);

// ---- flow-matching training and sampling ----

/// Per-scene tensors prepared once: clean normalized latents, conditioning
/// stacks, and prompt token ids.
struct SceneTensors {
  Tensor z1_cam;        // [V, F', h, w, C]
  Tensor z1_lidar;      // [F', h, w, C]
  Tensor layout_cam;    // [V, 1+T, Hc, Wc, 3]
  Tensor layout_lidar;  // [1, 1+T, Hl, Wl, 3]
  std::vector<int64_t> text_ids_cam;
  std::vector<int64_t> text_ids_lidar;
};

SceneTensors prepare_scene_tensors(const SceneLayout& scene, const RangeSpec& spec,
                                   const ParamStore& vae_cam, const ParamStore& vae_lidar,
                                   const UlaParams& ula_cam, const UlaParams& ula_lidar,
                                   const DiTConfig& cfg);

struct DitTrainConfig {
  DiTConfig model;
  double lr = 2e-5;
  int steps = 400;
  int batch = 1;
  uint64_t seed = 0;
  double time_m = 0.0;  // logit-normal location
  double time_s = 1.0;  // logit-normal scale
};

/// One optimizer step on a batch drawn from the scene pool; returns the loss.
/// The first latent frame is held clean and excluded from the loss.
double dit_train_step(ParamStore& store, Adam& opt, const DitTrainConfig& cfg,
                      const std::vector<SceneTensors>& pool, Rng& rng);
TrainTrace train_dit(ParamStore& store, const DitTrainConfig& cfg,
                     const std::vector<SceneTensors>& pool, Adam* opt = nullptr);

/// dz/dt callback for the integrator: (z_cam, z_lidar, t) -> (u_cam, u_lidar).
using VelocityFn =
    std::function<std::pair<Tensor, Tensor>(const Tensor&, const Tensor&, double)>;

/// Uniform-step Euler integration from t=0 to t=1. When pin tensors are
/// given, latent frame 0 is rewritten with them after every step.
std::pair<Tensor, Tensor> euler_integrate(Tensor z_cam, Tensor z_lidar, const VelocityFn& u,
                                          int steps, const Tensor* pin_cam = nullptr,
                                          const Tensor* pin_lidar = nullptr);

/// Deterministic Euler integration of dz/dt = u from noise at t=0 to t=1 in
/// uniform steps; the first latent frame is pinned to the clean conditioning
/// latent throughout. Returns normalized latents (cam [V,F',h,w,C], lidar
/// [F',h,w,C]).
std::pair<Tensor, Tensor> euler_sample(const ParamStore& store, const DiTConfig& cfg,
                                       const SceneTensors& conds, int steps, uint64_t seed);

// ---- latent decoding ----

/// ULA-invert, VAE-decode, denormalize, collapse repeated rows, and lift each
/// frame's range image back to a point cloud.
std::vector<PointCloud> decode_lidar_latent(const Tensor& zn, const ParamStore& vae_lidar,
                                            const UlaParams& ula, const RangeSpec& spec);
/// Per view and frame images in [0,1].
std::vector<std::vector<ImageRGB>> decode_camera_latent(const Tensor& zn,
                                                        const ParamStore& vae_cam,
                                                        const UlaParams& ula, int height,
                                                        int width);

/// Reconstruction clouds for a scene through encode->decode (VAE only).
std::vector<PointCloud> vae_reconstruction_clouds(const SceneLayout& scene, const RangeSpec& spec,
                                                  const ParamStore& vae_lidar);

}  // namespace mmw

#pragma once

#include <functional>

#include "mmworld/rng.hpp"
#include "mmworld/tape.hpp"

namespace mmw {

/// Diagonal Gaussian posterior over a latent (logvar clamped to [-30, 20]).
struct GaussianPosterior {
  Var mu;
  Var logvar;
};

struct VaeLossWeights {
  double lambda1 = 1.0;  // reconstruction (L1)
  double lambda2 = 1.0;  // KL against the standard normal prior
  double lambda3 = 0.3;  // perceptual feature distance
};

/// 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar), summed over latent dims and
/// averaged over the leading (batch) axis.
Var kl_std_normal(const GaussianPosterior& p);

/// Perceptual feature distance between two image stacks [N,F,H,W,C].
using PerceptualFn = std::function<Var(Var v, Var v_hat)>;
/// Default extractor: multi-scale finite-difference image gradients compared
/// with L1. Deterministic, no pretrained weights.
PerceptualFn gradient_feature_distance();

struct VaeLossBreakdown {
  double l1 = 0.0;
  double kl = 0.0;
  double perceptual = 0.0;
  double total = 0.0;
};

/// lambda1 * mean|v - v_hat| + lambda2 * KL + lambda3 * feat(v, v_hat).
/// Single-channel inputs are replicated to three channels for the feature
/// term. `v` is the (constant) target, `v_hat` the prediction.
Var vae_loss(Var v, Var v_hat, const GaussianPosterior& p, const VaeLossWeights& w,
             const PerceptualFn& feat, VaeLossBreakdown* breakdown = nullptr);

/// Logit-normal draw: sigmoid(n), n ~ N(m, s^2). Always in (0,1).
double sample_timestep(Rng& rng, double m = 0.0, double s = 1.0);

/// Straight path between noise (z0) and data (z1) for both modalities, with
/// its constant velocity.
struct FlowSample {
  Tensor z_t_cam, z_t_lidar;
  Tensor nu_cam, nu_lidar;  // z1 - z0 (independent of t)
  double t = 0.0;
};

FlowSample make_flow_sample(const Tensor& z0_cam, const Tensor& z0_lidar,
                            const Tensor& z1_cam, const Tensor& z1_lidar, double t);

/// Mean squared error over the concatenated camera+LiDAR velocity (one joint
/// scalar, element-count weighted).
Var flow_loss(Var u_pred_cam, Var u_pred_lidar, const FlowSample& sample);
double flow_loss_value(const Tensor& u_cam, const Tensor& u_lidar, const FlowSample& sample);

}  // namespace mmw

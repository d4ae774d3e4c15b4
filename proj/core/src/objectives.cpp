#include "mmworld/objectives.hpp"

#include <cmath>
#include <stdexcept>

namespace mmw {

Var kl_std_normal(const GaussianPosterior& p) {
  const int64_t batch = p.mu.shape()[0];
  Var mu2 = mul(p.mu, p.mu);
  Var term = sub(add_scalar(add(mu2, exp_(p.logvar)), -1.0), p.logvar);
  return scale(sum_all(term), 0.5 / static_cast<double>(batch));
}

PerceptualFn gradient_feature_distance() {
  return [](Var v, Var v_hat) -> Var {
    Tape* t = v.tape;
    const Shape s = v.shape();  // [N,F,H,W,C]
    if (s.size() != 5) throw std::invalid_argument("perceptual: expected [N,F,H,W,C]");
    const int64_t frames = s[0] * s[1];
    Var a = reshape(v, {frames, s[2], s[3], s[4]});
    Var b = reshape(v_hat, {frames, s[2], s[3], s[4]});
    std::vector<Var> terms;
    for (int scale_f : {1, 2, 4}) {
      if (s[2] % scale_f || s[3] % scale_f) continue;
      const int64_t h = s[2] / scale_f, w = s[3] / scale_f;
      if (h < 2 || w < 2) continue;
      Var pa = scale_f == 1 ? a : avg_pool_hw(a, scale_f);
      Var pb = scale_f == 1 ? b : avg_pool_hw(b, scale_f);
      Var dha = sub(slice(pa, 1, 1, h - 1), slice(pa, 1, 0, h - 1));
      Var dhb = sub(slice(pb, 1, 1, h - 1), slice(pb, 1, 0, h - 1));
      Var dwa = sub(slice(pa, 2, 1, w - 1), slice(pa, 2, 0, w - 1));
      Var dwb = sub(slice(pb, 2, 1, w - 1), slice(pb, 2, 0, w - 1));
      terms.push_back(add(mean_all(abs_(sub(dha, dhb))), mean_all(abs_(sub(dwa, dwb)))));
    }
    if (terms.empty()) return t->constant(Tensor::scalar(0.0));
    Var total = terms[0];
    for (size_t i = 1; i < terms.size(); ++i) total = add(total, terms[i]);
    return scale(total, 1.0 / static_cast<double>(terms.size()));
  };
}

namespace {

Var replicate_channels3(Var x) {
  if (x.shape().back() != 1) return x;
  return concat({x, x, x}, -1);
}

}  // namespace

Var vae_loss(Var v, Var v_hat, const GaussianPosterior& p, const VaeLossWeights& w,
             const PerceptualFn& feat, VaeLossBreakdown* breakdown) {
  if (!shapes_equal(v.shape(), v_hat.shape()))
    throw std::invalid_argument("vae_loss: shape mismatch " + shape_str(v.shape()) + " vs " +
                                shape_str(v_hat.shape()));
  Var l1 = mean_all(abs_(sub(v_hat, v)));
  Var kl = kl_std_normal(p);
  Var perceptual = (feat && w.lambda3 != 0.0)
                       ? feat(replicate_channels3(v), replicate_channels3(v_hat))
                       : v.tape->constant(Tensor::scalar(0.0));
  Var total = add(add(scale(l1, w.lambda1), scale(kl, w.lambda2)), scale(perceptual, w.lambda3));
  if (breakdown) {
    breakdown->l1 = l1.value()[0];
    breakdown->kl = kl.value()[0];
    breakdown->perceptual = perceptual.value()[0];
    breakdown->total = total.value()[0];
  }
  return total;
}

double sample_timestep(Rng& rng, double m, double s) {
  if (!(s > 0.0)) throw std::invalid_argument("sample_timestep: s must be positive");
  const double n = m + s * rng.normal();
  return 1.0 / (1.0 + std::exp(-n));
}

FlowSample make_flow_sample(const Tensor& z0_cam, const Tensor& z0_lidar, const Tensor& z1_cam,
                            const Tensor& z1_lidar, double t) {
  if (!z0_cam.same_shape(z1_cam))
    throw std::invalid_argument("make_flow_sample: camera shapes disagree, " +
                                shape_str(z0_cam.shape()) + " vs " + shape_str(z1_cam.shape()));
  if (!z0_lidar.same_shape(z1_lidar))
    throw std::invalid_argument("make_flow_sample: lidar shapes disagree, " +
                                shape_str(z0_lidar.shape()) + " vs " + shape_str(z1_lidar.shape()));
  FlowSample s;
  s.t = t;
  s.z_t_cam = add(scale(z1_cam, t), scale(z0_cam, 1.0 - t));
  s.z_t_lidar = add(scale(z1_lidar, t), scale(z0_lidar, 1.0 - t));
  s.nu_cam = sub(z1_cam, z0_cam);
  s.nu_lidar = sub(z1_lidar, z0_lidar);
  return s;
}

Var flow_loss(Var u_pred_cam, Var u_pred_lidar, const FlowSample& sample) {
  Tape* t = u_pred_cam.tape;
  if (!shapes_equal(u_pred_cam.shape(), sample.nu_cam.shape()) ||
      !shapes_equal(u_pred_lidar.shape(), sample.nu_lidar.shape()))
    throw std::invalid_argument("flow_loss: prediction/velocity shape mismatch");
  Var dc = sub(u_pred_cam, t->constant(sample.nu_cam));
  Var dl = sub(u_pred_lidar, t->constant(sample.nu_lidar));
  const double n = static_cast<double>(sample.nu_cam.numel() + sample.nu_lidar.numel());
  return scale(add(sum_all(mul(dc, dc)), sum_all(mul(dl, dl))), 1.0 / n);
}

double flow_loss_value(const Tensor& u_cam, const Tensor& u_lidar, const FlowSample& sample) {
  Tape tape;
  return flow_loss(tape.constant(u_cam), tape.constant(u_lidar), sample).value()[0];
}

}  // namespace mmw

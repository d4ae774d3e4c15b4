#include "mmworld/vae.hpp"

#include <cmath>
#include <stdexcept>

#include "mmworld/blocks.hpp"

namespace mmw {

namespace {

Tensor randn_scaled(Shape shape, Rng& rng, double scale) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal() * scale;
  return t;
}

Tensor fan_in_init(Shape shape, Rng& rng) {
  const double fan_in = static_cast<double>(shape[0]);
  return randn_scaled(std::move(shape), rng, 1.0 / std::sqrt(fan_in));
}

Tensor conv_init(Shape shape, Rng& rng) {  // [kt,kh,kw,Cin,Cout]
  const double fan_in = static_cast<double>(shape[0] * shape[1] * shape[2] * shape[3]);
  return randn_scaled(std::move(shape), rng, 1.0 / std::sqrt(fan_in));
}

}  // namespace

void init_vae_params(ParamStore& store, const std::string& prefix, const VaeConfig& cfg, Rng& rng) {
  const int64_t cin = cfg.in_channels, c1 = cfg.c1, c2 = cfg.c2, c3 = cfg.c3;
  const int64_t lat = cfg.latent_channels;
  auto add = [&](const std::string& name, Tensor t) { store.add(prefix + "." + name, std::move(t)); };
  add("enc1.w", fan_in_init({1 * 2 * 2 * cin, c1}, rng));
  add("enc1.b", Tensor::zeros({c1}));
  add("enc2.w", fan_in_init({2 * 2 * 2 * c1, c2}, rng));
  add("enc2.b", Tensor::zeros({c2}));
  add("enc3.w", fan_in_init({2 * 2 * 2 * c2, c3}, rng));
  add("enc3.b", Tensor::zeros({c3}));
  add("enc4.w", fan_in_init({c3, 2 * lat}, rng));
  add("enc4.b", Tensor::zeros({2 * lat}));
  add("dec0.w", fan_in_init({lat, c3}, rng));
  add("dec0.b", Tensor::zeros({c3}));
  add("dec1.w", conv_init({1, 3, 3, c3, c2}, rng));
  add("dec1.b", Tensor::zeros({c2}));
  add("dec2.w", conv_init({1, 3, 3, c2, c1}, rng));
  add("dec2.b", Tensor::zeros({c1}));
  add("dec3.w", conv_init({1, 3, 3, c1, c1}, rng));
  add("dec3.b", Tensor::zeros({c1}));
  add("dec4.w", fan_in_init({c1, cin}, rng));
  add("dec4.b", Tensor::zeros({cin}));
}

VaeRefs bind_vae_from(const std::function<Var(const std::string&)>& at, const std::string& prefix) {
  auto leaf = [&](const std::string& name) { return at(prefix + "." + name); };
  VaeRefs p;
  p.e1w = leaf("enc1.w");
  p.e1b = leaf("enc1.b");
  p.e2w = leaf("enc2.w");
  p.e2b = leaf("enc2.b");
  p.e3w = leaf("enc3.w");
  p.e3b = leaf("enc3.b");
  p.e4w = leaf("enc4.w");
  p.e4b = leaf("enc4.b");
  p.d0w = leaf("dec0.w");
  p.d0b = leaf("dec0.b");
  p.d1w = leaf("dec1.w");
  p.d1b = leaf("dec1.b");
  p.d2w = leaf("dec2.w");
  p.d2b = leaf("dec2.b");
  p.d3w = leaf("dec3.w");
  p.d3b = leaf("dec3.b");
  p.d4w = leaf("dec4.w");
  p.d4b = leaf("dec4.b");
  return p;
}

VaeRefs bind_vae(Tape& tape, const ParamStore& store, const std::string& prefix, bool requires_grad) {
  return bind_vae_from(
      [&](const std::string& name) { return tape.leaf(store.get(name), requires_grad); }, prefix);
}

GaussianPosterior vae_encode(Var video, const VaeRefs& p) {
  const Shape& s = video.shape();
  if (s.size() != 5) throw std::invalid_argument("vae_encode: expected [N,F,H,W,C], got " + shape_str(s));
  if ((s[1] - 1) % 4 != 0)
    throw std::invalid_argument("vae_encode: sequence length must be 1+T with T % 4 == 0, got " +
                                std::to_string(s[1]));
  if (s[2] % 8 != 0 || s[3] % 8 != 0)
    throw std::invalid_argument("vae_encode: H and W must be divisible by 8, got " + shape_str(s));
  Var x = gelu(patch_project(video, 1, 2, 2, p.e1w, p.e1b));
  x = gelu(causal_patch_downsample(x, p.e2w, p.e2b));
  x = gelu(causal_patch_downsample(x, p.e3w, p.e3b));
  Var h = patch_project(x, 1, 1, 1, p.e4w, p.e4b);
  const int64_t lat = h.shape()[4] / 2;
  GaussianPosterior post;
  post.mu = slice(h, 4, 0, lat);
  post.logvar = clamp(slice(h, 4, lat, lat), -30.0, 20.0);
  return post;
}

Var vae_decode(Var z, const VaeRefs& p) {
  Var x = gelu(patch_project(z, 1, 1, 1, p.d0w, p.d0b));
  x = gelu(causal_upsample_conv(x, p.d1w, p.d1b));
  x = gelu(causal_upsample_conv(x, p.d2w, p.d2b));
  x = gelu(conv3d_same(nn_upsample(x, 1, 2, 2, false), p.d3w, p.d3b));
  return patch_project(x, 1, 1, 1, p.d4w, p.d4b);
}

Tensor vae_encode_mean(const ParamStore& store, const std::string& prefix, const Tensor& video) {
  Tape tape;
  VaeRefs refs = bind_vae(tape, store, prefix, false);
  return vae_encode(tape.constant(video), refs).mu.value();
}

Tensor vae_decode_value(const ParamStore& store, const std::string& prefix, const Tensor& z) {
  Tape tape;
  VaeRefs refs = bind_vae(tape, store, prefix, false);
  return vae_decode(tape.constant(z), refs).value();
}

}  // namespace mmw

#pragma once

#include <string>

#include "mmworld/objectives.hpp"
#include "mmworld/params.hpp"
#include "mmworld/rng.hpp"

namespace mmw {

/// Shared sequence-VAE backbone; camera and LiDAR instances differ only in
/// the number of input and output channels.
struct VaeConfig {
  int in_channels = 1;  // 3 for the camera modality
  int c1 = 8;
  int c2 = 16;
  int c3 = 32;
  int latent_channels = 4;
};

/// Registers "<prefix>.*" parameters.
void init_vae_params(ParamStore& store, const std::string& prefix, const VaeConfig& cfg, Rng& rng);

struct VaeRefs {
  Var e1w, e1b, e2w, e2b, e3w, e3b, e4w, e4b;
  Var d0w, d0b, d1w, d1b, d2w, d2b, d3w, d3b, d4w, d4b;
};
VaeRefs bind_vae(Tape& tape, const ParamStore& store, const std::string& prefix, bool requires_grad);
VaeRefs bind_vae_from(const std::function<Var(const std::string&)>& at, const std::string& prefix);

/// video [N, 1+T, H, W, cin] with T % 4 == 0 and H, W % 8 == 0
///  -> posterior over [N, 1+T/4, H/8, W/8, C] (frame 0 -> latent 0, causal).
GaussianPosterior vae_encode(Var video, const VaeRefs& p);
/// Mirror decoder: nearest-neighbor upsampling followed by (1,3,3) convs.
Var vae_decode(Var z, const VaeRefs& p);

// Forward-only conveniences.
Tensor vae_encode_mean(const ParamStore& store, const std::string& prefix, const Tensor& video);
Tensor vae_decode_value(const ParamStore& store, const std::string& prefix, const Tensor& z);

}  // namespace mmw

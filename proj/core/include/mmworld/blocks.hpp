#pragma once

#include "mmworld/tape.hpp"

namespace mmw {

/// (2,2,2) strided projection with one zero frame padded in front, so frame 0
/// maps to latent index 0 and 1+T maps to 1+T/2 without peeking forward.
Var causal_patch_downsample(Var x, Var w, Var b);

/// Inverse temporal layout: nearest upsample (frame 0 once, others twice in
/// time, 2x in space) followed by a same-padded (1,3,3) convolution.
Var causal_upsample_conv(Var x, Var w, Var b);

/// Sinusoidal embedding of a scalar in [0,1], dim entries (t scaled by 1000).
Tensor sinusoidal_embedding(double t, int dim);

}  // namespace mmw

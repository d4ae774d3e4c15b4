#include "mmworld/blocks.hpp"

#include <cmath>

namespace mmw {

Var causal_patch_downsample(Var x, Var w, Var b) {
  Tape* t = x.tape;
  const Shape& s = x.shape();  // [N,F,H,W,C]
  Var pad = t->constant(Tensor::zeros({s[0], 1, s[2], s[3], s[4]}));
  Var padded = concat({pad, x}, 1);
  return patch_project(padded, 2, 2, 2, w, b);
}

Var causal_upsample_conv(Var x, Var w, Var b) {
  Var up = nn_upsample(x, 2, 2, 2, /*causal_t=*/true);
  return conv3d_same(up, w, b);
}

Tensor sinusoidal_embedding(double t, int dim) {
  Tensor out({dim});
  const double pos = t * 1000.0;
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / std::max(1, half));
    out[2 * i] = std::sin(pos * freq);
    out[2 * i + 1] = std::cos(pos * freq);
  }
  if (dim % 2) out[dim - 1] = 0.0;
  return out;
}

}  // namespace mmw

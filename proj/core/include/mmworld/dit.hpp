#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mmworld/layout.hpp"
#include "mmworld/params.hpp"
#include "mmworld/rng.hpp"

namespace mmw {

/// Shape configuration of the dual-modality transformer. Latent extents are
/// post-VAE (1/8 of pixels); token grids halve them again.
struct DiTConfig {
  int views = 2;
  int frames_t = 4;  // sequence length is 1+frames_t
  int cam_latent_h = 4, cam_latent_w = 4;
  int lidar_latent_h = 4, lidar_latent_w = 8;
  int latent_channels = 4;
  int cond_channels = 4;
  int emb_channels = 4;
  int dim = 64;
  int depth = 2;
  int heads = 4;
  int text_dim = 32;
  int n_text_tokens = 8;
  int text_vocab = 512;
  int layout_c1 = 8;
  int layout_c2 = 16;

  void validate() const;
  int latent_frames() const { return 1 + frames_t / 4; }
  int cam_tokens_per_view() const {
    return latent_frames() * (cam_latent_h / 2) * (cam_latent_w / 2);
  }
  int lidar_tokens() const {
    return latent_frames() * (lidar_latent_h / 2) * (lidar_latent_w / 2);
  }
  /// Channels entering patchify: z_t, view embedding, layout latent, first
  /// frame latent, first-frame indicator.
  int input_channels() const {
    return latent_channels + emb_channels + cond_channels + latent_channels + 1;
  }
};

/// Registers "dit.*" (and the shared "layout.*" encoder) parameters.
/// zero_out_projections zeroes the residual-branch output weights so every
/// block starts as the identity.
void init_dit_params(ParamStore& store, const DiTConfig& cfg, Rng& rng,
                     bool zero_out_projections = false);

struct DiTBlockRefs {
  Var ln1g, ln1b, qkv_w, qkv_b, attn_out_w, attn_out_b;
  Var ln2g, ln2b, xq_w, xq_b, xkv_w, xkv_b, xout_w, xout_b;
  Var ln3g, ln3b, ffn1_w, ffn1_b, ffn2_w, ffn2_b;
};

struct DiTRefs {
  Var view_emb;    // [views+1, emb_channels]; row `views` is the LiDAR slot
  Var text_table;  // [vocab, text_dim]
  Var t_w1, t_b1, t_w2, t_b2;
  Var patch_cam_w, patch_cam_b, patch_lidar_w, patch_lidar_b;
  Var unpatch_cam_w, unpatch_cam_b, unpatch_lidar_w, unpatch_lidar_b;
  std::vector<DiTBlockRefs> blocks;
  LayoutEncoderRefs layout;
};
DiTRefs bind_dit(Tape& tape, const ParamStore& store, const DiTConfig& cfg, bool requires_grad);
/// Builds refs through an arbitrary name resolver (used when parameters are
/// already bound as ordered tape leaves).
DiTRefs bind_dit_from(const std::function<Var(const std::string&)>& at, const DiTConfig& cfg);

/// Channel concat [z_t | view emb | layout latent | first frame | indicator].
/// z_t [N,F,h,w,C], emb [N,Ce], layout [N,F,h,w,Cc], frame0 [N,1,h,w,C].
Var assemble_modality_input(Var z_t, Var emb, Var layout_latent, Var frame0);

/// (1,2,2) patch projection then flatten to [N, L, D] (t-major, then h, w).
Var patchify_tokens(Var x, Var w, Var b);
/// Inverse layout: tokens [N, F*(h/2)*(w/2), D] -> [N,F,h,w,Cout].
Var unpatchify_tokens(Var tokens, int frames, int grid_h, int grid_w, Var w, Var b);

/// Per-token rotary position ids along (view-or-modality, t, h, w).
struct TokenIds {
  std::vector<int64_t> axis0, t, h, w;
  size_t size() const { return axis0.size(); }
};
/// Joint sequence ids: camera tokens (view-major) then LiDAR tokens, which
/// carry axis0 = views (a distinct modality index).
TokenIds dit_token_ids(const DiTConfig& cfg);
/// cos/sin tables [L, head_dim]; rotary pair j is driven by axis j % 4.
std::pair<Tensor, Tensor> build_rope_tables(const TokenIds& ids, int head_dim);

/// Pre-norm joint self-attention core (exposed for equivariance checks).
Var attention_with_rope(Var x, Var qkv_w, Var qkv_b, Var out_w, Var out_b, int heads,
                        const Tensor& rope_cos, const Tensor& rope_sin);
Var cross_attention(Var x, Var ctx, Var q_w, Var q_b, Var kv_w, Var kv_b, Var out_w, Var out_b,
                    int heads);

struct TokenBatch {
  Var cam;    // [B, views*L_C, D]
  Var lidar;  // [B, L_L, D]
};
struct TextContext {
  Var cam;    // [B*views, n_text_tokens, text_dim]
  Var lidar;  // [B, n_text_tokens, text_dim]
};

/// One transformer block: joint self-attention over [camera|lidar], split,
/// per-view text cross-attention (camera reshaped to (B*views, L_C, D)),
/// re-concat, feed-forward. The projected timestep embedding is added to
/// every token inside the first branch.
TokenBatch block_forward(const TokenBatch& tb, const TextContext& text, Var t_emb,
                         const DiTBlockRefs& blk, const DiTConfig& cfg, const Tensor& rope_cos,
                         const Tensor& rope_sin);

struct DiTConds {
  Tensor layout_cam;    // [B*views, 1+T, Hc, Wc, 3] in [0,1]
  Tensor layout_lidar;  // [B, 1+T, Hl, Wl, 3] in [0,1]
  Tensor frame0_cam;    // [B*views, 1, h, w, C] clean normalized latent
  Tensor frame0_lidar;  // [B, 1, h, w, C]
  std::vector<int64_t> text_ids_cam;    // B*views*n_text_tokens
  std::vector<int64_t> text_ids_lidar;  // B*n_text_tokens
};

struct DiTOutput {
  Var u_cam;    // [B*views, F', h, w, C]
  Var u_lidar;  // [B, F', h, w, C]
};

/// Velocity prediction u(z_t, c, t). z_t_cam [B*views, F', h, w, C],
/// z_t_lidar [B, F', h, w, C]; output shapes match the inputs.
DiTOutput model_forward(const DiTRefs& refs, const DiTConfig& cfg, Var z_t_cam, Var z_t_lidar,
                        const DiTConds& conds, double timestep);

}  // namespace mmw

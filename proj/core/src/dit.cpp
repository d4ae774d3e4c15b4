#include "mmworld/dit.hpp"

#include <cmath>
#include <stdexcept>

#include "mmworld/blocks.hpp"

namespace mmw {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

Tensor randn_scaled(Shape shape, Rng& rng, double scale) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal() * scale;
  return t;
}

Tensor fan_in_init(Shape shape, Rng& rng) {
  return randn_scaled(std::move(shape), rng, 1.0 / std::sqrt(static_cast<double>(shape[0])));
}

}  // namespace

void DiTConfig::validate() const {
  require(views >= 1, "dit config: views must be >= 1");
  require(frames_t >= 0 && frames_t % 4 == 0, "dit config: T must be divisible by 4");
  require(cam_latent_h % 2 == 0 && cam_latent_w % 2 == 0 && cam_latent_h >= 2 && cam_latent_w >= 2,
          "dit config: camera latent extents must be even and >= 2");
  require(lidar_latent_h % 2 == 0 && lidar_latent_w % 2 == 0 && lidar_latent_h >= 2 &&
              lidar_latent_w >= 2,
          "dit config: lidar latent extents must be even and >= 2");
  require(latent_channels >= 1 && cond_channels >= 1 && emb_channels >= 1,
          "dit config: channel counts must be positive");
  require(dim % heads == 0, "dit config: dim must be divisible by heads");
  require((dim / heads) % 2 == 0, "dit config: head dim must be even for rotary pairs");
  require(text_dim >= 1 && n_text_tokens >= 1 && text_vocab >= 2, "dit config: bad text geometry");
}

void init_dit_params(ParamStore& store, const DiTConfig& cfg, Rng& rng, bool zero_out_projections) {
  cfg.validate();
  const int64_t D = cfg.dim, Cin = cfg.input_channels(), lat = cfg.latent_channels;
  auto add = [&](const std::string& name, Tensor t) { store.add(name, std::move(t)); };
  add("dit.view_emb", randn_scaled({cfg.views + 1, cfg.emb_channels}, rng, 1.0));
  add("dit.text_table",
      randn_scaled({cfg.text_vocab, cfg.text_dim}, rng, 1.0 / std::sqrt(static_cast<double>(cfg.text_dim))));
  add("dit.time1.w", fan_in_init({D, D}, rng));
  add("dit.time1.b", Tensor::zeros({D}));
  add("dit.time2.w", fan_in_init({D, D}, rng));
  add("dit.time2.b", Tensor::zeros({D}));
  add("dit.patch_cam.w", fan_in_init({Cin * 4, D}, rng));
  add("dit.patch_cam.b", Tensor::zeros({D}));
  add("dit.patch_lidar.w", fan_in_init({Cin * 4, D}, rng));
  add("dit.patch_lidar.b", Tensor::zeros({D}));
  for (int i = 0; i < cfg.depth; ++i) {
    const std::string p = "dit.block" + std::to_string(i) + ".";
    add(p + "ln1.g", Tensor::ones({D}));
    add(p + "ln1.b", Tensor::zeros({D}));
    add(p + "qkv.w", fan_in_init({D, 3 * D}, rng));
    add(p + "qkv.b", Tensor::zeros({3 * D}));
    add(p + "attn_out.w", zero_out_projections ? Tensor::zeros({D, D}) : fan_in_init({D, D}, rng));
    add(p + "attn_out.b", Tensor::zeros({D}));
    add(p + "ln2.g", Tensor::ones({D}));
    add(p + "ln2.b", Tensor::zeros({D}));
    add(p + "xq.w", fan_in_init({D, D}, rng));
    add(p + "xq.b", Tensor::zeros({D}));
    add(p + "xkv.w", fan_in_init({cfg.text_dim, 2 * D}, rng));
    add(p + "xkv.b", Tensor::zeros({2 * D}));
    add(p + "xout.w", zero_out_projections ? Tensor::zeros({D, D}) : fan_in_init({D, D}, rng));
    add(p + "xout.b", Tensor::zeros({D}));
    add(p + "ln3.g", Tensor::ones({D}));
    add(p + "ln3.b", Tensor::zeros({D}));
    add(p + "ffn1.w", fan_in_init({D, 4 * D}, rng));
    add(p + "ffn1.b", Tensor::zeros({4 * D}));
    add(p + "ffn2.w", zero_out_projections ? Tensor::zeros({4 * D, D}) : fan_in_init({4 * D, D}, rng));
    add(p + "ffn2.b", Tensor::zeros({D}));
  }
  add("dit.unpatch_cam.w", fan_in_init({D, 4 * lat}, rng));
  add("dit.unpatch_cam.b", Tensor::zeros({lat}));
  add("dit.unpatch_lidar.w", fan_in_init({D, 4 * lat}, rng));
  add("dit.unpatch_lidar.b", Tensor::zeros({lat}));
  // Shared layout encoder, trained jointly with the transformer.
  add("layout.s1.w", fan_in_init({1 * 2 * 2 * 3, cfg.layout_c1}, rng));
  add("layout.s1.b", Tensor::zeros({cfg.layout_c1}));
  add("layout.s2.w", fan_in_init({2 * 2 * 2 * cfg.layout_c1, cfg.layout_c2}, rng));
  add("layout.s2.b", Tensor::zeros({cfg.layout_c2}));
  add("layout.s3.w", fan_in_init({2 * 2 * 2 * cfg.layout_c2, cfg.cond_channels}, rng));
  add("layout.s3.b", Tensor::zeros({cfg.cond_channels}));
}

DiTRefs bind_dit_from(const std::function<Var(const std::string&)>& at, const DiTConfig& cfg) {
  DiTRefs r;
  r.view_emb = at("dit.view_emb");
  r.text_table = at("dit.text_table");
  r.t_w1 = at("dit.time1.w");
  r.t_b1 = at("dit.time1.b");
  r.t_w2 = at("dit.time2.w");
  r.t_b2 = at("dit.time2.b");
  r.patch_cam_w = at("dit.patch_cam.w");
  r.patch_cam_b = at("dit.patch_cam.b");
  r.patch_lidar_w = at("dit.patch_lidar.w");
  r.patch_lidar_b = at("dit.patch_lidar.b");
  for (int i = 0; i < cfg.depth; ++i) {
    const std::string p = "dit.block" + std::to_string(i) + ".";
    DiTBlockRefs b;
    b.ln1g = at(p + "ln1.g");
    b.ln1b = at(p + "ln1.b");
    b.qkv_w = at(p + "qkv.w");
    b.qkv_b = at(p + "qkv.b");
    b.attn_out_w = at(p + "attn_out.w");
    b.attn_out_b = at(p + "attn_out.b");
    b.ln2g = at(p + "ln2.g");
    b.ln2b = at(p + "ln2.b");
    b.xq_w = at(p + "xq.w");
    b.xq_b = at(p + "xq.b");
    b.xkv_w = at(p + "xkv.w");
    b.xkv_b = at(p + "xkv.b");
    b.xout_w = at(p + "xout.w");
    b.xout_b = at(p + "xout.b");
    b.ln3g = at(p + "ln3.g");
    b.ln3b = at(p + "ln3.b");
    b.ffn1_w = at(p + "ffn1.w");
    b.ffn1_b = at(p + "ffn1.b");
    b.ffn2_w = at(p + "ffn2.w");
    b.ffn2_b = at(p + "ffn2.b");
    r.blocks.push_back(b);
  }
  r.unpatch_cam_w = at("dit.unpatch_cam.w");
  r.unpatch_cam_b = at("dit.unpatch_cam.b");
  r.unpatch_lidar_w = at("dit.unpatch_lidar.w");
  r.unpatch_lidar_b = at("dit.unpatch_lidar.b");
  r.layout = {at("layout.s1.w"), at("layout.s1.b"), at("layout.s2.w"),
              at("layout.s2.b"), at("layout.s3.w"), at("layout.s3.b")};
  return r;
}

DiTRefs bind_dit(Tape& tape, const ParamStore& store, const DiTConfig& cfg, bool requires_grad) {
  return bind_dit_from(
      [&](const std::string& name) { return tape.leaf(store.get(name), requires_grad); }, cfg);
}

Var assemble_modality_input(Var z_t, Var emb, Var layout_latent, Var frame0) {
  Tape* tp = z_t.tape;
  const Shape& s = z_t.shape();
  require(s.size() == 5, "assemble: z_t must be [N,F,h,w,C]");
  const int64_t N = s[0], F = s[1], h = s[2], w = s[3];
  const Shape& ls = layout_latent.shape();
  require(ls[0] == N && ls[1] == F && ls[2] == h && ls[3] == w,
          "assemble: layout latent extents " + shape_str(ls) + " do not match z_t " + shape_str(s));
  const Shape& fs = frame0.shape();
  require(fs[0] == N && fs[1] == 1 && fs[2] == h && fs[3] == w && fs[4] == s[4],
          "assemble: frame0 extents " + shape_str(fs) + " do not match z_t " + shape_str(s));
  const int64_t ce = emb.shape()[1];
  Var emb_b = add(tp->constant(Tensor::zeros({N, F, h, w, ce})), reshape(emb, {N, 1, 1, 1, ce}));
  Var f0_b = add(tp->constant(Tensor::zeros(s)), frame0);
  Tensor ind({N, F, h, w, 1});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t i = 0; i < h * w; ++i) ind[n * F * h * w + i] = 1.0;  // latent frame 0 only
  return concat({z_t, emb_b, layout_latent, f0_b, tp->constant(std::move(ind))}, -1);
}

Var patchify_tokens(Var x, Var w, Var b) {
  Var y = patch_project(x, 1, 2, 2, w, b);
  const Shape& s = y.shape();
  return reshape(y, {s[0], s[1] * s[2] * s[3], s[4]});
}

Var unpatchify_tokens(Var tokens, int frames, int grid_h, int grid_w, Var w, Var b) {
  const Shape& s = tokens.shape();
  require(s.size() == 3 && s[1] == static_cast<int64_t>(frames) * grid_h * grid_w,
          "unpatchify: token count " + shape_str(s) + " does not match grid " +
              std::to_string(frames) + "x" + std::to_string(grid_h) + "x" + std::to_string(grid_w));
  Var grid = reshape(tokens, {s[0], frames, grid_h, grid_w, s[2]});
  return patch_unproject(grid, 1, 2, 2, w, b);
}

TokenIds dit_token_ids(const DiTConfig& cfg) {
  TokenIds ids;
  const int F = cfg.latent_frames();
  const int gh = cfg.cam_latent_h / 2, gw = cfg.cam_latent_w / 2;
  for (int v = 0; v < cfg.views; ++v)
    for (int t = 0; t < F; ++t)
      for (int h = 0; h < gh; ++h)
        for (int w = 0; w < gw; ++w) {
          ids.axis0.push_back(v);
          ids.t.push_back(t);
          ids.h.push_back(h);
          ids.w.push_back(w);
        }
  const int lh = cfg.lidar_latent_h / 2, lw = cfg.lidar_latent_w / 2;
  for (int t = 0; t < F; ++t)
    for (int h = 0; h < lh; ++h)
      for (int w = 0; w < lw; ++w) {
        ids.axis0.push_back(cfg.views);  // distinct modality slot
        ids.t.push_back(t);
        ids.h.push_back(h);
        ids.w.push_back(w);
      }
  return ids;
}

std::pair<Tensor, Tensor> build_rope_tables(const TokenIds& ids, int head_dim) {
  require(head_dim % 2 == 0, "rope: head_dim must be even");
  const int64_t L = static_cast<int64_t>(ids.size());
  const int pairs = head_dim / 2;
  Tensor cos_t({L, head_dim}), sin_t({L, head_dim});
  for (int j = 0; j < pairs; ++j) {
    const int axis = j % 4;
    const int k = j / 4;
    const int pairs_for_axis = (pairs - axis - 1) / 4 + 1;
    const double freq = std::pow(10000.0, -static_cast<double>(k) / pairs_for_axis);
    for (int64_t l = 0; l < L; ++l) {
      const auto& src = axis == 0 ? ids.axis0 : axis == 1 ? ids.t : axis == 2 ? ids.h : ids.w;
      const double angle = static_cast<double>(src[static_cast<size_t>(l)]) * freq;
      const double c = std::cos(angle), s = std::sin(angle);
      cos_t[l * head_dim + 2 * j] = c;
      cos_t[l * head_dim + 2 * j + 1] = c;
      sin_t[l * head_dim + 2 * j] = s;
      sin_t[l * head_dim + 2 * j + 1] = s;
    }
  }
  return {std::move(cos_t), std::move(sin_t)};
}

namespace {

Var split_heads(Var x, int heads) {  // [B,L,D] -> [B,heads,L,dh]
  const Shape& s = x.shape();
  const int64_t dh = s[2] / heads;
  return permute(reshape(x, {s[0], s[1], heads, dh}), {0, 2, 1, 3});
}

Var merge_heads(Var x) {  // [B,heads,L,dh] -> [B,L,D]
  const Shape& s = x.shape();
  return reshape(permute(x, {0, 2, 1, 3}), {s[0], s[2], s[1] * s[3]});
}

Var apply_rope(Var x, Var cos_v, Var sin_v) {
  return add(mul(x, cos_v), mul(rotate_half(x), sin_v));
}

}  // namespace

Var attention_with_rope(Var x, Var qkv_w, Var qkv_b, Var out_w, Var out_b, int heads,
                        const Tensor& rope_cos, const Tensor& rope_sin) {
  Tape* tp = x.tape;
  const int64_t D = x.shape()[2];
  require(rope_cos.shape()[0] == x.shape()[1], "attention: rope table length mismatch");
  Var qkv = add(matmul(x, qkv_w), qkv_b);
  Var q = split_heads(slice(qkv, -1, 0, D), heads);
  Var k = split_heads(slice(qkv, -1, D, D), heads);
  Var v = split_heads(slice(qkv, -1, 2 * D, D), heads);
  Var cos_v = tp->constant(rope_cos);
  Var sin_v = tp->constant(rope_sin);
  q = apply_rope(q, cos_v, sin_v);
  k = apply_rope(k, cos_v, sin_v);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(D / heads));
  Var scores = scale(matmul(q, permute(k, {0, 1, 3, 2})), inv_sqrt);
  Var att = softmax(scores, -1);
  Var o = merge_heads(matmul(att, v));
  return add(matmul(o, out_w), out_b);
}

Var cross_attention(Var x, Var ctx, Var q_w, Var q_b, Var kv_w, Var kv_b, Var out_w, Var out_b,
                    int heads) {
  const int64_t D = x.shape()[2];
  Var q = split_heads(add(matmul(x, q_w), q_b), heads);
  Var kv = add(matmul(ctx, kv_w), kv_b);
  Var k = split_heads(slice(kv, -1, 0, D), heads);
  Var v = split_heads(slice(kv, -1, D, D), heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(D / heads));
  Var scores = scale(matmul(q, permute(k, {0, 1, 3, 2})), inv_sqrt);
  Var att = softmax(scores, -1);
  Var o = merge_heads(matmul(att, v));
  return add(matmul(o, out_w), out_b);
}

TokenBatch block_forward(const TokenBatch& tb, const TextContext& text, Var t_emb,
                         const DiTBlockRefs& blk, const DiTConfig& cfg, const Tensor& rope_cos,
                         const Tensor& rope_sin) {
  const int64_t B = tb.lidar.shape()[0];
  const int64_t Lc = tb.cam.shape()[1];
  const int64_t Ll = tb.lidar.shape()[1];
  const int64_t D = cfg.dim;
  Var x = concat({tb.cam, tb.lidar}, 1);
  Var h1 = add(layernorm(x, blk.ln1g, blk.ln1b), t_emb);
  x = add(x, attention_with_rope(h1, blk.qkv_w, blk.qkv_b, blk.attn_out_w, blk.attn_out_b,
                                 cfg.heads, rope_cos, rope_sin));
  Var cam = reshape(slice(x, 1, 0, Lc), {B * cfg.views, Lc / cfg.views, D});
  Var lid = slice(x, 1, Lc, Ll);
  cam = add(cam, cross_attention(layernorm(cam, blk.ln2g, blk.ln2b), text.cam, blk.xq_w, blk.xq_b,
                                 blk.xkv_w, blk.xkv_b, blk.xout_w, blk.xout_b, cfg.heads));
  lid = add(lid, cross_attention(layernorm(lid, blk.ln2g, blk.ln2b), text.lidar, blk.xq_w, blk.xq_b,
                                 blk.xkv_w, blk.xkv_b, blk.xout_w, blk.xout_b, cfg.heads));
  cam = reshape(cam, {B, Lc, D});
  x = concat({cam, lid}, 1);
  Var ff = matmul(gelu(add(matmul(layernorm(x, blk.ln3g, blk.ln3b), blk.ffn1_w), blk.ffn1_b)),
                  blk.ffn2_w);
  x = add(x, add(ff, blk.ffn2_b));
  return {slice(x, 1, 0, Lc), slice(x, 1, Lc, Ll)};
}

DiTOutput model_forward(const DiTRefs& refs, const DiTConfig& cfg, Var z_t_cam, Var z_t_lidar,
                        const DiTConds& conds, double timestep) {
  cfg.validate();
  Tape* tp = z_t_cam.tape;
  const int64_t B = z_t_lidar.shape()[0];
  const int64_t BV = z_t_cam.shape()[0];
  require(BV == B * cfg.views, "model_forward: camera batch " + std::to_string(BV) +
                                   " is not batch*views with views=" + std::to_string(cfg.views));
  const int64_t F = cfg.latent_frames();
  require(z_t_cam.shape()[1] == F && z_t_lidar.shape()[1] == F,
          "model_forward: latent frame count mismatch");

  // Layout conditioning latents (trained jointly through these ops).
  Var lat_cam = encode_layout(tp->constant(conds.layout_cam), refs.layout);
  Var lat_lid = encode_layout(tp->constant(conds.layout_lidar), refs.layout);

  std::vector<int64_t> cam_view_ids(static_cast<size_t>(BV));
  for (int64_t i = 0; i < BV; ++i) cam_view_ids[static_cast<size_t>(i)] = i % cfg.views;
  Var emb_cam = embed_rows(refs.view_emb, cam_view_ids);
  Var emb_lid = embed_rows(refs.view_emb, std::vector<int64_t>(static_cast<size_t>(B), cfg.views));

  Var in_cam = assemble_modality_input(z_t_cam, emb_cam, lat_cam, tp->constant(conds.frame0_cam));
  Var in_lid = assemble_modality_input(z_t_lidar, emb_lid, lat_lid, tp->constant(conds.frame0_lidar));

  Var tok_cam = patchify_tokens(in_cam, refs.patch_cam_w, refs.patch_cam_b);
  tok_cam = reshape(tok_cam, {B, static_cast<int64_t>(cfg.views) * cfg.cam_tokens_per_view(), cfg.dim});
  Var tok_lid = patchify_tokens(in_lid, refs.patch_lidar_w, refs.patch_lidar_b);

  // Projected sinusoidal timestep embedding, added to every token pre-attention.
  Var te = tp->constant(sinusoidal_embedding(timestep, cfg.dim).reshaped({1, cfg.dim}));
  te = add(matmul(gelu(add(matmul(te, refs.t_w1), refs.t_b1)), refs.t_w2), refs.t_b2);
  te = reshape(te, {1, 1, cfg.dim});

  const TokenIds ids = dit_token_ids(cfg);
  auto tables = build_rope_tables(ids, cfg.dim / cfg.heads);

  require(conds.text_ids_cam.size() == static_cast<size_t>(BV) * cfg.n_text_tokens,
          "model_forward: camera text id count mismatch");
  require(conds.text_ids_lidar.size() == static_cast<size_t>(B) * cfg.n_text_tokens,
          "model_forward: lidar text id count mismatch");
  TextContext text;
  text.cam = reshape(embed_rows(refs.text_table, conds.text_ids_cam),
                     {BV, cfg.n_text_tokens, cfg.text_dim});
  text.lidar = reshape(embed_rows(refs.text_table, conds.text_ids_lidar),
                       {B, cfg.n_text_tokens, cfg.text_dim});

  TokenBatch tb{tok_cam, tok_lid};
  for (const DiTBlockRefs& blk : refs.blocks)
    tb = block_forward(tb, text, te, blk, cfg, tables.first, tables.second);

  Var cam_tokens = reshape(tb.cam, {BV, cfg.cam_tokens_per_view(), cfg.dim});
  DiTOutput out;
  out.u_cam = unpatchify_tokens(cam_tokens, static_cast<int>(F), cfg.cam_latent_h / 2,
                                cfg.cam_latent_w / 2, refs.unpatch_cam_w, refs.unpatch_cam_b);
  out.u_lidar = unpatchify_tokens(tb.lidar, static_cast<int>(F), cfg.lidar_latent_h / 2,
                                  cfg.lidar_latent_w / 2, refs.unpatch_lidar_w, refs.unpatch_lidar_b);
  return out;
}

}  // namespace mmw

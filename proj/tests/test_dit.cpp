#include "mmworld/dit.hpp"

#include <gtest/gtest.h>

#include "mmworld/objectives.hpp"

#include <cmath>
#include <unordered_map>

using namespace mmw;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

DiTConfig micro_config() {
  DiTConfig cfg;
  cfg.views = 2;
  cfg.frames_t = 4;
  cfg.cam_latent_h = cfg.cam_latent_w = 4;
  cfg.lidar_latent_h = 4;
  cfg.lidar_latent_w = 4;
  cfg.latent_channels = 2;
  cfg.cond_channels = 2;
  cfg.emb_channels = 2;
  cfg.dim = 16;
  cfg.depth = 1;
  cfg.heads = 2;
  cfg.text_dim = 8;
  cfg.n_text_tokens = 4;
  cfg.text_vocab = 64;
  cfg.layout_c1 = 4;
  cfg.layout_c2 = 4;
  return cfg;
}

struct MicroSetup {
  DiTConfig cfg;
  ParamStore store;
  DiTConds conds;
  Tensor z_cam, z_lidar;
};

MicroSetup make_setup(uint64_t seed, bool zero_out) {
  MicroSetup s;
  s.cfg = micro_config();
  Rng rng(seed);
  init_dit_params(s.store, s.cfg, rng, zero_out);
  const int F = s.cfg.latent_frames();
  s.conds.layout_cam = random_tensor({2, 5, 32, 32, 3}, rng, 0.0, 1.0);
  s.conds.layout_lidar = random_tensor({1, 5, 32, 32, 3}, rng, 0.0, 1.0);
  s.conds.frame0_cam = random_tensor({2, 1, 4, 4, 2}, rng);
  s.conds.frame0_lidar = random_tensor({1, 1, 4, 4, 2}, rng);
  for (int i = 0; i < 2 * s.cfg.n_text_tokens; ++i)
    s.conds.text_ids_cam.push_back(rng.uniform_int(s.cfg.text_vocab));
  for (int i = 0; i < s.cfg.n_text_tokens; ++i)
    s.conds.text_ids_lidar.push_back(rng.uniform_int(s.cfg.text_vocab));
  s.z_cam = random_tensor({2, F, 4, 4, 2}, rng);
  s.z_lidar = random_tensor({1, F, 4, 4, 2}, rng);
  return s;
}

}  // namespace

TEST(DiTConfigChecks, RejectsBadGeometry) {
  DiTConfig cfg = micro_config();
  cfg.frames_t = 3;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = micro_config();
  cfg.dim = 15;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = micro_config();
  cfg.heads = 8;  // head dim 2 is fine; make it odd instead
  cfg.dim = 24;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);  // head dim 3 odd
  cfg = micro_config();
  cfg.cam_latent_h = 3;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(Assemble, ChannelBookkeeping) {
  const DiTConfig cfg = micro_config();
  Tape tape;
  Rng rng(1);
  Var z = tape.constant(random_tensor({2, 2, 4, 4, 2}, rng));
  Var emb = tape.constant(random_tensor({2, 2}, rng));
  Var lat = tape.constant(random_tensor({2, 2, 4, 4, 2}, rng));
  Var f0 = tape.constant(random_tensor({2, 1, 4, 4, 2}, rng));
  Var out = assemble_modality_input(z, emb, lat, f0);
  EXPECT_EQ(out.shape(), (Shape{2, 2, 4, 4, 2 + 2 + 2 + 2 + 1}));
  EXPECT_EQ(out.shape()[4], cfg.input_channels());
}

TEST(Assemble, ViewsDifferOnlyInEmbeddingChannels) {
  Tape tape;
  Rng rng(2);
  // Identical per-view content, distinct embedding rows.
  Tensor z1 = random_tensor({1, 2, 4, 4, 2}, rng);
  Tensor lat1 = random_tensor({1, 2, 4, 4, 2}, rng);
  Tensor f01 = random_tensor({1, 1, 4, 4, 2}, rng);
  Var z = tape.constant(concat({z1, z1}, 0));
  Var lat = tape.constant(concat({lat1, lat1}, 0));
  Var f0 = tape.constant(concat({f01, f01}, 0));
  Var emb = tape.constant(Tensor({2, 2}, {1.0, 2.0, 3.0, 4.0}));
  const Tensor out = assemble_modality_input(z, emb, lat, f0).value();
  const int64_t C = out.shape()[4];
  for (int64_t t = 0; t < 2; ++t)
    for (int64_t h = 0; h < 4; ++h)
      for (int64_t w = 0; w < 4; ++w)
        for (int64_t c = 0; c < C; ++c) {
          const double v0 = out.at({0, t, h, w, c});
          const double v1 = out.at({1, t, h, w, c});
          if (c >= 2 && c < 4) {  // embedding slots
            EXPECT_NE(v0, v1);
          } else {
            EXPECT_EQ(v0, v1);
          }
        }
}

TEST(Assemble, IndicatorSumsToSpatialArea) {
  Tape tape;
  Rng rng(3);
  Var z = tape.constant(random_tensor({2, 3, 4, 6, 2}, rng));
  Var emb = tape.constant(random_tensor({2, 2}, rng));
  Var lat = tape.constant(random_tensor({2, 3, 4, 6, 2}, rng));
  Var f0 = tape.constant(random_tensor({2, 1, 4, 6, 2}, rng));
  const Tensor out = assemble_modality_input(z, emb, lat, f0).value();
  const int64_t C = out.shape()[4];
  for (int64_t n = 0; n < 2; ++n) {
    double s = 0.0;
    for (int64_t t = 0; t < 3; ++t)
      for (int64_t h = 0; h < 4; ++h)
        for (int64_t w = 0; w < 6; ++w) s += out.at({n, t, h, w, C - 1});
    EXPECT_DOUBLE_EQ(s, 4.0 * 6.0);  // ones exactly on latent frame 0
  }
}

TEST(Patchify, TokenCountAndViewMajorOrder) {
  // V=2, latent 2x4x4 per view: L_C = 2*2*2 = 8 tokens per view.
  Tape tape;
  Rng rng(4);
  const int64_t D = 6;
  Tensor w = random_tensor({1 * 2 * 2 * 3, D}, rng);
  Tensor b = random_tensor({D}, rng);
  Tensor x0 = random_tensor({1, 2, 4, 4, 3}, rng);
  Tensor x1 = random_tensor({1, 2, 4, 4, 3}, rng);
  Var tokens = patchify_tokens(tape.constant(concat({x0, x1}, 0)), tape.constant(w), tape.constant(b));
  EXPECT_EQ(tokens.shape(), (Shape{2, 8, D}));
  // Flattening both views into one sequence keeps view-0 tokens first.
  Var joint = reshape(tokens, {1, 16, D});
  Var v0 = patchify_tokens(tape.constant(x0), tape.constant(w), tape.constant(b));
  for (int64_t l = 0; l < 8; ++l)
    for (int64_t d = 0; d < D; ++d)
      EXPECT_EQ(joint.value().at({0, l, d}), v0.value().at({0, l, d}));
}

TEST(Patchify, OrthonormalWeightsRoundTrip) {
  // Rows of the patchify weight orthonormal => transposed unpatchify weights
  // reconstruct the input channels.
  Rng rng(5);
  const int64_t Cin = 2, D = 16, cell = 4 * Cin;  // patch vector length 8 <= D
  Tensor w({cell, D});
  {
    // Gram-Schmidt on random rows.
    std::vector<std::vector<double>> rows;
    for (int64_t r = 0; r < cell; ++r) {
      std::vector<double> v(D);
      for (auto& x : v) x = rng.normal();
      for (const auto& prev : rows) {
        double dot = 0;
        for (int64_t i = 0; i < D; ++i) dot += v[i] * prev[i];
        for (int64_t i = 0; i < D; ++i) v[i] -= dot * prev[i];
      }
      double norm = 0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
      for (double& x : v) x /= norm;
      rows.push_back(v);
      for (int64_t i = 0; i < D; ++i) w[r * D + i] = v[i];
    }
  }
  Tensor u({D, cell});
  for (int64_t r = 0; r < cell; ++r)
    for (int64_t d = 0; d < D; ++d) u[d * cell + r] = w[r * D + d];
  Tape tape;
  Tensor x = random_tensor({1, 2, 4, 4, Cin}, rng);
  Var tokens = patchify_tokens(tape.constant(x), tape.constant(w), tape.constant(Tensor::zeros({D})));
  Var back = unpatchify_tokens(tokens, 2, 2, 2, tape.constant(u), tape.constant(Tensor::zeros({Cin})));
  ASSERT_EQ(back.shape(), x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(back.value()[i], x[i], 1e-5);
}

TEST(Rope, TablesCoverAllAxesAndPair) {
  DiTConfig cfg = micro_config();
  TokenIds ids = dit_token_ids(cfg);
  EXPECT_EQ(ids.size(), static_cast<size_t>(cfg.views * cfg.cam_tokens_per_view() + cfg.lidar_tokens()));
  // LiDAR tokens carry the distinct modality slot on axis0.
  EXPECT_EQ(ids.axis0.back(), cfg.views);
  auto [cos_t, sin_t] = build_rope_tables(ids, 8);
  EXPECT_EQ(cos_t.shape(), (Shape{static_cast<int64_t>(ids.size()), 8}));
  for (int64_t i = 0; i < cos_t.numel(); i += 2) {
    EXPECT_EQ(cos_t[i], cos_t[i + 1]);  // pairs share the angle
    EXPECT_NEAR(cos_t[i] * cos_t[i] + sin_t[i] * sin_t[i], 1.0, 1e-12);
  }
}

TEST(Attention, JointSelfAttentionIsPermutationEquivariant) {
  Rng rng(6);
  const int64_t L = 10, D = 16;
  const int heads = 2;
  Tensor x = random_tensor({1, L, D}, rng);
  TokenIds ids;
  for (int64_t l = 0; l < L; ++l) {
    ids.axis0.push_back(rng.uniform_int(3));
    ids.t.push_back(rng.uniform_int(4));
    ids.h.push_back(rng.uniform_int(4));
    ids.w.push_back(rng.uniform_int(4));
  }
  Tensor qkv_w = random_tensor({D, 3 * D}, rng, -0.3, 0.3);
  Tensor qkv_b = random_tensor({3 * D}, rng, -0.1, 0.1);
  Tensor out_w = random_tensor({D, D}, rng, -0.3, 0.3);
  Tensor out_b = random_tensor({D}, rng, -0.1, 0.1);
  auto run = [&](const Tensor& input, const TokenIds& tok_ids) {
    Tape tape;
    auto tables = build_rope_tables(tok_ids, D / heads);
    Var out = attention_with_rope(tape.constant(input), tape.constant(qkv_w), tape.constant(qkv_b),
                                  tape.constant(out_w), tape.constant(out_b), heads, tables.first,
                                  tables.second);
    return out.value();
  };
  const Tensor base = run(x, ids);
  // Random permutation of tokens and their position ids together.
  std::vector<int64_t> perm(L);
  for (int64_t i = 0; i < L; ++i) perm[static_cast<size_t>(i)] = i;
  for (int64_t i = L - 1; i > 0; --i)
    std::swap(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(rng.uniform_int(i + 1))]);
  Tensor xp({1, L, D});
  TokenIds idsp;
  idsp.axis0.resize(L);
  idsp.t.resize(L);
  idsp.h.resize(L);
  idsp.w.resize(L);
  for (int64_t i = 0; i < L; ++i) {
    const int64_t src = perm[static_cast<size_t>(i)];
    for (int64_t d = 0; d < D; ++d) xp[i * D + d] = x[src * D + d];
    idsp.axis0[static_cast<size_t>(i)] = ids.axis0[static_cast<size_t>(src)];
    idsp.t[static_cast<size_t>(i)] = ids.t[static_cast<size_t>(src)];
    idsp.h[static_cast<size_t>(i)] = ids.h[static_cast<size_t>(src)];
    idsp.w[static_cast<size_t>(i)] = ids.w[static_cast<size_t>(src)];
  }
  const Tensor permuted = run(xp, idsp);
  for (int64_t i = 0; i < L; ++i) {
    const int64_t src = perm[static_cast<size_t>(i)];
    for (int64_t d = 0; d < D; ++d)
      EXPECT_NEAR(permuted[i * D + d], base[src * D + d], 1e-9);
  }
}

TEST(ModelForward, OutputShapesMatchInputs) {
  MicroSetup s = make_setup(7, false);
  Tape tape;
  DiTRefs refs = bind_dit(tape, s.store, s.cfg, false);
  DiTOutput u = model_forward(refs, s.cfg, tape.constant(s.z_cam), tape.constant(s.z_lidar),
                              s.conds, 0.3);
  EXPECT_EQ(u.u_cam.shape(), s.z_cam.shape());
  EXPECT_EQ(u.u_lidar.shape(), s.z_lidar.shape());
  EXPECT_TRUE(u.u_cam.value().all_finite());
  EXPECT_TRUE(u.u_lidar.value().all_finite());
}

TEST(ModelForward, ZeroInitReducesToUnpatchifyOfPatchify) {
  MicroSetup s = make_setup(8, /*zero_out=*/true);
  Tape tape;
  DiTRefs refs = bind_dit(tape, s.store, s.cfg, false);
  DiTOutput u = model_forward(refs, s.cfg, tape.constant(s.z_cam), tape.constant(s.z_lidar),
                              s.conds, 0.7);
  // The same linear map composed by hand.
  Var lat_cam = encode_layout(tape.constant(s.conds.layout_cam), refs.layout);
  std::vector<int64_t> view_ids = {0, 1};
  Var emb = embed_rows(refs.view_emb, view_ids);
  Var assembled = assemble_modality_input(tape.constant(s.z_cam), emb, lat_cam,
                                          tape.constant(s.conds.frame0_cam));
  Var tokens = patchify_tokens(assembled, refs.patch_cam_w, refs.patch_cam_b);
  Var direct = unpatchify_tokens(tokens, s.cfg.latent_frames(), 2, 2, refs.unpatch_cam_w,
                                 refs.unpatch_cam_b);
  ASSERT_EQ(direct.shape(), u.u_cam.shape());
  for (int64_t i = 0; i < direct.value().numel(); ++i)
    EXPECT_NEAR(u.u_cam.value()[i], direct.value()[i], 1e-12);
}

TEST(ModelForward, CrossModalCouplingBothDirections) {
  MicroSetup s = make_setup(9, false);
  auto forward = [&](const Tensor& zc, const Tensor& zl, const DiTConds& conds) {
    Tape tape;
    DiTRefs refs = bind_dit(tape, s.store, s.cfg, false);
    DiTOutput u = model_forward(refs, s.cfg, tape.constant(zc), tape.constant(zl), conds, 0.4);
    return std::make_pair(u.u_cam.value(), u.u_lidar.value());
  };
  const auto base = forward(s.z_cam, s.z_lidar, s.conds);
  // Perturb the LiDAR latent: the camera prediction must move.
  Tensor zl_p = s.z_lidar;
  zl_p[0] += 0.5;
  const auto lidar_perturbed = forward(s.z_cam, zl_p, s.conds);
  EXPECT_GT(max_abs(sub(lidar_perturbed.first, base.first)), 1e-8);
  // Perturb the camera latent: the LiDAR prediction must move.
  Tensor zc_p = s.z_cam;
  zc_p[0] += 0.5;
  const auto cam_perturbed = forward(zc_p, s.z_lidar, s.conds);
  EXPECT_GT(max_abs(sub(cam_perturbed.second, base.second)), 1e-8);
  // Perturb only the LiDAR layout condition: the camera prediction must move.
  DiTConds conds_p = s.conds;
  conds_p.layout_lidar[0] += 0.5;
  const auto layout_perturbed = forward(s.z_cam, s.z_lidar, conds_p);
  EXPECT_GT(max_abs(sub(layout_perturbed.first, base.first)), 1e-8);
}

TEST(ModelForward, GradCheckThroughFlowLoss) {
  MicroSetup s = make_setup(10, false);
  Rng rng(11);
  const int F = s.cfg.latent_frames();
  Tensor z0c = random_tensor({2, F, 4, 4, 2}, rng), z1c = random_tensor({2, F, 4, 4, 2}, rng);
  Tensor z0l = random_tensor({1, F, 4, 4, 2}, rng), z1l = random_tensor({1, F, 4, 4, 2}, rng);
  const FlowSample fs = make_flow_sample(z0c, z0l, z1c, z1l, 0.35);
  std::vector<Tensor> params;
  for (const std::string& name : s.store.names()) params.push_back(s.store.get(name));
  auto f = [&](Tape& tape, const std::vector<Var>& vars) {
    std::unordered_map<std::string, Var> by_name;
    for (size_t i = 0; i < s.store.names().size(); ++i) by_name[s.store.names()[i]] = vars[i];
    DiTRefs refs = bind_dit_from([&](const std::string& n) { return by_name.at(n); }, s.cfg);
    DiTOutput u = model_forward(refs, s.cfg, tape.constant(fs.z_t_cam), tape.constant(fs.z_t_lidar),
                                s.conds, fs.t);
    return flow_loss(u.u_cam, u.u_lidar, fs);
  };
  EXPECT_LT(grad_check(f, params, 1e-3, 4, 12), 1e-3);
}

TEST(ModelForward, ShapeRoundTripOverRandomConfigs) {
  Rng rng(13);
  for (int trial = 0; trial < 8; ++trial) {
    DiTConfig cfg;
    cfg.views = 1 + static_cast<int>(rng.uniform_int(3));
    cfg.frames_t = 4 * (1 + static_cast<int>(rng.uniform_int(2)));
    cfg.cam_latent_h = 2 * (1 + static_cast<int>(rng.uniform_int(2)));
    cfg.cam_latent_w = 2 * (1 + static_cast<int>(rng.uniform_int(2)));
    cfg.lidar_latent_h = 2 * (1 + static_cast<int>(rng.uniform_int(2)));
    cfg.lidar_latent_w = 2 * (1 + static_cast<int>(rng.uniform_int(2)));
    cfg.latent_channels = 1 + static_cast<int>(rng.uniform_int(3));
    cfg.cond_channels = 1 + static_cast<int>(rng.uniform_int(2));
    cfg.emb_channels = 1 + static_cast<int>(rng.uniform_int(2));
    cfg.heads = 1 + static_cast<int>(rng.uniform_int(2));
    cfg.dim = cfg.heads * 2 * (2 + static_cast<int>(rng.uniform_int(3)));
    cfg.depth = 1;
    cfg.text_dim = 4;
    cfg.n_text_tokens = 2;
    cfg.text_vocab = 16;
    cfg.layout_c1 = 2;
    cfg.layout_c2 = 2;
    cfg.validate();
    ParamStore store;
    Rng init_rng(100 + static_cast<uint64_t>(trial));
    init_dit_params(store, cfg, init_rng, false);
    const int F = cfg.latent_frames();
    DiTConds conds;
    conds.layout_cam = random_tensor({cfg.views, 1 + cfg.frames_t, 8 * cfg.cam_latent_h,
                                      8 * cfg.cam_latent_w, 3}, rng, 0.0, 1.0);
    conds.layout_lidar = random_tensor({1, 1 + cfg.frames_t, 8 * cfg.lidar_latent_h,
                                        8 * cfg.lidar_latent_w, 3}, rng, 0.0, 1.0);
    conds.frame0_cam =
        random_tensor({cfg.views, 1, cfg.cam_latent_h, cfg.cam_latent_w, cfg.latent_channels}, rng);
    conds.frame0_lidar =
        random_tensor({1, 1, cfg.lidar_latent_h, cfg.lidar_latent_w, cfg.latent_channels}, rng);
    for (int i = 0; i < cfg.views * cfg.n_text_tokens; ++i)
      conds.text_ids_cam.push_back(rng.uniform_int(cfg.text_vocab));
    for (int i = 0; i < cfg.n_text_tokens; ++i)
      conds.text_ids_lidar.push_back(rng.uniform_int(cfg.text_vocab));
    Tensor zc =
        random_tensor({cfg.views, F, cfg.cam_latent_h, cfg.cam_latent_w, cfg.latent_channels}, rng);
    Tensor zl =
        random_tensor({1, F, cfg.lidar_latent_h, cfg.lidar_latent_w, cfg.latent_channels}, rng);
    Tape tape;
    DiTRefs refs = bind_dit(tape, store, cfg, false);
    DiTOutput u = model_forward(refs, cfg, tape.constant(zc), tape.constant(zl), conds, 0.5);
    EXPECT_EQ(u.u_cam.shape(), zc.shape());
    EXPECT_EQ(u.u_lidar.shape(), zl.shape());
  }
}

#include "mmworld/vae.hpp"

#include <gtest/gtest.h>

#include "mmworld/trainer.hpp"

using namespace mmw;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

ParamStore make_store(const VaeConfig& cfg, uint64_t seed) {
  ParamStore store;
  Rng rng(seed);
  init_vae_params(store, "vae", cfg, rng);
  return store;
}

}  // namespace

TEST(VaeShapes, FullScaleLidarLatentFollowsCompressionFormula) {
  VaeConfig cfg;
  cfg.in_channels = 1;
  cfg.c1 = 4;
  cfg.c2 = 4;
  cfg.c3 = 4;
  cfg.latent_channels = 2;
  ParamStore store = make_store(cfg, 1);
  Rng rng(2);
  // 17 frames of the repeated 128x1024 range grid -> latent 5 x 16 x 128.
  Tensor video = random_tensor({1, 17, 128, 1024, 1}, rng);
  Tape tape;
  GaussianPosterior post = vae_encode(tape.constant(video), bind_vae(tape, store, "vae", false));
  EXPECT_EQ(post.mu.shape(), (Shape{1, 5, 16, 128, 2}));
  EXPECT_EQ(post.logvar.shape(), (Shape{1, 5, 16, 128, 2}));
}

TEST(VaeShapes, DecodeInvertsEncodeShapes) {
  VaeConfig cfg;
  cfg.in_channels = 3;
  cfg.latent_channels = 4;
  ParamStore store = make_store(cfg, 3);
  Rng rng(4);
  Tensor video = random_tensor({2, 5, 16, 24, 3}, rng);
  Tape tape;
  VaeRefs refs = bind_vae(tape, store, "vae", false);
  GaussianPosterior post = vae_encode(tape.constant(video), refs);
  EXPECT_EQ(post.mu.shape(), (Shape{2, 2, 2, 3, 4}));
  Var rec = vae_decode(post.mu, refs);
  EXPECT_EQ(rec.shape(), video.shape());
}

TEST(VaeShapes, RejectsBadExtents) {
  VaeConfig cfg;
  ParamStore store = make_store(cfg, 5);
  Tape tape;
  VaeRefs refs = bind_vae(tape, store, "vae", false);
  EXPECT_THROW(vae_encode(tape.constant(Tensor::zeros({1, 4, 16, 16, 1})), refs),
               std::invalid_argument);  // 1+T with T=3
  EXPECT_THROW(vae_encode(tape.constant(Tensor::zeros({1, 5, 12, 16, 1})), refs),
               std::invalid_argument);  // H % 8 != 0
}

TEST(VaeShapes, EncoderIsCausalInTime) {
  VaeConfig cfg;
  cfg.latent_channels = 2;
  ParamStore store = make_store(cfg, 6);
  Rng rng(7);
  Tensor a = random_tensor({1, 5, 8, 8, 1}, rng);
  Tensor b = a;
  for (int64_t i = 8 * 8; i < b.numel(); ++i) b[i] += 0.25;  // frames 1..T only
  Tape ta, tb;
  Tensor mu_a = vae_encode(ta.constant(a), bind_vae(ta, store, "vae", false)).mu.value();
  Tensor mu_b = vae_encode(tb.constant(b), bind_vae(tb, store, "vae", false)).mu.value();
  Tensor first_a = slice(mu_a, 1, 0, 1);
  Tensor first_b = slice(mu_b, 1, 0, 1);
  for (int64_t i = 0; i < first_a.numel(); ++i) EXPECT_EQ(first_a[i], first_b[i]);
  EXPECT_GT(max_abs(sub(mu_a, mu_b)), 0.0);
}

TEST(VaeShapes, LogvarIsClamped) {
  VaeConfig cfg;
  ParamStore store = make_store(cfg, 8);
  Rng rng(9);
  Tensor video = random_tensor({1, 1, 8, 8, 1}, rng, -1e5, 1e5);  // extreme inputs
  Tape tape;
  GaussianPosterior post = vae_encode(tape.constant(video), bind_vae(tape, store, "vae", false));
  const Tensor& lv = post.logvar.value();
  for (int64_t i = 0; i < lv.numel(); ++i) {
    EXPECT_LE(lv[i], 20.0);
    EXPECT_GE(lv[i], -30.0);
  }
}

TEST(VaeTraining, OverfitsOneFrame) {
  VaeConfig cfg;
  cfg.in_channels = 1;
  cfg.c1 = 6;
  cfg.c2 = 8;
  cfg.c3 = 12;
  cfg.latent_channels = 4;
  ParamStore store = make_store(cfg, 10);
  Rng rng(11);
  // One frame with visible structure.
  Tensor frame({1, 16, 16, 1});
  for (int64_t h = 0; h < 16; ++h)
    for (int64_t w = 0; w < 16; ++w)
      frame[h * 16 + w] = (h / 4 + w / 4) % 2 ? 0.5 : -0.5;
  VaeTrainConfig tc;
  tc.vae = cfg;
  tc.weights = {1.0, 0.0, 0.0};  // pure L1 so the trace reads as reconstruction
  tc.lr = 3e-3;
  tc.steps = 200;
  tc.batch = 1;
  tc.seed = 12;
  TrainTrace trace = train_vae(store, "vae", tc, {frame});
  EXPECT_LT(trace.final_loss, 0.10 * trace.initial_loss);
  (void)rng;
}

TEST(VaeTraining, GradCheckThroughLoss) {
  VaeConfig cfg;
  cfg.in_channels = 1;
  cfg.c1 = 2;
  cfg.c2 = 2;
  cfg.c3 = 2;
  cfg.latent_channels = 2;
  ParamStore store = make_store(cfg, 13);
  Rng rng(14);
  Tensor video = random_tensor({1, 5, 8, 8, 1}, rng);
  Tensor noise = random_tensor(
      {1, 2, 1, 1, 2}, rng, -1.0, 1.0);  // latent-shaped reparameterization draw
  std::vector<Tensor> params;
  for (const std::string& name : store.names()) params.push_back(store.get(name));
  auto f = [&](Tape& tape, const std::vector<Var>& vars) {
    std::unordered_map<std::string, Var> by_name;
    for (size_t i = 0; i < store.names().size(); ++i) by_name[store.names()[i]] = vars[i];
    VaeRefs refs = bind_vae_from([&](const std::string& n) { return by_name.at(n); }, "vae");
    Var vc = tape.constant(video);
    GaussianPosterior post = vae_encode(vc, refs);
    Var z = add(post.mu, mul(exp_(scale(post.logvar, 0.5)), tape.constant(noise)));
    Var v_hat = vae_decode(z, refs);
    return vae_loss(vc, v_hat, post, {1.0, 1e-2, 0.3}, gradient_feature_distance());
  };
  EXPECT_LT(grad_check(f, params, 1e-3, 10, 15), 1e-4);
}

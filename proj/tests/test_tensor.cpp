#include "mmworld/tensor.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <stdexcept>

#include "mmworld/rng.hpp"

using namespace mmw;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST(Elementwise, AddBasics) {
  Tensor a({2}, {1.0, 2.0});
  Tensor b({2}, {3.0, 4.0});
  Tensor c = add(a, b);
  EXPECT_DOUBLE_EQ(c[0], 4.0);
  EXPECT_DOUBLE_EQ(c[1], 6.0);
}

TEST(Elementwise, MulByOnesIsIdentity) {
  Rng rng(1);
  Tensor x = random_tensor({3, 4}, rng);
  Tensor y = mul(x, Tensor::ones({3, 4}));
  for (int64_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(y[i], x[i]);
}

TEST(Elementwise, GeluAtZeroIsZero) {
  Tensor x({1}, {0.0});
  EXPECT_DOUBLE_EQ(gelu(x)[0], 0.0);
}

TEST(Elementwise, ShapeMismatchNamesBothShapes) {
  Tensor a(Shape{2, 3});
  Tensor b(Shape{4});
  try {
    add(a, b);
    FAIL() << "expected shape error";
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4]"), std::string::npos) << msg;
  }
}

TEST(Elementwise, TrailingBroadcast) {
  // [2,3] + [3] broadcasts the vector across rows.
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b({3}, {10, 20, 30});
  Tensor c = add(a, b);
  EXPECT_DOUBLE_EQ(c[0], 11.0);
  EXPECT_DOUBLE_EQ(c[4], 25.0);
  // [2,1,3] * [4,1] -> [2,4,3]
  Tensor d = mul(Tensor::ones({2, 1, 3}), Tensor::full({4, 1}, 2.0));
  EXPECT_EQ(d.shape(), (Shape{2, 4, 3}));
  EXPECT_DOUBLE_EQ(d[0], 2.0);
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Tensor eye(Shape{3, 3});
  for (int i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
  Rng rng(2);
  Tensor a = random_tensor({3, 3}, rng);
  Tensor out = matmul(eye, a);
  for (int64_t i = 0; i < a.numel(); ++i) EXPECT_DOUBLE_EQ(out[i], a[i]);
}

TEST(Matmul, SmallHandCase) {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor b({2, 1}, {5, 6});
  Tensor c = matmul(a, b);
  EXPECT_DOUBLE_EQ(c[0], 17.0);
  EXPECT_DOUBLE_EQ(c[1], 39.0);
}

TEST(Matmul, MatchesTripleLoopOracle) {
  Rng rng(3);
  Tensor a = random_tensor({4, 5}, rng);
  Tensor b = random_tensor({5, 3}, rng);
  Tensor c = matmul(a, b);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 5; ++k) acc += static_cast<double>(a[i * 5 + k]) * b[k * 3 + j];
      const double got = c[i * 3 + j];
      EXPECT_NEAR(got, acc, 1e-6 * std::max(1.0, std::fabs(acc)));
    }
}

TEST(Matmul, BatchedAndSharedRhs) {
  Rng rng(4);
  Tensor a = random_tensor({2, 3, 4, 5}, rng);
  Tensor b2 = random_tensor({5, 6}, rng);
  Tensor c = matmul(a, b2);
  EXPECT_EQ(c.shape(), (Shape{2, 3, 4, 6}));
  // Spot-check one batch against the 2-D product.
  Tensor a0 = slice(slice(a, 0, 1, 1), 1, 2, 1).reshaped({4, 5});
  Tensor c0 = matmul(a0, b2);
  for (int64_t i = 0; i < c0.numel(); ++i)
    EXPECT_DOUBLE_EQ(c0[i], c[(1 * 3 + 2) * 24 + i]);

  EXPECT_THROW(matmul(a, random_tensor({4, 6}, rng)), std::invalid_argument);
}

TEST(Softmax, UniformInputGivesUniformOutput) {
  Tensor x(Shape{3});
  Tensor y = softmax(x, 0);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(y[i], 1.0 / 3.0, 1e-7);
}

TEST(Softmax, MaxShiftKeepsLargeLogitsFinite) {
  Tensor x({2}, {1000.0, 0.0});
  Tensor y = softmax(x, 0);
  EXPECT_TRUE(y.all_finite());
  EXPECT_NEAR(y[0], 1.0, 1e-7);
  EXPECT_NEAR(y[1], 0.0, 1e-7);
}

TEST(Softmax, RowsSumToOne) {
  Rng rng(5);
  Tensor x = random_tensor({4, 7}, rng, -5.0, 5.0);
  Tensor y = softmax(x, -1);
  for (int i = 0; i < 4; ++i) {
    double s = 0.0;
    for (int j = 0; j < 7; ++j) s += y[i * 7 + j];
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Layernorm, NormalizedLaneHasZeroMeanUnitVar) {
  Rng rng(6);
  Tensor x = random_tensor({3, 16}, rng, -2.0, 2.0);
  Tensor y = layernorm(x, Tensor::ones({16}), Tensor::zeros({16}));
  for (int i = 0; i < 3; ++i) {
    double mean = 0.0, var = 0.0;
    for (int j = 0; j < 16; ++j) mean += y[i * 16 + j];
    mean /= 16.0;
    EXPECT_LT(std::fabs(mean), 1e-6);
    for (int j = 0; j < 16; ++j) var += (y[i * 16 + j] - mean) * (y[i * 16 + j] - mean);
    var /= 16.0;
    EXPECT_NEAR(var, 1.0, 1e-3);  // eps-stabilized, slightly below 1
  }
}

TEST(PatchProject, UnitPatchWithIdentityWeightIsIdentity) {
  Rng rng(7);
  Tensor x = random_tensor({1, 2, 3, 3, 4}, rng);
  Tensor w(Shape{4, 4});
  for (int i = 0; i < 4; ++i) w[i * 4 + i] = 1.0;
  Tensor y = patch_project(x, 1, 1, 1, w, Tensor::zeros({4}));
  ASSERT_EQ(y.shape(), x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(y[i], x[i]);
}

TEST(PatchProject, SpatialPatchHalvesExtents) {
  Rng rng(8);
  Tensor x = random_tensor({1, 2, 4, 4, 3}, rng);
  Tensor w = random_tensor({1 * 2 * 2 * 3, 5}, rng);
  Tensor y = patch_project(x, 1, 2, 2, w, Tensor::zeros({5}));
  EXPECT_EQ(y.shape(), (Shape{1, 2, 2, 2, 5}));
}

TEST(PatchProject, MatchesSlidingWindowOracle) {
  Rng rng(9);
  Tensor x = random_tensor({2, 2, 4, 4, 3}, rng);
  const int pt = 1, ph = 2, pw = 2, D = 6;
  Tensor w = random_tensor({pt * ph * pw * 3, D}, rng);
  Tensor b = random_tensor({D}, rng);
  Tensor y = patch_project(x, pt, ph, pw, w, b);
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t to = 0; to < 2; ++to)
      for (int64_t ho = 0; ho < 2; ++ho)
        for (int64_t wo = 0; wo < 2; ++wo)
          for (int64_t d = 0; d < D; ++d) {
            double acc = b[d];
            int64_t pidx = 0;
            for (int64_t dt = 0; dt < pt; ++dt)
              for (int64_t dh = 0; dh < ph; ++dh)
                for (int64_t dw = 0; dw < pw; ++dw)
                  for (int64_t c = 0; c < 3; ++c, ++pidx)
                    acc += static_cast<double>(
                               x.at({n, to * pt + dt, ho * ph + dh, wo * pw + dw, c})) *
                           w[pidx * D + d];
            EXPECT_NEAR(y.at({n, to, ho, wo, d}), acc, 1e-5);
          }
}

TEST(PatchProject, RejectsIndivisibleExtents) {
  Tensor x(Shape{1, 2, 3, 4, 1});
  Tensor w(Shape{4, 2});
  EXPECT_THROW(patch_project(x, 1, 2, 2, w, Tensor::zeros({2})), std::invalid_argument);
}

TEST(Reductions, DeterministicForFixedInput) {
  Rng rng(10);
  Tensor x = random_tensor({257}, rng, -10.0, 10.0);
  const double s1 = sum_all(x);
  const double s2 = sum_all(x);
  EXPECT_EQ(s1, s2);
  Tensor y = matmul(x.reshaped({1, 257}), x.reshaped({257, 1}));
  Tensor z = matmul(x.reshaped({1, 257}), x.reshaped({257, 1}));
  EXPECT_EQ(y[0], z[0]);
}

TEST(Structure, PermuteSliceConcatRoundTrip) {
  Rng rng(11);
  Tensor x = random_tensor({2, 3, 4}, rng);
  Tensor p = permute(x, {2, 0, 1});
  EXPECT_EQ(p.shape(), (Shape{4, 2, 3}));
  EXPECT_DOUBLE_EQ(p.at({3, 1, 2}), x.at({1, 2, 3}));
  Tensor front = slice(x, 1, 0, 1);
  Tensor back = slice(x, 1, 1, 2);
  Tensor together = concat({front, back}, 1);
  for (int64_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(together[i], x[i]);
}

TEST(Structure, NnUpsampleCausalTemporalLayout) {
  Tensor x(Shape{1, 3, 1, 1, 1});
  x[0] = 1.0;
  x[1] = 2.0;
  x[2] = 3.0;
  Tensor y = nn_upsample(x, 2, 1, 1, true);
  ASSERT_EQ(y.shape(), (Shape{1, 5, 1, 1, 1}));
  const float want[] = {1, 2, 2, 3, 3};
  for (int i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(y[i], want[i]);
}

TEST(Structure, RotateHalfPairs) {
  Tensor x({1, 4}, {1, 2, 3, 4});
  Tensor y = rotate_half(x);
  EXPECT_DOUBLE_EQ(y[0], -2.0);
  EXPECT_DOUBLE_EQ(y[1], 1.0);
  EXPECT_DOUBLE_EQ(y[2], -4.0);
  EXPECT_DOUBLE_EQ(y[3], 3.0);
}

TEST(Structure, SumToShapeUndoesBroadcast) {
  Tensor g = Tensor::ones({2, 3, 4});
  Tensor r = sum_to_shape(g, {3, 1});
  EXPECT_EQ(r.shape(), (Shape{3, 1}));
  for (int64_t i = 0; i < r.numel(); ++i) EXPECT_DOUBLE_EQ(r[i], 8.0);
}

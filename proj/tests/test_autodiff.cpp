#include "mmworld/tape.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "mmworld/rng.hpp"

using namespace mmw;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

// Runs grad_check over `seeds` random draws of the given parameter shapes.
double check_over_seeds(const Builder& f, const std::vector<Shape>& shapes, int seeds,
                        double lo = -1.0, double hi = 1.0, double eps = 1e-3) {
  double worst = 0.0;
  for (int s = 0; s < seeds; ++s) {
    Rng rng(100 + static_cast<uint64_t>(s));
    std::vector<Tensor> params;
    for (const Shape& sh : shapes) params.push_back(random_tensor(sh, rng, lo, hi));
    worst = std::max(worst, grad_check(f, params, eps));
  }
  return worst;
}

}  // namespace

TEST(Backward, SumOfSquares) {
  Tape tape;
  Var x = tape.leaf(Tensor({2}, {1.0, 2.0}), true);
  Var loss = sum_all(mul(x, x));
  EXPECT_DOUBLE_EQ(loss.value()[0], 5.0);
  tape.backward(loss);
  const Tensor* g = tape.grad(x);
  ASSERT_NE(g, nullptr);
  EXPECT_DOUBLE_EQ((*g)[0], 2.0);
  EXPECT_DOUBLE_EQ((*g)[1], 4.0);
}

TEST(Backward, ConstantGraphHasZeroGrads) {
  Builder f = [](Tape& t, const std::vector<Var>& ps) {
    return sum_all(t.constant(Tensor::ones({3})));  // ignores params entirely
  };
  EXPECT_EQ(check_over_seeds(f, {{4}}, 2), 0.0);
}

TEST(Backward, NonScalarLossRejected) {
  Tape tape;
  Var x = tape.leaf(Tensor::ones({3}), true);
  EXPECT_THROW(tape.backward(x), std::invalid_argument);
}

TEST(GradCheck, ElementwiseOps) {
  const double tol = 1e-4;
  EXPECT_LT(check_over_seeds([](Tape&, const std::vector<Var>& p) {
              return sum_all(mul(add(p[0], p[1]), sub(p[0], p[1])));
            }, {{3, 4}, {3, 4}}, 10), tol);
  EXPECT_LT(check_over_seeds([](Tape&, const std::vector<Var>& p) {
              return mean_all(div_(p[0], p[1]));
            }, {{2, 5}, {2, 5}}, 10, 0.5, 1.5), tol);
  EXPECT_LT(check_over_seeds([](Tape&, const std::vector<Var>& p) {
              return sum_all(exp_(p[0]));
            }, {{8}}, 10), tol);
  EXPECT_LT(check_over_seeds([](Tape&, const std::vector<Var>& p) {
              return sum_all(tanh_(p[0]));
            }, {{8}}, 10, -2.0, 2.0), tol);
  EXPECT_LT(check_over_seeds([](Tape&, const std::vector<Var>& p) {
              return sum_all(mul(exp_(p[0]), tanh_(p[0])));
            }, {{8}}, 10, 0.0, 1.0), tol);
  EXPECT_LT(check_over_seeds([](Tape&, const std::vector<Var>& p) {
              return sum_all(log_(p[0]));
            }, {{6}}, 10, 0.5, 2.0), tol);
  EXPECT_LT(check_over_seeds([](Tape&, const std::vector<Var>& p) {
              return sum_all(gelu(p[0]));
            }, {{16}}, 10, -2.0, 2.0), tol);
  EXPECT_LT(check_over_seeds([](Tape&, const std::vector<Var>& p) {
              return sum_all(neg(scale(add_scalar(p[0], 0.5), 1.7)));
            }, {{9}}, 10), tol);
}

TEST(GradCheck, BroadcastBinaryOps) {
  EXPECT_LT(check_over_seeds([](Tape&, const std::vector<Var>& p) {
              return sum_all(mul(p[0], p[1]));
            }, {{2, 3, 4}, {4}}, 10), 1e-4);
  EXPECT_LT(check_over_seeds([](Tape&, const std::vector<Var>& p) {
              return sum_all(add(p[0], p[1]));
            }, {{2, 1, 4}, {3, 1}}, 10), 1e-4);
}

TEST(GradCheck, MatmulSoftmaxChain) {
  Builder f = [](Tape&, const std::vector<Var>& p) {
    Var scores = matmul(p[0], p[1]);          // [4,3]
    Var att = softmax(scores, -1);
    return sum_all(mul(att, att));
  };
  EXPECT_LT(check_over_seeds(f, {{4, 5}, {5, 3}}, 10), 1e-4);
}

TEST(GradCheck, BatchedMatmul) {
  EXPECT_LT(check_over_seeds([](Tape&, const std::vector<Var>& p) {
              return sum_all(mul(matmul(p[0], p[1]), matmul(p[0], p[1])));
            }, {{2, 3, 4}, {2, 4, 2}}, 6), 1e-4);
  EXPECT_LT(check_over_seeds([](Tape&, const std::vector<Var>& p) {
              return mean_all(matmul(p[0], p[1]));
            }, {{2, 2, 3, 4}, {4, 5}}, 6), 1e-4);
}

TEST(GradCheck, LayernormAffine) {
  Builder f = [](Tape&, const std::vector<Var>& p) {
    return sum_all(mul(layernorm(p[0], p[1], p[2]), p[0]));
  };
  EXPECT_LT(check_over_seeds(f, {{3, 8}, {8}, {8}}, 10, -2.0, 2.0), 1e-4);
}

TEST(GradCheck, PatchProjectAndUnproject) {
  Builder fproj = [](Tape&, const std::vector<Var>& p) {
    Var y = patch_project(p[0], 2, 2, 2, p[1], p[2]);
    return sum_all(mul(y, y));
  };
  EXPECT_LT(check_over_seeds(fproj, {{1, 2, 2, 4, 2}, {2 * 2 * 2 * 2, 3}, {3}}, 6), 1e-4);

  Builder func = [](Tape&, const std::vector<Var>& p) {
    Var y = patch_unproject(p[0], 1, 2, 2, p[1], p[2]);
    return sum_all(mul(y, y));
  };
  EXPECT_LT(check_over_seeds(func, {{1, 2, 2, 2, 3}, {3, 1 * 2 * 2 * 2}, {2}}, 6), 1e-4);
}

TEST(GradCheck, Conv3dSame) {
  Builder f = [](Tape&, const std::vector<Var>& p) {
    Var y = conv3d_same(p[0], p[1], p[2]);
    return sum_all(mul(y, y));
  };
  EXPECT_LT(check_over_seeds(f, {{1, 2, 3, 4, 2}, {1, 3, 3, 2, 2}, {2}}, 6), 1e-4);
}

TEST(GradCheck, UpsampleAvgPoolEmbed) {
  EXPECT_LT(check_over_seeds([](Tape&, const std::vector<Var>& p) {
              Var y = nn_upsample(p[0], 2, 2, 2, true);
              return sum_all(mul(y, y));
            }, {{1, 3, 2, 2, 2}}, 6), 1e-4);
  EXPECT_LT(check_over_seeds([](Tape&, const std::vector<Var>& p) {
              Var y = avg_pool_hw(p[0], 2);
              return sum_all(mul(y, y));
            }, {{2, 4, 4, 2}}, 6), 1e-4);
  EXPECT_LT(check_over_seeds([](Tape&, const std::vector<Var>& p) {
              Var y = embed_rows(p[0], {0, 2, 2, 1});
              return sum_all(mul(y, y));
            }, {{3, 4}}, 6), 1e-4);
}

TEST(GradCheck, StructureOps) {
  Builder f = [](Tape&, const std::vector<Var>& p) {
    Var a = permute(reshape(p[0], {2, 6}), {1, 0});
    Var b = slice(a, 0, 1, 4);
    Var c = concat({b, b}, 1);
    Var d = rotate_half(c);
    return sum_all(mul(d, c));
  };
  EXPECT_LT(check_over_seeds(f, {{3, 4}}, 10), 1e-4);
}

TEST(GradCheck, ClampAndAbs) {
  // Keep values away from the clamp knees and zero so the subgradient is clean.
  EXPECT_LT(check_over_seeds([](Tape&, const std::vector<Var>& p) {
              return sum_all(clamp(p[0], -10.0, 10.0));
            }, {{8}}, 6), 1e-4);
  EXPECT_LT(check_over_seeds([](Tape&, const std::vector<Var>& p) {
              return sum_all(abs_(p[0]));
            }, {{8}}, 6, 0.25, 1.0), 1e-4);
}

TEST(GradCheck, SampledSubsetCoversLargeParams) {
  Builder f = [](Tape&, const std::vector<Var>& p) {
    return sum_all(mul(p[0], p[0]));
  };
  Rng rng(42);
  std::vector<Tensor> params = {random_tensor({32, 32}, rng)};
  EXPECT_LT(grad_check(f, params, 1e-3, 25, 7), 1e-4);
}

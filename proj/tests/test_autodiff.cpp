#include <gtest/gtest.h>

#include <cmath>

#include "drgo/autodiff.hpp"
#include "drgo/optim.hpp"
#include "drgo/rng.hpp"

using namespace drgo;
using namespace drgo::ad;

namespace {

Tensor param(std::size_t r, std::size_t c, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng = make_rng(seed, "param");
  std::vector<double> v(r * c);
  for (auto& x : v) x = lo + (hi - lo) * uniform01(rng);
  return Tensor::from(r, c, v, true);
}

constexpr double kTol = 1e-6;

}  // namespace

TEST(GradCheck, Matmul) {
  auto a = param(3, 4, 1), b = param(4, 2, 2);
  EXPECT_LT(grad_check([&] { return sum(square(matmul(a, b))); }, {a, b}), kTol);
}

TEST(GradCheck, Spmm) {
  auto s = std::make_shared<const CsrMatrix>(
      CsrMatrix::from_entries(3, 4, {{0, 1, 0.5}, {1, 0, -2.0}, {1, 3, 1.0}, {2, 2, 3.0}}));
  auto a = param(4, 2, 3);
  EXPECT_LT(grad_check([&] { return sum(square(spmm(s, a))); }, {a}), kTol);
}

TEST(GradCheck, ElementwiseOps) {
  auto a = param(2, 3, 4), b = param(2, 3, 5);
  EXPECT_LT(grad_check([&] { return sum(hadamard(add(a, b), sub(a, b))); }, {a, b}), kTol);
  EXPECT_LT(grad_check([&] { return mean(scale(square(a), -1.5)); }, {a}), kTol);
  EXPECT_LT(grad_check([&] { return sum(sigmoid(a)); }, {a}), kTol);
  EXPECT_LT(grad_check([&] { return sum(softplus(scale(a, 3.0))); }, {a}), kTol);
  EXPECT_LT(grad_check([&] { return sum(exp(a)); }, {a}), kTol);
  EXPECT_LT(grad_check([&] { return sum(silu(a)); }, {a}), kTol);
}

TEST(GradCheck, Log) {
  auto a = param(2, 2, 6, 0.5, 2.0);
  EXPECT_LT(grad_check([&] { return sum(log(a)); }, {a}), kTol);
}

TEST(GradCheck, StructuralOps) {
  auto a = param(3, 2, 7), b = param(2, 2, 8), bias = param(1, 2, 9);
  const std::vector<std::size_t> idx{2, 0, 2, 4};
  EXPECT_LT(grad_check([&] { return sum(square(gather_rows(concat_rows({a, b}), idx))); }, {a, b}), kTol);
  EXPECT_LT(grad_check([&] { return sum(square(add_row_bias(a, bias))); }, {a, bias}), kTol);
  EXPECT_LT(grad_check([&] { return sum(square(row_sum(a))); }, {a}), kTol);
}

TEST(GradCheck, BprShapedComposite) {
  auto u = param(4, 3, 10), p = param(4, 3, 11), n = param(4, 3, 12);
  auto fn = [&] {
    auto gap = sub(row_sum(hadamard(u, p)), row_sum(hadamard(u, n)));
    return mean(softplus(scale(gap, -1.0)));
  };
  EXPECT_LT(grad_check(fn, {u, p, n}), kTol);
}

TEST(Tape, NoTapeMeansNoGradient) {
  auto a = param(2, 2, 13);
  auto y = sum(square(a));
  EXPECT_TRUE(y.is_leaf());
  Tape t;
  EXPECT_THROW(t.backward(y), std::invalid_argument);
}

TEST(Tape, ReplayOnceOnly) {
  auto a = param(2, 2, 14);
  Tape t;
  auto y = sum(a);
  t.backward(y);
  EXPECT_THROW(t.backward(y), std::logic_error);
  EXPECT_TRUE(t.consumed());
}

TEST(Tape, NonScalarLossRejected) {
  auto a = param(2, 2, 15);
  Tape t;
  auto y = square(a);
  EXPECT_THROW(t.backward(y), std::invalid_argument);
}

TEST(Tape, LeafGradientsAccumulate) {
  auto a = Tensor::from(1, 1, {2.0}, true);
  for (int k = 0; k < 2; ++k) {
    Tape t;
    t.backward(square(a));
  }
  EXPECT_DOUBLE_EQ(a.grad()(0, 0), 8.0);
}

TEST(Tape, SharedSubexpression) {
  auto a = Tensor::from(1, 1, {3.0}, true);
  Tape t;
  auto b = square(a);
  t.backward(sum(add(b, b)));
  EXPECT_DOUBLE_EQ(a.grad()(0, 0), 12.0);
}

TEST(Tape, DetachBlocksGradient) {
  auto a = Tensor::from(1, 1, {3.0}, true);
  Tape t;
  auto y = add(square(a), square(a).detach());
  t.backward(sum(y));
  EXPECT_DOUBLE_EQ(a.grad()(0, 0), 6.0);
}

TEST(Tape, ConstantsGetNoGradient) {
  auto a = Tensor::from(1, 2, {1.0, 2.0}, true);
  auto c = Tensor::from(1, 2, {5.0, 7.0});
  Tape t;
  t.backward(sum(hadamard(a, c)));
  EXPECT_FALSE(c.has_grad());
  EXPECT_DOUBLE_EQ(a.grad()(0, 1), 7.0);
}

TEST(Ops, ShapeMismatchThrows) {
  auto a = param(2, 2, 16), b = param(3, 2, 17);
  EXPECT_THROW(add(a, b), std::invalid_argument);
  EXPECT_THROW(matmul(a, b), std::invalid_argument);
}

TEST(Ops, LogDomainError) {
  EXPECT_THROW(log(Tensor::from(1, 2, {1.0, 0.0})), std::domain_error);
  EXPECT_THROW(log(Tensor::from(1, 1, {-1.0})), std::domain_error);
}

TEST(Ops, StableSigmoidAndSoftplus) {
  auto x = Tensor::from(1, 4, {-800.0, -1.0, 1.0, 800.0});
  auto s = sigmoid(x);
  auto sp = softplus(x);
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_TRUE(std::isfinite(s(0, j)));
    EXPECT_TRUE(std::isfinite(sp(0, j)));
  }
  EXPECT_NEAR(s(0, 2), 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(sp(0, 1), std::log1p(std::exp(-1.0)), 1e-15);
  EXPECT_DOUBLE_EQ(sp(0, 3), 800.0);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  auto w = Tensor::from(1, 2, {1.0, -1.0}, true);
  AdamW opt({w}, {0.1, 0.0});
  {
    Tape t;
    t.backward(sum(hadamard(w, Tensor::from(1, 2, {3.0, -0.5}))));
  }
  opt.step();
  // Bias-corrected first step is lr * g / (|g| + eps).
  EXPECT_NEAR(w(0, 0), 0.9, 1e-7);
  EXPECT_NEAR(w(0, 1), -0.9, 1e-7);
  EXPECT_EQ(opt.step_count(), 1u);
}

TEST(AdamW, DecoupledDecayWithZeroGradient) {
  auto w = Tensor::from(1, 1, {2.0}, true);
  AdamW opt({w}, {0.1, 0.5});
  w.zero_grad();
  opt.step();
  EXPECT_DOUBLE_EQ(w(0, 0), 2.0 * (1.0 - 0.05));
}

TEST(AdamW, MinimisesQuadratic) {
  auto w = Tensor::from(1, 3, {5.0, -4.0, 2.0}, true);
  AdamW opt({w}, {0.05, 0.0});
  auto target = Tensor::from(1, 3, {1.0, 2.0, 3.0});
  for (int k = 0; k < 2000; ++k) {
    Tape t;
    t.backward(sum(square(sub(w, target))));
    opt.step();
  }
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(w(0, j), target(0, j), 1e-3);
}

TEST(AdamW, RequiresGradients) {
  auto w = Tensor::from(1, 1, {1.0}, true);
  AdamW opt({w});
  EXPECT_THROW(opt.step(), std::logic_error);
  EXPECT_THROW(AdamW({Tensor::from(1, 1, {1.0})}), std::invalid_argument);
}

TEST(GradCheck, DetectsWrongGradient) {
  // A forward value that ignores the tape disagrees with finite differences.
  auto a = param(1, 3, 18);
  auto fn = [&] { return add(sum(a), Tensor::scalar(std::pow(a(0, 0), 3))); };
  EXPECT_GT(grad_check(fn, {a}), 1e-3);
}

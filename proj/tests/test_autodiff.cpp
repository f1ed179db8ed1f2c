#include <gtest/gtest.h>

#include "dbridge/harness/gradcheck.hpp"

using namespace dbridge;
using namespace dbridge::ad;

TEST(Autodiff, IdentityMatmulReturnsVector) {
  Tape t;
  Var v = t.constant(Array::vector({1.5, -2.0}));
  Var eye = t.constant(Array::matrix({{1, 0}, {0, 1}}));
  const Array out = matmul(eye, v).value();
  EXPECT_EQ(out.values(), (std::vector<double>{1.5, -2.0}));
}

TEST(Autodiff, SumOfSquaresGradient) {
  Tape t;
  Var x = t.leaf(Array::vector({1, 2, 3}));
  t.backward(sum(square(x)));
  EXPECT_EQ(x.grad().values(), (std::vector<double>{2, 4, 6}));
}

TEST(Autodiff, ConstantRootGivesZeroGradients) {
  Tape t;
  Var x = t.leaf(Array::vector({1, 2}));
  Var c = t.constant(Array::scalar(3.0));
  t.backward(c);
  EXPECT_EQ(x.grad().values(), (std::vector<double>{0, 0}));
}

TEST(Autodiff, InnerProductGradientIsOtherOperand) {
  Tape t;
  Var w = t.leaf(Array::vector({0.3, -0.7, 2.0}));
  Var x = t.constant(Array::vector({4.0, 5.0, -6.0}));
  t.backward(matmul(w, x));
  EXPECT_EQ(w.grad().values(), (std::vector<double>{4.0, 5.0, -6.0}));
}

TEST(Autodiff, ClipGradientInsideAndOutside) {
  Tape t;
  Var x = t.leaf(Array::vector({-3.0, -0.5, 0.0, 0.9, 2.5}));
  t.backward(sum(clip(x, -1.0, 1.0)));
  EXPECT_EQ(x.grad().values(), (std::vector<double>{0, 1, 1, 1, 0}));
}

TEST(Autodiff, ClipGradientAtBoundaryIsZero) {
  Tape t;
  Var x = t.leaf(Array::vector({-1.0, 1.0}));
  t.backward(sum(clip(x, -1.0, 1.0)));
  EXPECT_EQ(x.grad().values(), (std::vector<double>{0, 0}));
}

TEST(Autodiff, LeafGradientsAccumulateUntilZeroed) {
  Tape t;
  Var x = t.leaf(Array::scalar(2.0));
  t.backward(square(x));
  t.backward(square(x));
  EXPECT_EQ(x.grad().item(), 8.0);
  t.zero_grad();
  t.backward(square(x));
  EXPECT_EQ(x.grad().item(), 4.0);
}

TEST(Autodiff, BackwardNeedsScalarRoot) {
  Tape t;
  Var x = t.leaf(Array::vector({1, 2}));
  EXPECT_THROW(t.backward(x), UsageError);
}

TEST(Autodiff, MixingTapesIsRejected) {
  Tape a, b;
  Var x = a.leaf(Array::scalar(1.0));
  Var y = b.leaf(Array::scalar(1.0));
  EXPECT_THROW(add(x, y), UsageError);
}

TEST(Autodiff, ShapeMismatchIsRejected) {
  Tape t;
  Var x = t.leaf(Array(Shape{2, 3}));
  Var y = t.leaf(Array(Shape{3, 2}));
  EXPECT_ANY_THROW(add(x, y));
  EXPECT_ANY_THROW(matmul(x, x));
}

TEST(Autodiff, EveryOpMatchesFiniteDifferences) {
  for (const auto& r : check::raw_op_checks(1e-6)) EXPECT_TRUE(r.passed()) << r.name << " rel err " << r.error;
}

TEST(Autodiff, TwoLayerMlpMatchesFiniteDifferences) {
  const Array x = check::random_array({5, 3}, 21, -2, 2);
  const Array w1 = check::random_array({3, 6}, 22, -2, 2);
  const Array b1 = check::random_array({6}, 23, -2, 2);
  const Array w2 = check::random_array({6}, 24, -2, 2);
  const double err = check::op_gradient_error(
      {w1, b1, w2},
      [&](Tape& t, const std::vector<Var>& v) {
        return sum(matmul(silu(add_row(matmul(t.constant(x), v[0]), v[1])), v[2]));
      },
      25);
  EXPECT_LT(err, 1e-6);
}

TEST(Autodiff, BackwardIsBitDeterministic) {
  auto run = [] {
    Tape t;
    Var a = t.leaf(check::random_array({4, 4}, 3, -2, 2));
    Var b = t.leaf(check::random_array({4, 4}, 4, -2, 2));
    t.backward(mean(tanh(matmul(a, softplus(b)))));
    Array g = a.grad();
    return g.values();
  };
  EXPECT_EQ(run(), run());
}

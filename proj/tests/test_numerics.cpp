// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace ctcadapt;
using testing_support::probe;
using testing_support::random_tensor;

namespace {

constexpr double kH = 1e-5;
constexpr double kGradTol = 1e-4;

void expect_values(const Tensor& t, const std::vector<double>& want, double tol = 1e-12) {
  ASSERT_EQ(t.numel(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(t[i], want[i], tol) << "element " << i;
}

}  // namespace

TEST(Matmul, HandExample) {
  const Tensor a = Tensor::matrix({{1, 2}, {3, 4}});
  const Tensor b = Tensor::matrix({{5}, {6}});
  const Tensor c = matmul(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 1}));
  expect_values(c, {17, 39}, 0.0);
}

TEST(Matmul, IdentityIsNeutral) {
  std::mt19937_64 rng(1);
  const Tensor a = random_tensor(rng, {3, 4});
  Tensor eye = Tensor::zeros({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye.data()[i * 4 + i] = 1.0;
  expect_values(matmul(a, eye), {a.data().begin(), a.data().end()}, 0.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({4, 5});
  try {
    matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("[4x5]"), std::string::npos) << e.what();
  }
}

TEST(LayerNorm, ConstantRowNormalizesToZero) {
  const Tensor x = Tensor::matrix({{5, 5, 5, 5}});
  const Tensor y = layer_norm(x, Tensor::filled({4}, 1.0), Tensor::zeros({4}), 1e-5);
  expect_values(y, {0, 0, 0, 0}, 0.0);
}

TEST(LayerNorm, TwoElementHandExample) {
  const Tensor x = Tensor::matrix({{1, 3}});
  expect_values(layer_norm(x, Tensor::filled({2}, 1.0), Tensor::zeros({2}), 0.0), {-1, 1});
}

TEST(LayerNorm, AffineParameters) {
  const Tensor x = Tensor::matrix({{1, 3}});
  expect_values(layer_norm(x, Tensor::filled({2}, 2.0), Tensor::filled({2}, 1.0), 0.0), {-1, 3});
}

TEST(LayerNorm, RejectsMismatchedGamma) {
  EXPECT_THROW(layer_norm(Tensor::zeros({2, 3}), Tensor::filled({2}, 1.0), Tensor::zeros({2}), 1e-5),
               DimensionError);
}

TEST(LayerNorm, EmptyAxisCannotBeFormed) {
  EXPECT_THROW(Tensor({2, 0}, {}), DimensionError);
}

TEST(Softmax, UniformRow) {
  expect_values(softmax(Tensor::matrix({{2.5, 2.5, 2.5}})), {1.0 / 3, 1.0 / 3, 1.0 / 3});
}

TEST(Softmax, ClosedForm) {
  expect_values(softmax(Tensor::matrix({{0.0, std::log(3.0)}})), {0.25, 0.75});
}

TEST(Softmax, LargeInputStaysFinite) {
  const Tensor x = Tensor::matrix({{1e6, 0.0}, {-1e6, 1e6}});
  EXPECT_TRUE(all_finite(softmax(x).data()));
  EXPECT_TRUE(all_finite(log_softmax(x).data()));
  expect_values(softmax(x), {1.0, 0.0, 0.0, 1.0});
}

TEST(Softmax, RowsSumToOneAndMatchLogSoftmax) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x = random_tensor(rng, {4, 6}, -20, 20);
    const Tensor p = softmax(x);
    const Tensor lp = log_softmax(x);
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 6; ++c) {
        s += p.at(r, c);
        EXPECT_NEAR(std::exp(lp.at(r, c)), p.at(r, c), 1e-12);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Gelu, Values) {
  EXPECT_EQ(gelu_scalar(0.0), 0.0);
  EXPECT_NEAR(gelu_scalar(1.0), 0.8412, 1e-4);
  // Tanh form evaluated directly.
  const double x = 1.0;
  const double want = 0.5 * x * (1.0 + std::tanh(0.7978845608028654 * (x + 0.044715 * x * x * x)));
  EXPECT_DOUBLE_EQ(gelu_scalar(1.0), want);
  EXPECT_NEAR(gelu_scalar(50.0), 50.0, 50.0 * 1e-6);
}

TEST(Backward, SumGivesOnes) {
  Tensor w = Tensor::matrix({{1, 2}, {3, 4}}, true);
  backward(sum(w));
  expect_values(Tensor({4}, {w.grad().begin(), w.grad().end()}), {1, 1, 1, 1}, 0.0);
}

TEST(Backward, SquareHandDerivative) {
  Tensor w = Tensor::matrix({{1, 2}, {3, 4}}, true);
  backward(sum(mul(w, w)));
  expect_values(Tensor({4}, {w.grad().begin(), w.grad().end()}), {2, 4, 6, 8}, 0.0);
}

TEST(Backward, RepeatedCallsAccumulate) {
  Tensor w = Tensor::matrix({{1, 2}}, true);
  backward(sum(w));
  backward(sum(w));
  expect_values(Tensor({2}, {w.grad().begin(), w.grad().end()}), {2, 2}, 0.0);
}

TEST(Backward, DisconnectedParameterStaysZero) {
  Tensor w = Tensor::matrix({{1, 2}}, true);
  Tensor other = Tensor::matrix({{3, 4}}, true);
  backward(sum(w));
  EXPECT_FALSE(other.has_grad());
}

TEST(Backward, NonScalarLossRejected) {
  Tensor w = Tensor::matrix({{1, 2}}, true);
  EXPECT_THROW(backward(scale(w, 2.0)), ContractError);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  Tensor w = Tensor::matrix({{1, 2}}, true);
  Tensor y;
  {
    NoGradGuard g;
    y = sum(w);
  }
  EXPECT_TRUE(y.is_leaf());
  EXPECT_FALSE(y.requires_grad());
}

TEST(FiniteDiff, QuadraticIsExact) {
  Tensor w = Tensor::matrix({{0.3, -1.2}, {2.0, 0.7}});
  EXPECT_LT(finite_diff_check([&] { return sum(mul(w, w)); }, {w}, kH), 1e-8);
}

TEST(FiniteDiff, RejectsNonPositiveStep) {
  Tensor w = Tensor::matrix({{1.0}});
  EXPECT_THROW(finite_diff_check([&] { return sum(w); }, {w}, 0.0), ContractError);
}

// Every differentiable operation on random small inputs.
class OpGradients : public ::testing::TestWithParam<int> {};

TEST_P(OpGradients, AllOpsWithinTolerance) {
  std::mt19937_64 rng(100 + GetParam());
  for (const auto& [name, err] : testing_support::op_gradient_errors(rng, kH)) EXPECT_LT(err, kGradTol) << name;
}

INSTANTIATE_TEST_SUITE_P(Random, OpGradients, ::testing::Range(0, 12));

TEST(Matmul, AssociativityProperty) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d0 = testing_support::uniform_size(rng, 1, 6), d1 = testing_support::uniform_size(rng, 1, 6),
                      d2 = testing_support::uniform_size(rng, 1, 6), d3 = testing_support::uniform_size(rng, 1, 6);
    const Tensor a = random_tensor(rng, {d0, d1});
    const Tensor b = random_tensor(rng, {d1, d2});
    const Tensor c = random_tensor(rng, {d2, d3});
    const Tensor left = matmul(matmul(a, b), c);
    const Tensor right = matmul(a, matmul(b, c));
    for (std::size_t i = 0; i < left.numel(); ++i) {
      EXPECT_NEAR(left[i], right[i], 1e-10 * std::max(1.0, std::abs(left[i])));
    }
  }
}

TEST(Ops, ExtremeFiniteInputsStayFinite) {
  std::mt19937_64 rng(5);
  const Tensor x = random_tensor(rng, {3, 4}, -1e6, 1e6);
  EXPECT_TRUE(all_finite(gelu(x).data()));
  EXPECT_TRUE(all_finite(relu(x).data()));
  EXPECT_TRUE(all_finite(softmax(x).data()));
  EXPECT_TRUE(all_finite(log_softmax(x).data()));
  EXPECT_TRUE(all_finite(layer_norm(x, Tensor::filled({4}, 1.0), Tensor::zeros({4}), 1e-5).data()));
  EXPECT_TRUE(all_finite(matmul(x, transpose(x)).data()));
}

TEST(Unfold, StrideArithmetic) {
  const Tensor x = Tensor::zeros({8, 3});
  const Tensor u = unfold_rows(x, 2, 2);
  EXPECT_EQ(u.shape(), (Shape{4, 6}));
  EXPECT_THROW(unfold_rows(Tensor::zeros({1, 3}), 2, 1), SequenceTooShortError);
}

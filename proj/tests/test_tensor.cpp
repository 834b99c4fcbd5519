#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "asc/ops.hpp"
#include "gradcheck.hpp"

using namespace asc;
using asc::testing::gradcheck;
using asc::testing::probe;
using asc::testing::probe_weights;

namespace {

// Direct-summation oracle, independent of the im2col path.
std::vector<double> naive_conv(const Tensor& x, const Tensor& w, Index stride, Index pad) {
  const Index n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const Index cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const Index ho = (h + 2 * pad - kh) / stride + 1, wo = (wd + 2 * pad - kw) / stride + 1;
  std::vector<double> out;
  for (Index b = 0; b < n; ++b)
    for (Index o = 0; o < cout; ++o)
      for (Index y = 0; y < ho; ++y)
        for (Index xx = 0; xx < wo; ++xx) {
          double acc = 0;
          for (Index c = 0; c < cin; ++c)
            for (Index i = 0; i < kh; ++i)
              for (Index j = 0; j < kw; ++j) {
                const Index iy = y * stride + i - pad, ix = xx * stride + j - pad;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += x.at({b, c, iy, ix}) * w.at({o, c, i, j});
              }
          out.push_back(acc);
        }
  return out;
}

std::vector<double> triple_loop(const Tensor& a, const Tensor& b) {
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j)
      for (Index p = 0; p < k; ++p) out[static_cast<std::size_t>(i * n + j)] += a.at({i, p}) * b.at({p, j});
  return out;
}

}  // namespace

TEST(Tensor, ShapeInvariant) {
  EXPECT_THROW(Tensor({2, 3}, Buffer(5)), ShapeError);
  EXPECT_THROW(Tensor::zeros({0, 2}), ShapeError);
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6);
  EXPECT_EQ(t.at({1, 2}), 6);
}

// Reductions must not depend on where the heap put a buffer.
TEST(Tensor, BuffersAreVectorAligned) {
  std::vector<Tensor> ts;
  for (Index n = 1; n < 40; ++n) ts.push_back(add(Tensor::full({n}, 0.5, true), Tensor::full({n}, 0.25)));
  for (const auto& t : ts) {
    EXPECT_EQ(reinterpret_cast<std::uintptr_t>(t.values().data()) % EIGEN_MAX_ALIGN_BYTES, 0u);
  }
}

TEST(Tensor, NonFiniteIsAnError) {
  EXPECT_THROW(Tensor({1}, {std::numeric_limits<double>::quiet_NaN()}), NumericError);
  Tensor big({1}, {1e300});
  EXPECT_THROW(mul(big, big), NumericError);
}

TEST(Conv2d, ScalarScaling) {
  Tensor x = Tensor::ones({1, 1, 3, 3});
  Tensor w({1, 1, 1, 1}, {2});
  Tensor y = conv2d(x, w);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
  for (Scalar v : y.data()) EXPECT_EQ(v, 2);
}

TEST(Conv2d, IdentityKernel) {
  Rng rng(1);
  Tensor x = Tensor::randn({1, 1, 5, 4}, rng);
  Buffer k(9, 0);
  k[4] = 1;
  Tensor y = conv2d(x, Tensor({1, 1, 3, 3}, k), 1, 1);
  ASSERT_EQ(y.shape(), x.shape());
  for (Index i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Conv2d, MatchesDirectSummation) {
  Rng rng(2);
  Tensor x = Tensor::randn({2, 3, 8, 8}, rng);
  Tensor w = Tensor::randn({4, 3, 3, 3}, rng);
  for (auto [stride, pad] : {std::pair<Index, Index>{1, 0}, {1, 1}, {2, 1}, {3, 2}}) {
    Tensor y = conv2d(x, w, stride, pad);
    auto expected = naive_conv(x, w, stride, pad);
    ASSERT_EQ(static_cast<std::size_t>(y.numel()), expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(y[static_cast<Index>(i)], expected[i], 1e-6);
  }
}

TEST(Conv2d, ChannelMismatch) {
  EXPECT_THROW(conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 3, 3, 3})), ShapeError);
  EXPECT_THROW(conv2d(Tensor::zeros({1, 3, 4, 4}), Tensor::zeros({1, 3, 3, 3}), 0), ShapeError);
}

TEST(Matmul, Identity) {
  Rng rng(3);
  Tensor a = Tensor::randn({3, 3}, rng);
  Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor y = matmul(a, eye);
  for (Index i = 0; i < 9; ++i) EXPECT_EQ(y[i], a[i]);
}

TEST(Matmul, HandArithmetic) {
  Tensor y = matmul(Tensor({2, 2}, {1, 2, 3, 4}), Tensor({2, 1}, {5, 6}));
  ASSERT_EQ(y.shape(), (Shape{2, 1}));
  EXPECT_EQ(y[0], 17);
  EXPECT_EQ(y[1], 39);
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(4);
  Tensor a = Tensor::randn({5, 7}, rng);
  Tensor b = Tensor::randn({7, 2}, rng);
  Tensor y = matmul(a, b);
  auto expected = triple_loop(a, b);
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_LT(std::abs(y[static_cast<Index>(i)] - expected[i]), 1e-9);
  EXPECT_THROW(matmul(a, a), ShapeError);
}

TEST(Matmul, BatchedAgreesWithPerSlice) {
  Rng rng(5);
  Tensor a = Tensor::randn({3, 4, 5}, rng);
  Tensor b = Tensor::randn({3, 5, 2}, rng);
  Tensor bt = Tensor::randn({3, 2, 5}, rng);
  Tensor y = batched_matmul(a, b);
  Tensor yt = batched_matmul(a, bt, true);
  for (Index i = 0; i < 3; ++i) {
    auto expected = triple_loop(select(a, 0, i), select(b, 0, i));
    auto expected_t = triple_loop(select(a, 0, i), transpose(select(bt, 0, i)));
    for (Index r = 0; r < 4; ++r)
      for (Index c = 0; c < 2; ++c) {
        EXPECT_NEAR(y.at({i, r, c}), expected[static_cast<std::size_t>(r * 2 + c)], 1e-12);
        EXPECT_NEAR(yt.at({i, r, c}), expected_t[static_cast<std::size_t>(r * 2 + c)], 1e-12);
      }
  }
}

TEST(Softmax, Uniform) {
  Tensor y = softmax_rows(Tensor::zeros({1, 3}));
  for (Scalar v : y.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, NoOverflow) {
  Tensor y = softmax_rows(Tensor({1, 2}, {1000, 1000}));
  EXPECT_EQ(y[0], 0.5);
  EXPECT_EQ(y[1], 0.5);
}

TEST(Softmax, MatchesHighPrecisionScalar) {
  Tensor y = softmax_rows(Tensor({1, 3}, {1, 2, 3}));
  long double e1 = std::exp(1.0L), e2 = std::exp(2.0L), e3 = std::exp(3.0L), z = e1 + e2 + e3;
  EXPECT_NEAR(y[0], static_cast<double>(e1 / z), 1e-15);
  EXPECT_NEAR(y[1], static_cast<double>(e2 / z), 1e-15);
  EXPECT_NEAR(y[2], static_cast<double>(e3 / z), 1e-15);
}

TEST(Softmax, RowsSumToOneAndPreserveOrder) {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = Tensor::randn({4, 9}, rng, 30.0);
    Tensor y = softmax_rows(x);
    for (Index r = 0; r < 4; ++r) {
      double total = 0;
      for (Index c = 0; c < 9; ++c) {
        total += y.at({r, c});
        for (Index c2 = 0; c2 < 9; ++c2) {
          if (x.at({r, c}) < x.at({r, c2})) {
            EXPECT_LE(y.at({r, c}), y.at({r, c2}));
          }
        }
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
}

TEST(Backward, SumGivesOnes) {
  Tensor x = Tensor::full({2, 3}, 0.7, true);
  sum(x).backward();
  for (Scalar g : x.grad()) EXPECT_EQ(g, 1);
}

TEST(Backward, SquareGivesTwiceInput) {
  Rng rng(7);
  Tensor x = Tensor::randn({4}, rng, 1, true);
  sum(mul(x, x)).backward();
  auto g = x.grad();
  for (Index i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(g[static_cast<std::size_t>(i)], 2 * x[i]);
}

TEST(Backward, RepeatedCallsAccumulate) {
  Tensor x = Tensor::full({3}, 2.0, true);
  Tensor loss = sum(scale(x, 3));
  loss.backward();
  loss.backward();
  for (Scalar g : x.grad()) EXPECT_EQ(g, 6);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(Backward, NonScalarLossRejected) {
  Tensor x = Tensor::ones({2}, true);
  EXPECT_THROW(scale(x, 2).backward(), ShapeError);
}

TEST(Backward, NoGradGuardSkipsGraph) {
  Tensor x = Tensor::ones({2}, true);
  NoGradGuard guard;
  Tensor y = sum(x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Reshape, RoundTripIsIdentity) {
  Rng rng(8);
  Tensor x = Tensor::randn({2, 3, 4}, rng);
  Tensor y = reshape(reshape(x, {6, 4}), {2, 3, 4});
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_EQ(y.values(), x.values());
  EXPECT_THROW(reshape(x, {5, 5}), ShapeError);
}

TEST(SliceStack, SelectThenStackRestores) {
  Rng rng(9);
  Tensor x = Tensor::randn({2, 5, 3}, rng);
  std::vector<Tensor> parts;
  for (Index i = 0; i < 5; ++i) parts.push_back(select(x, 1, i));
  Tensor y = stack(parts, 1);
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_EQ(y.values(), x.values());
  std::vector<Tensor> halves{slice(x, 2, 0, 1), slice(x, 2, 1, 3)};
  EXPECT_EQ(concat(halves).values(), x.values());
}

TEST(CrossEntropy, UniformIsLogTwo) {
  std::vector<int> labels{0, 1};
  Tensor loss = cross_entropy_with_logits(Tensor::zeros({2, 2}), labels);
  EXPECT_NEAR(loss.item(), std::log(2.0), 1e-15);
}

TEST(BatchNorm, NormalizesInTrainingAndUsesRunningStatsInEval) {
  Rng rng(10);
  Tensor x = Tensor::randn({6, 2, 3, 3}, rng, 4.0);
  BatchNormState state(2);
  Tensor y = batch_norm(x, Tensor::ones({2}), Tensor::zeros({2}), state, true);
  for (Index c = 0; c < 2; ++c) {
    double m = 0, v = 0;
    for (Index b = 0; b < 6; ++b)
      for (Index i = 0; i < 3; ++i)
        for (Index j = 0; j < 3; ++j) m += y.at({b, c, i, j});
    m /= 54;
    for (Index b = 0; b < 6; ++b)
      for (Index i = 0; i < 3; ++i)
        for (Index j = 0; j < 3; ++j) v += std::pow(y.at({b, c, i, j}) - m, 2);
    EXPECT_NEAR(m, 0, 1e-12);
    EXPECT_NEAR(v / 54, 1, 1e-4);
  }
  EXPECT_NE(state.running_mean[0], 0);
  BatchNormState fresh(2);
  Tensor e = batch_norm(x, Tensor::ones({2}), Tensor::zeros({2}), fresh, false);
  for (Index i = 0; i < x.numel(); ++i) EXPECT_NEAR(e[i], x[i] / std::sqrt(1 + 1e-5), 1e-12);
}

// Every differentiable op on five random shapes.
class OpGradient : public ::testing::TestWithParam<int> {};

TEST_P(OpGradient, FiniteDifferenceAgreement) {
  for (const auto& [name, err] : asc::testing::op_gradient_errors(GetParam())) EXPECT_LT(err, 1e-3) << name;
}

INSTANTIATE_TEST_SUITE_P(RandomShapes, OpGradient, ::testing::Range(0, 5));

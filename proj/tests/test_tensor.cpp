#include <gtest/gtest.h>

#include <random>

#include "adabn/errors.hpp"
#include "adabn/tensor.hpp"
#include "oracles.hpp"

using namespace adabn;

TEST(Tensor, RejectsZeroExtentAndWrongDataLength) {
  EXPECT_THROW(Tensor({2, 0}), DimensionError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Tensor b = Tensor::matrix({{3, 4}, {5, 6}});
  EXPECT_EQ(matmul(Tensor::matrix({{1, 0}, {0, 1}}), b), b);
}

TEST(Matmul, RowTimesColumn) {
  const Tensor r = matmul(Tensor::matrix({{1, 2}}), Tensor::matrix({{3}, {4}}));
  EXPECT_EQ(r.shape(), (Shape{1, 1}));
  EXPECT_DOUBLE_EQ(r[0], 11.0);
}

TEST(Matmul, MatchesTripleLoopOnRandomPairs) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> ext(1, 9);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = ext(rng), k = ext(rng), n = ext(rng);
    const Tensor a = oracle::random_tensor({m, k}, rng);
    const Tensor b = oracle::random_tensor({k, n}, rng);
    EXPECT_LE(max_abs_diff(matmul(a, b), oracle::naive_matmul(a, b)), 1e-12);
  }
}

TEST(Matmul, ErrorNamesBothShapes) {
  try {
    matmul(Tensor({2, 3}), Tensor({4, 5}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4x5]"), std::string::npos) << msg;
  }
}

TEST(Conv2d, AllOnesHandCheck) {
  const Tensor y = conv2d(Tensor({1, 1, 3, 3}, 1.0), Tensor({1, 1, 2, 2}, 1.0), 1);
  EXPECT_EQ(y, Tensor({1, 1, 2, 2}, 4.0));
}

TEST(Conv2d, UnitKernelIsIdentity) {
  std::mt19937_64 rng(3);
  const Tensor x = oracle::random_tensor({2, 1, 5, 4}, rng);
  EXPECT_EQ(conv2d(x, Tensor({1, 1, 1, 1}, 1.0), 1), x);
}

TEST(Conv2d, MatchesDirectLoop) {
  std::mt19937_64 rng(5);
  const Tensor x = oracle::random_tensor({2, 3, 6, 6}, rng);
  const Tensor k = oracle::random_tensor({4, 3, 3, 3}, rng);
  for (std::size_t stride : {1u, 2u}) {
    EXPECT_LE(max_abs_diff(conv2d(x, k, stride), oracle::naive_conv(x, k, stride)), 1e-12);
  }
}

TEST(Conv2d, RejectsChannelMismatchAndOversizedKernel) {
  EXPECT_THROW(conv2d(Tensor({1, 2, 4, 4}), Tensor({1, 3, 2, 2}), 1), DimensionError);
  EXPECT_THROW(conv2d(Tensor({1, 1, 2, 2}), Tensor({1, 1, 3, 3}), 1), DimensionError);
  EXPECT_THROW(conv2d(Tensor({1, 1, 4, 4}), Tensor({1, 1, 2, 2}), 0), PreconditionError);
}

TEST(ReduceMoments, ConstantColumn) {
  const Moments m = reduce_moments(Tensor({3, 1}, 1.0), {0});
  EXPECT_DOUBLE_EQ(m.mean[0], 1.0);
  EXPECT_DOUBLE_EQ(m.variance[0], 0.0);
}

TEST(ReduceMoments, TwoPointColumn) {
  const Moments m = reduce_moments(Tensor({2, 1}, std::vector<double>{0, 2}), {0});
  EXPECT_DOUBLE_EQ(m.mean[0], 1.0);
  EXPECT_DOUBLE_EQ(m.variance[0], 1.0);
}

TEST(ReduceMoments, MatchesTwoPassOverBatchAxis) {
  std::mt19937_64 rng(17);
  const Tensor x = oracle::random_tensor({64, 10}, rng, -3.0, 5.0);
  const Moments m = reduce_moments(x, {0});
  const auto o = oracle::two_pass(x.values(), 10);
  for (std::size_t j = 0; j < 10; ++j) {
    EXPECT_NEAR(m.mean[j], o.mean[j], 1e-12);
    EXPECT_NEAR(m.variance[j], o.variance[j], 1e-12);
  }
}

TEST(ReduceMoments, VarianceEqualsMeanSquareMinusSquareMean) {
  std::mt19937_64 rng(19);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = oracle::random_tensor({32, 4}, rng, -2.0, 2.0);
    const Moments m = reduce_moments(x, {0});
    for (std::size_t j = 0; j < 4; ++j) {
      double sq = 0.0;
      for (std::size_t i = 0; i < 32; ++i) sq += x.at(i, j) * x.at(i, j);
      EXPECT_NEAR(m.variance[j], sq / 32.0 - m.mean[j] * m.mean[j], 1e-10);
    }
  }
}

TEST(ReduceMoments, PerChannelOverBatchAndSpatialAxes) {
  std::mt19937_64 rng(23);
  const Tensor x = oracle::random_tensor({3, 2, 4, 5}, rng);
  const Moments m = reduce_moments(x, feature_reduction_axes(x));
  const auto o = oracle::two_pass_channels(x);
  ASSERT_EQ(m.mean.size(), 2u);
  for (std::size_t c = 0; c < 2; ++c) {
    EXPECT_NEAR(m.mean[c], o.mean[c], 1e-12);
    EXPECT_NEAR(m.variance[c], o.variance[c], 1e-12);
  }
}

TEST(Tensor, SliceAndGatherRows) {
  const Tensor x = Tensor::matrix({{1, 2}, {3, 4}, {5, 6}});
  EXPECT_EQ(x.slice_rows(1, 3), Tensor::matrix({{3, 4}, {5, 6}}));
  const std::vector<std::size_t> rows{2, 0, 2};
  EXPECT_EQ(x.gather_rows(rows), Tensor::matrix({{5, 6}, {1, 2}, {5, 6}}));
  EXPECT_THROW(x.slice_rows(2, 4), DimensionError);
}

// Copyright 2026 The Mixpert Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "mixpert/error.hpp"
#include "mixpert/ops.hpp"
#include "mixpert/tensor.hpp"
#include "oracles.hpp"

using namespace mixpert;

TEST(GradCheck, EveryLayerMatchesFiniteDifferencesOfDoubleReference) {
  Rng rng(7);
  for (std::size_t trial = 0; trial < 4; ++trial) {
    for (const auto& c : oracle::layer_cases(1, trial)) {
      const auto r = oracle::gradcheck(c, rng);
      EXPECT_LT(r.max_rel_error, 1e-3) << c.name << " trial " << trial << " worst " << r.worst;
      EXPECT_LT(r.max_forward_error, 1e-5) << c.name << " forward";
    }
  }
}

TEST(Tape, FrozenTensorsReceiveNoGradient) {
  Rng rng(1);
  Tensor x = oracle::random_tensor({3, 4}, rng, 1.0, false);
  Tensor w = oracle::random_tensor({2, 4}, rng, 1.0, false);
  Tensor b = oracle::random_tensor({2}, rng, 1.0, true);
  backward(nn::sum(nn::linear(x, w, b)));
  EXPECT_FALSE(x.has_grad());
  EXPECT_FALSE(w.has_grad());
  ASSERT_TRUE(b.has_grad());
  EXPECT_FLOAT_EQ(b.grad()[0], 3.0f);
  EXPECT_EQ(tape_size(), 0u);
}

TEST(Tape, NoGradGuardRecordsNothing) {
  Rng rng(2);
  Tensor x = oracle::random_tensor({2, 3}, rng);
  {
    NoGradGuard guard;
    Tensor y = nn::gelu(x);
    EXPECT_FALSE(y.requires_grad());
    EXPECT_EQ(tape_size(), 0u);
  }
  EXPECT_TRUE(grad_enabled());
}

TEST(Tape, GradientsAccumulateAcrossUses) {
  Tensor x({2}, std::vector<float>{1.0f, 2.0f}, true);
  backward(nn::sum(nn::add(x, x)));
  EXPECT_FLOAT_EQ(x.grad()[0], 2.0f);
  EXPECT_FLOAT_EQ(x.grad()[1], 2.0f);
}

TEST(Tape, NonFiniteLossIsRejected) {
  Tensor x({1}, std::vector<float>{std::numeric_limits<float>::infinity()}, true);
  EXPECT_THROW(backward(nn::sum(x)), NumericError);
  EXPECT_EQ(tape_size(), 0u);
}

TEST(Ops, SoftmaxRowsSumToOneAndAreShiftInvariant) {
  Rng rng(3);
  Tensor x = oracle::random_tensor({4, 5}, rng, 3.0, false);
  Tensor shifted({4, 5}, false);
  for (std::size_t i = 0; i < x.numel(); ++i) shifted.data()[i] = x.data()[i] + 10.0f;
  const Tensor a = nn::softmax(x), b = nn::softmax(shifted);
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 5; ++c) {
      s += a.data()[r * 5 + c];
      EXPECT_NEAR(a.data()[r * 5 + c], b.data()[r * 5 + c], 1e-6);
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Ops, MeanPoolMatchesOracle) {
  Rng rng(4);
  Tensor x = oracle::random_tensor({6, 3}, rng, 1.0, false);
  const auto ref = oracle::mean_pool(oracle::to_vec(x), 2, 3);
  const Tensor y = nn::mean_pool(x, 2);
  ASSERT_EQ(y.shape(), (Shape{2, 3}));
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.data()[i], ref[i], 1e-6);
}

TEST(Ops, ShapeMismatchRaisesDimensionError) {
  Tensor x({2, 3}), w({4, 5}), b({4});
  EXPECT_THROW(nn::linear(x, w, b), DimensionError);
  EXPECT_THROW(nn::attention(Tensor({4, 7}), 1, 1), DimensionError);
  EXPECT_THROW(nn::mean_pool(Tensor({5, 2}), 2), DimensionError);
}

TEST(Ops, CrossEntropyRejectsOutOfRangeLabels) {
  Tensor x({1, 3});
  const std::vector<int> bad{3};
  EXPECT_THROW(nn::cross_entropy(x, bad), ContractError);
}

TEST(FlopCounter, CountsLinearByConvention) {
  Tensor x({5, 4}), w({3, 4}), b({3});
  FlopCounter counter;
  nn::linear(x, w, b);
  EXPECT_EQ(counter.count(), 2u * 5 * 4 * 3 + 5 * 3);
}

TEST(FlopCounter, OuterCounterIncludesNestedWork) {
  Tensor x({2, 2});
  FlopCounter outer;
  nn::add(x, x);
  {
    FlopCounter inner;
    nn::add(x, x);
    EXPECT_EQ(inner.count(), 4u);
  }
  EXPECT_EQ(outer.count(), 8u);
}

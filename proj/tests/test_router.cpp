// Copyright 2026 The Mixpert Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "mixpert/error.hpp"
#include "mixpert/router.hpp"

using namespace mixpert;

namespace {

std::array<float, kNumDomains> random_probabilities(Rng& rng, double sharpness) {
  std::array<double, kNumDomains> logits{};
  double peak = -1e300;
  for (auto& l : logits) {
    l = sharpness * rng.normal();
    peak = std::max(peak, l);
  }
  double total = 0.0;
  for (auto& l : logits) total += (l = std::exp(l - peak));
  std::array<float, kNumDomains> out{};
  for (std::size_t i = 0; i < kNumDomains; ++i) out[i] = float(logits[i] / total);
  return out;
}

// Sorts a copy to find the top two scores; the first maximal index wins.
struct Reference {
  std::size_t top = 0;
  double first = 0.0, second = 0.0;
};

Reference reference_rank(const std::array<float, kNumDomains>& s) {
  std::vector<std::pair<float, std::size_t>> order;
  for (std::size_t i = 0; i < kNumDomains; ++i) order.emplace_back(s[i], i);
  std::stable_sort(order.begin(), order.end(), [](auto a, auto b) { return a.first > b.first; });
  return {order[0].second, order[0].first, order[1].first};
}

}  // namespace

TEST(Decide, AgreesWithSortedReferenceForEveryStrategy) {
  Rng rng(11);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto s = random_probabilities(rng, 0.2 + 3.0 * rng.uniform());
    const RoutingPolicy policy{RoutingStrategy::Direct, rng.uniform(), rng.uniform()};
    const Reference ref = reference_rank(s);
    const auto expert = static_cast<ExpertId>(ref.top);
    for (auto strategy : {RoutingStrategy::Direct, RoutingStrategy::ScoreThreshold, RoutingStrategy::ScoreDifference}) {
      RoutingPolicy p = policy;
      p.strategy = strategy;
      const RoutingDecision d = decide(s, p);
      bool keep = true;
      if (strategy == RoutingStrategy::ScoreThreshold) keep = ref.first >= p.lambda;
      if (strategy == RoutingStrategy::ScoreDifference) keep = float(ref.first - ref.second) >= float(p.tau);
      EXPECT_EQ(d.top_domain, static_cast<DomainLabel>(ref.top));
      EXPECT_EQ(d.chosen, keep ? expert : ExpertId::Versatile);
      EXPECT_EQ(d.fell_back, !keep);
      EXPECT_FLOAT_EQ(d.s_top, float(ref.first));
      EXPECT_FLOAT_EQ(d.s_second, float(ref.second));
    }
  }
}

TEST(Decide, ScoreDifferenceBoundaryKeepsTheExpert) {
  const std::array<float, 5> s{0.5f, 0.25f, 0.125f, 0.0625f, 0.0625f};
  const auto d = decide(s, {RoutingStrategy::ScoreDifference, 0.25, 0.5});
  EXPECT_EQ(d.chosen, ExpertId::Chart);
  EXPECT_FLOAT_EQ(d.s_d, 0.25f);
  EXPECT_TRUE(decide(s, {RoutingStrategy::ScoreDifference, 0.2500001, 0.5}).fell_back);
  EXPECT_FALSE(decide(s, {RoutingStrategy::ScoreThreshold, 0.0, 0.5}).fell_back);
}

TEST(Decide, ZeroThresholdsReduceToDirect) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const auto s = random_probabilities(rng, 1.0);
    const auto direct = decide(s, {RoutingStrategy::Direct, 0.6, 0.5});
    EXPECT_EQ(decide(s, {RoutingStrategy::ScoreDifference, 0.0, 0.5}).chosen, direct.chosen);
    EXPECT_EQ(decide(s, {RoutingStrategy::ScoreThreshold, 0.6, 0.0}).chosen, direct.chosen);
    EXPECT_FALSE(direct.fell_back);
  }
}

TEST(Decide, FallbackRateIsMonotoneInTau) {
  Rng rng(5);
  std::vector<std::array<float, kNumDomains>> pool;
  for (int i = 0; i < 500; ++i) pool.push_back(random_probabilities(rng, 1.5));
  std::size_t previous = 0;
  for (double tau = 0.0; tau <= 1.0001; tau += 0.05) {
    std::size_t fallbacks = 0;
    for (const auto& s : pool) fallbacks += decide(s, {RoutingStrategy::ScoreDifference, std::min(tau, 1.0), 0.5}).fell_back;
    EXPECT_GE(fallbacks, previous) << "tau " << tau;
    previous = fallbacks;
  }
  EXPECT_EQ(previous, pool.size());
}

TEST(Decide, TiesGoToTheLowestIndexAndFallBackUnderScoreDifference) {
  const std::array<float, 5> s{0.1f, 0.35f, 0.1f, 0.35f, 0.1f};
  EXPECT_EQ(tie_break(s), 1u);
  const auto d = decide(s, {RoutingStrategy::ScoreDifference, 0.01, 0.5});
  EXPECT_EQ(d.top_domain, DomainLabel::Doc);
  EXPECT_TRUE(d.fell_back);
  EXPECT_EQ(decide(s, {RoutingStrategy::Direct, 0.6, 0.5}).chosen, ExpertId::Doc);
  const std::array<float, 5> uniform{0.2f, 0.2f, 0.2f, 0.2f, 0.2f};
  EXPECT_EQ(tie_break(uniform), 0u);
}

TEST(Decide, RejectsNonProbabilityVectors) {
  const RoutingPolicy p;
  EXPECT_THROW(decide(std::array<float, 4>{0.25f, 0.25f, 0.25f, 0.25f}, p), ContractError);
  EXPECT_THROW(decide(std::array<float, 5>{0.5f, 0.5f, 0.5f, 0.0f, 0.0f}, p), ContractError);
  EXPECT_THROW(decide(std::array<float, 5>{1.2f, -0.2f, 0.0f, 0.0f, 0.0f}, p), ContractError);
  EXPECT_THROW(decide(std::array<float, 5>{NAN, 0.25f, 0.25f, 0.25f, 0.25f}, p), ContractError);
}

TEST(Policy, ValidatesRanges) {
  EXPECT_THROW((RoutingPolicy{RoutingStrategy::ScoreDifference, 1.5, 0.5}.validate()), ConfigError);
  EXPECT_THROW((RoutingPolicy{RoutingStrategy::ScoreThreshold, 0.5, -0.1}.validate()), ConfigError);
  EXPECT_NO_THROW((RoutingPolicy{RoutingStrategy::Direct, 0.0, 1.0}.validate()));
}

TEST(Names, RoundTrip) {
  for (auto s : {RoutingStrategy::Direct, RoutingStrategy::ScoreThreshold, RoutingStrategy::ScoreDifference}) {
    EXPECT_EQ(parse_strategy(strategy_name(s)), s);
  }
  for (auto e : kAllExperts) EXPECT_EQ(parse_expert(expert_name(e)), e);
  EXPECT_THROW(parse_strategy("nearest"), ConfigError);
  EXPECT_THROW(parse_expert("audio"), ConfigError);
}

TEST(RouterNet, ScoresAreInvariantToAConstantLogitShift) {
  Rng rng(8);
  RouterNet net = RouterNet::create(6, 4, rng);
  for (auto& v : net.fc2.weight.data()) v = float(rng.normal());
  Tensor pooled({3, 6});
  for (auto& v : pooled.data()) v = float(rng.normal());
  const Tensor a = route_scores(pooled, net);
  for (auto& b : net.fc2.bias.data()) b += 7.0f;
  const Tensor b = route_scores(pooled, net);
  ASSERT_EQ(a.shape(), (Shape{3, kNumDomains}));
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-6);
}

TEST(RouterNet, UntrainedRouterIsUniform) {
  Rng rng(1);
  const RouterNet net = RouterNet::create(6, 4, rng);
  Tensor pooled({2, 6});
  for (auto& v : pooled.data()) v = float(rng.normal());
  for (float s : route_scores(pooled, net).data()) EXPECT_FLOAT_EQ(s, 0.2f);
}

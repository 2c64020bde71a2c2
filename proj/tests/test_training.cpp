// Copyright 2026 The Mixpert Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "mixpert/error.hpp"
#include "mixpert/ops.hpp"
#include "mixpert/training.hpp"

using namespace mixpert;

namespace {

EncoderConfig tiny_encoder() {
  EncoderConfig c;
  c.total_layers = 2;
  c.shared_layers = 1;
  c.embed_dim = 8;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.projector_hidden = 16;
  c.projector_out = 8;
  return c;
}

Corpus tiny_corpus() {
  DatasetManifest m;
  m.train_per_domain = 12;
  m.val_per_domain = 4;
  m.test_per_domain = 4;
  m.ambiguous_count = 4;
  return generate_corpus(m);
}

OptimizerConfig tiny_opt() {
  OptimizerConfig o;
  o.batch_size = 16;
  o.encoder_lr = 1e-3;
  o.projector_lr = 5e-3;
  return o;
}

}  // namespace

TEST(Schedule, WarmupThenCosine) {
  const double peak = 2.0;
  EXPECT_DOUBLE_EQ(lr_at(0, 100, 0.1, peak), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(5, 100, 0.1, peak), 1.0);
  EXPECT_DOUBLE_EQ(lr_at(10, 100, 0.1, peak), peak);
  EXPECT_NEAR(lr_at(55, 100, 0.1, peak), peak * 0.5, 1e-12);
  EXPECT_NEAR(lr_at(99, 100, 0.1, peak), peak * 0.5 * (1.0 + std::cos(std::numbers::pi * 89.0 / 90.0)), 1e-12);
  EXPECT_DOUBLE_EQ(lr_at(100, 100, 0.1, peak), 0.0);
  // Warmup rounds up: 3% of 10 steps is one step.
  EXPECT_DOUBLE_EQ(lr_at(1, 10, 0.03, peak), peak);
  EXPECT_DOUBLE_EQ(lr_at(0, 10, 0.0, peak), peak);
}

TEST(Schedule, NeverExceedsPeakAndDecaysMonotonically) {
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t s = 7; s <= 200; ++s) {
    const double v = lr_at(s, 200, 0.03, 1.0);
    EXPECT_LE(v, 1.0);
    EXPECT_LE(v, prev);
    prev = v;
  }
}

TEST(AdamW, MatchesHandComputedSteps) {
  Tensor w({2}, std::vector<float>{1.0f, -2.0f}, true);
  Tensor b({1}, std::vector<float>{0.5f}, true);
  OptimizerConfig opt;
  opt.beta1 = 0.9;
  opt.beta2 = 0.99;
  opt.eps = 1e-8;
  opt.weight_decay = 0.1;
  AdamW adam({{"g", {{"w", w, ParamKind::Weight}, {"b", b, ParamKind::Bias}}, 0.01}}, opt);

  double mw[2] = {0, 0}, vw[2] = {0, 0}, xw[2] = {1.0, -2.0};
  double mb = 0, vb = 0, xb = 0.5;
  const double grads[3][3] = {{0.3, -0.7, 1.0}, {0.1, 0.2, -0.5}, {-0.4, 0.0, 0.25}};
  const double sched[3] = {1.0, 0.5, 0.25};
  for (int t = 1; t <= 3; ++t) {
    w.zero_grad();
    b.zero_grad();
    Tensor loss = nn::add(nn::sum(nn::mul(w, Tensor({2}, std::vector<float>{float(grads[t - 1][0]), float(grads[t - 1][1])}))),
                          nn::sum(nn::mul(b, Tensor({1}, std::vector<float>{float(grads[t - 1][2])}))));
    backward(loss);
    adam.step(sched[t - 1]);
    const double lr = 0.01 * sched[t - 1];
    const double c1 = 1 - std::pow(0.9, t), c2 = 1 - std::pow(0.99, t);
    for (int i = 0; i < 2; ++i) {
      const double g = float(grads[t - 1][i]);
      mw[i] = float(0.9 * mw[i] + 0.1 * g);
      vw[i] = float(0.99 * vw[i] + 0.01 * g * g);
      xw[i] -= lr * 0.1 * xw[i];
      xw[i] -= lr * (mw[i] / c1) / (std::sqrt(vw[i] / c2) + 1e-8);
      xw[i] = float(xw[i]);
      EXPECT_NEAR(w.data()[i], xw[i], 1e-6) << "step " << t << " w" << i;
    }
    const double g = float(grads[t - 1][2]);
    mb = float(0.9 * mb + 0.1 * g);
    vb = float(0.99 * vb + 0.01 * g * g);
    xb = float(xb - lr * (mb / c1) / (std::sqrt(vb / c2) + 1e-8));
    EXPECT_NEAR(b.data()[0], xb, 1e-6) << "step " << t << " bias is not decayed";
  }
  EXPECT_EQ(adam.steps_taken(), 3u);
}

TEST(Shuffle, IsADeterministicPermutation) {
  const auto a = shuffled_indices(257, 42), b = shuffled_indices(257, 42), c = shuffled_indices(257, 43);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> iota(257);
  std::iota(iota.begin(), iota.end(), 0);
  EXPECT_EQ(sorted, iota);
}

TEST(JointTraining, LossFallsAndRunIsReproducible) {
  const Corpus c = tiny_corpus();
  auto opt = tiny_opt();
  opt.epochs = 10;
  opt.encoder_lr = 1e-2;
  opt.projector_lr = 1e-2;
  MonolithicModel a = MonolithicModel::create(tiny_encoder(), 1), b = MonolithicModel::create(tiny_encoder(), 1);
  const auto ra = train_joint(a, c.train, c.val, opt, 5);
  const auto rb = train_joint(b, c.train, c.val, opt, 5);
  EXPECT_EQ(ra.steps, 10u * 4u);
  EXPECT_EQ(ra.losses, rb.losses);
  EXPECT_EQ(checksum(a.parameters()), checksum(b.parameters()));
  EXPECT_LT(ra.final_loss(), ra.initial_loss());
  EXPECT_EQ(ra.to_csv(), rb.to_csv());
}

TEST(JointTraining, RequiresEveryDomain) {
  const Corpus c = tiny_corpus();
  MonolithicModel m = MonolithicModel::create(tiny_encoder(), 1);
  EXPECT_THROW(train_joint(m, filter_domain(c.train, DomainLabel::Math), c.val, tiny_opt(), 0), ContractError);
}

TEST(JointTraining, NonFiniteWeightsRaiseDivergence) {
  const Corpus c = tiny_corpus();
  MonolithicModel m = MonolithicModel::create(tiny_encoder(), 1);
  m.projector.fc2.bias.data()[0] = std::numeric_limits<float>::quiet_NaN();
  // Without a validation set the first non-finite value appears inside a step.
  EXPECT_THROW(train_joint(m, c.train, {}, tiny_opt(), 0), DivergenceError);
  EXPECT_EQ(tape_size(), 0u);
}

TEST(RouterTraining, TouchesOnlyTheRouter) {
  const Corpus c = tiny_corpus();
  MixpertConfig cfg;
  cfg.encoder = tiny_encoder();
  cfg.router_hidden = 8;
  MixpertModel mx = from_joint(MonolithicModel::create(tiny_encoder(), 1), cfg, 2);
  const auto frozen = checksum(mx.trunk.parameters());
  const auto branches = checksum(mx.expert(ExpertId::Chart).parameters());
  const auto before = checksum(mx.router.parameters());
  auto opt = tiny_opt();
  opt.projector_lr = 3e-2;
  opt.epochs = 20;
  const auto report = train_router(mx.router, mx.trunk, mx.config.encoder, c.train, c.val, opt, 1);
  EXPECT_NE(checksum(mx.router.parameters()), before);
  EXPECT_EQ(checksum(mx.trunk.parameters()), frozen);
  EXPECT_EQ(checksum(mx.expert(ExpertId::Chart).parameters()), branches);
  EXPECT_LT(report.final_loss(), report.initial_loss());
  ASSERT_EQ(report.confusion.size(), kNumDomains);
  std::size_t total = 0;
  for (const auto& row : report.confusion) total += std::accumulate(row.begin(), row.end(), std::size_t{0});
  EXPECT_EQ(total, c.val.size());
}

TEST(Evaluation, RoutedMatchesForcedUnderDirectWithAPerfectRouter) {
  const Corpus c = tiny_corpus();
  MixpertConfig cfg;
  cfg.encoder = tiny_encoder();
  cfg.router_hidden = 8;
  MixpertModel mx = from_joint(MonolithicModel::create(tiny_encoder(), 1), cfg, 2);
  // All branches are identical, so forcing any of them equals routed accuracy
  // whenever the router's head domain is right; a large Doc bias routes all
  // inputs to Doc.
  mx.router.fc2.bias.data()[domain_index(DomainLabel::Doc)] = 40.0f;
  const auto docs = filter_domain(c.test, DomainLabel::Doc);
  const auto routed = evaluate_routed(mx, docs, {RoutingStrategy::Direct, 0.6, 0.5});
  const auto forced = evaluate_forced(mx, docs, ExpertId::Doc);
  EXPECT_DOUBLE_EQ(routed.accuracy.accuracy[domain_index(DomainLabel::Doc)],
                   forced.accuracy[domain_index(DomainLabel::Doc)]);
  EXPECT_DOUBLE_EQ(routed.fallback_rate, 0.0);
  const auto charts = filter_domain(c.test, DomainLabel::Chart);
  EXPECT_DOUBLE_EQ(evaluate_routed(mx, charts, {RoutingStrategy::Direct, 0.6, 0.5}).mean_accuracy, 0.0);
}

// Copyright 2026 The Mixpert Authors.
// SPDX-License-Identifier: Apache-2.0

#include "mixpert/router.hpp"

#include <cmath>
#include <string>

#include "mixpert/error.hpp"
#include "mixpert/ops.hpp"

namespace mixpert {

std::string_view expert_name(ExpertId e) {
  if (e == ExpertId::Versatile) return "versatile";
  return domain_name(static_cast<DomainLabel>(e));
}

ExpertId parse_expert(std::string_view name) {
  if (name == "versatile") return ExpertId::Versatile;
  return expert_for(parse_domain(name));
}

std::string_view strategy_name(RoutingStrategy s) {
  switch (s) {
    case RoutingStrategy::Direct: return "direct";
    case RoutingStrategy::ScoreThreshold: return "score-threshold";
    case RoutingStrategy::ScoreDifference: return "score-difference";
  }
  throw ContractError("invalid routing strategy");
}

RoutingStrategy parse_strategy(std::string_view name) {
  for (auto s : {RoutingStrategy::Direct, RoutingStrategy::ScoreThreshold, RoutingStrategy::ScoreDifference}) {
    if (strategy_name(s) == name) return s;
  }
  throw ConfigError("unknown routing strategy '" + std::string(name) + "'");
}

void RoutingPolicy::validate() const {
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in [0, 1]");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
}

RouterNet RouterNet::create(std::size_t in, std::size_t hidden, Rng& rng) {
  return {LinearLayer::create(in, hidden, rng), LinearLayer::zeros(hidden, kNumDomains)};
}

void RouterNet::collect(const std::string& prefix, ParamList& out) const {
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

ParamList RouterNet::parameters(const std::string& prefix) const {
  ParamList out;
  collect(prefix, out);
  return out;
}

Tensor RouterNet::logits(const Tensor& pooled) const { return fc2.forward(nn::gelu(fc1.forward(pooled))); }

Tensor route_scores(const Tensor& pooled, const RouterNet& net) {
  if (pooled.rank() == 1) {
    Tensor logits = net.logits(pooled.reshaped({1, pooled.dim(0)}));
    check_finite(logits, "router logits");
    return nn::softmax(logits.reshaped({kNumDomains}));
  }
  Tensor logits = net.logits(pooled);
  check_finite(logits, "router logits");
  return nn::softmax(logits);
}

std::size_t tie_break(std::span<const float> scores) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

RoutingDecision decide(std::span<const float> scores, const RoutingPolicy& policy) {
  if (scores.size() != kNumDomains) {
    throw ContractError("decide: expected " + std::to_string(kNumDomains) + " scores, got " +
                        std::to_string(scores.size()));
  }
  double total = 0.0;
  for (float s : scores) {
    if (!std::isfinite(s) || s < 0.0f || s > 1.0f) throw ContractError("decide: scores are not probabilities");
    total += s;
  }
  if (std::abs(total - 1.0) > 1e-5) throw ContractError("decide: scores do not sum to 1");

  RoutingDecision d;
  std::copy(scores.begin(), scores.end(), d.scores.begin());
  const std::size_t top = tie_break(scores);
  d.top_domain = domain_from_code(int(top));
  d.s_top = scores[top];
  float second = 0.0f;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (i != top) second = std::max(second, scores[i]);
  }
  d.s_second = second;
  d.s_d = d.s_top - d.s_second;
  d.strategy = policy.strategy;

  bool keep = true;
  switch (policy.strategy) {
    case RoutingStrategy::Direct: break;
    case RoutingStrategy::ScoreThreshold: keep = double(d.s_top) >= policy.lambda; break;
    case RoutingStrategy::ScoreDifference: keep = double(d.s_d) >= policy.tau; break;
  }
  d.fell_back = !keep;
  d.chosen = keep ? expert_for(d.top_domain) : ExpertId::Versatile;
  return d;
}

RoutingDecision route(const Tensor& image, const SharedTrunk& trunk, const EncoderConfig& config, const RouterNet& net,
                      const RoutingPolicy& policy) {
  NoGradGuard no_grad;
  Tensor scores = route_scores(pool_global(encode_shared_image(image, trunk, config)), net);
  return decide(scores.data(), policy);
}

}  // namespace mixpert

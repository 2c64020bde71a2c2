// Copyright 2026 The Mixpert Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

#include "mixpert/dataset.hpp"
#include "mixpert/encoder.hpp"
#include "mixpert/layers.hpp"

namespace mixpert {

// Task experts map 1:1 onto DomainLabel codes; Versatile is index 5.
enum class ExpertId : std::uint8_t { Chart = 0, Doc = 1, Math = 2, Ocr = 3, General = 4, Versatile = 5 };

inline constexpr std::size_t kNumExperts = 6;
inline constexpr std::array<ExpertId, kNumExperts> kAllExperts = {ExpertId::Chart, ExpertId::Doc,     ExpertId::Math,
                                                                  ExpertId::Ocr,   ExpertId::General, ExpertId::Versatile};

inline ExpertId expert_for(DomainLabel d) { return static_cast<ExpertId>(d); }
inline std::size_t expert_index(ExpertId e) { return static_cast<std::size_t>(e); }
std::string_view expert_name(ExpertId e);
ExpertId parse_expert(std::string_view name);

enum class RoutingStrategy : std::uint8_t { Direct, ScoreThreshold, ScoreDifference };

std::string_view strategy_name(RoutingStrategy s);
RoutingStrategy parse_strategy(std::string_view name);

struct RoutingPolicy {
  RoutingStrategy strategy = RoutingStrategy::ScoreDifference;
  double tau = 0.6;     // score-difference threshold
  double lambda = 0.5;  // score-threshold cutoff

  void validate() const;
};

// Two-layer MLP over pooled shared features: d -> hidden -> 5, GELU between.
struct RouterNet {
  LinearLayer fc1;
  LinearLayer fc2;

  // The output layer starts at zero, so an untrained router is uniform.
  static RouterNet create(std::size_t in, std::size_t hidden, Rng& rng);
  RouterNet clone() const { return {fc1.clone(), fc2.clone()}; }
  std::size_t parameter_count() const { return fc1.parameter_count() + fc2.parameter_count(); }
  void collect(const std::string& prefix, ParamList& out) const;
  ParamList parameters(const std::string& prefix = "router") const;

  // pooled [n, d] -> logits [n, 5]
  Tensor logits(const Tensor& pooled) const;
};

struct RoutingDecision {
  std::array<float, kNumDomains> scores{};
  ExpertId chosen = ExpertId::Versatile;
  DomainLabel top_domain = DomainLabel::Chart;  // argmax, also when falling back
  float s_top = 0.0f;
  float s_second = 0.0f;
  float s_d = 0.0f;
  RoutingStrategy strategy = RoutingStrategy::Direct;
  bool fell_back = false;
};

// softmax(r(pooled)). pooled: [d] -> [5] or [n, d] -> [n, 5].
Tensor route_scores(const Tensor& pooled, const RouterNet& net);

// Lowest index among the maximal entries.
std::size_t tie_break(std::span<const float> scores);

// Applies the routing rule. Throws ContractError unless `scores` is a
// probability vector over the 5 task domains.
RoutingDecision decide(std::span<const float> scores, const RoutingPolicy& policy);

RoutingDecision route(const Tensor& image, const SharedTrunk& trunk, const EncoderConfig& config, const RouterNet& net,
                      const RoutingPolicy& policy);

}  // namespace mixpert

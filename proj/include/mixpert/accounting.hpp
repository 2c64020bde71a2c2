// Copyright 2026 The Mixpert Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Closed-form parameter and FLOP counts. FLOP conventions live in flops.hpp
// and are shared with the runtime counter in the kernels, so the two can be
// compared exactly.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mixpert/model.hpp"

namespace mixpert {

// Architecture shape, independent of weights. A monolithic model is one
// stored branch without a router.
struct ModelLayout {
  std::string name;
  EncoderConfig encoder;
  std::size_t stored_branches = 1;
  bool has_router = false;
  std::size_t router_hidden = 128;
  std::vector<std::size_t> head_classes;  // one entry per task head

  static ModelLayout monolithic(const EncoderConfig& encoder);
  static ModelLayout mixpert(const MixpertConfig& config);
};

// --- parameters --------------------------------------------------------------

std::uint64_t linear_params(std::size_t in, std::size_t out);
std::uint64_t block_params(const EncoderConfig& c);
std::uint64_t embedding_params(const EncoderConfig& c);
std::uint64_t projector_params(const EncoderConfig& c);
// `layers` deep blocks plus the projector.
std::uint64_t branch_params(const EncoderConfig& c, std::size_t layers);
std::uint64_t trunk_params(const EncoderConfig& c);
std::uint64_t router_params(std::size_t in, std::size_t hidden);
std::uint64_t head_params(const EncoderConfig& c, std::size_t classes);

std::uint64_t total_params(const ModelLayout& layout);
// Executed for one image: trunk + router + one branch + the head at
// `head_index`. The chosen branch does not matter since all are the same shape.
std::uint64_t activated_params(const ModelLayout& layout, std::size_t head_index);
std::uint64_t count_activated(const ModelLayout& layout, const RoutingDecision& decision);

// Reflective counts: walk every stored tensor.
std::uint64_t count_params(const MonolithicModel& model);
std::uint64_t count_params(const MixpertModel& model);

// --- FLOPs -------------------------------------------------------------------

// Per-image FLOPs of one encoder block, split by kind.
struct BlockFlops {
  std::uint64_t matmul = 0;     // MAC terms of the four linear layers
  std::uint64_t bias = 0;       // bias additions of the four linear layers
  std::uint64_t attention = 0;  // scores, weighted sum, query scaling, softmax
  std::uint64_t norm = 0;
  std::uint64_t activation = 0;
  std::uint64_t residual = 0;
  std::uint64_t total() const { return matmul + bias + attention + norm + activation + residual; }
};

std::uint64_t linear_flops(std::size_t rows, std::size_t in, std::size_t out);
BlockFlops block_flops(const EncoderConfig& c);
std::uint64_t embedding_flops(const EncoderConfig& c);
std::uint64_t projector_flops(const EncoderConfig& c);
std::uint64_t branch_flops(const EncoderConfig& c, std::size_t layers);
std::uint64_t trunk_flops(const EncoderConfig& c);
// Pooling of the trunk output, both MLP layers and the softmax.
std::uint64_t router_flops(const EncoderConfig& c, std::size_t hidden);
// Pooling of the projector output plus one task head.
std::uint64_t head_flops(const EncoderConfig& c, std::size_t classes);

std::uint64_t count_flops(const ModelLayout& layout, std::size_t head_index);

// --- reports -----------------------------------------------------------------

struct ComponentCost {
  std::string component;
  std::uint64_t params = 0;  // stored
  std::uint64_t flops = 0;   // executed per image
};

// Breakdown params sum to total_params and breakdown flops to flops_per_image.
struct CostReport {
  std::string model;
  std::uint64_t total_params = 0;
  std::uint64_t activated_params = 0;
  std::uint64_t flops_per_image = 0;
  std::vector<ComponentCost> breakdown;
};

CostReport cost_report(const ModelLayout& layout, std::size_t head_index = 0);

inline constexpr const char* kCostCsvHeader = "# mixpert-cost v1";
std::string render_cost_table(std::span<const CostReport> reports);
std::string render_cost_csv(std::span<const CostReport> reports);

struct ScanRow {
  std::size_t expert_layers = 0;
  std::uint64_t additional_params = 0;              // five extra stored branches
  std::uint64_t additional_params_with_router = 0;
};

// Throws ConfigError when an entry exceeds total_layers.
std::vector<ScanRow> scan_layers(const EncoderConfig& c, std::span<const std::size_t> expert_layers,
                                 std::size_t router_hidden = 128);
std::string render_scan_table(std::span<const ScanRow> rows);
std::string render_scan_csv(std::span<const ScanRow> rows);

}  // namespace mixpert

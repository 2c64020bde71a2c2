// Copyright 2026 The Mixpert Authors.
// SPDX-License-Identifier: Apache-2.0
//
// The monolithic joint-SFT baseline and the Mixpert assembly built from it:
// shared trunk, five task branches, one versatile branch, router, and frozen
// per-domain task heads standing in for the language model.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mixpert/dataset.hpp"
#include "mixpert/encoder.hpp"
#include "mixpert/router.hpp"

namespace mixpert {

struct TaskHeads {
  std::array<LinearLayer, kNumDomains> heads;

  static TaskHeads create(std::size_t in, Rng& rng);
  TaskHeads clone() const;
  const LinearLayer& operator[](DomainLabel d) const { return heads[domain_index(d)]; }
  void collect(const std::string& prefix, ParamList& out) const;
  ParamList parameters(const std::string& prefix = "heads") const;
};

struct MixpertConfig {
  EncoderConfig encoder;
  std::size_t router_hidden = 128;
  RoutingPolicy policy;

  void validate() const;
};

struct MonolithicModel {
  EncoderConfig config;
  PatchEmbedding embed;
  std::vector<EncoderBlock> blocks;
  Projector projector;
  TaskHeads heads;

  static MonolithicModel create(const EncoderConfig& config, std::uint64_t seed);
  MonolithicModel clone() const;
  ParamList parameters() const;

  // Full encoder + projector: [batch * tokens, patch_dim] -> [batch * tokens, out].
  Tensor encode(const Tensor& patches, std::size_t batch) const;
};

struct MixpertModel {
  MixpertConfig config;
  SharedTrunk trunk;
  std::array<ExpertBranch, kNumExperts> experts;
  RouterNet router;
  TaskHeads heads;

  const ExpertBranch& expert(ExpertId id) const { return experts[expert_index(id)]; }
  ExpertBranch& expert(ExpertId id) { return experts[expert_index(id)]; }

  ParamList parameters() const;
  // Sets requires_grad for the post-split roles: trunk, heads and the
  // versatile branch frozen; task branches and router trainable.
  void apply_freezing() const;
};

// Splits `base` at config.encoder.shared_layers. Every branch (including
// Versatile) is a clone of base's deep blocks + projector; the router is
// freshly initialized from `router_seed`; trunk and heads are copied.
MixpertModel from_joint(const MonolithicModel& base, const MixpertConfig& config, std::uint64_t router_seed = 0);

struct InferResult {
  Tensor embedding;  // H_v, [tokens, out]
  RoutingDecision decision;
  Tensor task_logits;  // [K] of the decision's head
};

// Top-1 inference: exactly one branch executes. On fallback the versatile
// branch computes H_v and the head of the router's argmax domain is used.
InferResult infer(const Tensor& image, const MixpertModel& model);
InferResult infer(const Tensor& image, const MixpertModel& model, const RoutingPolicy& policy);

// Bypasses the router.
Tensor force_expert(const Tensor& image, const MixpertModel& model, ExpertId id);

// Batched helpers used by training and evaluation (no tape).
Tensor shared_features(const std::vector<const Sample*>& batch, const MixpertModel& model);
std::vector<RoutingDecision> route_batch(const Tensor& h_s, std::size_t batch, const MixpertModel& model,
                                         const RoutingPolicy& policy);

// Predicted task class for every sample when each is processed by the given
// branch and scored by `head_domains[i]`'s head.
std::vector<int> predict_with(const Tensor& h_s, std::size_t batch, const MixpertModel& model,
                              std::span<const ExpertId> branches, std::span<const DomainLabel> head_domains);

// --- checkpoints -------------------------------------------------------------
//
// Little-endian. "MXPC", u32 version, 11 u32 header fields (the EncoderConfig
// fields in declaration order, then router_hidden), u32 entry count, then per
// entry: u32 name length, name bytes, u32 rank, rank x u32 extents, f32 data.
// A CRC32 of all preceding bytes closes the file.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  EncoderConfig encoder;
  std::uint32_t router_hidden = 0;
  std::vector<std::pair<std::string, Tensor>> entries;
};

void save_checkpoint(const std::filesystem::path& file, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& file);
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

Checkpoint make_checkpoint(const EncoderConfig& encoder, std::size_t router_hidden, const ParamList& params);
// Copies entries into `params` by name. Every parameter must be present with
// an identical shape; extra entries are an error.
void load_params(const ParamList& params, const Checkpoint& ckpt);

Checkpoint to_checkpoint(const MonolithicModel& model);
Checkpoint to_checkpoint(const MixpertModel& model);
MonolithicModel monolithic_from_checkpoint(const Checkpoint& ckpt);
MixpertModel mixpert_from_checkpoint(const Checkpoint& ckpt, const RoutingPolicy& policy = {});

}  // namespace mixpert

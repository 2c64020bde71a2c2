// Copyright 2026 The Mixpert Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Vision encoder pieces: the shared shallow trunk (patch embedding, positions,
// first L_s blocks) and the per-expert deep branch (last L_e blocks plus the
// two-layer projector).

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mixpert/dataset.hpp"
#include "mixpert/layers.hpp"
#include "mixpert/rng.hpp"

namespace mixpert {

struct EncoderConfig {
  std::size_t total_layers = 6;
  std::size_t shared_layers = 4;
  std::size_t embed_dim = 64;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t patch_size = 4;
  std::size_t image_size = kImageSize;
  std::size_t channels = kImageChannels;
  std::size_t projector_hidden = 128;
  std::size_t projector_out = 64;

  std::size_t expert_layers() const { return total_layers - shared_layers; }
  std::size_t tokens() const { return (image_size / patch_size) * (image_size / patch_size); }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }

  // Throws ConfigError.
  void validate() const;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct PatchEmbedding {
  LinearLayer proj;   // patch_dim -> d
  Tensor positions;   // [tokens, d]

  static PatchEmbedding create(const EncoderConfig& config, Rng& rng);
  PatchEmbedding clone() const { return {proj.clone(), positions.clone()}; }
  void collect(const std::string& prefix, ParamList& out) const;
};

struct SharedTrunk {
  PatchEmbedding embed;
  std::vector<EncoderBlock> blocks;

  SharedTrunk clone() const;
  void collect(const std::string& prefix, ParamList& out) const;
  ParamList parameters(const std::string& prefix = "trunk") const;
};

struct Projector {
  LinearLayer fc1;  // d -> hidden
  LinearLayer fc2;  // hidden -> out

  static Projector create(const EncoderConfig& config, Rng& rng);
  Projector clone() const { return {fc1.clone(), fc2.clone()}; }
  void collect(const std::string& prefix, ParamList& out) const;
  Tensor forward(const Tensor& x) const;
};

struct ExpertBranch {
  std::vector<EncoderBlock> blocks;
  Projector projector;
  std::size_t first_layer = 0;  // global index of blocks[0]

  void collect(const std::string& prefix, ParamList& out) const;
  ParamList parameters(const std::string& prefix = "branch") const;
};

// Splits images into row-major patches: [batch * tokens, patch_dim].
Tensor patchify(std::span<const Sample* const> samples, const EncoderConfig& config);
Tensor patchify(const Tensor& image, const EncoderConfig& config);

// patches -> embed -> + positions, no blocks.
Tensor embed_patches(const Tensor& patches, const PatchEmbedding& embed, std::size_t batch);

// H_s = g_s(X): embedding then the trunk blocks. patches: [batch * tokens, patch_dim].
Tensor encode_shared(const Tensor& patches, const SharedTrunk& trunk, std::size_t batch);
// Single image [C, H, W] -> [tokens, d].
Tensor encode_shared_image(const Tensor& image, const SharedTrunk& trunk, const EncoderConfig& config);

// H_v = e_i(H_s): branch blocks then the projector applied tokenwise.
// Throws NumericError naming `branch_name` on a non-finite output.
Tensor encode_expert(const Tensor& h_s, const ExpertBranch& branch, std::size_t batch = 1,
                     const std::string& branch_name = "expert");

// Mean over tokens: [tokens, d] -> [d].
Tensor pool_global(const Tensor& h_s);

ExpertBranch clone_branch(const ExpertBranch& source);

// Number of ExpertBranch forwards executed on this thread.
std::uint64_t branch_forward_count();

}  // namespace mixpert

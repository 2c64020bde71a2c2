// Copyright 2026 The Mixpert Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mixpert/rng.hpp"
#include "mixpert/tensor.hpp"

namespace mixpert {

// Decides optimizer treatment: only Weight tensors are weight-decayed.
enum class ParamKind { Weight, Bias, Norm, Embedding };

struct ParamRef {
  std::string name;
  Tensor tensor;
  ParamKind kind;
};

using ParamList = std::vector<ParamRef>;

std::size_t count_elements(const ParamList& params);
void set_trainable(const ParamList& params, bool trainable);
void zero_grads(const ParamList& params);
// CRC32 over names and raw bytes; used to prove frozen state is untouched.
std::uint32_t checksum(const ParamList& params);

struct LinearLayer {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out]

  static LinearLayer create(std::size_t in, std::size_t out, Rng& rng, float init_std = 0.02f);
  static LinearLayer zeros(std::size_t in, std::size_t out);

  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }
  std::size_t parameter_count() const { return weight.numel() + bias.numel(); }

  Tensor forward(const Tensor& x) const;
  LinearLayer clone() const { return {weight.clone(), bias.clone()}; }
  void collect(const std::string& prefix, ParamList& out) const;
};

Tensor linear_forward(const Tensor& x, const LinearLayer& layer);

struct LayerNorm {
  Tensor gamma;
  Tensor beta;

  static LayerNorm create(std::size_t width);
  Tensor forward(const Tensor& x) const;
  LayerNorm clone() const { return {gamma.clone(), beta.clone()}; }
  void collect(const std::string& prefix, ParamList& out) const;
};

// Pre-norm transformer block:
//   x = x + out(attn(qkv(norm1(x))))
//   x = x + fc2(gelu(fc1(norm2(x))))
struct EncoderBlock {
  LayerNorm norm1;
  LinearLayer qkv;  // d -> 3d, fused q/k/v projections
  LinearLayer out;  // d -> d
  LayerNorm norm2;
  LinearLayer fc1;  // d -> mlp_ratio * d
  LinearLayer fc2;  // mlp_ratio * d -> d
  std::size_t heads = 1;

  static EncoderBlock create(std::size_t dim, std::size_t heads, std::size_t mlp_ratio, Rng& rng);

  std::size_t embed_dim() const { return qkv.in_features(); }
  EncoderBlock clone() const;
  void collect(const std::string& prefix, ParamList& out) const;
};

// tokens: [batch * n_tok, d]. Throws NumericError naming `layer_index` if the
// block produces a non-finite value.
Tensor block_forward(const Tensor& tokens, const EncoderBlock& block, std::size_t batch = 1, int layer_index = 0);

}  // namespace mixpert

// Copyright 2026 The Mixpert Authors.
// SPDX-License-Identifier: Apache-2.0

#include "mixpert/layers.hpp"

#include <zlib.h>

#include "mixpert/error.hpp"
#include "mixpert/ops.hpp"

namespace mixpert {

std::size_t count_elements(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

void set_trainable(const ParamList& params, bool trainable) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.set_requires_grad(trainable);
  }
}

void zero_grads(const ParamList& params) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
}

std::uint32_t checksum(const ParamList& params) {
  uLong crc = crc32(0L, Z_NULL, 0);
  for (const auto& p : params) {
    crc = crc32(crc, reinterpret_cast<const Bytef*>(p.name.data()), static_cast<uInt>(p.name.size()));
    const auto data = p.tensor.data();
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(data.size_bytes()));
  }
  return static_cast<std::uint32_t>(crc);
}

LinearLayer LinearLayer::create(std::size_t in, std::size_t out, Rng& rng, float init_std) {
  LinearLayer layer = zeros(in, out);
  for (float& w : layer.weight.data()) w = static_cast<float>(init_std * rng.normal());
  return layer;
}

LinearLayer LinearLayer::zeros(std::size_t in, std::size_t out) {
  return {Tensor({out, in}, true), Tensor({out}, true)};
}

Tensor LinearLayer::forward(const Tensor& x) const { return nn::linear(x, weight, bias); }

Tensor linear_forward(const Tensor& x, const LinearLayer& layer) { return layer.forward(x); }

void LinearLayer::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight, ParamKind::Weight});
  out.push_back({prefix + ".bias", bias, ParamKind::Bias});
}

LayerNorm LayerNorm::create(std::size_t width) {
  LayerNorm norm{Tensor::filled({width}, 1.0f), Tensor({width}, true)};
  norm.gamma.set_requires_grad(true);
  return norm;
}

Tensor LayerNorm::forward(const Tensor& x) const { return nn::layer_norm(x, gamma, beta); }

void LayerNorm::collect(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".gamma", gamma, ParamKind::Norm});
  out.push_back({prefix + ".beta", beta, ParamKind::Norm});
}

EncoderBlock EncoderBlock::create(std::size_t dim, std::size_t heads, std::size_t mlp_ratio, Rng& rng) {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("embed dim " + std::to_string(dim) + " not divisible by " + std::to_string(heads) + " heads");
  }
  EncoderBlock block;
  block.norm1 = LayerNorm::create(dim);
  block.qkv = LinearLayer::create(dim, 3 * dim, rng);
  block.out = LinearLayer::create(dim, dim, rng);
  block.norm2 = LayerNorm::create(dim);
  block.fc1 = LinearLayer::create(dim, mlp_ratio * dim, rng);
  block.fc2 = LinearLayer::create(mlp_ratio * dim, dim, rng);
  block.heads = heads;
  return block;
}

EncoderBlock EncoderBlock::clone() const {
  return {norm1.clone(), qkv.clone(), out.clone(), norm2.clone(), fc1.clone(), fc2.clone(), heads};
}

void EncoderBlock::collect(const std::string& prefix, ParamList& out_params) const {
  norm1.collect(prefix + ".norm1", out_params);
  qkv.collect(prefix + ".qkv", out_params);
  out.collect(prefix + ".out", out_params);
  norm2.collect(prefix + ".norm2", out_params);
  fc1.collect(prefix + ".fc1", out_params);
  fc2.collect(prefix + ".fc2", out_params);
}

Tensor block_forward(const Tensor& tokens, const EncoderBlock& block, std::size_t batch, int layer_index) {
  if (tokens.rank() != 2 || tokens.dim(1) != block.embed_dim()) {
    throw DimensionError("encoder block " + std::to_string(layer_index) + ": tokens " + shape_str(tokens.shape()) +
                         " vs embed dim " + std::to_string(block.embed_dim()));
  }
  Tensor attn = nn::attention(block.qkv.forward(block.norm1.forward(tokens)), batch, block.heads);
  Tensor x = nn::add(tokens, block.out.forward(attn));
  Tensor hidden = nn::gelu(block.fc1.forward(block.norm2.forward(x)));
  Tensor y = nn::add(x, block.fc2.forward(hidden));
  check_finite(y, "encoder block " + std::to_string(layer_index));
  return y;
}

}  // namespace mixpert

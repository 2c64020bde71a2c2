// Copyright 2026 The Mixpert Authors.
// SPDX-License-Identifier: Apache-2.0

#include "mixpert/encoder.hpp"

#include "mixpert/error.hpp"
#include "mixpert/ops.hpp"

namespace mixpert {

namespace {

thread_local std::uint64_t t_branch_forwards = 0;

void copy_patches(const float* image, float* dst, const EncoderConfig& c) {
  const std::size_t side = c.image_size / c.patch_size;
  for (std::size_t py = 0; py < side; ++py) {
    for (std::size_t px = 0; px < side; ++px) {
      for (std::size_t ch = 0; ch < c.channels; ++ch) {
        for (std::size_t dy = 0; dy < c.patch_size; ++dy) {
          for (std::size_t dx = 0; dx < c.patch_size; ++dx) {
            const std::size_t y = py * c.patch_size + dy, x = px * c.patch_size + dx;
            *dst++ = image[(ch * c.image_size + y) * c.image_size + x];
          }
        }
      }
    }
  }
}

}  // namespace

void EncoderConfig::validate() const {
  if (shared_layers > total_layers) {
    throw ConfigError("shared_layers " + std::to_string(shared_layers) + " exceeds total_layers " +
                      std::to_string(total_layers));
  }
  if (heads == 0 || embed_dim % heads != 0) throw ConfigError("embed_dim must be divisible by heads");
  if (patch_size == 0 || image_size % patch_size != 0) throw ConfigError("image_size must be a multiple of patch_size");
  if (embed_dim == 0 || mlp_ratio == 0 || projector_hidden == 0 || projector_out == 0 || channels == 0) {
    throw ConfigError("encoder dimensions must be positive");
  }
}

PatchEmbedding PatchEmbedding::create(const EncoderConfig& config, Rng& rng) {
  PatchEmbedding e{LinearLayer::create(config.patch_dim(), config.embed_dim, rng),
                   Tensor({config.tokens(), config.embed_dim}, true)};
  for (float& v : e.positions.data()) v = static_cast<float>(0.02 * rng.normal());
  return e;
}

void PatchEmbedding::collect(const std::string& prefix, ParamList& out) const {
  proj.collect(prefix + ".proj", out);
  out.push_back({prefix + ".positions", positions, ParamKind::Embedding});
}

SharedTrunk SharedTrunk::clone() const {
  SharedTrunk t{embed.clone(), {}};
  for (const auto& b : blocks) t.blocks.push_back(b.clone());
  return t;
}

void SharedTrunk::collect(const std::string& prefix, ParamList& out) const {
  embed.collect(prefix + ".embed", out);
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + ".blocks." + std::to_string(i), out);
}

ParamList SharedTrunk::parameters(const std::string& prefix) const {
  ParamList out;
  collect(prefix, out);
  return out;
}

Projector Projector::create(const EncoderConfig& config, Rng& rng) {
  return {LinearLayer::create(config.embed_dim, config.projector_hidden, rng),
          LinearLayer::create(config.projector_hidden, config.projector_out, rng)};
}

void Projector::collect(const std::string& prefix, ParamList& out) const {
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

Tensor Projector::forward(const Tensor& x) const { return fc2.forward(nn::gelu(fc1.forward(x))); }

void ExpertBranch::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + ".blocks." + std::to_string(i), out);
  projector.collect(prefix + ".projector", out);
}

ParamList ExpertBranch::parameters(const std::string& prefix) const {
  ParamList out;
  collect(prefix, out);
  return out;
}

Tensor patchify(std::span<const Sample* const> samples, const EncoderConfig& config) {
  if (samples.empty()) throw DimensionError("patchify: empty batch");
  if (config.image_size != kImageSize || config.channels != kImageChannels) {
    throw ConfigError("patchify: config image geometry does not match the corpus");
  }
  const std::size_t tokens = config.tokens(), pd = config.patch_dim();
  Tensor out({samples.size() * tokens, pd});
  std::vector<float> image(kPixels);
  for (std::size_t b = 0; b < samples.size(); ++b) {
    for (std::size_t i = 0; i < kPixels; ++i) image[i] = samples[b]->pixel(i);
    copy_patches(image.data(), out.data().data() + b * tokens * pd, config);
  }
  return out;
}

Tensor patchify(const Tensor& image, const EncoderConfig& config) {
  if (image.shape() != Shape{config.channels, config.image_size, config.image_size}) {
    throw ConfigError("image " + shape_str(image.shape()) + " does not match encoder config");
  }
  Tensor out({config.tokens(), config.patch_dim()});
  copy_patches(image.data().data(), out.data().data(), config);
  return out;
}

Tensor embed_patches(const Tensor& patches, const PatchEmbedding& embed, std::size_t batch) {
  if (patches.rank() != 2 || patches.dim(1) != embed.proj.in_features() ||
      patches.dim(0) != batch * embed.positions.dim(0)) {
    throw ConfigError("patch tensor " + shape_str(patches.shape()) + " does not match the embedding");
  }
  return nn::add_positions(embed.proj.forward(patches), embed.positions);
}

Tensor encode_shared(const Tensor& patches, const SharedTrunk& trunk, std::size_t batch) {
  Tensor x = embed_patches(patches, trunk.embed, batch);
  for (std::size_t i = 0; i < trunk.blocks.size(); ++i) x = block_forward(x, trunk.blocks[i], batch, int(i));
  return x;
}

Tensor encode_shared_image(const Tensor& image, const SharedTrunk& trunk, const EncoderConfig& config) {
  return encode_shared(patchify(image, config), trunk, 1);
}

Tensor encode_expert(const Tensor& h_s, const ExpertBranch& branch, std::size_t batch, const std::string& branch_name) {
  const std::size_t d = branch.projector.fc1.in_features();
  if (h_s.rank() != 2 || h_s.dim(1) != d) {
    throw DimensionError(branch_name + ": input " + shape_str(h_s.shape()) + " vs width " + std::to_string(d));
  }
  ++t_branch_forwards;
  Tensor x = h_s;
  for (std::size_t i = 0; i < branch.blocks.size(); ++i) {
    x = block_forward(x, branch.blocks[i], batch, int(branch.first_layer + i));
  }
  Tensor y = branch.projector.forward(x);
  check_finite(y, "expert branch '" + branch_name + "'");
  return y;
}

Tensor pool_global(const Tensor& h_s) {
  if (h_s.rank() != 2) throw DimensionError("pool_global: expected [tokens, d], got " + shape_str(h_s.shape()));
  return nn::mean_pool(h_s, 1).reshaped({h_s.dim(1)});
}

ExpertBranch clone_branch(const ExpertBranch& source) {
  ExpertBranch b;
  for (const auto& blk : source.blocks) b.blocks.push_back(blk.clone());
  b.projector = source.projector.clone();
  b.first_layer = source.first_layer;
  return b;
}

std::uint64_t branch_forward_count() { return t_branch_forwards; }

}  // namespace mixpert

// Copyright 2026 The Mixpert Authors.
// SPDX-License-Identifier: Apache-2.0

#include "mixpert/model.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <map>

#include "mixpert/error.hpp"
#include "mixpert/ops.hpp"

namespace mixpert {

TaskHeads TaskHeads::create(std::size_t in, Rng& rng) {
  TaskHeads h;
  for (auto d : kAllDomains) h.heads[domain_index(d)] = LinearLayer::create(in, task_classes(d), rng);
  return h;
}

TaskHeads TaskHeads::clone() const {
  TaskHeads h;
  for (std::size_t i = 0; i < kNumDomains; ++i) h.heads[i] = heads[i].clone();
  return h;
}

void TaskHeads::collect(const std::string& prefix, ParamList& out) const {
  for (auto d : kAllDomains) heads[domain_index(d)].collect(prefix + "." + std::string(domain_name(d)), out);
}

ParamList TaskHeads::parameters(const std::string& prefix) const {
  ParamList out;
  collect(prefix, out);
  return out;
}

void MixpertConfig::validate() const {
  encoder.validate();
  policy.validate();
  if (router_hidden == 0) throw ConfigError("router_hidden must be positive");
}

MonolithicModel MonolithicModel::create(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(derive_seed({seed, 0x4A01}));
  MonolithicModel m;
  m.config = config;
  m.embed = PatchEmbedding::create(config, rng);
  for (std::size_t i = 0; i < config.total_layers; ++i) {
    m.blocks.push_back(EncoderBlock::create(config.embed_dim, config.heads, config.mlp_ratio, rng));
  }
  m.projector = Projector::create(config, rng);
  m.heads = TaskHeads::create(config.projector_out, rng);
  return m;
}

MonolithicModel MonolithicModel::clone() const {
  MonolithicModel m;
  m.config = config;
  m.embed = embed.clone();
  for (const auto& b : blocks) m.blocks.push_back(b.clone());
  m.projector = projector.clone();
  m.heads = heads.clone();
  return m;
}

ParamList MonolithicModel::parameters() const {
  ParamList out;
  embed.collect("encoder.embed", out);
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect("encoder.blocks." + std::to_string(i), out);
  projector.collect("projector", out);
  heads.collect("heads", out);
  return out;
}

Tensor MonolithicModel::encode(const Tensor& patches, std::size_t batch) const {
  Tensor x = embed_patches(patches, embed, batch);
  for (std::size_t i = 0; i < blocks.size(); ++i) x = block_forward(x, blocks[i], batch, int(i));
  Tensor y = projector.forward(x);
  check_finite(y, "monolithic projector");
  return y;
}

ParamList MixpertModel::parameters() const {
  ParamList out;
  trunk.collect("trunk", out);
  for (auto id : kAllExperts) experts[expert_index(id)].collect("experts." + std::string(expert_name(id)), out);
  router.collect("router", out);
  heads.collect("heads", out);
  return out;
}

void MixpertModel::apply_freezing() const {
  set_trainable(trunk.parameters(), false);
  set_trainable(heads.parameters(), false);
  for (auto id : kAllExperts) set_trainable(expert(id).parameters(), id != ExpertId::Versatile);
  set_trainable(router.parameters(), true);
}

MixpertModel from_joint(const MonolithicModel& base, const MixpertConfig& config, std::uint64_t router_seed) {
  config.validate();
  EncoderConfig expected = base.config;
  expected.shared_layers = config.encoder.shared_layers;
  if (!(expected == config.encoder)) throw ConfigError("from_joint: config does not describe the base encoder");
  const std::size_t split = config.encoder.shared_layers;
  if (split > base.blocks.size()) throw ConfigError("from_joint: shared_layers out of range");

  MixpertModel m;
  m.config = config;
  m.trunk.embed = base.embed.clone();
  for (std::size_t i = 0; i < split; ++i) m.trunk.blocks.push_back(base.blocks[i].clone());
  ExpertBranch joint_branch;
  for (std::size_t i = split; i < base.blocks.size(); ++i) joint_branch.blocks.push_back(base.blocks[i]);
  joint_branch.projector = base.projector;
  joint_branch.first_layer = split;
  for (auto id : kAllExperts) m.expert(id) = clone_branch(joint_branch);
  Rng rng(derive_seed({router_seed, 0x0E7}));
  m.router = RouterNet::create(config.encoder.embed_dim, config.router_hidden, rng);
  m.heads = base.heads.clone();
  m.apply_freezing();
  return m;
}

namespace {

InferResult run_branch(const Tensor& h_s, const MixpertModel& model, const RoutingDecision& decision) {
  InferResult r;
  r.decision = decision;
  r.embedding = encode_expert(h_s, model.expert(decision.chosen), 1, std::string(expert_name(decision.chosen)));
  const Tensor pooled = nn::mean_pool(r.embedding, 1);
  r.task_logits = model.heads[decision.top_domain].forward(pooled).reshaped({task_classes(decision.top_domain)});
  return r;
}

}  // namespace

InferResult infer(const Tensor& image, const MixpertModel& model) { return infer(image, model, model.config.policy); }

InferResult infer(const Tensor& image, const MixpertModel& model, const RoutingPolicy& policy) {
  NoGradGuard no_grad;
  const Tensor h_s = encode_shared_image(image, model.trunk, model.config.encoder);
  const Tensor scores = route_scores(pool_global(h_s), model.router);
  return run_branch(h_s, model, decide(scores.data(), policy));
}

Tensor force_expert(const Tensor& image, const MixpertModel& model, ExpertId id) {
  NoGradGuard no_grad;
  const Tensor h_s = encode_shared_image(image, model.trunk, model.config.encoder);
  return encode_expert(h_s, model.expert(id), 1, std::string(expert_name(id)));
}

Tensor shared_features(const std::vector<const Sample*>& batch, const MixpertModel& model) {
  NoGradGuard no_grad;
  return encode_shared(patchify(batch, model.config.encoder), model.trunk, batch.size());
}

std::vector<RoutingDecision> route_batch(const Tensor& h_s, std::size_t batch, const MixpertModel& model,
                                         const RoutingPolicy& policy) {
  NoGradGuard no_grad;
  const Tensor scores = route_scores(nn::mean_pool(h_s, batch), model.router);
  std::vector<RoutingDecision> out;
  out.reserve(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    out.push_back(decide(scores.data().subspan(i * kNumDomains, kNumDomains), policy));
  }
  return out;
}

std::vector<int> predict_with(const Tensor& h_s, std::size_t batch, const MixpertModel& model,
                              std::span<const ExpertId> branches, std::span<const DomainLabel> head_domains) {
  NoGradGuard no_grad;
  if (branches.size() != batch || head_domains.size() != batch) throw ContractError("predict_with: size mismatch");
  const std::size_t tokens = h_s.dim(0) / batch;
  std::vector<int> pred(batch, -1);
  for (auto id : kAllExperts) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < batch; ++i) {
      if (branches[i] == id) members.push_back(i);
    }
    if (members.empty()) continue;
    std::vector<std::size_t> rows;
    rows.reserve(members.size() * tokens);
    for (auto i : members) {
      for (std::size_t t = 0; t < tokens; ++t) rows.push_back(i * tokens + t);
    }
    const Tensor h_v = encode_expert(nn::gather_rows(h_s, rows), model.expert(id), members.size(),
                                     std::string(expert_name(id)));
    const Tensor pooled = nn::mean_pool(h_v, members.size());
    const std::size_t width = pooled.dim(1);
    for (std::size_t m = 0; m < members.size(); ++m) {
      const auto& head = model.heads[head_domains[members[m]]];
      const Tensor row({1, width}, std::vector<float>(pooled.data().begin() + m * width,
                                                      pooled.data().begin() + (m + 1) * width));
      const Tensor logits = head.forward(row);
      pred[members[m]] = int(tie_break(logits.data()));
    }
  }
  return pred;
}

// --- checkpoints -------------------------------------------------------------

namespace {

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(std::uint8_t(v >> (8 * i)));
  }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes_.insert(bytes_.end(), b, b + n);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  void raw(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

 private:
  void need(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw TruncatedError("checkpoint truncated");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::array<std::size_t*, 10> config_fields(EncoderConfig& c) {
  return {&c.total_layers, &c.shared_layers, &c.embed_dim,  &c.heads,           &c.mlp_ratio,
          &c.patch_size,   &c.image_size,    &c.channels,   &c.projector_hidden, &c.projector_out};
}

std::uint32_t crc_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw("MXPC", 4);
  w.u32(kCheckpointVersion);
  EncoderConfig cfg = ckpt.encoder;
  for (auto* f : config_fields(cfg)) w.u32(static_cast<std::uint32_t>(*f));
  w.u32(ckpt.router_hidden);
  w.u32(static_cast<std::uint32_t>(ckpt.entries.size()));
  for (const auto& [name, t] : ckpt.entries) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.raw(name.data(), name.size());
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) w.u32(static_cast<std::uint32_t>(e));
    w.raw(t.data().data(), t.data().size_bytes());
  }
  const std::uint32_t crc = crc_of(w.bytes());
  w.u32(crc);
  return std::move(w.bytes());
}

Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12) throw TruncatedError("checkpoint truncated");
  if (std::memcmp(bytes.data(), "MXPC", 4) != 0) throw FormatError("not a checkpoint (bad magic)");
  Reader header(bytes.subspan(4, 4));
  const auto version = header.u32();
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint version " + std::to_string(version) + ", expected " +
                       std::to_string(kCheckpointVersion));
  }
  const auto body = bytes.first(bytes.size() - 4);
  Reader trailer(bytes.last(4));
  if (crc_of(body) != trailer.u32()) throw ChecksumError("checkpoint checksum mismatch", -1);

  Reader r(body.subspan(8));
  Checkpoint ckpt;
  for (auto* f : config_fields(ckpt.encoder)) *f = r.u32();
  ckpt.router_hidden = r.u32();
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(r.u32(), '\0');
    r.raw(name.data(), name.size());
    Shape shape(r.u32());
    for (auto& e : shape) e = r.u32();
    Tensor t(shape);
    r.raw(t.data().data(), t.data().size_bytes());
    ckpt.entries.emplace_back(std::move(name), std::move(t));
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& file, const Checkpoint& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  // Write-then-rename so readers never observe a partial file.
  const auto tmp = std::filesystem::path(file.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw FormatError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, file);
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + file.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

Checkpoint make_checkpoint(const EncoderConfig& encoder, std::size_t router_hidden, const ParamList& params) {
  Checkpoint c;
  c.encoder = encoder;
  c.router_hidden = static_cast<std::uint32_t>(router_hidden);
  for (const auto& p : params) c.entries.emplace_back(p.name, p.tensor.clone());
  return c;
}

void load_params(const ParamList& params, const Checkpoint& ckpt) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : ckpt.entries) by_name[name] = &t;
  if (by_name.size() != params.size()) {
    throw ConfigError("checkpoint has " + std::to_string(by_name.size()) + " tensors, model expects " +
                      std::to_string(params.size()));
  }
  for (const auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw ConfigError("checkpoint is missing tensor '" + p.name + "'");
    if (it->second->shape() != p.tensor.shape()) {
      throw ConfigError("tensor '" + p.name + "' has shape " + shape_str(it->second->shape()) + ", config expects " +
                        shape_str(p.tensor.shape()));
    }
    Tensor dst = p.tensor;
    std::copy(it->second->data().begin(), it->second->data().end(), dst.data().begin());
  }
}

Checkpoint to_checkpoint(const MonolithicModel& model) { return make_checkpoint(model.config, 0, model.parameters()); }

Checkpoint to_checkpoint(const MixpertModel& model) {
  return make_checkpoint(model.config.encoder, model.config.router_hidden, model.parameters());
}

MonolithicModel monolithic_from_checkpoint(const Checkpoint& ckpt) {
  MonolithicModel m = MonolithicModel::create(ckpt.encoder, 0);
  load_params(m.parameters(), ckpt);
  return m;
}

MixpertModel mixpert_from_checkpoint(const Checkpoint& ckpt, const RoutingPolicy& policy) {
  MixpertConfig config;
  config.encoder = ckpt.encoder;
  config.router_hidden = ckpt.router_hidden;
  config.policy = policy;
  MixpertModel m = from_joint(MonolithicModel::create(ckpt.encoder, 0), config, 0);
  load_params(m.parameters(), ckpt);
  return m;
}

}  // namespace mixpert

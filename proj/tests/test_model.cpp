// Copyright 2026 The Mixpert Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>

#include <unistd.h>

#include "mixpert/error.hpp"
#include "mixpert/model.hpp"
#include "mixpert/ops.hpp"
#include "mixpert/training.hpp"

using namespace mixpert;
namespace fs = std::filesystem;

namespace {

EncoderConfig small_encoder(std::size_t shared = 1) {
  EncoderConfig c;
  c.total_layers = 3;
  c.shared_layers = shared;
  c.embed_dim = 16;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.projector_hidden = 24;
  c.projector_out = 12;
  return c;
}

MixpertConfig small_config(std::size_t shared = 1) {
  MixpertConfig m;
  m.encoder = small_encoder(shared);
  m.router_hidden = 8;
  return m;
}

Tensor random_image(std::uint64_t seed) {
  Rng rng(seed);
  Tensor img({1, kImageSize, kImageSize});
  for (auto& v : img.data()) v = float(rng.uniform());
  return img;
}

Tensor monolithic_forward(const MonolithicModel& m, const Tensor& image) {
  NoGradGuard g;
  return m.encode(patchify(image, m.config), 1);
}

std::uint32_t branch_sum(const MixpertModel& m, ExpertId id) { return checksum(m.expert(id).parameters("branch")); }

}  // namespace

TEST(Split, EveryForcedExpertReproducesMonolithicForwardBitForBit) {
  const MonolithicModel base = MonolithicModel::create(small_encoder(), 3);
  for (std::size_t ls = 0; ls <= 3; ++ls) {
    const MixpertModel mx = from_joint(base, small_config(ls), 1);
    for (std::uint64_t i = 0; i < 5; ++i) {
      const Tensor img = random_image(i);
      const Tensor ref = monolithic_forward(base, img);
      for (auto id : kAllExperts) {
        EXPECT_TRUE(bit_equal(force_expert(img, mx, id), ref)) << "L_s " << ls << " expert " << expert_name(id);
      }
    }
  }
}

TEST(Split, AllBranchesIdenticalAtCreation) {
  const MixpertModel mx = from_joint(MonolithicModel::create(small_encoder(), 3), small_config(), 1);
  for (auto id : kAllExperts) EXPECT_EQ(branch_sum(mx, id), branch_sum(mx, ExpertId::Versatile));
  for (auto id : kAllExperts) {
    if (id == ExpertId::Versatile) continue;
    EXPECT_FALSE(mx.expert(id).projector.fc1.weight.same_storage(mx.expert(ExpertId::Versatile).projector.fc1.weight));
  }
}

TEST(Split, RejectsOutOfRangeAndMismatchedConfigs) {
  const MonolithicModel base = MonolithicModel::create(small_encoder(), 3);
  auto bad = small_config();
  bad.encoder.shared_layers = 4;
  EXPECT_THROW(from_joint(base, bad, 0), ConfigError);
  auto wide = small_config();
  wide.encoder.embed_dim = 32;
  EXPECT_THROW(from_joint(base, wide, 0), ConfigError);
}

TEST(Split, FreezingRoles) {
  const MixpertModel mx = from_joint(MonolithicModel::create(small_encoder(), 3), small_config(), 1);
  for (const auto& p : mx.trunk.parameters()) EXPECT_FALSE(p.tensor.requires_grad()) << p.name;
  for (const auto& p : mx.heads.parameters()) EXPECT_FALSE(p.tensor.requires_grad()) << p.name;
  for (const auto& p : mx.expert(ExpertId::Versatile).parameters()) EXPECT_FALSE(p.tensor.requires_grad());
  for (const auto& p : mx.expert(ExpertId::Math).parameters()) EXPECT_TRUE(p.tensor.requires_grad());
  for (const auto& p : mx.router.parameters()) EXPECT_TRUE(p.tensor.requires_grad());
}

TEST(ExpertTuning, OnlyTheTunedBranchChanges) {
  DatasetManifest m;
  m.train_per_domain = 16;
  m.val_per_domain = 4;
  m.test_per_domain = 4;
  m.ambiguous_count = 4;
  const Corpus c = generate_corpus(m);
  MixpertModel mx = from_joint(MonolithicModel::create(small_encoder(), 3), small_config(), 1);
  const auto trunk = checksum(mx.trunk.parameters()), heads = checksum(mx.heads.parameters()),
             router = checksum(mx.router.parameters()), versatile = branch_sum(mx, ExpertId::Versatile);
  OptimizerConfig opt;
  opt.batch_size = 8;
  opt.encoder_lr = 1e-2;
  opt.projector_lr = 1e-2;
  tune_expert(mx, ExpertId::Doc, filter_domain(c.train, DomainLabel::Doc), {}, opt, 0);
  EXPECT_EQ(checksum(mx.trunk.parameters()), trunk);
  EXPECT_EQ(checksum(mx.heads.parameters()), heads);
  EXPECT_EQ(checksum(mx.router.parameters()), router);
  EXPECT_EQ(branch_sum(mx, ExpertId::Versatile), versatile);
  for (auto id : kAllExperts) {
    if (id == ExpertId::Doc) {
      EXPECT_NE(branch_sum(mx, id), versatile);
    } else {
      EXPECT_EQ(branch_sum(mx, id), versatile) << expert_name(id);
    }
  }
  const Tensor img = c.test.front().image();
  EXPECT_FALSE(bit_equal(force_expert(img, mx, ExpertId::Doc), force_expert(img, mx, ExpertId::Versatile)));
  EXPECT_THROW(tune_expert(mx, ExpertId::Versatile, filter_domain(c.train, DomainLabel::Doc), {}, opt, 0),
               ContractError);
  EXPECT_THROW(tune_expert(mx, ExpertId::Chart, filter_domain(c.train, DomainLabel::Doc), {}, opt, 0), ContractError);
}

TEST(Infer, ExactlyOneBranchRunsAndHeadFollowsArgmax) {
  MixpertModel mx = from_joint(MonolithicModel::create(small_encoder(), 3), small_config(), 1);
  Rng rng(9);
  for (auto& v : mx.router.fc2.weight.data()) v = float(rng.normal());
  for (auto& v : mx.router.fc2.bias.data()) v = float(rng.normal());
  for (auto strategy : {RoutingStrategy::Direct, RoutingStrategy::ScoreDifference}) {
    for (std::uint64_t i = 0; i < 6; ++i) {
      const Tensor img = random_image(100 + i);
      const auto before = branch_forward_count();
      const InferResult r = infer(img, mx, {strategy, 0.3, 0.5});
      EXPECT_EQ(branch_forward_count() - before, 1u);
      EXPECT_TRUE(bit_equal(r.embedding, force_expert(img, mx, r.decision.chosen)));
      NoGradGuard g;
      const Tensor pooled = nn::mean_pool(r.embedding, 1);
      const Tensor logits = mx.heads[r.decision.top_domain].forward(pooled);
      ASSERT_EQ(r.task_logits.numel(), task_classes(r.decision.top_domain));
      for (std::size_t k = 0; k < logits.numel(); ++k) EXPECT_EQ(r.task_logits.data()[k], logits.data()[k]);
    }
  }
}

TEST(Infer, UntrainedRouterFallsBackUnderScoreDifference) {
  const MixpertModel mx = from_joint(MonolithicModel::create(small_encoder(), 3), small_config(), 1);
  const Tensor img = random_image(5);
  const auto r = infer(img, mx, {RoutingStrategy::ScoreDifference, 0.1, 0.5});
  EXPECT_TRUE(r.decision.fell_back);
  EXPECT_EQ(r.decision.chosen, ExpertId::Versatile);
  const auto d = infer(img, mx, {RoutingStrategy::Direct, 0.1, 0.5});
  EXPECT_EQ(d.decision.chosen, ExpertId::Chart);
}

TEST(Infer, ConfidentRouterSendsEverythingToItsDomain) {
  MixpertModel mx = from_joint(MonolithicModel::create(small_encoder(), 3), small_config(), 1);
  mx.router.fc2.bias.data()[domain_index(DomainLabel::Math)] = 50.0f;
  for (std::uint64_t i = 0; i < 10; ++i) {
    const auto r = infer(generate(DomainLabel::Chart, i).image(), mx, {RoutingStrategy::Direct, 0.6, 0.5});
    EXPECT_EQ(r.decision.chosen, ExpertId::Math);
  }
}

TEST(Infer, ForcingIgnoresPolicy) {
  const MixpertModel mx = from_joint(MonolithicModel::create(small_encoder(), 3), small_config(), 1);
  auto other = mx;
  other.config.policy = {RoutingStrategy::ScoreThreshold, 0.9, 0.9};
  const Tensor img = random_image(1);
  EXPECT_TRUE(bit_equal(force_expert(img, mx, ExpertId::Ocr), force_expert(img, other, ExpertId::Ocr)));
}

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("mixpert-ckpt-" + std::to_string(::getpid()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

TEST_F(CheckpointTest, MixpertRoundTripIsBitExact) {
  MixpertModel mx = from_joint(MonolithicModel::create(small_encoder(), 3), small_config(), 1);
  Rng rng(2);
  for (auto& v : mx.expert(ExpertId::Ocr).projector.fc2.bias.data()) v = float(rng.normal());
  save_checkpoint(dir_ / "m.mxpc", to_checkpoint(mx));
  const MixpertModel back = mixpert_from_checkpoint(load_checkpoint(dir_ / "m.mxpc"), mx.config.policy);
  const auto a = mx.parameters(), b = back.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name, b[i].name);
    EXPECT_TRUE(bit_equal(a[i].tensor, b[i].tensor)) << a[i].name;
  }
  EXPECT_EQ(back.config.encoder, mx.config.encoder);
  EXPECT_EQ(back.config.router_hidden, mx.config.router_hidden);
  EXPECT_FALSE(back.expert(ExpertId::Versatile).parameters().front().tensor.requires_grad());
}

TEST_F(CheckpointTest, MonolithicRoundTripIsBitExact) {
  const MonolithicModel m = MonolithicModel::create(small_encoder(), 4);
  save_checkpoint(dir_ / "j.mxpc", to_checkpoint(m));
  const MonolithicModel back = monolithic_from_checkpoint(load_checkpoint(dir_ / "j.mxpc"));
  const Tensor img = random_image(3);
  EXPECT_TRUE(bit_equal(monolithic_forward(m, img), monolithic_forward(back, img)));
  EXPECT_EQ(checksum(m.parameters()), checksum(back.parameters()));
}

TEST_F(CheckpointTest, CorruptionIsRejected) {
  const auto bytes = serialize_checkpoint(to_checkpoint(MonolithicModel::create(small_encoder(), 4)));
  for (std::size_t pos : {std::size_t(60), bytes.size() / 2, bytes.size() - 10}) {
    auto bad = bytes;
    bad[pos] ^= 0x01;
    EXPECT_THROW(deserialize_checkpoint(bad), ChecksumError) << "byte " << pos;
  }
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(magic), FormatError);
  auto version = bytes;
  version[4] = 7;
  EXPECT_THROW(deserialize_checkpoint(version), VersionError);
  const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + std::ptrdiff_t(bytes.size() / 3));
  EXPECT_THROW(deserialize_checkpoint(cut), FormatError);
  EXPECT_THROW(deserialize_checkpoint(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 6)), TruncatedError);
}

TEST_F(CheckpointTest, ShapeMismatchIsAConfigError) {
  Checkpoint ckpt = to_checkpoint(MonolithicModel::create(small_encoder(), 4));
  ckpt.encoder.embed_dim = 32;
  EXPECT_THROW(monolithic_from_checkpoint(ckpt), ConfigError);
  Checkpoint missing = to_checkpoint(MonolithicModel::create(small_encoder(), 4));
  missing.entries.pop_back();
  EXPECT_THROW(monolithic_from_checkpoint(missing), ConfigError);
}

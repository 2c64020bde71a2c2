// Copyright 2026 The Mixpert Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Optimizer, learning-rate schedule and the three training procedures:
// joint SFT of the monolithic model, per-domain expert tuning with every
// common module frozen, and router training on pooled trunk features.

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mixpert/dataset.hpp"
#include "mixpert/model.hpp"

namespace mixpert {

struct OptimizerConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.01;
  // Peak rates per parameter group. Encoder blocks, patch embedding and
  // positions use encoder_lr; projector and task heads use projector_lr.
  double encoder_lr = 2e-4;
  double projector_lr = 1e-3;
  double warmup_fraction = 0.03;
  std::size_t epochs = 1;
  std::size_t batch_size = 64;

  void validate() const;
};

// Linear warmup from 0 to `peak` over ceil(warmup_fraction * total) steps,
// then cosine decay to 0 at `total`.
double lr_at(std::size_t step, std::size_t total, double warmup_fraction, double peak);
inline double lr_at(std::size_t step, std::size_t total, const OptimizerConfig& opt, double peak) {
  return lr_at(step, total, opt.warmup_fraction, peak);
}

struct ParamGroup {
  std::string name;
  ParamList params;
  double peak_lr = 0.0;
};

// AdamW with decoupled weight decay applied to ParamKind::Weight only.
// Parameters that received no gradient in a step are treated as having a
// zero gradient, so every step touches the same state.
class AdamW {
 public:
  AdamW(std::vector<ParamGroup> groups, const OptimizerConfig& config);

  // Applies one update with each group's rate scaled by `schedule`
  // (the lr_at factor in [0, 1]).
  void step(double schedule);
  const std::vector<ParamGroup>& groups() const { return groups_; }
  std::size_t steps_taken() const { return t_; }

 private:
  struct Slot {
    std::vector<float> m, v;
  };
  std::vector<ParamGroup> groups_;
  std::vector<std::vector<Slot>> state_;
  OptimizerConfig config_;
  std::size_t t_ = 0;
};

struct DomainAccuracy {
  std::array<double, kNumDomains> accuracy{};
  std::array<std::size_t, kNumDomains> count{};
  double mean() const;  // over domains with samples
};

struct TrainReport {
  std::string phase;
  std::uint64_t seed = 0;
  std::size_t steps = 0;
  std::vector<double> losses;  // one per optimizer step
  DomainAccuracy before, after;
  std::vector<std::pair<std::string, double>> group_lrs;
  // Router phase only: confusion[true][predicted] on the validation set.
  std::vector<std::array<std::size_t, kNumDomains>> confusion;
  double wall_seconds = 0.0;

  double initial_loss() const { return losses.empty() ? 0.0 : losses.front(); }
  double final_loss() const;  // mean of the last 10% of steps
  std::string to_text() const;
  // Deterministic columns only; wall-clock is omitted.
  std::string to_csv() const;
};

// Fisher-Yates with the project RNG so orderings are portable.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed);

// --- evaluation --------------------------------------------------------------

// Accuracy of each sample's own-domain head.
DomainAccuracy evaluate(const MonolithicModel& model, const std::vector<Sample>& samples);
// Every sample is encoded by `expert` and scored by its own-domain head.
DomainAccuracy evaluate_forced(const MixpertModel& model, const std::vector<Sample>& samples, ExpertId expert);

struct RoutedEval {
  DomainAccuracy accuracy;  // correct = routed head domain matches and the class is right
  double mean_accuracy = 0.0;  // over all samples
  double fallback_rate = 0.0;
  std::vector<RoutingDecision> decisions;
  std::vector<int> predictions;
};
RoutedEval evaluate_routed(const MixpertModel& model, const std::vector<Sample>& samples, const RoutingPolicy& policy);

// Trunk output for all samples, computed in batches: [n * tokens, d].
Tensor trunk_features(const MixpertModel& model, const std::vector<Sample>& samples, std::size_t batch = 256);

// --- procedures --------------------------------------------------------------

// All parameters trainable; cross-entropy of each sample's domain head.
// Throws ContractError when some domain has no samples, DivergenceError on a
// non-finite loss.
TrainReport train_joint(MonolithicModel& model, const std::vector<Sample>& train, const std::vector<Sample>& val,
                        const OptimizerConfig& opt, std::uint64_t seed);

// Same loss without the coverage requirement; used for the single-domain
// fine-tuning conditions of the domain-conflict experiment.
TrainReport train_monolithic(MonolithicModel& model, const std::vector<Sample>& train, const std::vector<Sample>& val,
                             const OptimizerConfig& opt, std::uint64_t seed, const std::string& phase);

// Only branch `id` changes. `train` must hold that domain's samples only.
// `features` may supply precomputed trunk_features(model, train).
TrainReport tune_expert(MixpertModel& model, ExpertId id, const std::vector<Sample>& train,
                        const std::vector<Sample>& val, const OptimizerConfig& opt, std::uint64_t seed,
                        const Tensor* features = nullptr);

// Router learning rate is opt.projector_lr.
TrainReport train_router(RouterNet& net, const SharedTrunk& trunk, const EncoderConfig& config,
                         const std::vector<Sample>& train, const std::vector<Sample>& val,
                         const OptimizerConfig& opt, std::uint64_t seed);
// Variant on precomputed pooled trunk features [n, d].
TrainReport train_router_pooled(RouterNet& net, const Tensor& train_pooled, std::span<const DomainLabel> train_domains,
                                const Tensor& val_pooled, std::span<const DomainLabel> val_domains,
                                const OptimizerConfig& opt, std::uint64_t seed);

}  // namespace mixpert

// Copyright 2026 The Mixpert Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Experiment driver: run configuration, result tables, the six ablation
// experiments, and the cached end-to-end pipeline.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mixpert/accounting.hpp"
#include "mixpert/dataset.hpp"
#include "mixpert/model.hpp"
#include "mixpert/training.hpp"

namespace mixpert {

struct ExperimentSpec {
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::vector<std::size_t> scan_layers = {0, 1, 2, 4, 6};
  std::vector<std::size_t> router_sizes = {1000, 2500, 5000};
  std::vector<double> taus = {0.1, 0.3, 0.5, 0.6, 0.7};
  // Layer scan runs on the first `scan_seeds` seeds.
  std::size_t scan_seeds = 1;
  std::size_t jobs = 1;

  void validate() const;
};

// Everything one pipeline run depends on. Serialized as key = value text.
struct RunConfig {
  DatasetManifest corpus;
  MixpertConfig model;
  OptimizerConfig joint;
  OptimizerConfig expert;
  OptimizerConfig router;
  // Domain-conflict conditions: fine-tuning from joint, training from scratch.
  OptimizerConfig finetune;
  OptimizerConfig scratch;
  ExperimentSpec experiment;

  static RunConfig defaults();
  // A reduced configuration for smoke tests and determinism checks.
  static RunConfig small();
  void validate() const;
  std::string to_text() const;
  // Keys absent from `text` keep their defaults; unknown keys are errors.
  static RunConfig from_text(std::string_view text, const RunConfig& base = defaults());
  static RunConfig load(const std::filesystem::path& file);
};

// --- results -----------------------------------------------------------------

struct ResultRow {
  std::string experiment;  // E1..E6
  std::string condition;
  std::string domain;  // domain name, "mixed", "mean" or "all"
  std::string metric;
  std::uint64_t seed = 0;
  double value = 0.0;
  std::string checkpoint;  // content hash of the evaluated checkpoint(s)
  std::string eval_set;    // content hash of the evaluation samples
};

struct AggregateRow {
  std::string experiment, condition, domain, metric;
  std::size_t seeds = 0;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation, 0 for one seed
};

inline constexpr const char* kResultsCsvHeader = "# mixpert-results v1";
inline constexpr const char* kSummaryCsvHeader = "# mixpert-summary v1";

struct ResultTable {
  std::vector<ResultRow> rows;

  void add(ResultRow row) { rows.push_back(std::move(row)); }
  void append(const ResultTable& other);
  std::vector<AggregateRow> aggregate() const;
  std::optional<AggregateRow> find(const std::string& experiment, const std::string& condition,
                                   const std::string& domain, const std::string& metric) const;
  std::string to_csv() const;
  static ResultTable from_csv(std::string_view text);
};

std::string aggregate_csv(const std::vector<AggregateRow>& rows);
std::vector<AggregateRow> aggregate_from_csv(std::string_view text);

// --- evaluation helpers ------------------------------------------------------

std::string hex64(std::uint64_t v);
std::string checkpoint_hash(const Checkpoint& ckpt);

// All ambiguous samples plus enough pure test samples (equal per domain, taken
// from the front of each domain) that ambiguous samples make up the manifest's
// ambiguous_fraction. Throws ConfigError if the test split is too small.
std::vector<Sample> mixed_eval_set(const Corpus& corpus);

// Throws ContractError if any evaluation sample is pixel-identical to a
// training sample.
void verify_disjoint(const std::vector<Sample>& train, const std::vector<Sample>& eval);

// Per-sample routing scores plus the prediction every branch would make with
// the argmax-domain head. Any policy can then be scored without rerunning the
// encoder; results equal evaluate_routed.
struct RoutingTable {
  std::vector<std::array<float, kNumDomains>> scores;
  std::vector<bool> ambiguous;
  std::vector<std::array<int, kNumExperts>> predictions;
  std::vector<DomainLabel> domains;
  std::vector<int> labels;

  RoutedEval evaluate(const RoutingPolicy& policy) const;
};
RoutingTable build_routing_table(const MixpertModel& model, const std::vector<Sample>& samples);

// --- experiments -------------------------------------------------------------
//
// Each function evaluates already-trained models for one seed and returns its
// rows. Training lives in the pipeline so that stages can be cached.

struct DomainConflictModels {
  const MonolithicModel* joint = nullptr;
  std::array<const MonolithicModel*, kNumDomains> finetuned{};
  std::array<const MonolithicModel*, kNumDomains> scratch{};
  std::string joint_hash;
  std::array<std::string, kNumDomains> finetuned_hash, scratch_hash;
};
// Three conditions per domain on that domain's test split: joint SFT,
// joint then all-parameter fine-tuning on the domain, and training on the
// domain alone from random initialization.
ResultTable run_e1_domain_conflict(const DomainConflictModels& models, const Corpus& corpus, std::uint64_t seed);
// `models[i]` was split with expert_layers[i] and fully tuned.
ResultTable run_e2_layer_scan(const std::vector<const MixpertModel*>& models, std::span<const std::size_t> expert_layers,
                              const Corpus& corpus, std::uint64_t seed, const std::vector<std::string>& hashes);
ResultTable run_e3_router_scaling(const std::vector<const RouterNet*>& routers, std::span<const std::size_t> sizes,
                                  const SharedTrunk& trunk, const EncoderConfig& config, const Corpus& corpus,
                                  std::uint64_t seed, const std::vector<std::string>& hashes);
ResultTable run_e4_strategies(const RoutingTable& table, double tau, double lambda, std::uint64_t seed,
                              const std::string& ckpt_hash, const std::string& eval_hash);
ResultTable run_e5_tau_sweep(const RoutingTable& table, std::span<const double> taus, std::uint64_t seed,
                             const std::string& ckpt_hash, const std::string& eval_hash);
ResultTable run_e6_cost(const MixpertConfig& config);
// The E6 text is exactly the `cost` CLI output for the same config.
std::string cost_text(const MixpertConfig& config);
std::string cost_csv(const MixpertConfig& config);

// --- pipeline ----------------------------------------------------------------

struct StageTiming {
  std::string stage;
  double seconds = 0.0;
  bool ran = false;
};

struct PipelineResult {
  std::filesystem::path out_dir;
  std::filesystem::path cache_dir;
  std::vector<StageTiming> stages;  // in completion order per seed, seeds in order
  ResultTable results;
  std::vector<AggregateRow> summary;
  double wall_seconds = 0.0;

  std::size_t stages_run() const;
  std::vector<std::string> ran() const;
};

struct PipelineOptions {
  std::filesystem::path out_dir;
  // Empty: $MIXPERT_CACHE_DIR, else <out_dir>/cache.
  std::filesystem::path cache_dir;
  std::function<void(const std::string&)> log;
};

// generate -> joint -> split -> tune experts -> routers -> E1..E6. Every
// stage writes its artifacts with a sidecar key; a stage is skipped when its
// outputs exist, the key matches and no input is newer than an output.
// Throws StageError naming the failed stage and the last completed one.
PipelineResult run_pipeline(const RunConfig& config, const PipelineOptions& options);

std::filesystem::path resolve_cache_dir(const PipelineOptions& options);

}  // namespace mixpert

// Copyright 2026 The Mixpert Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <unistd.h>

#include "mixpert/error.hpp"
#include "mixpert/harness.hpp"

using namespace mixpert;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path find_file(const fs::path& root, const std::string& relative) {
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    const auto p = e.path().generic_string();
    if (p.size() >= relative.size() && p.compare(p.size() - relative.size(), relative.size(), relative) == 0) {
      return e.path();
    }
  }
  return {};
}

Corpus small_corpus() {
  DatasetManifest m;
  m.train_per_domain = 20;
  m.val_per_domain = 8;
  m.test_per_domain = 40;
  m.ambiguous_count = 30;
  return generate_corpus(m);
}

}  // namespace

TEST(RunConfig, TextRoundTrip) {
  for (const RunConfig& c : {RunConfig::defaults(), RunConfig::small()}) {
    const std::string text = c.to_text();
    EXPECT_EQ(RunConfig::from_text(text).to_text(), text);
  }
}

TEST(RunConfig, PartialTextKeepsBaseValues) {
  const RunConfig c = RunConfig::from_text("routing.tau = 0.3\noptim.router.epochs = 4\n", RunConfig::small());
  EXPECT_DOUBLE_EQ(c.model.policy.tau, 0.3);
  EXPECT_EQ(c.router.epochs, 4u);
  EXPECT_EQ(c.corpus.train_per_domain, RunConfig::small().corpus.train_per_domain);
}

TEST(RunConfig, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(RunConfig::from_text("encoder.depth = 3\n"), ConfigError);
  EXPECT_THROW(RunConfig::from_text("experiment.seeds = 0,1\n"), ConfigError);
  EXPECT_THROW(RunConfig::from_text("routing.tau = 1.5\n"), ConfigError);
  EXPECT_THROW(RunConfig::from_text("experiment.router_sizes = 5000,1000\n"), ConfigError);
  EXPECT_THROW(RunConfig::from_text("routing.strategy = nearest\n"), ConfigError);
  EXPECT_THROW(RunConfig::from_text("encoder.shared_layers = 9\n"), ConfigError);
}

TEST(RunConfig, DefaultsDescribeTheFullExperiment) {
  const RunConfig c = RunConfig::defaults();
  EXPECT_EQ(c.corpus.train_per_domain, 5000u);
  EXPECT_EQ(c.experiment.seeds.size(), 5u);
  EXPECT_EQ(c.experiment.router_sizes.back(), c.corpus.train_per_domain);
  EXPECT_NO_THROW(c.validate());
}

TEST(Results, CsvRoundTripAndAggregateOracle) {
  ResultTable t;
  const double values[] = {0.5, 0.75, 0.25};
  for (std::uint64_t s = 0; s < 3; ++s) t.add({"E1", "joint", "chart", "accuracy", s, values[s], "abc", "def"});
  t.add({"E1", "joint", "doc", "accuracy", 0, 1.0 / 3.0, "abc", "def"});
  const ResultTable back = ResultTable::from_csv(t.to_csv());
  ASSERT_EQ(back.rows.size(), t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    EXPECT_EQ(back.rows[i].value, t.rows[i].value);
    EXPECT_EQ(back.rows[i].seed, t.rows[i].seed);
    EXPECT_EQ(back.rows[i].checkpoint, t.rows[i].checkpoint);
  }
  const auto chart = t.find("E1", "joint", "chart", "accuracy");
  ASSERT_TRUE(chart.has_value());
  EXPECT_EQ(chart->seeds, 3u);
  EXPECT_DOUBLE_EQ(chart->mean, 0.5);
  EXPECT_NEAR(chart->stddev, 0.25, 1e-15);
  const auto doc = t.find("E1", "joint", "doc", "accuracy");
  ASSERT_TRUE(doc.has_value());
  EXPECT_EQ(doc->stddev, 0.0);
  EXPECT_FALSE(t.find("E1", "joint", "math", "accuracy").has_value());

  const auto agg = t.aggregate();
  const auto agg_back = aggregate_from_csv(aggregate_csv(agg));
  ASSERT_EQ(agg_back.size(), agg.size());
  for (std::size_t i = 0; i < agg.size(); ++i) {
    EXPECT_EQ(agg_back[i].mean, agg[i].mean);
    EXPECT_EQ(agg_back[i].stddev, agg[i].stddev);
    EXPECT_EQ(agg_back[i].domain, agg[i].domain);
  }
  EXPECT_EQ(t.to_csv().rfind(kResultsCsvHeader, 0), 0u);
  EXPECT_THROW(ResultTable::from_csv("not,a,results,file\n"), FormatError);
}

TEST(MixedSet, AmbiguousShareMatchesTheManifest) {
  const Corpus c = small_corpus();
  const auto mixed = mixed_eval_set(c);
  ASSERT_EQ(mixed.size(), 150u);  // 30 ambiguous at 20% -> 120 pure, 24 per domain
  std::size_t ambiguous = 0;
  std::array<std::size_t, kNumDomains> pure{};
  for (const auto& s : mixed) {
    if (s.ambiguity > 0.0f) {
      ++ambiguous;
    } else {
      ++pure[domain_index(s.domain)];
    }
  }
  EXPECT_EQ(ambiguous, 30u);
  for (auto n : pure) EXPECT_EQ(n, 24u);
  EXPECT_EQ(mixed.front(), c.test.front());

  Corpus thin = c;
  thin.test = nested_train_subset(c.test, 10);
  EXPECT_THROW(mixed_eval_set(thin), ConfigError);
}

TEST(MixedSet, EvaluationSetsAreDisjointFromTraining) {
  const Corpus c = small_corpus();
  EXPECT_NO_THROW(verify_disjoint(c.train, c.test));
  EXPECT_NO_THROW(verify_disjoint(c.train, mixed_eval_set(c)));
  auto leaked = c.val;
  leaked.push_back(c.train[7]);
  EXPECT_THROW(verify_disjoint(c.train, leaked), ContractError);
}

TEST(RoutingTable, ScoresEveryPolicyLikeDirectEvaluation) {
  const Corpus c = small_corpus();
  MixpertConfig cfg;
  cfg.encoder = RunConfig::small().model.encoder;
  cfg.router_hidden = 8;
  MixpertModel mx = from_joint(MonolithicModel::create(cfg.encoder, 4), cfg, 1);
  Rng rng(6);
  for (auto& v : mx.router.fc2.weight.data()) v = float(2.0 * rng.normal());
  for (auto id : kAllExperts) {
    for (auto& v : mx.expert(id).projector.fc2.weight.data()) v += float(0.05 * rng.normal());
  }
  const auto samples = mixed_eval_set(c);
  const RoutingTable table = build_routing_table(mx, samples);
  for (auto strategy : {RoutingStrategy::Direct, RoutingStrategy::ScoreThreshold, RoutingStrategy::ScoreDifference}) {
    for (double t : {0.1, 0.3, 0.5}) {
      const RoutingPolicy p{strategy, t, t};
      const RoutedEval fast = table.evaluate(p), slow = evaluate_routed(mx, samples, p);
      EXPECT_DOUBLE_EQ(fast.mean_accuracy, slow.mean_accuracy);
      EXPECT_DOUBLE_EQ(fast.fallback_rate, slow.fallback_rate);
      EXPECT_EQ(fast.predictions, slow.predictions);
    }
  }
}

TEST(CostReport, E6RowsMatchClosedForm) {
  const MixpertConfig cfg = RunConfig::defaults().model;
  const ResultTable t = run_e6_cost(cfg);
  const auto mono = ModelLayout::monolithic(cfg.encoder), mx = ModelLayout::mixpert(cfg);
  bool saw_total = false;
  for (const auto& r : t.rows) {
    EXPECT_EQ(r.experiment, "E6");
    if (r.metric == "total_params" && r.condition == "mixpert") {
      EXPECT_EQ(r.value, double(total_params(mx)));
      saw_total = true;
    }
    if (r.metric == "total_params" && r.condition == "monolithic") EXPECT_EQ(r.value, double(total_params(mono)));
  }
  EXPECT_TRUE(saw_total);
  EXPECT_NE(cost_text(cfg).find("monolithic"), std::string::npos);
  EXPECT_EQ(cost_csv(cfg).rfind(kCostCsvHeader, 0), 0u);
}

TEST(CacheDir, OptionThenEnvironmentThenOutputDirectory) {
  PipelineOptions o;
  o.out_dir = "/tmp/out-x";
  ::unsetenv("MIXPERT_CACHE_DIR");
  EXPECT_EQ(resolve_cache_dir(o), fs::path("/tmp/out-x/cache"));
  ::setenv("MIXPERT_CACHE_DIR", "/tmp/env-cache", 1);
  EXPECT_EQ(resolve_cache_dir(o), fs::path("/tmp/env-cache"));
  o.cache_dir = "/tmp/explicit";
  EXPECT_EQ(resolve_cache_dir(o), fs::path("/tmp/explicit"));
  ::unsetenv("MIXPERT_CACHE_DIR");
}

class PipelineTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("mixpert-pipeline-" + std::to_string(::getpid()));
    fs::remove_all(root_);
    first_ = new PipelineResult(run_pipeline(RunConfig::small(), options("a")));
  }
  static void TearDownTestSuite() {
    delete first_;
    fs::remove_all(root_);
  }
  static PipelineOptions options(const std::string& out) {
    PipelineOptions o;
    o.out_dir = root_ / out;
    o.cache_dir = root_ / "cache";
    return o;
  }
  static fs::path root_;
  static PipelineResult* first_;
};

fs::path PipelineTest::root_;
PipelineResult* PipelineTest::first_ = nullptr;

TEST_F(PipelineTest, WritesEveryExperimentForEverySeed) {
  std::set<std::pair<std::string, std::uint64_t>> seen;
  for (const auto& r : first_->results.rows) seen.insert({r.experiment, r.seed});
  for (std::uint64_t s : RunConfig::small().experiment.seeds) {
    for (const char* e : {"E1", "E3", "E4", "E5"}) EXPECT_TRUE(seen.count({e, s})) << e << " seed " << s;
  }
  EXPECT_TRUE(seen.count({"E2", RunConfig::small().experiment.seeds.front()}));
  for (const char* f : {"results.csv", "summary.csv", "summary.txt", "manifest.txt", "e6_cost.txt", "config.txt"}) {
    EXPECT_TRUE(fs::exists(root_ / "a" / f)) << f;
  }
  EXPECT_EQ(slurp(root_ / "a" / "e6_cost.txt"), cost_text(RunConfig::small().model));
}

TEST_F(PipelineTest, RerunSkipsEveryStageAndReproducesOutputs) {
  const PipelineResult again = run_pipeline(RunConfig::small(), options("b"));
  EXPECT_EQ(again.stages_run(), 0u);
  EXPECT_EQ(slurp(root_ / "a" / "results.csv"), slurp(root_ / "b" / "results.csv"));
  EXPECT_EQ(slurp(root_ / "a" / "manifest.txt"), slurp(root_ / "b" / "manifest.txt"));
}

TEST_F(PipelineTest, DeletedArtifactRerunsOnlyItsDependents) {
  const fs::path expert = find_file(root_ / "cache", "seed-1/expert-math.mxpc");
  ASSERT_FALSE(expert.empty());
  fs::remove(expert);
  const PipelineResult again = run_pipeline(RunConfig::small(), options("c"));
  const std::vector<std::string> expected{"seed-1/expert-math", "seed-1/assemble", "seed-1/e4-e5"};
  EXPECT_EQ(again.ran(), expected);
  EXPECT_EQ(slurp(root_ / "a" / "results.csv"), slurp(root_ / "c" / "results.csv"));
}

TEST_F(PipelineTest, CorruptCheckpointStopsWithTheFailingStage) {
  const fs::path joint = find_file(root_ / "cache", "seed-2/joint.mxpc");
  ASSERT_FALSE(joint.empty());
  const std::string good = slurp(joint);
  {
    std::string bad = good;
    bad[bad.size() / 2] ^= 0x10;
    std::ofstream(joint, std::ios::binary | std::ios::trunc) << bad;
  }
  try {
    run_pipeline(RunConfig::small(), options("d"));
    ADD_FAILURE() << "corrupt checkpoint was accepted";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage().rfind("seed-2/", 0), 0u) << e.stage();
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos) << e.what();
  }
  std::ofstream(joint, std::ios::binary | std::ios::trunc) << good;
}

// Copyright 2026 The Mixpert Authors.
// SPDX-License-Identifier: Apache-2.0

#include "mixpert/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_set>

#include "mixpert/error.hpp"
#include "mixpert/keyvalue.hpp"
#include "mixpert/ops.hpp"

namespace mixpert {

namespace fs = std::filesystem;

// --- configuration -----------------------------------------------------------

void ExperimentSpec::validate() const {
  if (seeds.size() < 3) throw ConfigError("experiment: trend experiments need at least 3 seeds");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("experiment: seeds must be distinct");
  }
  if (scan_layers.empty() || router_sizes.empty() || taus.empty()) throw ConfigError("experiment: grids must be nonempty");
  if (!std::is_sorted(router_sizes.begin(), router_sizes.end())) throw ConfigError("experiment: router_sizes must ascend");
  for (double t : taus) {
    if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("experiment: tau values must lie in [0, 1]");
  }
  if (scan_seeds == 0 || scan_seeds > seeds.size()) throw ConfigError("experiment: scan_seeds out of range");
  if (jobs == 0) throw ConfigError("experiment: jobs must be positive");
}

namespace {

struct Binding {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const KeyValues&, const std::string&)> set;
};

template <class T>
std::string list_text(const std::vector<T>& v) {
  std::vector<std::string> parts;
  for (const auto& x : v) {
    if constexpr (std::is_floating_point_v<T>) {
      parts.push_back(format_double(x));
    } else {
      parts.push_back(std::to_string(x));
    }
  }
  return join(parts, ",");
}

template <class T>
std::vector<T> parse_list(const KeyValues& kv, const std::string& key) {
  std::vector<T> out;
  for (const auto& item : kv.get_list(key)) {
    KeyValues one;
    one.set(key, item);
    if constexpr (std::is_floating_point_v<T>) {
      out.push_back(one.get_double(key));
    } else {
      out.push_back(static_cast<T>(one.get_uint(key)));
    }
  }
  return out;
}

#define MIXPERT_SIZE(k, field)                                                              \
  Binding {                                                                                 \
    k, [](const RunConfig& c) { return std::to_string(c.field); },                          \
        [](RunConfig& c, const KeyValues& kv, const std::string& key) { c.field = kv.get_uint(key); } \
  }
#define MIXPERT_REAL(k, field)                                                              \
  Binding {                                                                                 \
    k, [](const RunConfig& c) { return format_double(c.field); },                           \
        [](RunConfig& c, const KeyValues& kv, const std::string& key) { c.field = kv.get_double(key); } \
  }
#define MIXPERT_OPTIM(phase)                                              \
  MIXPERT_REAL("optim." #phase ".encoder_lr", phase.encoder_lr),          \
      MIXPERT_REAL("optim." #phase ".projector_lr", phase.projector_lr),  \
      MIXPERT_SIZE("optim." #phase ".epochs", phase.epochs),              \
      MIXPERT_SIZE("optim." #phase ".batch_size", phase.batch_size),      \
      MIXPERT_REAL("optim." #phase ".warmup_fraction", phase.warmup_fraction), \
      MIXPERT_REAL("optim." #phase ".beta1", phase.beta1),                \
      MIXPERT_REAL("optim." #phase ".beta2", phase.beta2),                \
      MIXPERT_REAL("optim." #phase ".eps", phase.eps),                    \
      MIXPERT_REAL("optim." #phase ".weight_decay", phase.weight_decay)

const std::vector<Binding>& bindings() {
  static const std::vector<Binding> table = {
      MIXPERT_SIZE("corpus.seed", corpus.seed),
      MIXPERT_SIZE("corpus.train_per_domain", corpus.train_per_domain),
      MIXPERT_SIZE("corpus.val_per_domain", corpus.val_per_domain),
      MIXPERT_SIZE("corpus.test_per_domain", corpus.test_per_domain),
      MIXPERT_SIZE("corpus.ambiguous_count", corpus.ambiguous_count),
      MIXPERT_REAL("corpus.ambiguous_mix_lo", corpus.ambiguous_mix_lo),
      MIXPERT_REAL("corpus.ambiguous_mix_hi", corpus.ambiguous_mix_hi),
      MIXPERT_REAL("corpus.ambiguous_fraction", corpus.ambiguous_fraction),
      MIXPERT_SIZE("encoder.total_layers", model.encoder.total_layers),
      MIXPERT_SIZE("encoder.shared_layers", model.encoder.shared_layers),
      MIXPERT_SIZE("encoder.embed_dim", model.encoder.embed_dim),
      MIXPERT_SIZE("encoder.heads", model.encoder.heads),
      MIXPERT_SIZE("encoder.mlp_ratio", model.encoder.mlp_ratio),
      MIXPERT_SIZE("encoder.patch_size", model.encoder.patch_size),
      MIXPERT_SIZE("encoder.image_size", model.encoder.image_size),
      MIXPERT_SIZE("encoder.channels", model.encoder.channels),
      MIXPERT_SIZE("encoder.projector_hidden", model.encoder.projector_hidden),
      MIXPERT_SIZE("encoder.projector_out", model.encoder.projector_out),
      MIXPERT_SIZE("router.hidden", model.router_hidden),
      Binding{"routing.strategy", [](const RunConfig& c) { return std::string(strategy_name(c.model.policy.strategy)); },
              [](RunConfig& c, const KeyValues& kv, const std::string& key) {
                c.model.policy.strategy = parse_strategy(kv.get(key));
              }},
      MIXPERT_REAL("routing.tau", model.policy.tau),
      MIXPERT_REAL("routing.lambda", model.policy.lambda),
      MIXPERT_OPTIM(joint),
      MIXPERT_OPTIM(expert),
      MIXPERT_OPTIM(router),
      MIXPERT_OPTIM(finetune),
      MIXPERT_OPTIM(scratch),
      Binding{"experiment.seeds", [](const RunConfig& c) { return list_text(c.experiment.seeds); },
              [](RunConfig& c, const KeyValues& kv, const std::string& key) {
                c.experiment.seeds = parse_list<std::uint64_t>(kv, key);
              }},
      Binding{"experiment.scan_layers", [](const RunConfig& c) { return list_text(c.experiment.scan_layers); },
              [](RunConfig& c, const KeyValues& kv, const std::string& key) {
                c.experiment.scan_layers = parse_list<std::size_t>(kv, key);
              }},
      Binding{"experiment.router_sizes", [](const RunConfig& c) { return list_text(c.experiment.router_sizes); },
              [](RunConfig& c, const KeyValues& kv, const std::string& key) {
                c.experiment.router_sizes = parse_list<std::size_t>(kv, key);
              }},
      Binding{"experiment.taus", [](const RunConfig& c) { return list_text(c.experiment.taus); },
              [](RunConfig& c, const KeyValues& kv, const std::string& key) {
                c.experiment.taus = parse_list<double>(kv, key);
              }},
      MIXPERT_SIZE("experiment.scan_seeds", experiment.scan_seeds),
      MIXPERT_SIZE("experiment.jobs", experiment.jobs),
  };
  return table;
}

#undef MIXPERT_SIZE
#undef MIXPERT_REAL
#undef MIXPERT_OPTIM

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig c;
  c.joint.encoder_lr = 1e-3;
  c.joint.projector_lr = 5e-3;
  c.joint.epochs = 5;
  c.expert.encoder_lr = 3e-3;
  c.expert.projector_lr = 1e-2;
  c.expert.epochs = 3;
  c.router.encoder_lr = 0.0;
  c.router.projector_lr = 1e-2;
  c.router.epochs = 50;
  c.finetune.encoder_lr = 1e-3;
  c.finetune.projector_lr = 5e-3;
  c.finetune.epochs = 1;
  c.scratch = c.joint;
  return c;
}

RunConfig RunConfig::small() {
  RunConfig c = defaults();
  c.corpus.train_per_domain = 120;
  c.corpus.val_per_domain = 40;
  c.corpus.test_per_domain = 40;
  c.corpus.ambiguous_count = 40;
  c.model.encoder.total_layers = 3;
  c.model.encoder.shared_layers = 2;
  c.model.encoder.embed_dim = 16;
  c.model.encoder.heads = 2;
  c.model.encoder.mlp_ratio = 2;
  c.model.encoder.projector_hidden = 32;
  c.model.encoder.projector_out = 16;
  c.model.router_hidden = 16;
  c.joint.epochs = 1;
  c.scratch.epochs = 1;
  c.experiment.seeds = {0, 1, 2};
  c.experiment.scan_layers = {0, 1, 3};
  c.experiment.router_sizes = {40, 120};
  return c;
}

void RunConfig::validate() const {
  model.validate();
  joint.validate();
  expert.validate();
  router.validate();
  finetune.validate();
  scratch.validate();
  experiment.validate();
  for (auto le : experiment.scan_layers) {
    if (le > model.encoder.total_layers) throw ConfigError("experiment: scan layer count exceeds total_layers");
  }
  if (experiment.router_sizes.back() > corpus.train_per_domain) {
    throw ConfigError("experiment: router size exceeds train_per_domain");
  }
  if (!(corpus.ambiguous_fraction > 0.0 && corpus.ambiguous_fraction < 1.0)) {
    throw ConfigError("corpus: ambiguous_fraction must lie in (0, 1)");
  }
  if (!(corpus.ambiguous_mix_lo > 0.0 && corpus.ambiguous_mix_lo <= corpus.ambiguous_mix_hi &&
        corpus.ambiguous_mix_hi < 1.0)) {
    throw ConfigError("corpus: ambiguous mix range must lie inside (0, 1)");
  }
  if (corpus.train_per_domain == 0 || corpus.val_per_domain == 0 || corpus.test_per_domain == 0 ||
      corpus.ambiguous_count == 0) {
    throw ConfigError("corpus: every split needs samples");
  }
}

std::string RunConfig::to_text() const {
  std::string s = "# mixpert run configuration\n";
  for (const auto& b : bindings()) s += b.key + " = " + b.get(*this) + "\n";
  return s;
}

RunConfig RunConfig::from_text(std::string_view text, const RunConfig& base) {
  const auto kv = KeyValues::parse(text);
  RunConfig c = base;
  for (const auto& [key, value] : kv.entries()) {
    auto it = std::find_if(bindings().begin(), bindings().end(), [&](const Binding& b) { return b.key == key; });
    if (it == bindings().end()) throw ConfigError("unknown config key '" + key + "'");
    it->set(c, kv, key);
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config " + file.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_text(text);
}

// --- results -----------------------------------------------------------------

void ResultTable::append(const ResultTable& other) { rows.insert(rows.end(), other.rows.begin(), other.rows.end()); }

std::vector<AggregateRow> ResultTable::aggregate() const {
  std::vector<AggregateRow> out;
  std::map<std::tuple<std::string, std::string, std::string, std::string>, std::size_t> slot;
  std::vector<std::vector<double>> values;
  for (const auto& r : rows) {
    const auto key = std::make_tuple(r.experiment, r.condition, r.domain, r.metric);
    auto it = slot.find(key);
    if (it == slot.end()) {
      it = slot.emplace(key, out.size()).first;
      out.push_back({r.experiment, r.condition, r.domain, r.metric, 0, 0.0, 0.0});
      values.emplace_back();
    }
    values[it->second].push_back(r.value);
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto& v = values[i];
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= double(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    out[i].seeds = v.size();
    out[i].mean = mean;
    out[i].stddev = v.size() > 1 ? std::sqrt(ss / double(v.size() - 1)) : 0.0;
  }
  return out;
}

std::optional<AggregateRow> ResultTable::find(const std::string& experiment, const std::string& condition,
                                              const std::string& domain, const std::string& metric) const {
  for (const auto& a : aggregate()) {
    if (a.experiment == experiment && a.condition == condition && a.domain == domain && a.metric == metric) return a;
  }
  return std::nullopt;
}

std::string ResultTable::to_csv() const {
  std::ostringstream os;
  os << kResultsCsvHeader << "\nexperiment,condition,domain,metric,seed,value,checkpoint,eval_set\n";
  for (const auto& r : rows) {
    os << r.experiment << "," << r.condition << "," << r.domain << "," << r.metric << "," << r.seed << ","
       << format_double(r.value) << "," << r.checkpoint << "," << r.eval_set << "\n";
  }
  return os.str();
}

namespace {

std::vector<std::vector<std::string>> csv_records(std::string_view text, std::string_view header, std::size_t columns) {
  std::vector<std::vector<std::string>> out;
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line != header) throw FormatError("csv: expected header '" + std::string(header) + "'");
  if (!std::getline(in, line)) throw FormatError("csv: missing column names");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = split_list(line, ',');
    if (!line.empty() && line.back() == ',') fields.push_back("");
    if (fields.size() != columns) throw FormatError("csv: malformed row '" + line + "'");
    out.push_back(std::move(fields));
  }
  return out;
}

}  // namespace

ResultTable ResultTable::from_csv(std::string_view text) {
  ResultTable t;
  for (auto& f : csv_records(text, kResultsCsvHeader, 8)) {
    t.rows.push_back({f[0], f[1], f[2], f[3], std::stoull(f[4]), std::stod(f[5]), f[6], f[7]});
  }
  return t;
}

std::string aggregate_csv(const std::vector<AggregateRow>& rows) {
  std::ostringstream os;
  os << kSummaryCsvHeader << "\nexperiment,condition,domain,metric,seeds,mean,std\n";
  for (const auto& r : rows) {
    os << r.experiment << "," << r.condition << "," << r.domain << "," << r.metric << "," << r.seeds << ","
       << format_double(r.mean) << "," << format_double(r.stddev) << "\n";
  }
  return os.str();
}

std::vector<AggregateRow> aggregate_from_csv(std::string_view text) {
  std::vector<AggregateRow> out;
  for (auto& f : csv_records(text, kSummaryCsvHeader, 7)) {
    out.push_back({f[0], f[1], f[2], f[3], std::stoull(f[4]), std::stod(f[5]), std::stod(f[6])});
  }
  return out;
}

// --- evaluation helpers ------------------------------------------------------

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[i] = digits[v & 0xF];
  return s;
}

namespace {

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t h = 1469598103934665603ull) {
  for (auto b : bytes) h = (h ^ b) * 1099511628211ull;
  return h;
}

std::uint64_t fnv1a(std::string_view s) {
  return fnv1a(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

std::string file_hash(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw FormatError("cannot read " + file.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return hex64(fnv1a(bytes));
}

std::string eval_hash(const std::vector<Sample>& samples) { return hex64(samples_hash(samples)); }

}  // namespace

std::string checkpoint_hash(const Checkpoint& ckpt) { return hex64(fnv1a(serialize_checkpoint(ckpt))); }

std::vector<Sample> mixed_eval_set(const Corpus& corpus) {
  const double f = corpus.manifest.ambiguous_fraction;
  const double pure_total = double(corpus.ambiguous.size()) * (1.0 - f) / f;
  const auto per_domain = static_cast<std::size_t>(std::llround(pure_total / double(kNumDomains)));
  std::vector<Sample> out;
  for (auto d : kAllDomains) {
    const auto pure = filter_domain(corpus.test, d);
    if (pure.size() < per_domain) {
      throw ConfigError("mixed evaluation set needs " + std::to_string(per_domain) + " test samples per domain");
    }
    out.insert(out.end(), pure.begin(), pure.begin() + std::ptrdiff_t(per_domain));
  }
  out.insert(out.end(), corpus.ambiguous.begin(), corpus.ambiguous.end());
  return out;
}

void verify_disjoint(const std::vector<Sample>& train, const std::vector<Sample>& eval) {
  std::unordered_set<std::uint64_t> seen;
  for (const auto& s : train) seen.insert(fnv1a(s.pixels));
  for (std::size_t i = 0; i < eval.size(); ++i) {
    if (seen.count(fnv1a(eval[i].pixels)) && std::find(train.begin(), train.end(), eval[i]) != train.end()) {
      throw ContractError("evaluation sample " + std::to_string(i) + " also appears in the training split");
    }
  }
}

RoutingTable build_routing_table(const MixpertModel& model, const std::vector<Sample>& samples) {
  NoGradGuard no_grad;
  RoutingTable t;
  constexpr std::size_t kBatch = 256;
  for (std::size_t lo = 0; lo < samples.size(); lo += kBatch) {
    const std::size_t hi = std::min(samples.size(), lo + kBatch), n = hi - lo;
    std::vector<const Sample*> batch;
    for (std::size_t i = lo; i < hi; ++i) batch.push_back(&samples[i]);
    const Tensor h_s = shared_features(batch, model);
    const Tensor scores = route_scores(nn::mean_pool(h_s, n), model.router);
    std::vector<DomainLabel> heads(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::array<float, kNumDomains> s{};
      std::copy_n(scores.data().begin() + i * kNumDomains, kNumDomains, s.begin());
      heads[i] = domain_from_code(int(tie_break(s)));
      t.scores.push_back(s);
      t.ambiguous.push_back(batch[i]->ambiguity > 0.0f);
      t.domains.push_back(batch[i]->domain);
      t.labels.push_back(batch[i]->task_label);
      t.predictions.emplace_back();
    }
    for (auto id : kAllExperts) {
      const std::vector<ExpertId> branches(n, id);
      const auto pred = predict_with(h_s, n, model, branches, heads);
      for (std::size_t i = 0; i < n; ++i) t.predictions[lo + i][expert_index(id)] = pred[i];
    }
  }
  return t;
}

RoutedEval RoutingTable::evaluate(const RoutingPolicy& policy) const {
  RoutedEval out;
  std::size_t correct = 0, fallbacks = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto d = decide(scores[i], policy);
    const int pred = predictions[i][expert_index(d.chosen)];
    const bool ok = d.top_domain == domains[i] && pred == labels[i];
    const auto di = domain_index(domains[i]);
    out.accuracy.count[di] += 1;
    out.accuracy.accuracy[di] += ok ? 1.0 : 0.0;
    correct += ok ? 1 : 0;
    fallbacks += d.fell_back ? 1 : 0;
    out.decisions.push_back(d);
    out.predictions.push_back(pred);
  }
  for (std::size_t i = 0; i < kNumDomains; ++i) {
    if (out.accuracy.count[i] > 0) out.accuracy.accuracy[i] /= double(out.accuracy.count[i]);
  }
  if (!scores.empty()) {
    out.mean_accuracy = double(correct) / double(scores.size());
    out.fallback_rate = double(fallbacks) / double(scores.size());
  }
  return out;
}

// --- experiments -------------------------------------------------------------

ResultTable run_e1_domain_conflict(const DomainConflictModels& m, const Corpus& corpus, std::uint64_t seed) {
  ResultTable t;
  const auto joint_acc = evaluate(*m.joint, corpus.test);
  for (auto d : kAllDomains) {
    const auto i = domain_index(d);
    const auto test = filter_domain(corpus.test, d);
    const std::string name(domain_name(d)), h = eval_hash(test);
    t.add({"E1", "joint", name, "accuracy", seed, joint_acc.accuracy[i], m.joint_hash, eval_hash(corpus.test)});
    t.add({"E1", "joint-specialized", name, "accuracy", seed, evaluate(*m.finetuned[i], test).accuracy[i],
           m.finetuned_hash[i], h});
    t.add({"E1", "random-specialized", name, "accuracy", seed, evaluate(*m.scratch[i], test).accuracy[i],
           m.scratch_hash[i], h});
  }
  return t;
}

ResultTable run_e2_layer_scan(const std::vector<const MixpertModel*>& models, std::span<const std::size_t> expert_layers,
                              const Corpus& corpus, std::uint64_t seed, const std::vector<std::string>& hashes) {
  if (models.size() != expert_layers.size() || hashes.size() != models.size()) {
    throw ContractError("layer scan: models, layer counts and hashes must align");
  }
  ResultTable t;
  const std::string test_hash = eval_hash(corpus.test);
  for (std::size_t k = 0; k < models.size(); ++k) {
    const auto& mx = *models[k];
    const std::size_t le = expert_layers[k];
    if (mx.config.encoder.expert_layers() != le) throw ContractError("layer scan: model split does not match");
    const std::string cond = "le=" + std::to_string(le);
    double sum = 0.0;
    for (auto d : kAllDomains) {
      const auto test = filter_domain(corpus.test, d);
      const double acc = evaluate_forced(mx, test, expert_for(d)).accuracy[domain_index(d)];
      sum += acc;
      t.add({"E2", cond, std::string(domain_name(d)), "accuracy", seed, acc, hashes[k], test_hash});
    }
    t.add({"E2", cond, "mean", "accuracy", seed, sum / double(kNumDomains), hashes[k], test_hash});
    const auto row = scan_layers(mx.config.encoder, std::span<const std::size_t>(&le, 1), mx.config.router_hidden)[0];
    t.add({"E2", cond, "all", "additional_params", seed, double(row.additional_params), hashes[k], ""});
    t.add({"E2", cond, "all", "additional_params_with_router", seed, double(row.additional_params_with_router),
           hashes[k], ""});
  }
  return t;
}

namespace {

Tensor pooled_trunk_features(const SharedTrunk& trunk, const EncoderConfig& config, const std::vector<Sample>& samples) {
  NoGradGuard no_grad;
  Tensor out({samples.size(), config.embed_dim});
  constexpr std::size_t kBatch = 256;
  for (std::size_t lo = 0; lo < samples.size(); lo += kBatch) {
    const std::size_t hi = std::min(samples.size(), lo + kBatch);
    std::vector<const Sample*> chunk;
    for (std::size_t i = lo; i < hi; ++i) chunk.push_back(&samples[i]);
    const Tensor p = nn::mean_pool(encode_shared(patchify(chunk, config), trunk, chunk.size()), chunk.size());
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + lo * config.embed_dim);
  }
  return out;
}

}  // namespace

ResultTable run_e3_router_scaling(const std::vector<const RouterNet*>& routers, std::span<const std::size_t> sizes,
                                  const SharedTrunk& trunk, const EncoderConfig& config, const Corpus& corpus,
                                  std::uint64_t seed, const std::vector<std::string>& hashes) {
  if (routers.size() != sizes.size() || hashes.size() != sizes.size()) {
    throw ContractError("router scaling: routers, sizes and hashes must align");
  }
  ResultTable t;
  const Tensor pooled = pooled_trunk_features(trunk, config, corpus.val);
  const std::string h = eval_hash(corpus.val);
  for (std::size_t k = 0; k < routers.size(); ++k) {
    NoGradGuard no_grad;
    const Tensor scores = route_scores(pooled, *routers[k]);
    DomainAccuracy acc;
    for (std::size_t i = 0; i < corpus.val.size(); ++i) {
      const auto truth = domain_index(corpus.val[i].domain);
      acc.count[truth] += 1;
      acc.accuracy[truth] += tie_break(scores.data().subspan(i * kNumDomains, kNumDomains)) == truth ? 1.0 : 0.0;
    }
    const std::string cond = "n=" + std::to_string(sizes[k]);
    for (auto d : kAllDomains) {
      const auto i = domain_index(d);
      acc.accuracy[i] /= double(std::max<std::size_t>(acc.count[i], 1));
      t.add({"E3", cond, std::string(domain_name(d)), "accuracy", seed, acc.accuracy[i], hashes[k], h});
    }
    t.add({"E3", cond, "mean", "accuracy", seed, acc.mean(), hashes[k], h});
  }
  return t;
}

namespace {

void add_policy_rows(ResultTable& t, const std::string& experiment, const std::string& cond, const RoutingTable& table,
                     const RoutingPolicy& policy, std::uint64_t seed, const std::string& ckpt, const std::string& h) {
  const auto r = table.evaluate(policy);
  t.add({experiment, cond, "mixed", "accuracy", seed, r.mean_accuracy, ckpt, h});
  t.add({experiment, cond, "mixed", "fallback_rate", seed, r.fallback_rate, ckpt, h});
  // Pure and ambiguous subsets of the same evaluation.
  for (bool amb : {false, true}) {
    std::size_t n = 0, ok = 0, fb = 0;
    for (std::size_t i = 0; i < table.scores.size(); ++i) {
      if (table.ambiguous[i] != amb) continue;
      ++n;
      const auto& d = r.decisions[i];
      ok += (d.top_domain == table.domains[i] && r.predictions[i] == table.labels[i]) ? 1 : 0;
      fb += d.fell_back ? 1 : 0;
    }
    const std::string subset = amb ? "ambiguous" : "pure";
    t.add({experiment, cond, subset, "accuracy", seed, n ? double(ok) / double(n) : 0.0, ckpt, h});
    t.add({experiment, cond, subset, "fallback_rate", seed, n ? double(fb) / double(n) : 0.0, ckpt, h});
  }
}

}  // namespace

ResultTable run_e4_strategies(const RoutingTable& table, double tau, double lambda, std::uint64_t seed,
                              const std::string& ckpt_hash, const std::string& h) {
  ResultTable t;
  for (auto s : {RoutingStrategy::Direct, RoutingStrategy::ScoreThreshold, RoutingStrategy::ScoreDifference}) {
    RoutingPolicy p{s, tau, lambda};
    add_policy_rows(t, "E4", std::string(strategy_name(s)), table, p, seed, ckpt_hash, h);
  }
  return t;
}

ResultTable run_e5_tau_sweep(const RoutingTable& table, std::span<const double> taus, std::uint64_t seed,
                             const std::string& ckpt_hash, const std::string& h) {
  ResultTable t;
  for (double tau : taus) {
    RoutingPolicy p{RoutingStrategy::ScoreDifference, tau, 0.5};
    add_policy_rows(t, "E5", "tau=" + format_double(tau), table, p, seed, ckpt_hash, h);
  }
  return t;
}

namespace {

std::array<CostReport, 2> cost_pair(const MixpertConfig& config) {
  return {cost_report(ModelLayout::monolithic(config.encoder)), cost_report(ModelLayout::mixpert(config))};
}

}  // namespace

std::string cost_text(const MixpertConfig& config) {
  const auto reports = cost_pair(config);
  return render_cost_table(reports);
}

std::string cost_csv(const MixpertConfig& config) {
  const auto reports = cost_pair(config);
  return render_cost_csv(reports);
}

ResultTable run_e6_cost(const MixpertConfig& config) {
  const auto [mono, mix] = cost_pair(config);
  ResultTable t;
  auto add = [&](const std::string& cond, const std::string& metric, double v) {
    t.add({"E6", cond, "all", metric, 0, v, "", ""});
  };
  for (const auto* r : {&mono, &mix}) {
    add(r->model, "total_params", double(r->total_params));
    add(r->model, "activated_params", double(r->activated_params));
    add(r->model, "flops_per_image", double(r->flops_per_image));
  }
  add("delta", "activated_params", double(mix.activated_params) - double(mono.activated_params));
  add("delta", "flops_per_image", double(mix.flops_per_image) - double(mono.flops_per_image));
  add("router", "params", double(router_params(config.encoder.embed_dim, config.router_hidden)));
  add("router", "flops", double(router_flops(config.encoder, config.router_hidden)));
  return t;
}

// --- pipeline ----------------------------------------------------------------

std::size_t PipelineResult::stages_run() const {
  return std::size_t(std::count_if(stages.begin(), stages.end(), [](const StageTiming& s) { return s.ran; }));
}

std::vector<std::string> PipelineResult::ran() const {
  std::vector<std::string> out;
  for (const auto& s : stages) {
    if (s.ran) out.push_back(s.stage);
  }
  return out;
}

fs::path resolve_cache_dir(const PipelineOptions& options) {
  if (!options.cache_dir.empty()) return options.cache_dir;
  if (const char* env = std::getenv("MIXPERT_CACHE_DIR"); env != nullptr && *env != '\0') return fs::path(env);
  return options.out_dir / "cache";
}

namespace {

using Clock = std::chrono::steady_clock;

void write_text(const fs::path& file, const std::string& text) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  const fs::path tmp = file.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp.string());
    out << text;
    if (!out) throw FormatError("write failed for " + tmp.string());
  }
  fs::rename(tmp, file);
}

// Stage reports go into the manifest, so they must not carry wall-clock time;
// timings.txt records it instead.
std::string report_text(TrainReport report) {
  report.wall_seconds = 0.0;
  return report.to_text();
}

std::string read_text(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw FormatError("cannot read " + file.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Runs named stages with make-style freshness checks.
class StageRunner {
 public:
  StageRunner(fs::path root, std::string config_key, std::function<void(const std::string&)> log)
      : root_(std::move(root)), config_key_(std::move(config_key)), log_(std::move(log)) {}

  const fs::path& root() const { return root_; }

  // Returns true if the stage executed.
  bool run(const std::string& name, const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs,
           const std::function<void()>& body, std::vector<StageTiming>& timings, std::string& last_good,
           std::vector<fs::path>& artifacts) {
    const std::string key = hex64(fnv1a(config_key_ + "|" + name));
    const fs::path stamp = root_ / "stamps" / (name + ".key");
    artifacts.insert(artifacts.end(), outputs.begin(), outputs.end());
    if (fresh(stamp, key, inputs, outputs)) {
      timings.push_back({name, 0.0, false});
      last_good = name;
      return false;
    }
    say(name + ": running");
    const auto t0 = Clock::now();
    try {
      fs::remove(stamp);
      body();
    } catch (const std::exception& e) {
      throw StageError(name, last_good, e.what());
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    write_text(stamp, key + "\n");
    timings.push_back({name, secs, true});
    last_good = name;
    say(name + ": done in " + format_double(std::round(secs * 10.0) / 10.0) + " s");
    return true;
  }

  void say(const std::string& msg) {
    if (!log_) return;
    std::lock_guard<std::mutex> lock(mu_);
    log_(msg);
  }

 private:
  static bool fresh(const fs::path& stamp, const std::string& key, const std::vector<fs::path>& inputs,
                    const std::vector<fs::path>& outputs) {
    std::error_code ec;
    if (!fs::exists(stamp, ec)) return false;
    std::string text;
    try {
      text = read_text(stamp);
    } catch (const FormatError&) {
      return false;
    }
    if (text != key + "\n") return false;
    fs::file_time_type oldest_output = fs::file_time_type::max();
    for (const auto& o : outputs) {
      if (!fs::exists(o, ec)) return false;
      oldest_output = std::min(oldest_output, fs::last_write_time(o, ec));
    }
    for (const auto& i : inputs) {
      if (!fs::exists(i, ec) || fs::last_write_time(i, ec) > oldest_output) return false;
    }
    return true;
  }

  fs::path root_;
  std::string config_key_;
  std::function<void(const std::string&)> log_;
  std::mutex mu_;
};

// The corpus is loaded once and shared read-only by every seed.
class CorpusCache {
 public:
  explicit CorpusCache(fs::path dir) : dir_(std::move(dir)) {}
  const Corpus& get() {
    std::call_once(once_, [&] { corpus_ = read_corpus(dir_); });
    return corpus_;
  }

 private:
  fs::path dir_;
  std::once_flag once_;
  Corpus corpus_;
};

Checkpoint branch_checkpoint(const MixpertModel& mx, ExpertId id) {
  return make_checkpoint(mx.config.encoder, mx.config.router_hidden, mx.expert(id).parameters("branch"));
}

void load_branch(MixpertModel& mx, ExpertId id, const fs::path& file) {
  load_params(mx.expert(id).parameters("branch"), load_checkpoint(file));
}

struct SeedOutcome {
  std::vector<StageTiming> timings;
  std::vector<fs::path> artifacts;
  ResultTable e1, e2, e3, e4, e5;
  std::exception_ptr error;
};

void run_seed(const RunConfig& cfg, std::uint64_t seed, bool scan, StageRunner& runner, CorpusCache& corpus_cache,
              const std::vector<fs::path>& corpus_files, SeedOutcome& out) {
  const fs::path dir = runner.root() / ("seed-" + std::to_string(seed));
  fs::create_directories(dir);
  const std::string tag = "seed-" + std::to_string(seed) + "/";
  std::string last_good = "corpus";
  auto stage = [&](const std::string& name, const std::vector<fs::path>& in, const std::vector<fs::path>& outputs,
                   const std::function<void()>& body) {
    runner.run(tag + name, in, outputs, body, out.timings, last_good, out.artifacts);
  };
  auto corpus = [&]() -> const Corpus& { return corpus_cache.get(); };
  auto load_joint = [&] { return monolithic_from_checkpoint(load_checkpoint(dir / "joint.mxpc")); };
  const MixpertConfig& mcfg = cfg.model;

  // Joint SFT of the monolithic model.
  const fs::path joint = dir / "joint.mxpc";
  stage("joint", corpus_files, {joint, dir / "joint.txt", dir / "joint_loss.csv"}, [&] {
    MonolithicModel model = MonolithicModel::create(mcfg.encoder, seed);
    const auto report = train_joint(model, corpus().train, corpus().val, cfg.joint, seed);
    write_text(dir / "joint.txt", report_text(report));
    write_text(dir / "joint_loss.csv", report.to_csv());
    save_checkpoint(joint, to_checkpoint(model));
  });

  // Disentangled expert tuning, one stage per domain.
  std::vector<fs::path> expert_files;
  for (auto d : kAllDomains) {
    const std::string name(domain_name(d));
    const fs::path file = dir / ("expert-" + name + ".mxpc");
    expert_files.push_back(file);
    stage("expert-" + name, {joint}, {file, dir / ("expert-" + name + ".txt")}, [&] {
      MixpertModel mx = from_joint(load_joint(), mcfg, seed);
      const auto report =
          tune_expert(mx, expert_for(d), filter_domain(corpus().train, d), filter_domain(corpus().val, d), cfg.expert, seed);
      write_text(dir / ("expert-" + name + ".txt"), report_text(report));
      save_checkpoint(file, branch_checkpoint(mx, expert_for(d)));
    });
  }

  // Routers on nested subsets; the largest is the deployed router.
  std::vector<std::size_t> sizes = cfg.experiment.router_sizes;
  if (sizes.back() != cfg.corpus.train_per_domain) sizes.push_back(cfg.corpus.train_per_domain);
  std::vector<fs::path> router_files, router_outputs;
  for (auto n : sizes) {
    router_files.push_back(dir / ("router-" + std::to_string(n) + ".mxpc"));
    router_outputs.push_back(router_files.back());
    router_outputs.push_back(dir / ("router-" + std::to_string(n) + ".txt"));
  }
  stage("routers", {joint}, router_outputs, [&] {
    const MixpertModel mx = from_joint(load_joint(), mcfg, seed);
    const Corpus& c = corpus();
    const Tensor train_pooled = pooled_trunk_features(mx.trunk, mcfg.encoder, c.train);
    const Tensor val_pooled = pooled_trunk_features(mx.trunk, mcfg.encoder, c.val);
    std::vector<DomainLabel> val_domains;
    for (const auto& s : c.val) val_domains.push_back(s.domain);
    const std::size_t per_domain = c.manifest.train_per_domain;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      std::vector<std::size_t> rows;
      std::vector<DomainLabel> domains;
      for (auto d : kAllDomains) {
        for (std::size_t i = 0; i < sizes[k]; ++i) {
          rows.push_back(domain_index(d) * per_domain + i);
          domains.push_back(d);
        }
      }
      RouterNet net = mx.router.clone();
      const auto report = train_router_pooled(net, nn::gather_rows(train_pooled, rows), domains, val_pooled,
                                              val_domains, cfg.router, seed);
      write_text(dir / ("router-" + std::to_string(sizes[k]) + ".txt"), report_text(report));
      save_checkpoint(router_files[k], make_checkpoint(mcfg.encoder, mcfg.router_hidden, net.parameters("router")));
    }
  });
  const fs::path main_router = router_files.back();

  // Assembled model: trunk, tuned experts, versatile, router, heads.
  const fs::path mixpert = dir / "mixpert.mxpc";
  std::vector<fs::path> assemble_inputs = expert_files;
  assemble_inputs.push_back(joint);
  assemble_inputs.push_back(main_router);
  stage("assemble", assemble_inputs, {mixpert}, [&] {
    MixpertModel mx = from_joint(load_joint(), mcfg, seed);
    for (auto d : kAllDomains) load_branch(mx, expert_for(d), expert_files[domain_index(d)]);
    load_params(mx.router.parameters("router"), load_checkpoint(main_router));
    save_checkpoint(mixpert, to_checkpoint(mx));
  });

  // E3: router scaling.
  std::vector<fs::path> e3_inputs = router_files;
  e3_inputs.push_back(joint);
  stage("e3", e3_inputs, {dir / "e3.csv"}, [&] {
    const MixpertModel mx = from_joint(load_joint(), mcfg, seed);
    std::vector<RouterNet> nets;
    std::vector<std::string> hashes;
    for (const auto& f : cfg.experiment.router_sizes) {
      const fs::path file = dir / ("router-" + std::to_string(f) + ".mxpc");
      RouterNet net = mx.router.clone();
      load_params(net.parameters("router"), load_checkpoint(file));
      nets.push_back(std::move(net));
      hashes.push_back(file_hash(file));
    }
    std::vector<const RouterNet*> ptrs;
    for (const auto& n : nets) ptrs.push_back(&n);
    const auto t = run_e3_router_scaling(ptrs, cfg.experiment.router_sizes, mx.trunk, mcfg.encoder, corpus(), seed, hashes);
    write_text(dir / "e3.csv", t.to_csv());
  });

  // E4 + E5 share one routing table over the mixed evaluation set.
  stage("e4-e5", {mixpert}, {dir / "e4.csv", dir / "e5.csv"}, [&] {
    const MixpertModel mx = mixpert_from_checkpoint(load_checkpoint(mixpert), mcfg.policy);
    const auto mixed = mixed_eval_set(corpus());
    verify_disjoint(corpus().train, mixed);
    const auto table = build_routing_table(mx, mixed);
    const std::string ck = file_hash(mixpert), h = eval_hash(mixed);
    write_text(dir / "e4.csv", run_e4_strategies(table, mcfg.policy.tau, mcfg.policy.lambda, seed, ck, h).to_csv());
    write_text(dir / "e5.csv", run_e5_tau_sweep(table, cfg.experiment.taus, seed, ck, h).to_csv());
  });

  // E1: domain conflict.
  std::vector<fs::path> e1_inputs = {joint};
  for (auto d : kAllDomains) {
    const std::string name(domain_name(d));
    const fs::path ft = dir / ("e1-finetune-" + name + ".mxpc"), sc = dir / ("e1-scratch-" + name + ".mxpc");
    e1_inputs.push_back(ft);
    e1_inputs.push_back(sc);
    stage("e1-finetune-" + name, {joint}, {ft}, [&] {
      MonolithicModel model = load_joint();
      train_monolithic(model, filter_domain(corpus().train, d), {}, cfg.finetune, seed, "finetune-" + name);
      save_checkpoint(ft, to_checkpoint(model));
    });
    stage("e1-scratch-" + name, corpus_files, {sc}, [&] {
      MonolithicModel model = MonolithicModel::create(mcfg.encoder, derive_seed({seed, 0x5C7A, domain_index(d)}));
      train_monolithic(model, filter_domain(corpus().train, d), {}, cfg.scratch, seed, "scratch-" + name);
      save_checkpoint(sc, to_checkpoint(model));
    });
  }
  stage("e1", e1_inputs, {dir / "e1.csv"}, [&] {
    DomainConflictModels m;
    const MonolithicModel j = load_joint();
    std::vector<MonolithicModel> ft, sc;
    for (auto d : kAllDomains) {
      const std::string name(domain_name(d));
      ft.push_back(monolithic_from_checkpoint(load_checkpoint(dir / ("e1-finetune-" + name + ".mxpc"))));
      sc.push_back(monolithic_from_checkpoint(load_checkpoint(dir / ("e1-scratch-" + name + ".mxpc"))));
      m.finetuned_hash[domain_index(d)] = file_hash(dir / ("e1-finetune-" + name + ".mxpc"));
      m.scratch_hash[domain_index(d)] = file_hash(dir / ("e1-scratch-" + name + ".mxpc"));
    }
    m.joint = &j;
    m.joint_hash = file_hash(joint);
    for (std::size_t i = 0; i < kNumDomains; ++i) {
      m.finetuned[i] = &ft[i];
      m.scratch[i] = &sc[i];
    }
    write_text(dir / "e1.csv", run_e1_domain_conflict(m, corpus(), seed).to_csv());
  });

  // E2: layer scan, on the first scan_seeds seeds.
  if (scan) {
    std::vector<fs::path> scan_files;
    for (auto le : cfg.experiment.scan_layers) {
      if (le == mcfg.encoder.expert_layers()) {
        scan_files.push_back(mixpert);
        continue;
      }
      const fs::path file = dir / ("e2-le" + std::to_string(le) + ".mxpc");
      scan_files.push_back(file);
      stage("e2-le" + std::to_string(le), {joint}, {file}, [&] {
        MixpertConfig split = mcfg;
        split.encoder.shared_layers = mcfg.encoder.total_layers - le;
        MixpertModel mx = from_joint(load_joint(), split, seed);
        for (auto d : kAllDomains) {
          tune_expert(mx, expert_for(d), filter_domain(corpus().train, d), {}, cfg.expert, seed);
        }
        save_checkpoint(file, to_checkpoint(mx));
      });
    }
    stage("e2", scan_files, {dir / "e2.csv"}, [&] {
      std::vector<MixpertModel> models;
      std::vector<std::string> hashes;
      for (const auto& f : scan_files) {
        models.push_back(mixpert_from_checkpoint(load_checkpoint(f), mcfg.policy));
        hashes.push_back(file_hash(f));
      }
      std::vector<const MixpertModel*> ptrs;
      for (const auto& m : models) ptrs.push_back(&m);
      write_text(dir / "e2.csv", run_e2_layer_scan(ptrs, cfg.experiment.scan_layers, corpus(), seed, hashes).to_csv());
    });
    out.e2 = ResultTable::from_csv(read_text(dir / "e2.csv"));
  }

  out.e1 = ResultTable::from_csv(read_text(dir / "e1.csv"));
  out.e3 = ResultTable::from_csv(read_text(dir / "e3.csv"));
  out.e4 = ResultTable::from_csv(read_text(dir / "e4.csv"));
  out.e5 = ResultTable::from_csv(read_text(dir / "e5.csv"));
}

std::string run_key(const RunConfig& cfg) {
  // Seeds and parallelism do not change any single seed's artifacts.
  RunConfig keyed = cfg;
  keyed.experiment.seeds = {0, 1, 2};
  keyed.experiment.jobs = 1;
  keyed.experiment.scan_seeds = 1;
  return hex64(fnv1a(keyed.to_text() + "generator=" + std::to_string(kGeneratorVersion) +
                     " checkpoint=" + std::to_string(kCheckpointVersion)));
}

std::string summary_text(const RunConfig& cfg, const std::vector<AggregateRow>& rows) {
  auto get = [&](const std::string& e, const std::string& c, const std::string& d, const std::string& m) {
    for (const auto& r : rows) {
      if (r.experiment == e && r.condition == c && r.domain == d && r.metric == m) return r;
    }
    return AggregateRow{};
  };
  auto cell = [](const AggregateRow& r) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f +/- %.4f", r.mean, r.stddev);
    return std::string(buf);
  };
  std::ostringstream os;
  os << "seeds: " << list_text(cfg.experiment.seeds) << "\n\n";
  os << "E1 domain conflict (test accuracy, mean +/- std over seeds)\n";
  for (auto d : kAllDomains) {
    const std::string n(domain_name(d));
    os << "  " << n << ": joint " << cell(get("E1", "joint", n, "accuracy")) << " | joint-specialized "
       << cell(get("E1", "joint-specialized", n, "accuracy")) << " | random-specialized "
       << cell(get("E1", "random-specialized", n, "accuracy")) << "\n";
  }
  os << "\nE2 layer scan (forced matching expert)\n";
  for (auto le : cfg.experiment.scan_layers) {
    const std::string c = "le=" + std::to_string(le);
    os << "  " << le << " layers + projector: mean accuracy " << cell(get("E2", c, "mean", "accuracy"))
       << ", additional params " << std::uint64_t(get("E2", c, "all", "additional_params").mean)
       << (le == cfg.model.encoder.expert_layers() ? "  <- default operating point" : "") << "\n";
  }
  os << "\nE3 router scaling (validation accuracy)\n";
  for (auto n : cfg.experiment.router_sizes) {
    const std::string c = "n=" + std::to_string(n);
    os << "  " << n << "/domain: mean " << cell(get("E3", c, "mean", "accuracy")) << "\n";
  }
  os << "\nE4 routing strategies (mixed set)\n";
  for (auto s : {RoutingStrategy::Direct, RoutingStrategy::ScoreThreshold, RoutingStrategy::ScoreDifference}) {
    const std::string c(strategy_name(s));
    os << "  " << c << ": accuracy " << cell(get("E4", c, "mixed", "accuracy")) << ", fallback "
       << cell(get("E4", c, "mixed", "fallback_rate")) << "\n";
  }
  os << "\nE5 tau sweep (score-difference, mixed set)\n";
  for (double t : cfg.experiment.taus) {
    const std::string c = "tau=" + format_double(t);
    os << "  tau " << format_double(t) << ": accuracy " << cell(get("E5", c, "mixed", "accuracy")) << ", fallback "
       << cell(get("E5", c, "mixed", "fallback_rate")) << "\n";
  }
  os << "\nE6 cost\n" << cost_text(cfg.model);
  return os.str();
}

}  // namespace

PipelineResult run_pipeline(const RunConfig& cfg, const PipelineOptions& options) {
  cfg.validate();
  if (options.out_dir.empty()) throw ConfigError("pipeline: output directory required");
  const auto t0 = Clock::now();
  PipelineResult result;
  result.out_dir = options.out_dir;
  result.cache_dir = resolve_cache_dir(options);
  const std::string key = run_key(cfg);
  const fs::path root = result.cache_dir / ("run-" + key);
  fs::create_directories(root);
  fs::create_directories(options.out_dir);
  StageRunner runner(root, key, options.log);

  // Corpus.
  const fs::path corpus_dir = root / "corpus";
  std::vector<fs::path> corpus_files;
  for (const char* f : {"train.mxpd", "val.mxpd", "test.mxpd", "ambiguous.mxpd", "manifest.txt"}) {
    corpus_files.push_back(corpus_dir / f);
  }
  std::string last_good;
  std::vector<fs::path> global_artifacts;
  runner.run("corpus", {}, corpus_files, [&] { write_corpus(cfg.corpus, corpus_dir); }, result.stages, last_good,
             global_artifacts);
  CorpusCache corpus_cache(corpus_dir);

  // Seeds in parallel.
  const auto& seeds = cfg.experiment.seeds;
  std::vector<SeedOutcome> outcomes(seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < seeds.size(); i = next++) {
      try {
        run_seed(cfg, seeds[i], i < cfg.experiment.scan_seeds, runner, corpus_cache, corpus_files, outcomes[i]);
      } catch (...) {
        outcomes[i].error = std::current_exception();
      }
    }
  };
  const std::size_t jobs = std::min(cfg.experiment.jobs, seeds.size());
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& o : outcomes) {
    if (o.error) std::rethrow_exception(o.error);
  }

  // Results in a fixed order: experiment, then seed.
  for (auto member : {&SeedOutcome::e1, &SeedOutcome::e2, &SeedOutcome::e3, &SeedOutcome::e4, &SeedOutcome::e5}) {
    for (const auto& o : outcomes) result.results.append(o.*member);
  }
  result.results.append(run_e6_cost(cfg.model));
  result.summary = result.results.aggregate();
  for (auto& o : outcomes) {
    result.stages.insert(result.stages.end(), o.timings.begin(), o.timings.end());
    global_artifacts.insert(global_artifacts.end(), o.artifacts.begin(), o.artifacts.end());
  }

  const fs::path out = options.out_dir;
  write_text(out / "config.txt", cfg.to_text());
  write_text(out / "results.csv", result.results.to_csv());
  write_text(out / "summary.csv", aggregate_csv(result.summary));
  write_text(out / "e6_cost.txt", cost_text(cfg.model));
  write_text(out / "e6_cost.csv", cost_csv(cfg.model));
  write_text(out / "summary.txt", summary_text(cfg, result.summary));
  {
    std::ostringstream os;
    os << "# mixpert pipeline manifest v1\nrun = run-" << key << "\n";
    for (const auto& a : global_artifacts) {
      os << fs::relative(a, root).generic_string() << " " << file_hash(a) << "\n";
    }
    write_text(out / "manifest.txt", os.str());
  }
  result.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  {
    std::ostringstream os;
    os << "# stage seconds ran\n";
    for (const auto& s : result.stages) os << s.stage << " " << format_double(s.seconds) << " " << (s.ran ? 1 : 0) << "\n";
    os << "jobs " << jobs << "\nwall_seconds " << format_double(result.wall_seconds) << "\n";
    write_text(out / "timings.txt", os.str());
  }
  return result;
}

}  // namespace mixpert

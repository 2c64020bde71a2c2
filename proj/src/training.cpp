// Copyright 2026 The Mixpert Authors.
// SPDX-License-Identifier: Apache-2.0

#include "mixpert/training.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <sstream>

#include "mixpert/error.hpp"
#include "mixpert/keyvalue.hpp"
#include "mixpert/ops.hpp"

namespace mixpert {

void OptimizerConfig::validate() const {
  if (!(beta1 > 0.0 && beta1 < beta2 && beta2 < 1.0)) throw ConfigError("optimizer: need 0 < beta1 < beta2 < 1");
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 0.5)) throw ConfigError("optimizer: warmup_fraction outside [0, 0.5]");
  if (!(eps > 0.0) || weight_decay < 0.0) throw ConfigError("optimizer: eps must be positive, weight_decay non-negative");
  if (!(encoder_lr >= 0.0 && projector_lr >= 0.0)) throw ConfigError("optimizer: learning rates must be non-negative");
  if (batch_size == 0) throw ConfigError("optimizer: batch_size must be positive");
}

double lr_at(std::size_t step, std::size_t total, double warmup_fraction, double peak) {
  if (total == 0 || step >= total) return 0.0;
  const auto warmup = static_cast<std::size_t>(std::ceil(warmup_fraction * double(total)));
  if (step < warmup) return peak * double(step) / double(warmup);
  const double progress = double(step - warmup) / double(total - warmup);
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamW::AdamW(std::vector<ParamGroup> groups, const OptimizerConfig& config)
    : groups_(std::move(groups)), config_(config) {
  config_.validate();
  for (const auto& g : groups_) {
    auto& slots = state_.emplace_back();
    for (const auto& p : g.params) slots.push_back({std::vector<float>(p.tensor.numel()), std::vector<float>(p.tensor.numel())});
  }
}

void AdamW::step(double schedule) {
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, double(t_)), c2 = 1.0 - std::pow(b2, double(t_));
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    const double lr = groups_[gi].peak_lr * schedule;
    for (std::size_t pi = 0; pi < groups_[gi].params.size(); ++pi) {
      Tensor p = groups_[gi].params[pi].tensor;
      auto& slot = state_[gi][pi];
      auto w = p.data();
      const bool has = p.has_grad();
      const float* g = has ? p.grad().data() : nullptr;
      const bool decay = groups_[gi].params[pi].kind == ParamKind::Weight && config_.weight_decay > 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi_v = has ? double(g[i]) : 0.0;
        const double m = b1 * slot.m[i] + (1.0 - b1) * gi_v;
        const double v = b2 * slot.v[i] + (1.0 - b2) * gi_v * gi_v;
        slot.m[i] = float(m);
        slot.v[i] = float(v);
        double x = w[i];
        if (decay) x -= lr * config_.weight_decay * x;
        x -= lr * (m / c1) / (std::sqrt(v / c2) + config_.eps);
        w[i] = float(x);
      }
      p.zero_grad();
    }
  }
}

double DomainAccuracy::mean() const {
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < kNumDomains; ++i) {
    if (count[i] == 0) continue;
    total += accuracy[i];
    ++n;
  }
  return n == 0 ? 0.0 : total / double(n);
}

double TrainReport::final_loss() const {
  if (losses.empty()) return 0.0;
  const std::size_t k = std::max<std::size_t>(1, losses.size() / 10);
  double s = 0.0;
  for (std::size_t i = losses.size() - k; i < losses.size(); ++i) s += losses[i];
  return s / double(k);
}

std::string TrainReport::to_text() const {
  std::ostringstream os;
  os << "phase: " << phase << "\nseed: " << seed << "\nsteps: " << steps << "\n";
  os << "initial_loss: " << format_double(initial_loss()) << "\nfinal_loss: " << format_double(final_loss()) << "\n";
  for (const auto& [name, lr] : group_lrs) os << "lr." << name << ": " << format_double(lr) << "\n";
  for (auto d : kAllDomains) {
    const auto i = domain_index(d);
    if (before.count[i] == 0 && after.count[i] == 0) continue;
    os << "accuracy." << domain_name(d) << ": " << format_double(before.accuracy[i]) << " -> "
       << format_double(after.accuracy[i]) << "\n";
  }
  if (!confusion.empty()) {
    os << "confusion (rows true, columns predicted):\n";
    for (auto d : kAllDomains) {
      os << "  " << domain_name(d);
      for (auto c : confusion[domain_index(d)]) os << " " << c;
      os << "\n";
    }
  }
  if (wall_seconds > 0.0) os << "wall_seconds: " << format_double(std::round(wall_seconds * 100.0) / 100.0) << "\n";
  return os.str();
}

std::string TrainReport::to_csv() const {
  std::ostringstream os;
  os << "# mixpert-train-report v1\n";
  os << "phase,seed,step,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) {
    os << phase << "," << seed << "," << i << "," << format_double(losses[i]) << "\n";
  }
  return os.str();
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[std::size_t(rng.uniform_int(0, int(i) - 1))]);
  return idx;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::uint64_t phase_tag(const std::string& phase) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : phase) h = (h ^ c) * 1099511628211ull;
  return h;
}

std::vector<const Sample*> pointers(const std::vector<Sample>& samples, std::span<const std::size_t> idx) {
  std::vector<const Sample*> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(&samples[i]);
  return out;
}

// Mean cross-entropy over the batch, each row scored by its domain's head.
Tensor head_loss(const Tensor& pooled, const std::vector<const Sample*>& batch, const TaskHeads& heads) {
  Tensor total;
  for (auto d : kAllDomains) {
    std::vector<std::size_t> rows;
    std::vector<int> labels;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (batch[i]->domain != d) continue;
      rows.push_back(i);
      labels.push_back(batch[i]->task_label);
    }
    if (rows.empty()) continue;
    Tensor part = nn::cross_entropy(heads[d].forward(nn::gather_rows(pooled, rows)), labels, double(batch.size()));
    total = total.defined() ? nn::add(total, part) : part;
  }
  return total;
}

// Argmax of each row's own-domain head (or `head_domains` when given).
std::vector<int> head_predictions(const Tensor& pooled, const TaskHeads& heads,
                                  std::span<const DomainLabel> head_domains) {
  std::vector<int> pred(head_domains.size(), -1);
  for (auto d : kAllDomains) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < head_domains.size(); ++i) {
      if (head_domains[i] == d) rows.push_back(i);
    }
    if (rows.empty()) continue;
    const Tensor logits = heads[d].forward(nn::gather_rows(pooled, rows));
    const std::size_t k = logits.dim(1);
    for (std::size_t r = 0; r < rows.size(); ++r) pred[rows[r]] = int(tie_break(logits.data().subspan(r * k, k)));
  }
  return pred;
}

void tally(DomainAccuracy& acc, const Sample& s, bool correct) {
  const auto i = domain_index(s.domain);
  acc.count[i] += 1;
  acc.accuracy[i] += correct ? 1.0 : 0.0;
}

void finish(DomainAccuracy& acc) {
  for (std::size_t i = 0; i < kNumDomains; ++i) {
    if (acc.count[i] > 0) acc.accuracy[i] /= double(acc.count[i]);
  }
}

template <class LossFn>
void run_steps(AdamW& optimizer, std::size_t n, const OptimizerConfig& opt, std::uint64_t seed,
               const std::string& phase, TrainReport& report, LossFn&& batch_loss) {
  const std::size_t per_epoch = (n + opt.batch_size - 1) / opt.batch_size;
  const std::size_t total = per_epoch * opt.epochs;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    const auto order = shuffled_indices(n, derive_seed({seed, phase_tag(phase), epoch}));
    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::size_t lo = b * opt.batch_size, hi = std::min(n, lo + opt.batch_size);
      const std::span<const std::size_t> idx(order.data() + lo, hi - lo);
      try {
        Tensor loss = batch_loss(idx);
        const double value = loss.item();
        if (!std::isfinite(value)) throw NumericError("loss is " + std::to_string(value));
        backward(loss);
        report.losses.push_back(value);
      } catch (const NumericError& e) {
        clear_tape();
        throw DivergenceError(phase + " diverged at step " + std::to_string(step) + ": " + e.what());
      }
      optimizer.step(lr_at(step + 1, total, opt, 1.0));
      ++step;
    }
  }
  report.steps = step;
}

void note_groups(TrainReport& report, const AdamW& optimizer) {
  for (const auto& g : optimizer.groups()) report.group_lrs.emplace_back(g.name, g.peak_lr);
}

}  // namespace

// --- evaluation --------------------------------------------------------------

DomainAccuracy evaluate(const MonolithicModel& model, const std::vector<Sample>& samples) {
  NoGradGuard no_grad;
  DomainAccuracy acc;
  constexpr std::size_t kBatch = 256;
  for (std::size_t lo = 0; lo < samples.size(); lo += kBatch) {
    const std::size_t hi = std::min(samples.size(), lo + kBatch);
    std::vector<const Sample*> batch;
    std::vector<DomainLabel> domains;
    for (std::size_t i = lo; i < hi; ++i) {
      batch.push_back(&samples[i]);
      domains.push_back(samples[i].domain);
    }
    const Tensor pooled = nn::mean_pool(model.encode(patchify(batch, model.config), batch.size()), batch.size());
    const auto pred = head_predictions(pooled, model.heads, domains);
    for (std::size_t i = 0; i < batch.size(); ++i) tally(acc, *batch[i], pred[i] == batch[i]->task_label);
  }
  finish(acc);
  return acc;
}

Tensor trunk_features(const MixpertModel& model, const std::vector<Sample>& samples, std::size_t batch) {
  NoGradGuard no_grad;
  const std::size_t tokens = model.config.encoder.tokens(), d = model.config.encoder.embed_dim;
  Tensor out({samples.size() * tokens, d});
  for (std::size_t lo = 0; lo < samples.size(); lo += batch) {
    const std::size_t hi = std::min(samples.size(), lo + batch);
    std::vector<const Sample*> chunk;
    for (std::size_t i = lo; i < hi; ++i) chunk.push_back(&samples[i]);
    const Tensor h = shared_features(chunk, model);
    std::copy(h.data().begin(), h.data().end(), out.data().begin() + lo * tokens * d);
  }
  return out;
}

DomainAccuracy evaluate_forced(const MixpertModel& model, const std::vector<Sample>& samples, ExpertId expert) {
  NoGradGuard no_grad;
  DomainAccuracy acc;
  constexpr std::size_t kBatch = 256;
  for (std::size_t lo = 0; lo < samples.size(); lo += kBatch) {
    const std::size_t hi = std::min(samples.size(), lo + kBatch);
    std::vector<const Sample*> batch;
    std::vector<DomainLabel> domains;
    for (std::size_t i = lo; i < hi; ++i) {
      batch.push_back(&samples[i]);
      domains.push_back(samples[i].domain);
    }
    const std::vector<ExpertId> branches(batch.size(), expert);
    const auto pred = predict_with(shared_features(batch, model), batch.size(), model, branches, domains);
    for (std::size_t i = 0; i < batch.size(); ++i) tally(acc, *batch[i], pred[i] == batch[i]->task_label);
  }
  finish(acc);
  return acc;
}

RoutedEval evaluate_routed(const MixpertModel& model, const std::vector<Sample>& samples, const RoutingPolicy& policy) {
  NoGradGuard no_grad;
  RoutedEval out;
  constexpr std::size_t kBatch = 256;
  std::size_t correct = 0, fallbacks = 0;
  for (std::size_t lo = 0; lo < samples.size(); lo += kBatch) {
    const std::size_t hi = std::min(samples.size(), lo + kBatch);
    std::vector<const Sample*> batch;
    for (std::size_t i = lo; i < hi; ++i) batch.push_back(&samples[i]);
    const Tensor h_s = shared_features(batch, model);
    const auto decisions = route_batch(h_s, batch.size(), model, policy);
    std::vector<ExpertId> branches;
    std::vector<DomainLabel> heads;
    for (const auto& d : decisions) {
      branches.push_back(d.chosen);
      heads.push_back(d.top_domain);
    }
    const auto pred = predict_with(h_s, batch.size(), model, branches, heads);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const bool ok = decisions[i].top_domain == batch[i]->domain && pred[i] == batch[i]->task_label;
      tally(out.accuracy, *batch[i], ok);
      correct += ok ? 1 : 0;
      fallbacks += decisions[i].fell_back ? 1 : 0;
      out.decisions.push_back(decisions[i]);
      out.predictions.push_back(pred[i]);
    }
  }
  finish(out.accuracy);
  if (!samples.empty()) {
    out.mean_accuracy = double(correct) / double(samples.size());
    out.fallback_rate = double(fallbacks) / double(samples.size());
  }
  return out;
}

// --- procedures --------------------------------------------------------------

TrainReport train_monolithic(MonolithicModel& model, const std::vector<Sample>& train, const std::vector<Sample>& val,
                             const OptimizerConfig& opt, std::uint64_t seed, const std::string& phase) {
  opt.validate();
  if (train.empty()) throw ContractError(phase + ": empty training set");
  const auto t0 = Clock::now();
  TrainReport report;
  report.phase = phase;
  report.seed = seed;
  if (!val.empty()) report.before = evaluate(model, val);

  const ParamList all = model.parameters();
  set_trainable(all, true);
  zero_grads(all);
  ParamGroup encoder{"encoder", {}, opt.encoder_lr}, projector{"projector", {}, opt.projector_lr};
  model.embed.collect("encoder.embed", encoder.params);
  for (std::size_t i = 0; i < model.blocks.size(); ++i) {
    model.blocks[i].collect("encoder.blocks." + std::to_string(i), encoder.params);
  }
  model.projector.collect("projector", projector.params);
  model.heads.collect("heads", projector.params);
  AdamW optimizer({encoder, projector}, opt);
  note_groups(report, optimizer);

  run_steps(optimizer, train.size(), opt, seed, phase, report, [&](std::span<const std::size_t> idx) {
    const auto batch = pointers(train, idx);
    const Tensor h = model.encode(patchify(batch, model.config), batch.size());
    return head_loss(nn::mean_pool(h, batch.size()), batch, model.heads);
  });

  if (!val.empty()) report.after = evaluate(model, val);
  report.wall_seconds = seconds_since(t0);
  return report;
}

TrainReport train_joint(MonolithicModel& model, const std::vector<Sample>& train, const std::vector<Sample>& val,
                        const OptimizerConfig& opt, std::uint64_t seed) {
  std::array<bool, kNumDomains> seen{};
  for (const auto& s : train) seen[domain_index(s.domain)] = true;
  for (auto d : kAllDomains) {
    if (!seen[domain_index(d)]) {
      throw ContractError("train_joint: corpus has no " + std::string(domain_name(d)) + " samples");
    }
  }
  return train_monolithic(model, train, val, opt, seed, "joint");
}

TrainReport tune_expert(MixpertModel& model, ExpertId id, const std::vector<Sample>& train,
                        const std::vector<Sample>& val, const OptimizerConfig& opt, std::uint64_t seed,
                        const Tensor* features) {
  if (id == ExpertId::Versatile) throw ContractError("tune_expert: the versatile expert is never fine-tuned");
  opt.validate();
  const DomainLabel domain = static_cast<DomainLabel>(id);
  for (const auto& s : train) {
    if (s.domain != domain) throw ContractError("tune_expert: training data must come from the expert's domain");
  }
  if (train.empty()) throw ContractError("tune_expert: empty training set");
  const auto t0 = Clock::now();
  const std::string phase = "expert-" + std::string(expert_name(id));
  TrainReport report;
  report.phase = phase;
  report.seed = seed;
  if (!val.empty()) report.before = evaluate_forced(model, val, id);

  model.apply_freezing();
  for (auto other : kAllExperts) {
    if (other != id) set_trainable(model.expert(other).parameters(), false);
  }
  set_trainable(model.router.parameters(), false);
  ExpertBranch& branch = model.expert(id);
  ParamGroup blocks{"expert-blocks", {}, opt.encoder_lr}, projector{"projector", {}, opt.projector_lr};
  for (std::size_t i = 0; i < branch.blocks.size(); ++i) branch.blocks[i].collect("blocks." + std::to_string(i), blocks.params);
  branch.projector.collect("projector", projector.params);
  zero_grads(branch.parameters());
  AdamW optimizer({blocks, projector}, opt);
  note_groups(report, optimizer);

  Tensor local;
  if (features == nullptr) {
    local = trunk_features(model, train);
    features = &local;
  }
  const std::size_t tokens = model.config.encoder.tokens();
  if (features->dim(0) != train.size() * tokens) throw DimensionError("tune_expert: feature rows do not match samples");
  const std::string name(expert_name(id));
  run_steps(optimizer, train.size(), opt, seed, phase, report, [&](std::span<const std::size_t> idx) {
    std::vector<std::size_t> rows;
    rows.reserve(idx.size() * tokens);
    for (auto i : idx) {
      for (std::size_t t = 0; t < tokens; ++t) rows.push_back(i * tokens + t);
    }
    const Tensor h_v = encode_expert(nn::gather_rows(*features, rows), branch, idx.size(), name);
    return head_loss(nn::mean_pool(h_v, idx.size()), pointers(train, idx), model.heads);
  });
  model.apply_freezing();

  if (!val.empty()) report.after = evaluate_forced(model, val, id);
  report.wall_seconds = seconds_since(t0);
  return report;
}

namespace {

void router_accuracy(const RouterNet& net, const Tensor& pooled, std::span<const DomainLabel> domains,
                     DomainAccuracy& acc, std::vector<std::array<std::size_t, kNumDomains>>* confusion) {
  NoGradGuard no_grad;
  if (domains.empty()) return;
  const Tensor scores = route_scores(pooled, net);
  if (confusion != nullptr) confusion->assign(kNumDomains, {});
  for (std::size_t i = 0; i < domains.size(); ++i) {
    const auto pred = tie_break(scores.data().subspan(i * kNumDomains, kNumDomains));
    const auto truth = domain_index(domains[i]);
    acc.count[truth] += 1;
    acc.accuracy[truth] += pred == truth ? 1.0 : 0.0;
    if (confusion != nullptr) (*confusion)[truth][pred] += 1;
  }
  finish(acc);
}

}  // namespace

TrainReport train_router_pooled(RouterNet& net, const Tensor& train_pooled, std::span<const DomainLabel> train_domains,
                                const Tensor& val_pooled, std::span<const DomainLabel> val_domains,
                                const OptimizerConfig& opt, std::uint64_t seed) {
  opt.validate();
  if (train_pooled.rank() != 2 || train_pooled.dim(0) != train_domains.size()) {
    throw DimensionError("train_router: pooled features do not match labels");
  }
  const auto t0 = Clock::now();
  TrainReport report;
  report.phase = "router";
  report.seed = seed;
  router_accuracy(net, val_pooled, val_domains, report.before, nullptr);

  const ParamList params = net.parameters();
  set_trainable(params, true);
  zero_grads(params);
  AdamW optimizer({{"router", params, opt.projector_lr}}, opt);
  note_groups(report, optimizer);
  run_steps(optimizer, train_domains.size(), opt, seed, "router", report, [&](std::span<const std::size_t> idx) {
    std::vector<int> labels;
    for (auto i : idx) labels.push_back(int(domain_index(train_domains[i])));
    return nn::cross_entropy(net.logits(nn::gather_rows(train_pooled, idx)), labels);
  });

  router_accuracy(net, val_pooled, val_domains, report.after, &report.confusion);
  report.wall_seconds = seconds_since(t0);
  return report;
}

TrainReport train_router(RouterNet& net, const SharedTrunk& trunk, const EncoderConfig& config,
                         const std::vector<Sample>& train, const std::vector<Sample>& val,
                         const OptimizerConfig& opt, std::uint64_t seed) {
  set_trainable(trunk.parameters(), false);
  auto pool = [&](const std::vector<Sample>& samples) {
    NoGradGuard no_grad;
    Tensor out({std::max<std::size_t>(samples.size(), 1), config.embed_dim});
    constexpr std::size_t kBatch = 256;
    for (std::size_t lo = 0; lo < samples.size(); lo += kBatch) {
      const std::size_t hi = std::min(samples.size(), lo + kBatch);
      std::vector<const Sample*> chunk;
      for (std::size_t i = lo; i < hi; ++i) chunk.push_back(&samples[i]);
      const Tensor p = nn::mean_pool(encode_shared(patchify(chunk, config), trunk, chunk.size()), chunk.size());
      std::copy(p.data().begin(), p.data().end(), out.data().begin() + lo * config.embed_dim);
    }
    return out;
  };
  std::vector<DomainLabel> train_domains, val_domains;
  for (const auto& s : train) train_domains.push_back(s.domain);
  for (const auto& s : val) val_domains.push_back(s.domain);
  if (train.empty()) throw ContractError("train_router: empty training set");
  return train_router_pooled(net, pool(train), train_domains, pool(val), val_domains, opt, seed);
}

}  // namespace mixpert

// Copyright 2026 The Mixpert Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: corpus generation, each training phase, evaluation,
// cost accounting, single experiments and the cached pipeline.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "mixpert/error.hpp"
#include "mixpert/harness.hpp"
#include "mixpert/keyvalue.hpp"

namespace fs = std::filesystem;
using namespace mixpert;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::vector<std::uint64_t> seeds;
  std::string out;
  std::optional<std::string> routing;
  std::optional<double> tau, lambda;
};

void add_common(CLI::App* cmd, Common& c, bool multi_seed) {
  cmd->add_option("--config", c.config, "Run configuration file (key = value)")->check(CLI::ExistingFile);
  if (multi_seed) {
    cmd->add_option("--seeds", c.seeds, "Seeds, comma separated")->delimiter(',');
  }
  cmd->add_option("--seed", c.seed, "Random seed");
  cmd->add_option("--routing", c.routing, "direct | score-threshold | score-difference");
  cmd->add_option("--tau", c.tau, "Score-difference threshold");
  cmd->add_option("--lambda", c.lambda, "Score-threshold threshold");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig::defaults() : RunConfig::load(c.config);
  if (c.routing) cfg.model.policy.strategy = parse_strategy(*c.routing);
  if (c.tau) cfg.model.policy.tau = *c.tau;
  if (c.lambda) cfg.model.policy.lambda = *c.lambda;
  if (!c.seeds.empty()) cfg.experiment.seeds = c.seeds;
  cfg.validate();
  return cfg;
}

std::uint64_t seed_of(const Common& c) { return c.seed.value_or(0); }

Corpus corpus_for(const std::string& dir, const RunConfig& cfg) {
  if (!dir.empty()) return read_corpus(dir);
  return generate_corpus(cfg.corpus);
}

void write_file(const fs::path& file, const std::string& text) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + file.string());
  out << text;
}

fs::path sibling(const fs::path& file, const std::string& suffix) { return fs::path(file.string() + suffix); }

bool is_mixpert(const Checkpoint& ckpt) {
  return !ckpt.entries.empty() && ckpt.entries.front().first.rfind("trunk", 0) == 0;
}

void print_accuracy(const std::string& title, const DomainAccuracy& acc) {
  std::cout << title << "\n";
  for (auto d : kAllDomains) {
    const auto i = domain_index(d);
    if (acc.count[i] == 0) continue;
    std::cout << "  " << domain_name(d) << " " << format_double(acc.accuracy[i]) << " (n=" << acc.count[i] << ")\n";
  }
  std::cout << "  mean " << format_double(acc.mean()) << "\n";
}

void log_line(const std::string& msg) { std::cerr << msg << std::endl; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mixpert: a shared vision trunk with routed expert branches"};
  app.require_subcommand(1);

  // gen
  Common gen;
  auto* cmd_gen = app.add_subcommand("gen", "Generate the synthetic corpus");
  add_common(cmd_gen, gen, false);
  cmd_gen->add_option("--out", gen.out, "Output directory")->required();

  // train-joint
  Common tj;
  std::string tj_corpus;
  auto* cmd_tj = app.add_subcommand("train-joint", "Joint SFT of the monolithic model");
  add_common(cmd_tj, tj, false);
  cmd_tj->add_option("--corpus", tj_corpus, "Corpus directory (generated in memory if omitted)");
  cmd_tj->add_option("--out", tj.out, "Output checkpoint")->required();

  // split
  Common sp;
  std::string sp_joint;
  auto* cmd_sp = app.add_subcommand("split", "Split a joint checkpoint into a Mixpert model");
  add_common(cmd_sp, sp, false);
  cmd_sp->add_option("--joint", sp_joint, "Joint checkpoint")->required()->check(CLI::ExistingFile);
  cmd_sp->add_option("--out", sp.out, "Output checkpoint")->required();

  // tune-expert
  Common te;
  std::string te_model, te_corpus, te_domain;
  auto* cmd_te = app.add_subcommand("tune-expert", "Tune one domain expert branch");
  add_common(cmd_te, te, false);
  cmd_te->add_option("--model", te_model, "Mixpert checkpoint")->required()->check(CLI::ExistingFile);
  cmd_te->add_option("--domain", te_domain, "chart | doc | math | ocr | general")->required();
  cmd_te->add_option("--corpus", te_corpus, "Corpus directory (generated in memory if omitted)");
  cmd_te->add_option("--out", te.out, "Output checkpoint")->required();

  // train-router
  Common tr;
  std::string tr_model, tr_corpus;
  std::optional<std::size_t> tr_n;
  auto* cmd_tr = app.add_subcommand("train-router", "Train the router on frozen trunk features");
  add_common(cmd_tr, tr, false);
  cmd_tr->add_option("--model", tr_model, "Mixpert checkpoint")->required()->check(CLI::ExistingFile);
  cmd_tr->add_option("--per-domain-n", tr_n, "Training samples per domain (default: all)");
  cmd_tr->add_option("--corpus", tr_corpus, "Corpus directory (generated in memory if omitted)");
  cmd_tr->add_option("--out", tr.out, "Output checkpoint")->required();

  // eval
  Common ev;
  std::string ev_model, ev_corpus, ev_set = "test";
  auto* cmd_ev = app.add_subcommand("eval", "Evaluate a monolithic or Mixpert checkpoint");
  add_common(cmd_ev, ev, false);
  cmd_ev->add_option("--model", ev_model, "Checkpoint")->required()->check(CLI::ExistingFile);
  cmd_ev->add_option("--corpus", ev_corpus, "Corpus directory (generated in memory if omitted)");
  cmd_ev->add_option("--set", ev_set, "val | test | ambiguous | mixed")
      ->check(CLI::IsMember({"val", "test", "ambiguous", "mixed"}));
  cmd_ev->add_option("--out", ev.out, "Optional CSV of per-sample predictions");

  // cost
  Common co;
  std::vector<std::size_t> co_scan;
  auto* cmd_co = app.add_subcommand("cost", "Parameter and FLOP accounting");
  add_common(cmd_co, co, false);
  cmd_co->add_option("--scan-layers", co_scan, "Expert layer counts to scan, comma separated")->delimiter(',');
  cmd_co->add_option("--out", co.out, "Optional CSV output");

  // exp
  Common ex;
  std::string ex_name, ex_cache;
  std::optional<std::size_t> ex_jobs;
  auto* cmd_ex = app.add_subcommand("exp", "Run one experiment (E1..E6) through the cached pipeline");
  add_common(cmd_ex, ex, true);
  cmd_ex->add_option("experiment", ex_name, "E1 | E2 | E3 | E4 | E5 | E6")
      ->required()
      ->check(CLI::IsMember({"E1", "E2", "E3", "E4", "E5", "E6"}));
  cmd_ex->add_option("--out", ex.out, "Output directory")->required();
  cmd_ex->add_option("--cache", ex_cache, "Cache directory (default: $MIXPERT_CACHE_DIR or <out>/cache)");
  cmd_ex->add_option("--jobs", ex_jobs, "Seeds trained in parallel");

  // pipeline
  Common pl;
  std::string pl_cache;
  std::optional<std::size_t> pl_jobs;
  auto* cmd_pl = app.add_subcommand("pipeline", "Generate, train, split, tune, route and evaluate E1..E6");
  add_common(cmd_pl, pl, true);
  cmd_pl->add_option("--out", pl.out, "Output directory")->required();
  cmd_pl->add_option("--cache", pl_cache, "Cache directory (default: $MIXPERT_CACHE_DIR or <out>/cache)");
  cmd_pl->add_option("--jobs", pl_jobs, "Seeds trained in parallel");

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_gen->parsed()) {
      RunConfig cfg = resolve(gen);
      if (gen.seed) cfg.corpus.seed = *gen.seed;
      write_corpus(cfg.corpus, gen.out);
      std::cout << read_corpus(gen.out).manifest.to_text();
    } else if (cmd_tj->parsed()) {
      const RunConfig cfg = resolve(tj);
      const Corpus corpus = corpus_for(tj_corpus, cfg);
      MonolithicModel model = MonolithicModel::create(cfg.model.encoder, seed_of(tj));
      const auto report = train_joint(model, corpus.train, corpus.val, cfg.joint, seed_of(tj));
      save_checkpoint(tj.out, to_checkpoint(model));
      write_file(sibling(tj.out, ".csv"), report.to_csv());
      std::cout << report.to_text();
    } else if (cmd_sp->parsed()) {
      const RunConfig cfg = resolve(sp);
      const MonolithicModel joint = monolithic_from_checkpoint(load_checkpoint(sp_joint));
      const MixpertModel mx = from_joint(joint, cfg.model, seed_of(sp));
      save_checkpoint(sp.out, to_checkpoint(mx));
      std::cout << "shared_layers " << cfg.model.encoder.shared_layers << "\nexpert_layers "
                << cfg.model.encoder.expert_layers() << "\nparams " << count_params(mx) << "\n";
    } else if (cmd_te->parsed()) {
      const RunConfig cfg = resolve(te);
      const DomainLabel d = parse_domain(te_domain);
      MixpertModel mx = mixpert_from_checkpoint(load_checkpoint(te_model), cfg.model.policy);
      const Corpus corpus = corpus_for(te_corpus, cfg);
      const auto report = tune_expert(mx, expert_for(d), filter_domain(corpus.train, d), filter_domain(corpus.val, d),
                                      cfg.expert, seed_of(te));
      save_checkpoint(te.out, to_checkpoint(mx));
      write_file(sibling(te.out, ".csv"), report.to_csv());
      std::cout << report.to_text();
    } else if (cmd_tr->parsed()) {
      const RunConfig cfg = resolve(tr);
      MixpertModel mx = mixpert_from_checkpoint(load_checkpoint(tr_model), cfg.model.policy);
      const Corpus corpus = corpus_for(tr_corpus, cfg);
      std::vector<Sample> train = corpus.train;
      if (tr_n) train = nested_train_subset(corpus.train, *tr_n);
      const auto report = train_router(mx.router, mx.trunk, mx.config.encoder, train, corpus.val, cfg.router, seed_of(tr));
      save_checkpoint(tr.out, to_checkpoint(mx));
      write_file(sibling(tr.out, ".csv"), report.to_csv());
      std::cout << report.to_text();
    } else if (cmd_ev->parsed()) {
      const RunConfig cfg = resolve(ev);
      const Corpus corpus = corpus_for(ev_corpus, cfg);
      std::vector<Sample> samples = ev_set == "val"         ? corpus.val
                                    : ev_set == "ambiguous" ? corpus.ambiguous
                                    : ev_set == "mixed"     ? mixed_eval_set(corpus)
                                                            : corpus.test;
      verify_disjoint(corpus.train, samples);
      const Checkpoint ckpt = load_checkpoint(ev_model);
      if (is_mixpert(ckpt)) {
        const MixpertModel mx = mixpert_from_checkpoint(ckpt, cfg.model.policy);
        const auto r = evaluate_routed(mx, samples, cfg.model.policy);
        print_accuracy(std::string("routed accuracy (") + std::string(strategy_name(cfg.model.policy.strategy)) + ")",
                       r.accuracy);
        std::cout << "  overall " << format_double(r.mean_accuracy) << "\n  fallback_rate "
                  << format_double(r.fallback_rate) << "\n";
        if (!ev.out.empty()) {
          std::ostringstream os;
          os << "# mixpert-predictions v1\nindex,domain,label,top_domain,expert,fell_back,prediction\n";
          for (std::size_t i = 0; i < samples.size(); ++i) {
            const auto& dc = r.decisions[i];
            os << i << "," << domain_name(samples[i].domain) << "," << samples[i].task_label << ","
               << domain_name(dc.top_domain) << "," << expert_name(dc.chosen) << "," << (dc.fell_back ? 1 : 0) << ","
               << r.predictions[i] << "\n";
          }
          write_file(ev.out, os.str());
        }
      } else {
        print_accuracy("monolithic accuracy", evaluate(monolithic_from_checkpoint(ckpt), samples));
      }
    } else if (cmd_co->parsed()) {
      const RunConfig cfg = resolve(co);
      std::cout << cost_text(cfg.model);
      std::string csv = cost_csv(cfg.model);
      if (!co_scan.empty()) {
        const auto rows = scan_layers(cfg.model.encoder, co_scan, cfg.model.router_hidden);
        std::cout << "\n" << render_scan_table(rows);
        csv += render_scan_csv(rows);
      }
      if (!co.out.empty()) write_file(co.out, csv);
    } else if (cmd_ex->parsed() || cmd_pl->parsed()) {
      const bool single = cmd_ex->parsed();
      Common& c = single ? ex : pl;
      RunConfig cfg = resolve(c);
      if (auto jobs = single ? ex_jobs : pl_jobs) cfg.experiment.jobs = *jobs;
      if (single && ex_name == "E6") {
        write_file(fs::path(ex.out) / "e6_cost.txt", cost_text(cfg.model));
        write_file(fs::path(ex.out) / "e6_cost.csv", cost_csv(cfg.model));
        std::cout << cost_text(cfg.model);
        return 0;
      }
      PipelineOptions opts;
      opts.out_dir = c.out;
      opts.cache_dir = single ? ex_cache : pl_cache;
      opts.log = log_line;
      const auto result = run_pipeline(cfg, opts);
      if (single) {
        ResultTable only;
        for (const auto& r : result.results.rows) {
          if (r.experiment == ex_name) only.add(r);
        }
        write_file(fs::path(c.out) / (ex_name + ".csv"), only.to_csv());
        std::vector<AggregateRow> agg;
        for (const auto& a : result.summary) {
          if (a.experiment == ex_name) agg.push_back(a);
        }
        std::cout << aggregate_csv(agg);
      } else {
        std::ifstream in(fs::path(c.out) / "summary.txt");
        std::cout << in.rdbuf();
      }
      std::cerr << "stages run: " << result.stages_run() << " of " << result.stages.size() << ", wall "
                << format_double(result.wall_seconds) << " s\n";
    }
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << " (last good stage: " << (e.last_good().empty() ? "none" : e.last_good())
              << ")\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

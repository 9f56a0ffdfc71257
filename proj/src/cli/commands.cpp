// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "loopmoe/cli/commands.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <ostream>
#include <stdexcept>

#include "loopmoe/analysis/analysis.hpp"
#include "loopmoe/budget/fit.hpp"
#include "loopmoe/budget/isoflop.hpp"
#include "loopmoe/earlyexit/early_exit.hpp"
#include "loopmoe/mup/width_sweep.hpp"
#include "loopmoe/train/checkpoint.hpp"
#include "loopmoe/util/csv.hpp"
#include "loopmoe/util/error.hpp"
#include "loopmoe/util/parallel.hpp"

namespace loopmoe {
namespace {

std::filesystem::path prepare_output(const ExperimentConfig& config) {
  const std::filesystem::path dir = config.output_dir();
  std::filesystem::create_directories(dir);
  return dir;
}

Transformer<float> load_model(const ExperimentConfig& config) {
  const std::filesystem::path path = config.checkpoint_path();
  if (!std::filesystem::exists(path)) {
    throw ConfigError("paths.checkpoint: no checkpoint at " + path.string() + " (run 'train' first)");
  }
  return load_checkpoint<float>(path);
}

}  // namespace

CorpusStore load_corpus(const ExperimentConfig& config) {
  if (config.paths.corpus.empty()) throw ConfigError("paths.corpus: no corpus path given");
  const std::filesystem::path path(config.paths.corpus);
  if (!std::filesystem::is_regular_file(path)) {
    throw ConfigError("paths.corpus: corpus file not found: " + path.string());
  }
  CorpusStore corpus = ingest(path, parse_corpus_format(config.paths.corpus_format), config.train.eval_fraction);
  if (corpus.vocab_size > config.model.vocab_size) {
    throw ConfigError("model.vocab_size " + std::to_string(config.model.vocab_size) +
                      " is smaller than the corpus vocabulary " + std::to_string(corpus.vocab_size));
  }
  return corpus;
}

int cmd_train(const ExperimentConfig& config, const CommandOptions&, std::ostream& out) {
  const CorpusStore corpus = load_corpus(config);
  const std::filesystem::path dir = prepare_output(config);
  Transformer<float> model = init_model<float>(config.model, config.mup_for(config.model), config.seed);
  TrainHooks<float> hooks;
  hooks.checkpoint = config.checkpoint_path();
  const TrainResult result = train(model, corpus, config.train, hooks);
  write_loss_curve_csv(dir / "loss_curve.csv", result.curve, provenance_comment(config));
  out << "steps=" << result.steps_completed << " final_test_loss=" << format_number(result.final_test_loss)
      << " checkpoint=" << config.checkpoint_path().string() << "\n";
  if (result.diverged) {
    out << "diverged: " << result.diagnostic << "\n";
    return kExitRuntimeError;
  }
  return kExitOk;
}

int cmd_isoflop(const ExperimentConfig& config, const CommandOptions& options, std::ostream& out) {
  const CorpusStore corpus = load_corpus(config);
  const std::filesystem::path dir = prepare_output(config);
  const GridOptions grid = config.grid();

  struct Task {
    double budget;
    Architecture arch;
    PlannedRun run;
  };
  std::vector<Task> tasks;
  for (const std::string& name : config.isoflop.architectures) {
    const Architecture arch = parse_architecture(name);
    for (double budget : config.isoflop.budgets) {
      const IsoflopPlan plan = plan_isoflop(budget, config.isoflop.widths, arch, grid, config.train.batch_tokens);
      for (const std::string& w : plan.warnings) out << "warning: " << w << "\n";
      for (const PlannedRun& r : plan.runs) tasks.push_back({budget, arch, r});
    }
  }

  std::vector<IsoflopPoint> points(tasks.size());
  std::mutex out_mutex;
  parallel_for(tasks.size(), options.jobs, [&](std::size_t i) {
    const Task& t = tasks[i];
    TrainConfig tc = config.train;
    tc.token_budget = t.run.tokens;
    Transformer<float> model = init_model<float>(t.run.config, config.mup_for(t.run.config), config.seed);
    const TrainResult r = train(model, corpus, tc);
    points[i] = {t.budget,           t.arch, t.run.config.d_model, t.run.ledger.n_active, t.run.ledger.n_unique,
                 t.run.tokens,       r.diverged ? std::numeric_limits<double>::quiet_NaN() : r.final_test_loss};
    const std::lock_guard<std::mutex> lock(out_mutex);
    out << to_string(t.arch) << " C=" << format_number(t.budget) << " d=" << t.run.config.d_model
        << " D=" << t.run.tokens << " loss=" << format_number(points[i].final_loss)
        << (r.diverged ? " (diverged: " + r.diagnostic + ")" : std::string()) << "\n";
  });
  const std::string comment = provenance_comment(config);
  write_isoflop_csv(dir / "isoflop.csv", points, comment);

  for (const std::string& name : config.isoflop.architectures) {
    const Architecture arch = parse_architecture(name);
    std::vector<FitSummaryRow> rows;
    std::vector<FitSample> optima;
    for (double budget : config.isoflop.budgets) {
      std::vector<FitSample> samples;
      for (const IsoflopPoint& p : points) {
        if (p.architecture == arch && p.budget == budget && std::isfinite(p.final_loss)) {
          samples.push_back({static_cast<double>(p.n_active), p.final_loss});
        }
      }
      try {
        const QuadraticFit fit = fit_quadratic(samples);
        if (fit.extrapolated) {
          out << "warning: " << name << " C=" << format_number(budget) << " optimum lies outside the sampled sizes\n";
        }
        rows.push_back({budget, fit.n_opt, fit.loss_min, std::numeric_limits<double>::quiet_NaN()});
        optima.push_back({fit.n_opt, fit.loss_min});
      } catch (const FitError& e) {
        out << "warning: " << name << " C=" << format_number(budget) << " fit skipped: " << e.what() << "\n";
      }
    }
    double alpha = std::numeric_limits<double>::quiet_NaN();
    try {
      alpha = fit_power_law(optima).alpha;
    } catch (const FitError& e) {
      out << "warning: " << name << " power-law fit skipped: " << e.what() << "\n";
    }
    for (FitSummaryRow& r : rows) r.alpha = alpha;
    write_fit_csv(dir / ("fit_summary_" + name + ".csv"), rows, comment);
    out << name << " alpha=" << format_number(alpha) << "\n";
  }
  return kExitOk;
}

int cmd_early_exit(const ExperimentConfig& config, const CommandOptions&, std::ostream& out) {
  const Transformer<float> model = load_model(config);
  const CorpusStore corpus = load_corpus(config);
  const std::filesystem::path dir = prepare_output(config);
  ExitEvalOptions eo;
  eo.seq_len = config.train.seq_len;
  eo.max_tokens = config.early_exit.max_tokens;
  eo.micro_batch_tokens = config.train.micro_batch_tokens;
  const ExitTable table = build_exit_table(model, corpus.test(), eo);
  const std::vector<double> taus =
      config.early_exit.taus.empty()
          ? default_tau_grid(model.config().vocab_size, config.early_exit.tau_points, config.early_exit.tau_min)
          : config.early_exit.taus;
  const auto curve = pareto_sweep(table, taus);
  const std::string comment = provenance_comment(config);
  write_pareto_csv(dir / "pareto.csv", curve, table.candidates, comment);
  write_savings_csv(dir / "pareto_savings.csv", curve, config.early_exit.savings_levels, comment);
  out << "tokens=" << table.tokens << " candidates=" << table.candidates.size() << " taus=" << taus.size() << "\n";
  for (double level : config.early_exit.savings_levels) {
    out << "flops_saved=" << format_number(level)
        << " perplexity=" << format_number(perplexity_at_savings(curve, level)) << "\n";
  }
  return kExitOk;
}

int cmd_analyze(const ExperimentConfig& config, const CommandOptions&, std::ostream& out) {
  const Transformer<float> model = load_model(config);
  const CorpusStore corpus = load_corpus(config);
  const std::filesystem::path dir = prepare_output(config);
  ConvergenceOptions co;
  co.seq_len = config.train.seq_len;
  co.max_tokens = config.analysis.max_tokens;
  co.micro_batch_tokens = config.train.micro_batch_tokens;
  co.threshold = config.analysis.converged_threshold;
  const std::string comment = provenance_comment(config);
  const ModelConfig& mc = model.config();
  if (config.analysis.convergence) {
    const auto rows = convergence_profile(model, corpus.test(), co);
    write_convergence_csv(dir / "convergence.csv", rows, comment);
    out << "convergence: " << rows.size() << " effective layers\n";
  }
  if (config.analysis.overlap) {
    if (!mc.is_moe()) {
      out << "notice: overlap analysis skipped because the model is dense and has no routing\n";
    } else if (!mc.is_looped()) {
      out << "notice: overlap analysis skipped because the model has a single loop pass\n";
    } else {
      const auto counts = overlap_profile(model, corpus.test(), co);
      write_overlap_csv(dir / "overlap.csv", counts, mc.n_loops, comment);
      for (const OverlapCounts& oc : counts) {
        out << "layer " << oc.physical_layer << " passes " << oc.pass_from << "->" << oc.pass_to
            << " exact=" << format_number(oc.frac_exact()) << " partial=" << format_number(oc.frac_partial())
            << " disjoint=" << format_number(oc.frac_disjoint()) << "\n";
      }
    }
  }
  return kExitOk;
}

int cmd_mup_check(const ExperimentConfig& config, const CommandOptions& options, std::ostream& out) {
  const CorpusStore corpus = load_corpus(config);
  const std::filesystem::path dir = prepare_output(config);
  const std::string comment = provenance_comment(config);
  WidthSweepSpec spec;
  spec.model = config.model;
  spec.d_head = config.mup_check.d_head;
  spec.seeds = config.mup_check.seeds;
  spec.ffn_multiple = config.isoflop.ffn_multiple;
  spec.mup = config.mup_for(config.model);
  spec.train = config.train;
  spec.seed = config.seed;
  spec.jobs = options.jobs;

  const CoordCheckResult scaled =
      coord_check(spec, config.mup_check.widths, config.mup_check.steps, corpus, config.mup_check.probe_sequences);
  write_coord_check_csv(dir / "coord_check.csv", scaled, comment);
  out << "coord_check max_ratio=" << format_number(scaled.max_ratio()) << "\n";
  for (const std::string& d : scaled.divergence) {
    if (!d.empty()) out << "diverged: " << d << "\n";
  }
  if (config.mup_check.control) {
    WidthSweepSpec control = spec;
    control.mup.width_scaling = false;
    const CoordCheckResult c = coord_check(control, config.mup_check.widths, config.mup_check.steps, corpus,
                                           config.mup_check.probe_sequences);
    write_coord_check_csv(dir / "coord_check_control.csv", c, comment);
    out << "coord_check_control max_ratio=" << format_number(c.max_ratio()) << "\n";
  }
  if (!config.mup_check.transfer_lrs.empty()) {
    spec.train.token_budget = config.mup_check.transfer_token_budget;
    const auto runs = lr_transfer_sweep(spec, config.mup_check.transfer_widths, config.mup_check.transfer_lrs, corpus);
    write_transfer_csv(dir / "lr_transfer.csv", runs, comment);
    const auto summary = summarize_transfer(runs);
    write_transfer_summary_csv(dir / "lr_transfer_summary.csv", summary, comment);
    for (const TransferSummary& s : summary) {
      out << "width " << s.width << " best_lr=" << format_number(s.best_lr)
          << " grid_steps_from_base=" << s.grid_steps_from_base << " relative_gap=" << format_number(s.relative_gap)
          << "\n";
    }
  }
  return kExitOk;
}

int cmd_ingest(const ExperimentConfig& config, const CommandOptions& options, std::ostream& out) {
  if (options.output.empty()) throw ConfigError("ingest: --output is required");
  const CorpusStore corpus = load_corpus(config);
  if (options.output.has_parent_path()) std::filesystem::create_directories(options.output.parent_path());
  write_token_file(options.output, corpus.tokens, corpus.vocab_size, corpus.vocab_size > 65536 ? 4 : 2);
  out << "tokens=" << corpus.tokens.size() << " vocab=" << corpus.vocab_size << " train=" << corpus.train_size
      << " test=" << corpus.tokens.size() - corpus.train_size << " -> " << options.output.string() << "\n";
  return kExitOk;
}

int cmd_make_corpus(const ExperimentConfig& config, const CommandOptions& options, std::ostream& out) {
  if (options.output.empty()) throw ConfigError("make-corpus: --output is required");
  if (options.bytes == 0) throw ConfigError("make-corpus: --bytes must be positive");
  const std::string text = synthetic_text(options.bytes, config.seed);
  if (options.output.has_parent_path()) std::filesystem::create_directories(options.output.parent_path());
  std::ofstream f(options.output, std::ios::binary);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw std::runtime_error("cannot write " + options.output.string());
  out << "bytes=" << text.size() << " -> " << options.output.string() << "\n";
  return kExitOk;
}

int run_command(std::string_view name, const ExperimentConfig& config, const CommandOptions& options,
                std::ostream& out, std::ostream& err) {
  static const std::map<std::string_view, int (*)(const ExperimentConfig&, const CommandOptions&, std::ostream&)>
      table = {{"train", cmd_train},         {"isoflop", cmd_isoflop}, {"early-exit", cmd_early_exit},
               {"analyze", cmd_analyze},     {"mup-check", cmd_mup_check}, {"ingest", cmd_ingest},
               {"make-corpus", cmd_make_corpus}};
  const auto it = table.find(name);
  if (it == table.end()) {
    err << "error: unknown command '" << name << "'\n";
    return kExitConfigError;
  }
  try {
    return it->second(config, options, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntimeError;
  }
}

}  // namespace loopmoe

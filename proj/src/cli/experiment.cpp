// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "loopmoe/cli/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "loopmoe/model/config_io.hpp"
#include "loopmoe/util/json_reader.hpp"
#include "loopmoe/util/random.hpp"

namespace loopmoe {
namespace {

void read_mup(const nlohmann::json& j, MupConfig& m) {
  StrictObject o(j, "mup");
  o.read("sigma_base", m.sigma_base);
  o.read("eta_base", m.eta_base);
  o.read("width_scaling", m.width_scaling);
  o.finish();
}

void read_train(const nlohmann::json& j, TrainConfig& t) {
  StrictObject o(j, "train");
  o.read("token_budget", t.token_budget);
  o.read("batch_tokens", t.batch_tokens);
  o.read("seq_len", t.seq_len);
  o.read("micro_batch_tokens", t.micro_batch_tokens);
  o.read("peak_lr", t.peak_lr);
  o.read("warmup_fraction", t.warmup_fraction);
  o.read("warmup_min_steps", t.warmup_min_steps);
  o.read("cooldown_fraction", t.cooldown_fraction);
  o.read("cooldown_floor", t.cooldown_floor);
  o.read("beta1", t.beta1);
  o.read("beta2", t.beta2);
  o.read("eps", t.eps);
  o.read("weight_decay", t.weight_decay);
  o.read("lambda_lb", t.lambda_lb);
  o.read("lambda_rz", t.lambda_rz);
  o.read("grad_clip", t.grad_clip);
  o.read("eval_fraction", t.eval_fraction);
  o.read("eval_tokens", t.eval_tokens);
  o.finish();
}

void read_paths(const nlohmann::json& j, PathsConfig& p) {
  StrictObject o(j, "paths");
  o.read("corpus", p.corpus);
  o.read("corpus_format", p.corpus_format);
  o.read("checkpoint", p.checkpoint);
  o.read("output_dir", p.output_dir);
  o.finish();
}

void read_isoflop(const nlohmann::json& j, IsoflopConfig& c) {
  StrictObject o(j, "isoflop");
  o.read("budgets", c.budgets);
  o.read("widths", c.widths);
  o.read("architectures", c.architectures);
  o.read("effective_depth", c.effective_depth);
  o.read("n_loops", c.n_loops);
  o.read("d_head", c.d_head);
  o.read("ffn_multiple", c.ffn_multiple);
  o.finish();
}

void read_early_exit(const nlohmann::json& j, EarlyExitConfig& c) {
  StrictObject o(j, "early_exit");
  o.read("taus", c.taus);
  o.read("tau_points", c.tau_points);
  o.read("tau_min", c.tau_min);
  o.read("savings_levels", c.savings_levels);
  o.read("max_tokens", c.max_tokens);
  o.finish();
}

void read_analysis(const nlohmann::json& j, AnalysisConfig& c) {
  StrictObject o(j, "analysis");
  o.read("overlap", c.overlap);
  o.read("convergence", c.convergence);
  o.read("max_tokens", c.max_tokens);
  o.read("converged_threshold", c.converged_threshold);
  o.finish();
}

void read_mup_check(const nlohmann::json& j, MupCheckConfig& c) {
  StrictObject o(j, "mup_check");
  o.read("widths", c.widths);
  o.read("steps", c.steps);
  o.read("d_head", c.d_head);
  o.read("probe_sequences", c.probe_sequences);
  o.read("seeds", c.seeds);
  o.read("control", c.control);
  o.read("transfer_lrs", c.transfer_lrs);
  o.read("transfer_widths", c.transfer_widths);
  o.read("transfer_token_budget", c.transfer_token_budget);
  o.finish();
}

template <typename Fn>
void read_block(StrictObject& root, const std::string& key, Fn&& fn) {
  if (const nlohmann::json* child = root.child(key)) fn(*child);
}

}  // namespace

MupConfig ExperimentConfig::mup_for(const ModelConfig& config) const {
  MupConfig m = mup;
  m.d_base = config.d_base;
  return m;
}

std::filesystem::path ExperimentConfig::output_dir() const { return resolve_output_dir(paths.output_dir); }

std::filesystem::path ExperimentConfig::checkpoint_path() const {
  if (paths.checkpoint.empty()) return output_dir() / "model.ckpt";
  const std::filesystem::path p(paths.checkpoint);
  return p.is_absolute() ? p : output_dir() / p;
}

GridOptions ExperimentConfig::grid() const {
  GridOptions g;
  g.effective_depth = isoflop.effective_depth;
  g.n_loops = isoflop.n_loops;
  g.d_head = isoflop.d_head;
  g.ffn_multiple = isoflop.ffn_multiple;
  g.n_experts = model.n_experts;
  g.top_k = model.top_k;
  g.vocab_size = model.vocab_size;
  g.seq_len = model.seq_len;
  g.d_base = model.d_base;
  return g;
}

void ExperimentConfig::validate() const {
  model.validate();
  train.validate();
  if (!(mup.sigma_base > 0.0)) throw ConfigError("mup.sigma_base must be positive");
  if (!(mup.eta_base > 0.0)) throw ConfigError("mup.eta_base must be positive");
  if (train.seq_len > model.seq_len) throw ConfigError("train.seq_len exceeds model.seq_len");
  parse_corpus_format(paths.corpus_format);
  for (const std::string& a : isoflop.architectures) parse_architecture(a);
  for (double b : isoflop.budgets) {
    if (!(b > 0.0) || !std::isfinite(b)) throw ConfigError("isoflop.budgets entries must be positive");
  }
  if (isoflop.n_loops < 2 || isoflop.effective_depth % isoflop.n_loops != 0) {
    throw ConfigError("isoflop.n_loops must be at least 2 and divide isoflop.effective_depth");
  }
  for (double t : early_exit.taus) {
    if (!(t >= 0.0)) throw ConfigError("early_exit.taus entries must be nonnegative");
  }
  if (!std::is_sorted(early_exit.taus.begin(), early_exit.taus.end())) {
    throw ConfigError("early_exit.taus must be ascending");
  }
  if (early_exit.tau_points == 0) throw ConfigError("early_exit.tau_points must be positive");
  if (mup_check.widths.empty()) throw ConfigError("mup_check.widths must not be empty");
  if (mup_check.steps == 0) throw ConfigError("mup_check.steps must be positive");
  if (mup_check.seeds == 0) throw ConfigError("mup_check.seeds must be positive");
  for (double lr : mup_check.transfer_lrs) {
    if (!(lr > 0.0)) throw ConfigError("mup_check.transfer_lrs entries must be positive");
  }
}

ExperimentConfig parse_experiment(const nlohmann::json& document) {
  ExperimentConfig c;
  StrictObject root(document, "");
  root.read("seed", c.seed);
  read_block(root, "model", [&](const nlohmann::json& j) { read_model_config(j, c.model, "model"); });
  read_block(root, "mup", [&](const nlohmann::json& j) { read_mup(j, c.mup); });
  c.train.peak_lr = c.mup.eta_base;
  read_block(root, "train", [&](const nlohmann::json& j) { read_train(j, c.train); });
  c.train.seed = c.seed;
  read_block(root, "paths", [&](const nlohmann::json& j) { read_paths(j, c.paths); });
  read_block(root, "isoflop", [&](const nlohmann::json& j) { read_isoflop(j, c.isoflop); });
  read_block(root, "early_exit", [&](const nlohmann::json& j) { read_early_exit(j, c.early_exit); });
  read_block(root, "analysis", [&](const nlohmann::json& j) { read_analysis(j, c.analysis); });
  read_block(root, "mup_check", [&](const nlohmann::json& j) { read_mup_check(j, c.mup_check); });
  root.finish();
  c.validate();
  return c;
}

ExperimentConfig load_experiment(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  nlohmann::json doc = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    try {
      doc = nlohmann::json::parse(in, nullptr, true, true);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("config file " + path.string() + ": " + e.what());
    }
  }
  for (const std::string& o : overrides) apply_override(doc, o);
  return parse_experiment(doc);
}

void apply_override(nlohmann::json& document, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override '" + std::string(assignment) + "' is not of the form key.path=value");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  if (!document.is_object()) throw ConfigError("config root must be an object");
  nlohmann::json* node = &document;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    nlohmann::json& next = (*node)[part];
    if (next.is_null()) next = nlohmann::json::object();
    if (!next.is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
    node = &next;
    start = dot + 1;
  }
}

nlohmann::json to_json(const ExperimentConfig& c) {
  const TrainConfig& t = c.train;
  return {
      {"seed", c.seed},
      {"model", to_json(c.model)},
      {"mup", {{"sigma_base", c.mup.sigma_base}, {"eta_base", c.mup.eta_base},
               {"width_scaling", c.mup.width_scaling}}},
      {"train",
       {{"token_budget", t.token_budget},       {"batch_tokens", t.batch_tokens},
        {"seq_len", t.seq_len},                 {"micro_batch_tokens", t.micro_batch_tokens},
        {"peak_lr", t.peak_lr},                 {"warmup_fraction", t.warmup_fraction},
        {"warmup_min_steps", t.warmup_min_steps}, {"cooldown_fraction", t.cooldown_fraction},
        {"cooldown_floor", t.cooldown_floor},   {"beta1", t.beta1},
        {"beta2", t.beta2},                     {"eps", t.eps},
        {"weight_decay", t.weight_decay},       {"lambda_lb", t.lambda_lb},
        {"lambda_rz", t.lambda_rz},             {"grad_clip", t.grad_clip},
        {"eval_fraction", t.eval_fraction},     {"eval_tokens", t.eval_tokens}}},
      {"paths", {{"corpus", c.paths.corpus}, {"corpus_format", c.paths.corpus_format},
                 {"checkpoint", c.paths.checkpoint}, {"output_dir", c.paths.output_dir}}},
      {"isoflop", {{"budgets", c.isoflop.budgets}, {"widths", c.isoflop.widths},
                   {"architectures", c.isoflop.architectures}, {"effective_depth", c.isoflop.effective_depth},
                   {"n_loops", c.isoflop.n_loops}, {"d_head", c.isoflop.d_head},
                   {"ffn_multiple", c.isoflop.ffn_multiple}}},
      {"early_exit", {{"taus", c.early_exit.taus}, {"tau_points", c.early_exit.tau_points},
                      {"tau_min", c.early_exit.tau_min}, {"savings_levels", c.early_exit.savings_levels},
                      {"max_tokens", c.early_exit.max_tokens}}},
      {"analysis", {{"overlap", c.analysis.overlap}, {"convergence", c.analysis.convergence},
                    {"max_tokens", c.analysis.max_tokens},
                    {"converged_threshold", c.analysis.converged_threshold}}},
      {"mup_check", {{"widths", c.mup_check.widths}, {"steps", c.mup_check.steps},
                     {"d_head", c.mup_check.d_head}, {"probe_sequences", c.mup_check.probe_sequences},
                     {"seeds", c.mup_check.seeds},
                     {"control", c.mup_check.control}, {"transfer_lrs", c.mup_check.transfer_lrs},
                     {"transfer_widths", c.mup_check.transfer_widths},
                     {"transfer_token_budget", c.mup_check.transfer_token_budget}}},
  };
}

std::uint64_t config_hash(const ExperimentConfig& config) { return fnv1a(to_json(config).dump()); }

std::string provenance_comment(const ExperimentConfig& config) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "config_hash=%016llx", static_cast<unsigned long long>(config_hash(config)));
  return std::string(buf) + " seed=" + std::to_string(config.seed);
}

std::filesystem::path resolve_output_dir(const std::string& output_dir) {
  const std::filesystem::path p(output_dir);
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("LOOPMOE_OUT"); root != nullptr && *root != '\0') {
    return std::filesystem::path(root) / p;
  }
  return p;
}

}  // namespace loopmoe

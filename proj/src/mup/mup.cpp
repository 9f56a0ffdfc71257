// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "loopmoe/mup/mup.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <unordered_map>

#include "loopmoe/util/error.hpp"
#include "loopmoe/util/random.hpp"

namespace loopmoe {

std::vector<ParamGroup> build_param_groups(const ModelConfig& config, const MupConfig& mup) {
  if (mup.d_base == 0) throw ConfigError("mup: d_base must be positive");
  if (mup.sigma_base <= 0.0) throw ConfigError("mup: sigma_base must be positive");
  const double w = mup.width_scaling ? mup.w_ratio(config.d_model) : 1.0;
  const double base_var = mup.sigma_base * mup.sigma_base;
  std::vector<ParamGroup> groups;
  for (const ParamSpec& spec : parameter_layout(config)) {
    switch (spec.role) {
      case ParamRole::embedding:
        groups.push_back({spec.name, spec.role, base_var, 1.0, true});
        break;
      case ParamRole::hidden:
      case ParamRole::unembedding:
      case ParamRole::router:
      case ParamRole::expert:
        groups.push_back({spec.name, spec.role, base_var / w, 1.0 / w, true});
        break;
      default:
        throw std::logic_error("mup: parameter '" + spec.name + "' has no scaling rule");
    }
  }
  return groups;
}

template <typename T>
void apply_param_groups(Transformer<T>& model, const std::vector<ParamGroup>& groups) {
  std::unordered_map<std::string, const ParamGroup*> by_name;
  for (const ParamGroup& g : groups) {
    if (!by_name.emplace(g.name, &g).second) throw std::logic_error("mup: duplicate group for " + g.name);
  }
  for (Parameter<T>& p : model.parameters()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw std::logic_error("mup: parameter '" + p.name + "' is not assigned to a group");
    p.role = it->second->role;
    p.init_variance = it->second->init_variance;
    p.lr_multiplier = it->second->lr_multiplier;
    p.weight_decay = it->second->weight_decay_eligible;
  }
  if (by_name.size() != model.parameters().size()) throw std::logic_error("mup: groups name unknown parameters");
}

template <typename T>
Transformer<T> init_model(const ModelConfig& config, const MupConfig& mup, std::uint64_t seed) {
  Transformer<T> model(config);
  apply_param_groups(model, build_param_groups(config, mup));
  std::mt19937_64 rng(derive_seed(seed, "init"));
  for (Parameter<T>& p : model.parameters()) {
    std::normal_distribution<double> normal(0.0, std::sqrt(p.init_variance));
    for (T& v : p.value.data()) v = static_cast<T>(normal(rng));
  }
  return model;
}

template void apply_param_groups<float>(Transformer<float>&, const std::vector<ParamGroup>&);
template void apply_param_groups<double>(Transformer<double>&, const std::vector<ParamGroup>&);
template Transformer<float> init_model<float>(const ModelConfig&, const MupConfig&, std::uint64_t);
template Transformer<double> init_model<double>(const ModelConfig&, const MupConfig&, std::uint64_t);

}  // namespace loopmoe

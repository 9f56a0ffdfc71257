// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "loopmoe/model/config.hpp"

namespace loopmoe {

nlohmann::json to_json(const ModelConfig& config);
// Fields absent from `object` keep their value in `config`; unknown keys throw ConfigError.
void read_model_config(const nlohmann::json& object, ModelConfig& config, const std::string& path = "model");

}  // namespace loopmoe

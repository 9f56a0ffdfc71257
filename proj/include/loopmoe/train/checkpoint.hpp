// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>

#include "loopmoe/model/transformer.hpp"

namespace loopmoe {

// Layout:
//   line 1: "LOOPMOE-CHECKPOINT 1"
//   line 2: byte length of the JSON header
//   JSON header: {"model": ModelConfig, "tensors": [{"name", "shape", "offset"}], "data_bytes"}
//   raw little-endian float32 values of every parameter in header order;
//   "offset" counts bytes from the start of this payload.
// Only the n_unique_layers physical layers are stored.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Transformer<T>& model);

// Throws FormatError on a bad header, a shape/name mismatch with the stored
// config, or a truncated payload.
template <typename T>
Transformer<T> load_checkpoint(const std::filesystem::path& path);

}  // namespace loopmoe

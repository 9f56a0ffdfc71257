// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "loopmoe/train/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "loopmoe/model/config_io.hpp"
#include "loopmoe/util/error.hpp"

namespace loopmoe {

namespace {

constexpr std::string_view kMagicLine = "LOOPMOE-CHECKPOINT 1";

void append_le(std::string& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

float read_le(const unsigned char* p) {
  const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                             (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  return std::bit_cast<float>(bits);
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Transformer<T>& model) {
  nlohmann::json header;
  header["model"] = to_json(model.config());
  nlohmann::json tensors = nlohmann::json::array();
  std::string payload;
  for (const Parameter<T>& p : model.parameters()) {
    tensors.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"offset", payload.size()}});
    for (T v : p.value.data()) append_le(payload, static_cast<float>(v));
  }
  header["tensors"] = std::move(tensors);
  header["data_bytes"] = payload.size();
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << kMagicLine << '\n' << text.size() << '\n' << text;
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

template <typename T>
Transformer<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  auto bad = [&](const std::string& what) { return FormatError("checkpoint " + path.string() + ": " + what); };

  const std::size_t nl1 = bytes.find('\n');
  if (nl1 == std::string::npos || std::string_view(bytes).substr(0, nl1) != kMagicLine) {
    throw bad("missing magic line");
  }
  const std::size_t nl2 = bytes.find('\n', nl1 + 1);
  if (nl2 == std::string::npos) throw bad("missing header length");
  std::size_t header_len = 0;
  try {
    std::size_t used = 0;
    header_len = std::stoull(bytes.substr(nl1 + 1, nl2 - nl1 - 1), &used);
    if (used != nl2 - nl1 - 1) throw bad("header length is not a number");
  } catch (const std::logic_error&) {
    throw bad("header length is not a number");
  }
  const std::size_t header_start = nl2 + 1;
  if (header_start + header_len > bytes.size()) throw bad("truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(header_start, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw bad(std::string("unreadable header: ") + e.what());
  }

  ModelConfig config;
  std::vector<nlohmann::json> tensors;
  std::size_t data_bytes = 0;
  try {
    read_model_config(header.at("model"), config);
    tensors = header.at("tensors").get<std::vector<nlohmann::json>>();
    data_bytes = header.at("data_bytes").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw bad(std::string("malformed header: ") + e.what());
  } catch (const ConfigError& e) {
    throw bad(std::string("invalid model config: ") + e.what());
  }

  const std::size_t payload_start = header_start + header_len;
  if (bytes.size() - payload_start < data_bytes) throw bad("truncated payload");
  if (bytes.size() - payload_start != data_bytes) throw bad("trailing bytes after payload");
  const auto* payload = reinterpret_cast<const unsigned char*>(bytes.data() + payload_start);

  Transformer<T> model(config);
  auto& params = model.parameters();
  if (tensors.size() != params.size()) {
    throw bad("header lists " + std::to_string(tensors.size()) + " tensors, config implies " +
              std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = params[i];
    std::string name;
    Shape shape;
    std::size_t offset = 0;
    try {
      name = tensors[i].at("name").get<std::string>();
      shape = tensors[i].at("shape").get<Shape>();
      offset = tensors[i].at("offset").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
      throw bad(std::string("malformed tensor entry: ") + e.what());
    }
    if (name != p.name) throw bad("tensor " + std::to_string(i) + " is '" + name + "', expected '" + p.name + "'");
    if (shape != p.value.shape()) {
      throw bad("tensor '" + name + "' has shape " + shape_to_string(shape) + ", expected " +
                shape_to_string(p.value.shape()));
    }
    if (offset + 4 * p.value.size() > data_bytes) throw bad("tensor '" + name + "' extends past the payload");
    for (std::size_t j = 0; j < p.value.size(); ++j) p.value[j] = static_cast<T>(read_le(payload + offset + 4 * j));
  }
  return model;
}

template void save_checkpoint<float>(const std::filesystem::path&, const Transformer<float>&);
template void save_checkpoint<double>(const std::filesystem::path&, const Transformer<double>&);
template Transformer<float> load_checkpoint<float>(const std::filesystem::path&);
template Transformer<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace loopmoe

// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

namespace loopmoe {

enum class CorpusFormat {
  text,    // raw bytes, one token per byte, V = 256
  binary,  // token-id file written by write_token_file
};

CorpusFormat parse_corpus_format(std::string_view text);

inline constexpr std::size_t kByteVocab = 256;

// Flat token stream with a trailing held-out split.
struct CorpusStore {
  std::vector<std::int32_t> tokens;
  std::size_t vocab_size = kByteVocab;
  std::size_t train_size = 0;

  std::span<const std::int32_t> train() const { return std::span(tokens).first(train_size); }
  std::span<const std::int32_t> test() const { return std::span(tokens).subspan(train_size); }
};

// Validates ids against vocab_size and splits off the trailing
// round(eval_fraction * n) tokens as the test split.
CorpusStore make_corpus(std::vector<std::int32_t> tokens, std::size_t vocab_size, double eval_fraction);

std::vector<std::int32_t> byte_tokenize(std::string_view text);

// Throws FormatError on a malformed header or an id >= vocab.
CorpusStore ingest(const std::filesystem::path& path, CorpusFormat format, double eval_fraction);

// Binary token file: 8-byte magic "LMTOKENS", u32 id width in bytes (2 or 4),
// u32 vocab size, u64 token count, then little-endian ids.
void write_token_file(const std::filesystem::path& path, std::span<const std::int32_t> ids, std::size_t vocab_size,
                      unsigned id_bytes = 2);

// Deterministic English-like byte text: a Zipfian lexicon whose words follow a
// sparse bigram table, so lower loss needs memorized word associations.
std::string synthetic_text(std::size_t n_bytes, std::uint64_t seed, std::size_t lexicon_size = 1500);

}  // namespace loopmoe

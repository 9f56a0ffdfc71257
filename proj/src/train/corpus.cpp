// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "loopmoe/train/corpus.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>
#include <set>
#include <string>

#include "loopmoe/util/error.hpp"

namespace loopmoe {

namespace {

constexpr char kMagic[8] = {'L', 'M', 'T', 'O', 'K', 'E', 'N', 'S'};

template <typename U>
void put_le(std::ostream& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.put(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

template <typename U>
U get_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return static_cast<U>(v);
}

std::vector<char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open corpus file " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

CorpusFormat parse_corpus_format(std::string_view text) {
  if (text == "text") return CorpusFormat::text;
  if (text == "binary") return CorpusFormat::binary;
  throw ConfigError("corpus format must be 'text' or 'binary', got '" + std::string(text) + "'");
}

CorpusStore make_corpus(std::vector<std::int32_t> tokens, std::size_t vocab_size, double eval_fraction) {
  if (eval_fraction < 0.0 || eval_fraction >= 1.0) throw ConfigError("eval_fraction must lie in [0, 1)");
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || static_cast<std::size_t>(tokens[i]) >= vocab_size) {
      throw FormatError("corpus: token " + std::to_string(tokens[i]) + " at offset " + std::to_string(i) +
                        " outside vocabulary of " + std::to_string(vocab_size));
    }
  }
  CorpusStore store;
  store.vocab_size = vocab_size;
  const auto n_test = static_cast<std::size_t>(std::llround(eval_fraction * static_cast<double>(tokens.size())));
  store.train_size = tokens.size() - n_test;
  store.tokens = std::move(tokens);
  return store;
}

std::vector<std::int32_t> byte_tokenize(std::string_view text) {
  std::vector<std::int32_t> ids;
  ids.reserve(text.size());
  for (char c : text) ids.push_back(static_cast<unsigned char>(c));
  return ids;
}

CorpusStore ingest(const std::filesystem::path& path, CorpusFormat format, double eval_fraction) {
  const std::vector<char> bytes = read_all(path);
  if (format == CorpusFormat::text) {
    return make_corpus(byte_tokenize(std::string_view(bytes.data(), bytes.size())), kByteVocab, eval_fraction);
  }
  constexpr std::size_t header = 8 + 4 + 4 + 8;
  if (bytes.size() < header || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("token file " + path.string() + ": missing LMTOKENS header");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const auto width = get_le<std::uint32_t>(p + 8);
  const auto vocab = get_le<std::uint32_t>(p + 12);
  const auto count = get_le<std::uint64_t>(p + 16);
  if (width != 2 && width != 4) throw FormatError("token file: id width must be 2 or 4, got " + std::to_string(width));
  if (vocab == 0) throw FormatError("token file: vocabulary size is zero");
  if (bytes.size() != header + count * width) {
    throw FormatError("token file: expected " + std::to_string(count) + " ids of " + std::to_string(width) +
                      " bytes, file holds " + std::to_string(bytes.size() - header) + " payload bytes");
  }
  std::vector<std::int32_t> ids(count);
  for (std::size_t i = 0; i < count; ++i) {
    const unsigned char* q = p + header + i * width;
    ids[i] = width == 2 ? static_cast<std::int32_t>(get_le<std::uint16_t>(q))
                        : static_cast<std::int32_t>(get_le<std::uint32_t>(q));
  }
  return make_corpus(std::move(ids), vocab, eval_fraction);
}

void write_token_file(const std::filesystem::path& path, std::span<const std::int32_t> ids, std::size_t vocab_size,
                      unsigned id_bytes) {
  if (id_bytes != 2 && id_bytes != 4) throw ConfigError("token file id width must be 2 or 4 bytes");
  if (id_bytes == 2 && vocab_size > 65536) throw ConfigError("vocabulary does not fit 16-bit ids");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, id_bytes);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(vocab_size));
  put_le<std::uint64_t>(out, ids.size());
  for (std::int32_t id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) throw FormatError("token id outside vocabulary");
    if (id_bytes == 2) {
      put_le<std::uint16_t>(out, static_cast<std::uint16_t>(id));
    } else {
      put_le<std::uint32_t>(out, static_cast<std::uint32_t>(id));
    }
  }
}

std::string synthetic_text(std::size_t n_bytes, std::uint64_t seed, std::size_t lexicon_size) {
  std::mt19937_64 rng(seed);
  // Rough English letter frequencies, a..z.
  constexpr std::array<double, 26> letter_freq = {8.2, 1.5, 2.8, 4.3, 12.7, 2.2, 2.0, 6.1, 7.0, 0.2, 0.8, 4.0, 2.4,
                                                  6.7, 7.5, 1.9, 0.1, 6.0, 6.3, 9.1, 2.8, 1.0, 2.4, 0.2, 2.0, 0.1};
  std::discrete_distribution<int> letter(letter_freq.begin(), letter_freq.end());
  std::uniform_int_distribution<int> length(2, 8);

  std::set<std::string> seen;
  std::vector<std::string> words;
  while (words.size() < lexicon_size) {
    std::string w;
    const int len = length(rng);
    for (int i = 0; i < len; ++i) w.push_back(static_cast<char>('a' + letter(rng)));
    if (seen.insert(w).second) words.push_back(std::move(w));
  }
  std::vector<double> zipf(lexicon_size);
  for (std::size_t i = 0; i < lexicon_size; ++i) zipf[i] = 1.0 / std::pow(static_cast<double>(i + 1), 1.1);
  std::discrete_distribution<std::size_t> unigram(zipf.begin(), zipf.end());

  constexpr std::size_t kSuccessors = 3;
  std::vector<std::array<std::size_t, kSuccessors>> next(lexicon_size);
  for (auto& s : next) {
    for (std::size_t& w : s) w = unigram(rng);
  }
  std::discrete_distribution<std::size_t> pick_successor({0.55, 0.3, 0.15});
  std::bernoulli_distribution follow(0.8);
  std::geometric_distribution<int> sentence_extra(0.1);
  std::bernoulli_distribution paragraph(0.15);

  std::string out;
  out.reserve(n_bytes + 16);
  std::size_t current = unigram(rng);
  while (out.size() < n_bytes) {
    const int n_words = 3 + sentence_extra(rng);
    for (int i = 0; i < n_words && out.size() < n_bytes; ++i) {
      current = follow(rng) ? next[current][pick_successor(rng)] : unigram(rng);
      if (i) out.push_back(' ');
      out += words[current];
    }
    out += paragraph(rng) ? ".\n" : ". ";
  }
  out.resize(n_bytes);
  return out;
}

}  // namespace loopmoe

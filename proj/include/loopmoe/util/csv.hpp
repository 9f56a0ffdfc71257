// Copyright 2026 The loopmoe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace loopmoe {

using CsvField = std::variant<std::string, double, std::int64_t>;

std::string format_number(double v);

// Writes a header row and data rows. An optional leading comment line
// ("# ...") records provenance such as the config hash and seed.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, std::vector<std::string> header, std::string_view comment = {});

  void row(const std::vector<CsvField>& fields);
  std::size_t rows_written() const { return rows_; }

 private:
  std::ofstream out_;
  std::size_t columns_;
  std::size_t rows_ = 0;
};

// Minimal reader for files produced by CsvWriter: skips '#' lines.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

}  // namespace loopmoe

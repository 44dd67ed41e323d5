#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace wwf {

// Minimal comma-separated reader: no quoting, blank lines and lines starting
// with '#' are skipped. Line numbers are kept for diagnostics.
struct CsvTable {
  std::string source;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;

  // Throws DataError naming the column when absent.
  std::size_t column(std::string_view name) const;
};

std::vector<std::string> split_csv_line(std::string_view line);
CsvTable read_csv(std::istream& in, const std::string& source);
CsvTable read_csv_file(const std::filesystem::path& path);

double parse_double(std::string_view field, const CsvTable& table, std::size_t row_index, std::string_view column);

}  // namespace wwf

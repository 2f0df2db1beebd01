#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mobs {

/// Comma-separated table without quoting (ids never contain commas).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

/// Reads a CSV whose header must equal `expected_header` (when non-empty).
/// Rows with the wrong field count raise InputError naming the line.
CsvTable read_csv(const std::filesystem::path& path, const std::vector<std::string>& expected_header = {});

std::vector<std::string> split_fields(const std::string& line, char sep = ',');

std::int64_t parse_int(const std::string& field, const std::string& where);
double parse_double(const std::string& field, const std::string& where);

}  // namespace mobs

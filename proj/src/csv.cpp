#include "mobs/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>

#include "mobs/error.hpp"

namespace mobs {

std::vector<std::string> split_fields(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  for (const char c : line) {
    if (c == sep) {
      out.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  out.push_back(field);
  return out;
}

CsvTable read_csv(const std::filesystem::path& path, const std::vector<std::string>& expected_header) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open CSV file: " + path.string());
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw InputError(path.string() + ": missing header");
  table.header = split_fields(line);
  if (!expected_header.empty() && table.header != expected_header) {
    std::string want;
    for (const auto& h : expected_header) want += (want.empty() ? "" : ",") + h;
    throw InputError(path.string() + ": expected header `" + want + "`");
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto fields = split_fields(line);
    if (fields.size() != table.header.size()) {
      throw InputError(path.string() + " line " + std::to_string(lineno) + ": expected " +
                       std::to_string(table.header.size()) + " fields, got " + std::to_string(fields.size()));
    }
    table.rows.push_back(std::move(fields));
  }
  return table;
}

std::int64_t parse_int(const std::string& field, const std::string& where) {
  std::int64_t v = 0;
  const auto* end = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc() || ptr != end) throw InputError(where + ": not an integer: `" + field + "`");
  return v;
}

double parse_double(const std::string& field, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(field, &used);
    if (used != field.size() || !std::isfinite(v)) throw InputError("");
    return v;
  } catch (const std::exception&) {
    throw InputError(where + ": not a finite number: `" + field + "`");
  }
}

}  // namespace mobs

#pragma once

#include <charconv>
#include <cstddef>
#include <istream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "battopt/errors.hpp"

namespace battopt {

/// Numeric CSV table with a header row. Non-numeric cells (e.g. a model tag)
/// are kept as text alongside a NaN in the numeric view.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> cells;

  std::size_t column(std::string_view name) const {
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (header[j] == name) return j;
    }
    throw IoError("missing CSV column '" + std::string(name) + "'");
  }

  bool has_column(std::string_view name) const {
    for (const auto& h : header) {
      if (h == name) return true;
    }
    return false;
  }

  std::vector<double> numbers(std::string_view name) const {
    const std::size_t j = column(name);
    std::vector<double> out;
    out.reserve(cells.size());
    for (std::size_t r = 0; r < cells.size(); ++r) {
      const std::string& s = cells[r][j];
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw IoError("row " + std::to_string(r + 1) + ", column '" + std::string(name) +
                      "': not a number: '" + s + "'");
      }
      out.push_back(v);
    }
    return out;
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    std::string_view cell = line.substr(start, comma == std::string_view::npos ? line.npos
                                                                               : comma - start);
    while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r')) {
      cell.remove_suffix(1);
    }
    out.emplace_back(cell);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace detail

inline CsvTable read_csv(std::istream& is) {
  CsvTable t;
  std::string line;
  bool have_header = false;
  while (std::getline(is, line)) {
    if (line.empty() || line == "\r" || line.front() == '#') continue;
    auto row = detail::split_csv_line(line);
    if (!have_header) {
      t.header = std::move(row);
      have_header = true;
      continue;
    }
    if (row.size() != t.header.size()) {
      throw IoError("CSV row has " + std::to_string(row.size()) + " cells, header has " +
                    std::to_string(t.header.size()));
    }
    t.cells.push_back(std::move(row));
  }
  if (!have_header) throw IoError("CSV input is empty");
  return t;
}

}  // namespace battopt

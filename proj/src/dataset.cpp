#include "fedbilevel/dataset.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string_view>
#include <vector>

namespace fedbilevel {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() &&
         (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

double parse_cell(std::string_view cell, std::size_t line) {
  cell = trim(cell);
  double value = 0.0;
  const char* first = cell.data();
  const char* last = first + cell.size();
  if (!cell.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (cell.empty() || ec != std::errc() || ptr != last) {
    throw Error("csv line " + std::to_string(line) + ": non-numeric cell '" +
                std::string(cell) + "'");
  }
  return value;
}

}  // namespace

std::string format_real(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

Dataset parse_csv_dataset(const std::string& text, const CsvFormat& format) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string raw;
  std::size_t line = 0;
  std::size_t width = 0;
  bool skippedHeader = !format.header;
  while (std::getline(in, raw)) {
    ++line;
    const std::string_view content = trim(raw);
    if (content.empty()) continue;
    if (!skippedHeader) {
      skippedHeader = true;
      continue;
    }
    std::vector<double> cells;
    std::size_t start = 0;
    while (true) {
      const std::size_t end = content.find(format.delimiter, start);
      cells.push_back(parse_cell(content.substr(start, end - start), line));
      if (end == std::string_view::npos) break;
      start = end + 1;
    }
    if (cells.size() < 2) {
      throw Error("csv line " + std::to_string(line) +
                  ": need at least one feature and a target");
    }
    if (rows.empty()) {
      width = cells.size();
    } else if (cells.size() != width) {
      throw Error("csv line " + std::to_string(line) + ": ragged row with " +
                  std::to_string(cells.size()) + " cells, expected " +
                  std::to_string(width));
    }
    rows.push_back(std::move(cells));
  }
  if (rows.empty()) throw Error("no rows");

  Dataset data;
  const auto m = static_cast<Eigen::Index>(rows.size());
  const auto n = static_cast<Eigen::Index>(width - 1);
  data.features.resize(m, n);
  data.targets.resize(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < n; ++j) data.features(i, j) = r[static_cast<std::size_t>(j)];
    data.targets[i] = r.back();
  }
  return data;
}

Dataset load_csv_dataset(const std::string& path, const CsvFormat& format) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw Error("cannot open dataset file: " + path);
  std::ostringstream buffer;
  buffer << file.rdbuf();
  return parse_csv_dataset(buffer.str(), format);
}

std::string format_csv_dataset(const Dataset& data, const CsvFormat& format) {
  std::string out;
  if (format.header) {
    for (Eigen::Index j = 0; j < data.dimension(); ++j) {
      out += "x" + std::to_string(j);
      out += format.delimiter;
    }
    out += "y\n";
  }
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    for (Eigen::Index j = 0; j < data.dimension(); ++j) {
      out += format_real(data.features(i, j));
      out += format.delimiter;
    }
    out += format_real(data.targets[i]);
    out += '\n';
  }
  return out;
}

void write_csv_dataset(const std::string& path, const Dataset& data,
                       const CsvFormat& format) {
  std::ofstream file(path, std::ios::binary);
  if (!file) throw Error("cannot write dataset file: " + path);
  file << format_csv_dataset(data, format);
}

}  // namespace fedbilevel

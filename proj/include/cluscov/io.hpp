#pragma once

#include <Eigen/Dense>
#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cluscov/cluster_data.hpp"
#include "cluscov/errors.hpp"

namespace cluscov {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;  // raw cells, same width as header
};

// Minimal CSV dialect: UTF-8, first row header, comma separator, no quoting
// or escaped separators, decimal points.
inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(errc::empty_file, "cannot open '" + path + "'");
  CsvTable table;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() && in.peek() == std::char_traits<char>::eof()) break;
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (line_no == 1) {
      table.header = std::move(cells);
    } else {
      if (cells.size() != table.header.size()) {
        throw Error(errc::parse_error, "row width does not match the header", line_no, 1);
      }
      table.rows.push_back(std::move(cells));
    }
  }
  if (table.header.empty()) throw Error(errc::empty_file, "'" + path + "' is empty");
  if (table.rows.empty()) throw Error(errc::empty_file, "'" + path + "' has a header but no rows");
  return table;
}

inline Eigen::Index find_column(const std::vector<std::string>& header, const std::string& name) {
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (header[j] == name) return static_cast<Eigen::Index>(j);
  }
  throw Error(errc::missing_column, "no column named '" + name + "'");
}

inline double parse_cell(const std::string& cell, long line, long column) {
  errno = 0;
  char* end = nullptr;
  const double value = std::strtod(cell.c_str(), &end);
  if (end == cell.c_str() || *end != '\0' || errno == ERANGE) {
    throw Error(errc::parse_error, "cannot parse '" + cell + "' as a number", line, column);
  }
  return value;
}

// Reads a CSV and groups rows by the cluster column (kept as a label, string
// or numeric). All other columns are parsed as the numeric data matrix in
// file order; row order within a cluster is file order.
inline ClusteredSample ingest_csv(const std::string& path, const std::string& cluster_column) {
  const CsvTable table = read_csv(path);
  const Eigen::Index cluster_col = find_column(table.header, cluster_column);

  std::vector<std::string> names;
  std::vector<Eigen::Index> numeric_cols;
  for (std::size_t j = 0; j < table.header.size(); ++j) {
    if (static_cast<Eigen::Index>(j) == cluster_col) continue;
    names.push_back(table.header[j]);
    numeric_cols.push_back(static_cast<Eigen::Index>(j));
  }
  if (numeric_cols.empty()) {
    throw Error(errc::empty_input, "no data columns besides the cluster column");
  }

  Eigen::MatrixXd data(static_cast<Eigen::Index>(table.rows.size()),
                       static_cast<Eigen::Index>(numeric_cols.size()));
  std::vector<std::string> labels;
  labels.reserve(table.rows.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    labels.push_back(row[static_cast<std::size_t>(cluster_col)]);
    for (std::size_t j = 0; j < numeric_cols.size(); ++j) {
      const auto col = static_cast<std::size_t>(numeric_cols[j]);
      data(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          parse_cell(row[col], static_cast<long>(i) + 2, static_cast<long>(col) + 1);
    }
  }
  return build_sample(data, labels, std::move(names));
}

}  // namespace cluscov

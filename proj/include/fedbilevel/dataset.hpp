#pragma once

#include <string>

#include "fedbilevel/types.hpp"

namespace fedbilevel {

/// Rows are samples; the last CSV column is the target.
struct Dataset {
  Matrix features;
  ModelVector targets;

  Eigen::Index rows() const { return features.rows(); }
  Eigen::Index dimension() const { return features.cols(); }
};

struct CsvFormat {
  bool header = false;
  char delimiter = ',';
};

/// Parses a numeric CSV file. Ragged rows and non-numeric cells raise an
/// Error naming the 1-based line; an empty file raises "no rows".
Dataset load_csv_dataset(const std::string& path, const CsvFormat& format = {});
Dataset parse_csv_dataset(const std::string& text, const CsvFormat& format = {});

/// Writes with 17 significant digits so that reading back is lossless.
void write_csv_dataset(const std::string& path, const Dataset& data,
                       const CsvFormat& format = {});
std::string format_csv_dataset(const Dataset& data, const CsvFormat& format = {});

/// Shortest-exact-enough decimal form used by every CSV writer here.
std::string format_real(double value);

}  // namespace fedbilevel

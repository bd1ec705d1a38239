#pragma once

#include "csp/common.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace csp {

/// N rows of (covariate vector in R^d, scalar response).
struct Dataset {
  PointMatrix x;
  Vector y;
  std::vector<std::string> covariate_names;
  std::string response_name = "y";

  std::size_t rows() const { return static_cast<std::size_t>(x.rows()); }
  std::size_t dims() const { return static_cast<std::size_t>(x.cols()); }
  std::span<const double> responses() const {
    return {y.data(), static_cast<std::size_t>(y.size())};
  }

  Dataset subset(std::span<const std::size_t> rows) const;
  /// Covariate column q paired with the response.
  Dataset column(std::size_t q) const;
  /// Joint (x, y) cloud as an N x (d + 1) matrix.
  PointMatrix joint() const;
  void validate() const;
};

std::vector<std::string> default_covariate_names(std::size_t d);

struct TrainTestSplit {
  Dataset train;
  Dataset test;
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> test_rows;
};

/// Seeded random split; round(train_fraction * N) rows go to training.
TrainTestSplit train_test_split(const Dataset& data, double train_fraction, std::uint64_t seed);

/// Rows rejected while reading a CSV, with reasons.
struct CsvRejection {
  std::size_t line = 0;
  std::string reason;
};

struct CsvReadResult {
  Dataset data;
  std::vector<CsvRejection> rejected;
};

/// Reads a header CSV and extracts the named columns. Rows with missing
/// or non-numeric cells in those columns are rejected, not fatal.
CsvReadResult read_dataset_csv(const std::string& path, const std::vector<std::string>& covariates,
                               const std::string& response);

void write_dataset_csv(const std::string& path, const Dataset& data);

/// Column names of a CSV header line.
std::vector<std::string> read_csv_header(const std::string& path);

/// Shortest text that parses back to the same double.
std::string format_double(double v);

std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace csp

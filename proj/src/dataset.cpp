#include "csp/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace csp {

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.covariate_names = covariate_names;
  out.response_name = response_name;
  out.x.resize(static_cast<Eigen::Index>(rows.size()), x.cols());
  out.y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.x.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
    out.y(static_cast<Eigen::Index>(i)) = y(static_cast<Eigen::Index>(rows[i]));
  }
  return out;
}

Dataset Dataset::column(std::size_t q) const {
  Dataset out;
  out.x = x.col(static_cast<Eigen::Index>(q));
  out.y = y;
  out.covariate_names = {q < covariate_names.size() ? covariate_names[q] : "x" + std::to_string(q + 1)};
  out.response_name = response_name;
  return out;
}

PointMatrix Dataset::joint() const {
  PointMatrix j(x.rows(), x.cols() + 1);
  j.leftCols(x.cols()) = x;
  j.col(x.cols()) = y;
  return j;
}

void Dataset::validate() const {
  if (x.rows() != y.size()) throw DomainError("Dataset: covariate/response row mismatch");
  if (x.rows() == 0) throw DomainError("Dataset: no rows");
  if (x.cols() == 0) throw DomainError("Dataset: no covariates");
  if (!x.allFinite() || !y.allFinite()) throw DomainError("Dataset: non-finite values");
}

std::vector<std::string> default_covariate_names(std::size_t d) {
  std::vector<std::string> names(d);
  for (std::size_t q = 0; q < d; ++q) names[q] = "x" + std::to_string(q + 1);
  return names;
}

TrainTestSplit train_test_split(const Dataset& data, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction <= 1.0))
    throw DomainError("train_test_split: fraction must be in (0, 1]");
  std::vector<std::size_t> idx(data.rows());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(idx.size())));
  TrainTestSplit s;
  s.train_rows.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test_rows.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  std::sort(s.train_rows.begin(), s.train_rows.end());
  std::sort(s.test_rows.begin(), s.test_rows.end());
  s.train = data.subset(s.train_rows);
  s.test = data.subset(s.test_rows);
  return s;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cell);
      cell.clear();
    } else if (c != '\r') {
      cell += c;
    }
  }
  out.push_back(cell);
  for (auto& s : out) {
    auto b = s.find_first_not_of(" \t");
    auto e = s.find_last_not_of(" \t");
    s = (b == std::string::npos) ? std::string() : s.substr(b, e - b + 1);
  }
  return out;
}

std::vector<std::string> read_csv_header(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DomainError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw DomainError("'" + path + "' is empty; a header is required");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line = line.substr(3);
  return split_csv_line(line);
}

namespace {

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* b = s.data();
  const char* e = b + s.size();
  if (*b == '+') ++b;
  auto [ptr, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && ptr == e && std::isfinite(out);
}

}  // namespace

CsvReadResult read_dataset_csv(const std::string& path, const std::vector<std::string>& covariates,
                               const std::string& response) {
  std::ifstream in(path);
  if (!in) throw DomainError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw DomainError("'" + path + "' is empty; a header is required");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line = line.substr(3);
  auto header = split_csv_line(line);

  auto find_col = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw DomainError("column '" + name + "' not found in '" + path + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  if (covariates.empty()) throw DomainError("no covariate columns given");
  std::vector<std::size_t> xcols;
  for (const auto& c : covariates) xcols.push_back(find_col(c));
  std::size_t ycol = find_col(response);

  CsvReadResult res;
  std::vector<double> xs, ys;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto cells = split_csv_line(line);
    std::vector<double> row(xcols.size());
    double yv = 0.0;
    std::string reason;
    for (std::size_t q = 0; q < xcols.size() && reason.empty(); ++q) {
      if (xcols[q] >= cells.size() || !parse_double(cells[xcols[q]], row[q]))
        reason = "missing or non-numeric value in column '" + covariates[q] + "'";
    }
    if (reason.empty() && (ycol >= cells.size() || !parse_double(cells[ycol], yv)))
      reason = "missing or non-numeric value in column '" + response + "'";
    if (!reason.empty()) {
      res.rejected.push_back({lineno, reason});
      continue;
    }
    xs.insert(xs.end(), row.begin(), row.end());
    ys.push_back(yv);
  }
  auto N = static_cast<Eigen::Index>(ys.size());
  auto d = static_cast<Eigen::Index>(xcols.size());
  res.data.x = Eigen::Map<const PointMatrix>(xs.data(), N, d);
  res.data.y = Eigen::Map<const Vector>(ys.data(), N);
  res.data.covariate_names = covariates;
  res.data.response_name = response;
  return res;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void write_dataset_csv(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw DomainError("cannot write '" + path + "'");
  auto names = data.covariate_names.size() == data.dims() ? data.covariate_names
                                                           : default_covariate_names(data.dims());
  for (const auto& n : names) out << n << ',';
  out << data.response_name << '\n';
  for (Eigen::Index i = 0; i < data.x.rows(); ++i) {
    for (Eigen::Index q = 0; q < data.x.cols(); ++q) out << format_double(data.x(i, q)) << ',';
    out << format_double(data.y(i)) << '\n';
  }
}

}  // namespace csp

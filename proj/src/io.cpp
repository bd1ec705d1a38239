#include "csp/io.hpp"

#include <fstream>

namespace csp {

namespace {

Json doubles(std::span<const double> v) { return Json(std::vector<double>(v.begin(), v.end())); }

std::vector<double> to_doubles(const Json& j) { return j.get<std::vector<double>>(); }

const char* kind_name(PartitionKind k) { return k == PartitionKind::bins ? "bins" : "voronoi"; }

}  // namespace

Json interval_to_json(Interval v) { return Json::array({v.lo, v.hi}); }

Interval interval_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 2) throw DomainError("interval must be a two-element array");
  return {j[0].get<double>(), j[1].get<double>()};
}

Json partition_to_json(const Partition& p) {
  Json j;
  j["kind"] = kind_name(p.kind);
  j["K"] = p.K;
  if (p.kind == PartitionKind::bins) {
    Json edges = Json::array();
    for (const auto& e : p.bin_edges) edges.push_back(doubles(e));
    j["bin_edges"] = edges;
  } else {
    Json centers = Json::array();
    for (Eigen::Index r = 0; r < p.centers.rows(); ++r) centers.push_back(doubles(row_span(p.centers, r)));
    j["centers"] = centers;
  }
  j["cell_sizes"] = p.sizes();
  j["warnings"] = p.warnings;
  return j;
}

void write_reduced_csv(const std::string& path, const ReducedSet& set, const std::vector<std::string>& covariates,
                       const std::string& response) {
  if (covariates.size() != set.dims()) throw DomainError("write_reduced_csv: one name per covariate required");
  std::ofstream out(path);
  if (!out) throw DomainError("cannot write '" + path + "'");
  for (const auto& c : covariates) out << c << ',';
  out << response << ",cell_id,coupled_row,method\n";
  const char* method = to_string(set.method);
  for (std::size_t i = 0; i < set.n(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    for (Eigen::Index q = 0; q < set.x.cols(); ++q) out << format_double(set.x(r, q)) << ',';
    out << format_double(set.y[r]) << ',' << set.cell_id[i] << ',' << set.coupled_row[i] << ',' << method << '\n';
  }
  if (!out) throw DomainError("failed writing '" + path + "'");
}

Json reduced_provenance(const ReducedSet& set) {
  Json j;
  j["method"] = to_string(set.method);
  j["n"] = set.n();
  j["seed"] = set.seed;
  j["K"] = set.K;
  j["cell_sizes"] = set.cell_sizes;
  j["allocation"] = set.allocation.n_k;
  if (!set.n_q.empty()) {
    j["n_q"] = set.n_q;
    j["K_q"] = set.K_q;
  }
  j["objective_sum"] = set.objective_sum;
  j["warnings"] = set.warnings;
  return j;
}

Json model_to_json(const DensityModel& m) {
  const DensityBasis& b = m.basis();
  Json basis;
  basis["y_knots"] = b.config().y_knots;
  basis["x_knots_per_dim"] = b.config().x_knots_per_dim;
  basis["included_terms"] = b.config().included_terms;
  basis["spline_order"] = BSplineBasis::kDegree + 1;
  basis["y_interior_knots"] = b.y_basis().interior_knots();
  Json xk = Json::array();
  for (std::size_t q = 0; q < b.dims(); ++q) xk.push_back(b.x_basis(q).interior_knots());
  basis["x_interior_knots"] = xk;

  Json j;
  j["format"] = "csp-density-model";
  j["version"] = 1;
  j["mode"] = to_string(m.mode());
  j["lambda"] = m.lambda();
  j["domain"] = interval_to_json(m.domain());
  Json xr = Json::array();
  for (const auto& r : m.x_ranges()) xr.push_back(interval_to_json(r));
  j["x_ranges"] = xr;
  j["normalization"] = {{"response_offset", m.domain().lo}, {"response_scale", m.domain().length()}};
  j["basis"] = basis;
  j["coefficients"] = doubles({m.coefficients().data(), static_cast<std::size_t>(m.coefficients().size())});
  return j;
}

DensityModel model_from_json(const Json& j) {
  try {
    if (j.at("format").get<std::string>() != "csp-density-model") throw DomainError("not a density model document");
    const Json& bj = j.at("basis");
    BasisConfig cfg;
    cfg.y_knots = bj.at("y_knots").get<std::size_t>();
    cfg.x_knots_per_dim = bj.at("x_knots_per_dim").get<std::size_t>();
    cfg.included_terms = bj.at("included_terms").get<std::vector<AnovaTerm>>();
    auto xk = bj.at("x_interior_knots").get<std::vector<std::vector<double>>>();
    const std::size_t d = xk.size();
    DensityBasis basis(cfg, d, to_doubles(bj.at("y_interior_knots")), std::move(xk));
    std::vector<double> c = to_doubles(j.at("coefficients"));
    std::vector<Interval> ranges;
    for (const auto& r : j.at("x_ranges")) ranges.push_back(interval_from_json(r));
    return DensityModel(std::move(basis), Eigen::Map<const Vector>(c.data(), static_cast<Eigen::Index>(c.size())),
                        j.at("lambda").get<double>(), interval_from_json(j.at("domain")), std::move(ranges),
                        parse_fit_mode(j.at("mode").get<std::string>()));
  } catch (const Json::exception& e) {
    throw DomainError(std::string("malformed model document: ") + e.what());
  }
}

Json fit_report_to_json(const FitReport& r) {
  Json j;
  j["criterion"] = r.criterion;
  j["criterion_at_zero"] = r.criterion_at_zero;
  j["gradient_norm"] = r.gradient_norm;
  j["iterations"] = r.iterations;
  j["converged"] = r.converged;
  j["newton_polish"] = r.newton_polish;
  j["lambda"] = r.lambda;
  j["lambda_path"] = r.lambda_path;
  j["validation_crps"] = r.validation_crps;
  j["warnings"] = r.warnings;
  return j;
}

void write_json(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw DomainError("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
}

Json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DomainError("cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw DomainError("'" + path + "' is not valid JSON: " + e.what());
  }
}

}  // namespace csp

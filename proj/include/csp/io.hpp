#pragma once

// JSON and CSV artifacts exchanged between command-line stages.

#include "csp/density.hpp"
#include "csp/partitioning.hpp"
#include "csp/reduction.hpp"

#include "json.hpp"

#include <string>
#include <vector>

namespace csp {

using Json = nlohmann::ordered_json;

Json partition_to_json(const Partition& p);

/// Columns: covariates by name, response, cell_id, coupled_row, method.
void write_reduced_csv(const std::string& path, const ReducedSet& set, const std::vector<std::string>& covariates,
                       const std::string& response);

/// Method, sizes, partition and allocation details and warnings.
Json reduced_provenance(const ReducedSet& set);

Json model_to_json(const DensityModel& m);
DensityModel model_from_json(const Json& j);

Json fit_report_to_json(const FitReport& r);

Json interval_to_json(Interval v);
Interval interval_from_json(const Json& j);

void write_json(const std::string& path, const Json& j);
Json read_json(const std::string& path);

}  // namespace csp

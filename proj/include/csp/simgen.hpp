#pragma once

// Seeded generators for the simulation cases with their true conditional
// distributions.

#include "csp/common.hpp"
#include "csp/dataset.hpp"
#include "csp/metrics.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace csp {

enum class CaseId { case1, case2, case3, case4, case5, case6, case1_6d, case2_6d, case3_6d, banana, cond_beta };

const char* to_string(CaseId c);
CaseId parse_case_id(const std::string& s);
std::vector<CaseId> all_cases();

/// Covariate dimension of a case.
std::size_t case_dims(CaseId c);
/// Beta-response cases live on [0,1]; the others use the observed range
/// widened by 1%.
bool case_bounded(CaseId c);

struct CaseSpec {
  CaseId id = CaseId::case1;
  std::size_t N = 1000;
  std::uint64_t seed = 0;
};

struct TruthOracle {
  std::function<double(std::span<const double> x, double y)> cond_cdf;
  std::function<double(std::span<const double> x, double y)> cond_density;

  CdfFamily cdf_family(Interval domain) const;
  DensityFamily density_family() const;
};

struct GeneratedCase {
  Dataset data;
  TruthOracle truth;
};

GeneratedCase generate(const CaseSpec& spec);
TruthOracle truth_oracle(CaseId c);

/// `count` independent draws of Y given a fixed covariate vector.
std::vector<double> sample_conditional(CaseId c, std::span<const double> x, std::size_t count, std::uint64_t seed);

/// Response domain for evaluation: [0,1] for bounded cases, otherwise the
/// observed range of `responses` widened by 1%.
Interval case_domain(CaseId c, std::span<const double> responses);

/// Mean CRPS of the true conditional CDF over a test set.
double truth_crps(const TruthOracle& truth, const PointMatrix& x, std::span<const double> y, Interval domain,
                  std::size_t grid_size = kDefaultGridSize);

/// Gamma(shape, 1) draw returned on the log scale, stable for tiny shapes.
double log_gamma_variate(double shape, std::mt19937_64& rng);
double beta_variate(double a, double b, std::mt19937_64& rng);

}  // namespace csp

#pragma once

// Support points: n points minimizing the empirical energy distance to a
// data sample, computed with the majorization-minimization fixed point
// of the convex-concave procedure.

#include "csp/common.hpp"
#include "csp/metrics.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace csp {

enum class SpInit { quantile, random_subsample };

struct SpConfig {
  int max_iters = 500;
  /// Stop once the relative change of the objective falls below tol.
  double tol = 1e-8;
  /// Distance floor as a fraction of the data range.
  double epsilon = 1e-10;
  std::uint64_t seed = 0;
  SpInit init = SpInit::quantile;
  unsigned threads = 1;

  void validate() const;
};

struct SpResult {
  PointMatrix points;
  double objective = 0.0;
  int iters_used = 0;
  bool converged = false;
  std::vector<std::string> warnings;

  std::vector<double> points_1d() const;
};

/// (2/(nN)) sum_j sum_m ||z_j - y_m|| - (1/n^2) sum_i sum_j ||z_i - z_j||.
double empirical_energy_objective(const PointMatrix& candidate, const PointMatrix& data);

/// One Jacobi sweep of the MM update; every point moves from the
/// pre-step positions. `epsilon` is an absolute distance floor.
PointMatrix sp_fixed_point_step(const PointMatrix& current, const PointMatrix& data,
                                double epsilon, unsigned threads = 1);

/// Sorted 1D support points. Initialized at the empirical quantiles of
/// levels (2i-1)/(2n), which satisfy the first-order condition exactly,
/// and refined by MM sweeps.
SpResult support_points_1d(const EmpiricalSet1D& data, std::size_t n, const SpConfig& cfg);

/// Support points in R^p from a seeded, slightly jittered random subsample.
SpResult support_points_nd(const PointMatrix& data, std::size_t n, const SpConfig& cfg);

/// Empirical quantile used for initialization: the smallest order
/// statistic y_(k) with k/N >= level (k >= 1).
double lower_empirical_quantile(std::span<const double> sorted, double level);

}  // namespace csp

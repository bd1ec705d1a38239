#pragma once

// Distances and scores between distributions: energy distance, L2
// discrepancy between CDFs, CRPS and the symmetrized KL distance.

#include "csp/common.hpp"

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace csp {

/// Non-empty, finite, ascending multiset of reals.
class EmpiricalSet1D {
 public:
  explicit EmpiricalSet1D(std::vector<double> points);

  std::span<const double> points() const { return points_; }
  std::size_t size() const { return points_.size(); }
  double min() const { return points_.front(); }
  double max() const { return points_.back(); }

  /// Fraction of points <= v.
  double cdf(double v) const;

 private:
  std::vector<double> points_;
};

/// A CDF restricted to a closed interval. `breakpoints` lists the
/// locations of jumps (or kinks) so integrators can split there; it may
/// be empty for smooth CDFs.
struct Cdf {
  std::function<double(double)> eval;
  Interval domain;
  std::vector<double> breakpoints;

  double operator()(double y) const { return eval(y); }
};

/// Nodes strictly inside an interval with positive weights.
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;

  std::size_t size() const { return nodes.size(); }
  double integrate(const std::function<double(double)>& f) const;

  /// n-point Gauss-Legendre rule mapped to `range`.
  static QuadratureRule gauss_legendre(std::size_t n, Interval range);
  /// Gauss-Legendre with `per_panel` nodes on each panel [edges[i], edges[i+1]].
  static QuadratureRule composite_gauss_legendre(std::span<const double> edges,
                                                 std::size_t per_panel);
};

using CdfFamily = std::function<Cdf(std::span<const double> x)>;
using DensityFunction = std::function<double(double)>;
using DensityFamily = std::function<DensityFunction(std::span<const double> x)>;

inline constexpr std::size_t kDefaultGridSize = 4096;
inline constexpr std::size_t kDefaultGaussNodes = 64;

Cdf empirical_cdf(const EmpiricalSet1D& set, Interval domain);
Cdf uniform_cdf(Interval support, Interval domain);
Cdf point_mass_cdf(double at, Interval domain);

/// 2 mean||a-b|| - mean||a-a'|| - mean||b-b'|| over all ordered pairs,
/// self-pairs included.
double energy_distance_empirical(const PointMatrix& a, const PointMatrix& b);
double energy_distance_empirical(std::span<const double> a, std::span<const double> b);

/// Mean of ||a_i - b_j|| over all (i, j).
double mean_cross_distance(const PointMatrix& a, const PointMatrix& b);
/// Mean of ||a_i - a_j|| over all ordered (i, j) including i == j.
double mean_self_distance(const PointMatrix& a);

/// Integral of (F - G)^2: two-point Gauss on a uniform grid refined at
/// both CDFs' breakpoints.
double l2_discrepancy_sq(const Cdf& f, const Cdf& g, std::size_t grid_size = kDefaultGridSize);

/// Integral over the domain of (F(z) - 1(z > y))^2.
double crps_single(const Cdf& fhat, double y, std::size_t grid_size = kDefaultGridSize);

/// Mean CRPS over the rows of (x, y).
double crps_average(const CdfFamily& fhat, const PointMatrix& x, std::span<const double> y,
                    std::size_t grid_size = kDefaultGridSize);

/// (1/n) sum|z_i - y| - (1/(2n^2)) sum sum |z_i - z_j|.
double crps_empirical_closed_form(const EmpiricalSet1D& points, double y);

/// Mean over covariates of l2_discrepancy_sq(Fhat(.|x), F(.|x)).
double conditional_l2_discrepancy_sq(const CdfFamily& fhat, const CdfFamily& truth,
                                     const PointMatrix& covariates,
                                     std::size_t grid_size = kDefaultGridSize);

/// Monte Carlo average over covariates of the integral of
/// (f - fhat) log(f / fhat) using `quad` in the response direction.
double skl(const DensityFamily& fhat, const DensityFamily& truth, const PointMatrix& covariates,
           const QuadratureRule& quad);

}  // namespace csp

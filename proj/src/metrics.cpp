#include "csp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>

namespace csp {

namespace {

void require_finite(std::span<const double> v, const char* what) {
  for (double d : v)
    if (!std::isfinite(d)) throw DomainError(std::string(what) + ": non-finite value");
}

// Sum over j of |v - sorted[j]| given prefix sums of `sorted`.
double abs_sum_sorted(double v, std::span<const double> sorted, std::span<const double> prefix) {
  auto k = static_cast<std::size_t>(std::upper_bound(sorted.begin(), sorted.end(), v) - sorted.begin());
  double m = static_cast<double>(sorted.size());
  double below = prefix[k];
  double above = prefix[sorted.size()] - below;
  double kd = static_cast<double>(k);
  return v * kd - below + above - v * (m - kd);
}

std::vector<double> prefix_sums(std::span<const double> sorted) {
  std::vector<double> p(sorted.size() + 1, 0.0);
  for (std::size_t i = 0; i < sorted.size(); ++i) p[i + 1] = p[i] + sorted[i];
  return p;
}

// Sum over all ordered pairs of |z_i - z_j| for an ascending sequence.
double pairwise_abs_sum_sorted(std::span<const double> sorted) {
  double n = static_cast<double>(sorted.size());
  double s = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i)
    s += (2.0 * static_cast<double>(i) + 1.0 - n) * sorted[i];
  return 2.0 * s;
}

// Composite 2-point Gauss-Legendre over the cells delimited by `cuts`.
// Nodes fall strictly inside every cell, so integrands that are
// discontinuous only at cut locations are handled exactly when they are
// piecewise polynomial of degree <= 3.
double integrate_cells(const std::function<double(double)>& f, std::vector<double> cuts) {
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  constexpr double g = 0.57735026918962576451;  // 1/sqrt(3)
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    double a = cuts[i], b = cuts[i + 1];
    double half = 0.5 * (b - a), mid = 0.5 * (a + b);
    total += half * (f(mid - half * g) + f(mid + half * g));
  }
  return total;
}

std::vector<double> uniform_grid(Interval d, std::size_t grid_size) {
  std::vector<double> grid(grid_size);
  double h = d.length() / static_cast<double>(grid_size - 1);
  for (std::size_t i = 0; i < grid_size; ++i) grid[i] = d.lo + h * static_cast<double>(i);
  grid.back() = d.hi;
  return grid;
}

}  // namespace

EmpiricalSet1D::EmpiricalSet1D(std::vector<double> points) : points_(std::move(points)) {
  if (points_.empty()) throw DomainError("EmpiricalSet1D: empty point set");
  require_finite(points_, "EmpiricalSet1D");
  std::sort(points_.begin(), points_.end());
}

double EmpiricalSet1D::cdf(double v) const {
  auto k = std::upper_bound(points_.begin(), points_.end(), v) - points_.begin();
  return static_cast<double>(k) / static_cast<double>(points_.size());
}

double QuadratureRule::integrate(const std::function<double(double)>& f) const {
  double s = 0.0;
  for (std::size_t i = 0; i < nodes.size(); ++i) s += weights[i] * f(nodes[i]);
  return s;
}

QuadratureRule QuadratureRule::gauss_legendre(std::size_t n, Interval range) {
  if (n == 0) throw DomainError("gauss_legendre: zero nodes");
  if (!(range.hi > range.lo)) throw DomainError("gauss_legendre: empty interval");
  QuadratureRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  const double half = 0.5 * range.length(), mid = 0.5 * (range.lo + range.hi);
  const std::size_t m = (n + 1) / 2;
  const double nd = static_cast<double>(n);
  for (std::size_t i = 0; i < m; ++i) {
    // Newton iteration on P_n from the Chebyshev-like initial guess.
    double z = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (nd + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p1 = 1.0, p2 = 0.0;
      for (std::size_t j = 1; j <= n; ++j) {
        double p3 = p2;
        p2 = p1;
        double jd = static_cast<double>(j);
        p1 = ((2.0 * jd - 1.0) * z * p2 - (jd - 1.0) * p3) / jd;
      }
      dp = nd * (z * p1 - p2) / (z * z - 1.0);
      double z_prev = z;
      z = z_prev - p1 / dp;
      if (std::abs(z - z_prev) <= 1e-15) break;
    }
    double w = 2.0 / ((1.0 - z * z) * dp * dp);
    rule.nodes[i] = mid - half * z;
    rule.nodes[n - 1 - i] = mid + half * z;
    rule.weights[i] = half * w;
    rule.weights[n - 1 - i] = half * w;
  }
  return rule;
}

QuadratureRule QuadratureRule::composite_gauss_legendre(std::span<const double> edges,
                                                        std::size_t per_panel) {
  if (edges.size() < 2) throw DomainError("composite_gauss_legendre: need at least one panel");
  QuadratureRule base = gauss_legendre(per_panel, {-1.0, 1.0});
  QuadratureRule rule;
  rule.nodes.reserve((edges.size() - 1) * per_panel);
  rule.weights.reserve((edges.size() - 1) * per_panel);
  for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
    double a = edges[i], b = edges[i + 1];
    if (!(b > a)) throw DomainError("composite_gauss_legendre: panel edges must increase");
    double half = 0.5 * (b - a), mid = 0.5 * (a + b);
    for (std::size_t j = 0; j < per_panel; ++j) {
      rule.nodes.push_back(mid + half * base.nodes[j]);
      rule.weights.push_back(half * base.weights[j]);
    }
  }
  return rule;
}

Cdf empirical_cdf(const EmpiricalSet1D& set, Interval domain) {
  auto shared = std::make_shared<const EmpiricalSet1D>(set);
  std::vector<double> breaks(set.points().begin(), set.points().end());
  breaks.erase(std::unique(breaks.begin(), breaks.end()), breaks.end());
  return {[shared](double v) { return shared->cdf(v); }, domain, std::move(breaks)};
}

Cdf uniform_cdf(Interval support, Interval domain) {
  return {[support](double v) {
            if (v <= support.lo) return 0.0;
            if (v >= support.hi) return 1.0;
            return (v - support.lo) / support.length();
          },
          domain,
          {support.lo, support.hi}};
}

Cdf point_mass_cdf(double at, Interval domain) {
  return {[at](double v) { return v >= at ? 1.0 : 0.0; }, domain, {at}};
}

namespace {

bool same_multiset(const PointMatrix& a, const PointMatrix& b) {
  if (a.rows() != b.rows()) return false;
  auto sorted_rows = [](const PointMatrix& m) {
    std::vector<std::vector<double>> rows(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index q = 0; q < m.cols(); ++q) rows[static_cast<std::size_t>(i)].push_back(m(i, q));
    std::sort(rows.begin(), rows.end());
    return rows;
  };
  return sorted_rows(a) == sorted_rows(b);
}

}  // namespace

double mean_cross_distance(const PointMatrix& a, const PointMatrix& b) {
  if (a.rows() == 0 || b.rows() == 0) throw DomainError("energy distance: empty point set");
  if (a.cols() != b.cols()) throw DomainError("energy distance: dimension mismatch");
  if (a.cols() == 1) {
    std::vector<double> sb(b.data(), b.data() + b.rows());
    std::sort(sb.begin(), sb.end());
    auto pb = prefix_sums(sb);
    double s = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) s += abs_sum_sorted(a(i, 0), sb, pb);
    return s / (static_cast<double>(a.rows()) * static_cast<double>(b.rows()));
  }
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    double row = 0.0;
    for (Eigen::Index j = 0; j < b.rows(); ++j) row += (a.row(i) - b.row(j)).norm();
    s += row;
  }
  return s / (static_cast<double>(a.rows()) * static_cast<double>(b.rows()));
}

double mean_self_distance(const PointMatrix& a) {
  if (a.rows() == 0) throw DomainError("energy distance: empty point set");
  double n = static_cast<double>(a.rows());
  if (a.cols() == 1) {
    std::vector<double> s(a.data(), a.data() + a.rows());
    std::sort(s.begin(), s.end());
    return pairwise_abs_sum_sorted(s) / (n * n);
  }
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = i + 1; j < a.rows(); ++j) s += (a.row(i) - a.row(j)).norm();
  return 2.0 * s / (n * n);
}

double energy_distance_empirical(const PointMatrix& a, const PointMatrix& b) {
  if (a.rows() == 0 || b.rows() == 0) throw DomainError("energy distance: empty point set");
  if (a.cols() != b.cols()) throw DomainError("energy distance: dimension mismatch");
  require_finite({a.data(), static_cast<std::size_t>(a.size())}, "energy distance");
  require_finite({b.data(), static_cast<std::size_t>(b.size())}, "energy distance");
  if (same_multiset(a, b)) return 0.0;
  // Nonnegative in exact arithmetic; clip cancellation noise.
  return std::max(0.0, 2.0 * mean_cross_distance(a, b) - mean_self_distance(a) - mean_self_distance(b));
}

double energy_distance_empirical(std::span<const double> a, std::span<const double> b) {
  PointMatrix ma = Eigen::Map<const Vector>(a.data(), static_cast<Eigen::Index>(a.size()));
  PointMatrix mb = Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(b.size()));
  return energy_distance_empirical(ma, mb);
}

double l2_discrepancy_sq(const Cdf& f, const Cdf& g, std::size_t grid_size) {
  if (grid_size < 2) throw DomainError("l2_discrepancy_sq: grid_size must be >= 2");
  if (!(f.domain == g.domain)) throw DomainError("l2_discrepancy_sq: domain mismatch");
  const Interval d = f.domain;
  std::vector<double> cuts = uniform_grid(d, grid_size);
  for (const Cdf* c : {&f, &g})
    for (double b : c->breakpoints)
      if (b > d.lo && b < d.hi) cuts.push_back(b);
  return integrate_cells(
      [&](double z) {
        double v = f(z) - g(z);
        return v * v;
      },
      std::move(cuts));
}

double crps_single(const Cdf& fhat, double y, std::size_t grid_size) {
  const Interval d = fhat.domain;
  if (!d.contains(y)) {
    std::ostringstream msg;
    msg << "crps_single: observation " << y << " outside domain [" << d.lo << ", " << d.hi << "]";
    throw DomainError(msg.str());
  }
  if (grid_size < 2) throw DomainError("crps_single: grid_size must be >= 2");
  std::vector<double> cuts = uniform_grid(d, grid_size);
  cuts.push_back(y);
  for (double b : fhat.breakpoints)
    if (b > d.lo && b < d.hi) cuts.push_back(b);
  return integrate_cells(
      [&](double z) {
        double v = fhat(z) - (z > y ? 1.0 : 0.0);
        return v * v;
      },
      std::move(cuts));
}

double crps_average(const CdfFamily& fhat, const PointMatrix& x, std::span<const double> y,
                    std::size_t grid_size) {
  if (x.rows() == 0 || y.empty()) throw DomainError("crps_average: empty test set");
  if (static_cast<std::size_t>(x.rows()) != y.size())
    throw DomainError("crps_average: covariate/response row count mismatch");
  double s = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    try {
      s += crps_single(fhat(row_span(x, i)), y[static_cast<std::size_t>(i)], grid_size);
    } catch (const DomainError& e) {
      throw DomainError("crps_average: row " + std::to_string(i) + ": " + e.what());
    }
  }
  return s / static_cast<double>(x.rows());
}

double crps_empirical_closed_form(const EmpiricalSet1D& points, double y) {
  auto z = points.points();
  double n = static_cast<double>(z.size());
  double first = 0.0;
  for (double v : z) first += std::abs(v - y);
  return first / n - pairwise_abs_sum_sorted(z) / (2.0 * n * n);
}

double conditional_l2_discrepancy_sq(const CdfFamily& fhat, const CdfFamily& truth,
                                     const PointMatrix& covariates, std::size_t grid_size) {
  if (covariates.rows() == 0) throw DomainError("conditional_l2_discrepancy_sq: no covariates");
  double s = 0.0;
  for (Eigen::Index i = 0; i < covariates.rows(); ++i) {
    auto x = row_span(covariates, i);
    try {
      s += l2_discrepancy_sq(fhat(x), truth(x), grid_size);
    } catch (const DomainError& e) {
      throw DomainError("conditional_l2_discrepancy_sq: covariate " + std::to_string(i) + ": " +
                        e.what());
    }
  }
  return s / static_cast<double>(covariates.rows());
}

double skl(const DensityFamily& fhat, const DensityFamily& truth, const PointMatrix& covariates,
           const QuadratureRule& quad) {
  if (covariates.rows() == 0) throw DomainError("skl: no covariates");
  double s = 0.0;
  for (Eigen::Index i = 0; i < covariates.rows(); ++i) {
    auto x = row_span(covariates, i);
    auto fh = fhat(x);
    auto ft = truth(x);
    double inner = 0.0;
    for (std::size_t g = 0; g < quad.size(); ++g) {
      double y = quad.nodes[g];
      double a = ft(y), b = fh(y);
      if (!(a > 0.0) || !(b > 0.0)) {
        std::ostringstream msg;
        msg << "skl: non-positive density at node y=" << y << " for covariate row " << i;
        throw DomainError(msg.str());
      }
      inner += quad.weights[g] * (a - b) * std::log(a / b);
    }
    s += inner;
  }
  return s / static_cast<double>(covariates.rows());
}

}  // namespace csp

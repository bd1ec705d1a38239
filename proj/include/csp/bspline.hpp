#pragma once

#include "csp/common.hpp"

#include <span>
#include <vector>

namespace csp {

/// Clamped cubic B-spline basis on an interval.
class BSplineBasis {
 public:
  static constexpr int kDegree = 3;

  BSplineBasis() = default;
  /// `interior` must be strictly increasing and strictly inside `range`.
  BSplineBasis(std::vector<double> interior, Interval range);

  std::size_t size() const { return interior_.size() + kDegree + 1; }
  Interval range() const { return range_; }
  const std::vector<double>& interior_knots() const { return interior_; }
  /// Distinct knots: range.lo, interior..., range.hi.
  std::vector<double> breakpoints() const;

  /// Values (deriv = 0), first or second derivatives of every basis
  /// function at t, written densely into `out` (length size()).
  void eval(double t, std::span<double> out, int deriv = 0) const;
  Vector eval(double t, int deriv = 0) const;

  /// Index of the first non-zero basis function at t; exactly four
  /// consecutive functions starting there can be non-zero.
  std::size_t first_active(double t) const;
  /// The four possibly non-zero values (or derivatives) at t.
  void eval_local(double t, std::span<double, 4> out, int deriv = 0) const;

 private:
  std::size_t find_span(double t) const;

  std::vector<double> interior_;
  std::vector<double> knots_;
  Interval range_;
};

}  // namespace csp

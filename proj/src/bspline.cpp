#include "csp/bspline.hpp"

#include <algorithm>
#include <array>

namespace csp {

BSplineBasis::BSplineBasis(std::vector<double> interior, Interval range)
    : interior_(std::move(interior)), range_(range) {
  if (!(range.hi > range.lo)) throw DomainError("BSplineBasis: degenerate range");
  double prev = range.lo;
  for (double k : interior_) {
    if (!(k > prev)) throw DomainError("BSplineBasis: interior knots must increase strictly");
    prev = k;
  }
  if (!interior_.empty() && !(interior_.back() < range.hi))
    throw DomainError("BSplineBasis: interior knot outside range");
  knots_.assign(kDegree + 1, range.lo);
  knots_.insert(knots_.end(), interior_.begin(), interior_.end());
  knots_.insert(knots_.end(), kDegree + 1, range.hi);
}

std::vector<double> BSplineBasis::breakpoints() const {
  std::vector<double> b;
  b.reserve(interior_.size() + 2);
  b.push_back(range_.lo);
  b.insert(b.end(), interior_.begin(), interior_.end());
  b.push_back(range_.hi);
  return b;
}

std::size_t BSplineBasis::find_span(double t) const {
  const std::size_t n = size();  // spans run over knot indices [degree, n - 1]
  if (t >= knots_[n]) return n - 1;
  if (t <= knots_[kDegree]) return kDegree;
  auto it = std::upper_bound(knots_.begin() + kDegree, knots_.begin() + static_cast<std::ptrdiff_t>(n + 1), t);
  return static_cast<std::size_t>(it - knots_.begin()) - 1;
}

std::size_t BSplineBasis::first_active(double t) const { return find_span(t) - kDegree; }

void BSplineBasis::eval_local(double t, std::span<double, 4> out, int deriv) const {
  // Basis functions and derivatives on one knot span (de Boor / Cox).
  constexpr int p = kDegree;
  const std::size_t i = find_span(std::clamp(t, range_.lo, range_.hi));
  const auto& U = knots_;
  std::array<std::array<double, p + 1>, p + 1> ndu{};
  std::array<double, p + 1> left{}, right{};
  ndu[0][0] = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = t - U[i + 1 - j];
    right[j] = U[i + j] - t;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      ndu[j][r] = right[r + 1] + left[j - r];
      double temp = ndu[r][j - 1] / ndu[j][r];
      ndu[r][j] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    ndu[j][j] = saved;
  }
  if (deriv == 0) {
    for (int j = 0; j <= p; ++j) out[j] = ndu[j][p];
    return;
  }
  std::array<std::array<double, p + 1>, 2> a{};
  for (int r = 0; r <= p; ++r) {
    int s1 = 0, s2 = 1;
    a[0] = {};
    a[1] = {};
    a[0][0] = 1.0;
    double value = 0.0;
    for (int k = 1; k <= deriv; ++k) {
      double d = 0.0;
      int rk = r - k, pk = p - k;
      if (r >= k) {
        a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
        d = a[s2][0] * ndu[rk][pk];
      }
      int j1 = (rk >= -1) ? 1 : -rk;
      int j2 = (r - 1 <= pk) ? k - 1 : p - r;
      for (int j = j1; j <= j2; ++j) {
        a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][rk + j];
        d += a[s2][j] * ndu[rk + j][pk];
      }
      if (r <= pk) {
        a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
        d += a[s2][k] * ndu[r][pk];
      }
      value = d;
      std::swap(s1, s2);
    }
    // Multiply by p! / (p - deriv)!.
    double factor = 1.0;
    for (int k = 0; k < deriv; ++k) factor *= p - k;
    out[r] = value * factor;
  }
}

void BSplineBasis::eval(double t, std::span<double> out, int deriv) const {
  std::fill(out.begin(), out.end(), 0.0);
  std::array<double, 4> local{};
  eval_local(t, local, deriv);
  std::size_t first = first_active(t);
  for (std::size_t j = 0; j < 4; ++j) out[first + j] = local[j];
}

Vector BSplineBasis::eval(double t, int deriv) const {
  Vector v(static_cast<Eigen::Index>(size()));
  eval(t, {v.data(), size()}, deriv);
  return v;
}

}  // namespace csp

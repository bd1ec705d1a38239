#include "csp/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace csp {

namespace {

struct LinePoint {
  double alpha;
  double value;
  double slope;
  Vector grad;
};

LinePoint probe(const Objective& f, const Vector& x, const Vector& dir, double alpha) {
  CriterionValue cv;
  try {
    cv = f(x + alpha * dir);
  } catch (const NumericalError&) {
    cv.value = std::numeric_limits<double>::infinity();
  }
  if (!std::isfinite(cv.value)) return {alpha, std::numeric_limits<double>::infinity(), 0.0, {}};
  return {alpha, cv.value, cv.gradient.dot(dir), std::move(cv.gradient)};
}

// Minimizer of the cubic interpolating two points with values and slopes,
// safeguarded into the interior of [lo, hi].
double cubic_step(const LinePoint& a, const LinePoint& b) {
  double lo = std::min(a.alpha, b.alpha), hi = std::max(a.alpha, b.alpha);
  double d1 = a.slope + b.slope - 3.0 * (a.value - b.value) / (a.alpha - b.alpha);
  double disc = d1 * d1 - a.slope * b.slope;
  double t = 0.5 * (lo + hi);
  if (disc >= 0.0 && std::isfinite(b.value)) {
    double d2 = std::copysign(std::sqrt(disc), b.alpha - a.alpha);
    double denom = b.slope - a.slope + 2.0 * d2;
    if (denom != 0.0) t = b.alpha - (b.alpha - a.alpha) * (b.slope + d2 - d1) / denom;
  }
  double margin = 0.1 * (hi - lo);
  if (!(t > lo + margin && t < hi - margin)) t = 0.5 * (lo + hi);
  return t;
}

// Strong Wolfe conditions with c1 = 1e-4, c2 = 0.9.
bool wolfe_search(const Objective& f, const Vector& x, const Vector& dir, double f0, double g0,
                  double alpha0, LinePoint& out) {
  constexpr double c1 = 1e-4, c2 = 0.9;
  LinePoint prev{0.0, f0, g0, {}};
  double alpha = alpha0;
  auto zoom = [&](LinePoint lo, LinePoint hi) {
    for (int it = 0; it < 30; ++it) {
      double a = cubic_step(lo, hi);
      LinePoint cur = probe(f, x, dir, a);
      if (!std::isfinite(cur.value) || cur.value > f0 + c1 * a * g0 || cur.value >= lo.value) {
        hi = cur;
      } else {
        if (std::abs(cur.slope) <= -c2 * g0) {
          out = std::move(cur);
          return true;
        }
        if (cur.slope * (hi.alpha - lo.alpha) >= 0.0) hi = lo;
        lo = std::move(cur);
      }
      if (std::abs(hi.alpha - lo.alpha) < 1e-16 * std::max(1.0, lo.alpha)) break;
    }
    // Accept any sufficient decrease found.
    if (lo.alpha > 0.0 && lo.value < f0) {
      out = std::move(lo);
      return true;
    }
    return false;
  };
  for (int it = 0; it < 40; ++it) {
    LinePoint cur = probe(f, x, dir, alpha);
    if (!std::isfinite(cur.value) || cur.value > f0 + c1 * alpha * g0 ||
        (it > 0 && cur.value >= prev.value)) {
      if (!std::isfinite(cur.value)) {
        // Shrink until finite before zooming.
        alpha *= 0.1;
        if (alpha < 1e-20) return false;
        continue;
      }
      return zoom(prev, cur);
    }
    if (std::abs(cur.slope) <= -c2 * g0) {
      out = std::move(cur);
      return true;
    }
    if (cur.slope >= 0.0) return zoom(cur, prev);
    prev = std::move(cur);
    alpha *= 2.0;
  }
  return false;
}

}  // namespace

MinimizeResult minimize_bfgs(const Objective& f, Vector x0, const MinimizeOptions& opts) {
  MinimizeResult res;
  const Eigen::Index p = x0.size();
  Vector x = std::move(x0);
  CriterionValue cv = f(x);
  if (!std::isfinite(cv.value)) throw NumericalError("minimize_bfgs: non-finite value at start");
  const bool seeded = opts.initial_inverse_hessian.rows() == p && opts.initial_inverse_hessian.cols() == p;
  Eigen::MatrixXd H = seeded ? opts.initial_inverse_hessian : Eigen::MatrixXd::Identity(p, p);
  bool scaled = seeded;
  double gnorm = cv.gradient.norm();
  int it = 0;
  for (; it < opts.max_iters && gnorm > opts.grad_tol; ++it) {
    Vector dir = -H * cv.gradient;
    double g0 = cv.gradient.dot(dir);
    if (!(g0 < 0.0)) {
      H.setIdentity();
      dir = -cv.gradient;
      g0 = -gnorm * gnorm;
    }
    double alpha0 = scaled ? 1.0 : std::min(1.0, 1.0 / gnorm);
    LinePoint step;
    if (!wolfe_search(f, x, dir, cv.value, g0, alpha0, step)) break;
    Vector s = step.alpha * dir;
    Vector y = step.grad - cv.gradient;
    double sy = s.dot(y);
    x += s;
    cv.value = step.value;
    cv.gradient = std::move(step.grad);
    gnorm = cv.gradient.norm();
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (!scaled) {
        H *= sy / y.squaredNorm();
        scaled = true;
      }
      double rho = 1.0 / sy;
      Vector Hy = H * y;
      double yHy = y.dot(Hy);
      H += ((1.0 + rho * yHy) * rho) * (s * s.transpose()) - rho * (Hy * s.transpose() + s * Hy.transpose());
    }
  }
  res.x = std::move(x);
  res.value = cv.value;
  res.grad_norm = gnorm;
  res.iterations = it;
  res.converged = gnorm <= opts.grad_tol;
  return res;
}

}  // namespace csp

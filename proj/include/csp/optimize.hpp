#pragma once

#include "csp/common.hpp"

#include <functional>

namespace csp {

struct CriterionValue {
  double value = 0.0;
  Vector gradient;
};

using Objective = std::function<CriterionValue(const Vector&)>;

struct MinimizeOptions {
  double grad_tol = 1e-6;
  int max_iters = 200;
  /// Starting inverse-Hessian approximation; identity with a first-step
  /// rescaling when empty.
  Eigen::MatrixXd initial_inverse_hessian;
};

struct MinimizeResult {
  Vector x;
  double value = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// BFGS on the inverse Hessian with a strong-Wolfe line search. Stops when
/// the Euclidean gradient norm is <= grad_tol or after max_iters.
MinimizeResult minimize_bfgs(const Objective& f, Vector x0, const MinimizeOptions& opts = {});

}  // namespace csp

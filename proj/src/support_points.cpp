#include "csp/support_points.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace csp {

namespace {

double data_range(const PointMatrix& data) {
  double r = 0.0;
  for (Eigen::Index q = 0; q < data.cols(); ++q)
    r = std::max(r, data.col(q).maxCoeff() - data.col(q).minCoeff());
  return r > 0.0 ? r : 1.0;
}

struct StepOutput {
  PointMatrix next;
  double objective;  // objective at the pre-step positions
};

// MM sweep that also accumulates the objective of the current positions,
// since both need the same point-to-data distances.
StepOutput step_with_objective(const PointMatrix& cur, const PointMatrix& data, double eps,
                               unsigned threads) {
  const Eigen::Index n = cur.rows(), N = data.rows(), p = cur.cols();
  const double ratio = static_cast<double>(N) / static_cast<double>(n);
  PointMatrix next(n, p);
  std::vector<double> cross(static_cast<std::size_t>(n)), self(static_cast<std::size_t>(n));

  parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t iu) {
    const auto i = static_cast<Eigen::Index>(iu);
    const double* xi = cur.data() + i * p;
    std::vector<double> num(static_cast<std::size_t>(p), 0.0);
    double denom = 0.0, dist_sum = 0.0, self_sum = 0.0;
    for (Eigen::Index m = 0; m < N; ++m) {
      const double* ym = data.data() + m * p;
      double d2 = 0.0;
      for (Eigen::Index q = 0; q < p; ++q) {
        double t = xi[q] - ym[q];
        d2 += t * t;
      }
      double d = std::sqrt(d2);
      dist_sum += d;
      double w = 1.0 / std::max(d, eps);
      denom += w;
      for (Eigen::Index q = 0; q < p; ++q) num[static_cast<std::size_t>(q)] += w * ym[q];
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      const double* xj = cur.data() + j * p;
      double d2 = 0.0;
      for (Eigen::Index q = 0; q < p; ++q) {
        double t = xi[q] - xj[q];
        d2 += t * t;
      }
      double d = std::sqrt(d2);
      self_sum += d;
      double w = ratio / std::max(d, eps);
      for (Eigen::Index q = 0; q < p; ++q) num[static_cast<std::size_t>(q)] += w * (xi[q] - xj[q]);
    }
    for (Eigen::Index q = 0; q < p; ++q) next(i, q) = num[static_cast<std::size_t>(q)] / denom;
    cross[iu] = dist_sum;
    self[iu] = self_sum;
  });

  // Fixed-order reduction keeps the objective independent of threading.
  double cs = 0.0, ss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    cs += cross[static_cast<std::size_t>(i)];
    ss += self[static_cast<std::size_t>(i)];
  }
  double nd = static_cast<double>(n), Nd = static_cast<double>(N);
  return {std::move(next), 2.0 * cs / (nd * Nd) - ss / (nd * nd)};
}

bool relative_change_small(double prev, double cur, double tol, double scale) {
  return std::abs(prev - cur) <= tol * std::max(std::abs(prev), 1e-12 * scale);
}

// Runs MM sweeps from `start` until the relative objective change drops
// below tol. Returns the last iterate whose objective is known.
SpResult iterate(PointMatrix start, const PointMatrix& data, const SpConfig& cfg) {
  const double eps = cfg.epsilon * data_range(data);
  const double scale = data_range(data);
  SpResult res;
  PointMatrix cur = std::move(start);
  double prev_obj = std::numeric_limits<double>::infinity();
  PointMatrix prev_pts;
  for (int it = 0; it < cfg.max_iters; ++it) {
    StepOutput out = step_with_objective(cur, data, eps, cfg.threads);
    if (!std::isfinite(out.objective)) throw NumericalError("support points: non-finite objective");
    if (it > 0 && out.objective > prev_obj + 1e-10) {
      // Rounding-level ascent: keep the previous iterate.
      res.points = std::move(prev_pts);
      res.objective = prev_obj;
      res.iters_used = it - 1;
      res.converged = true;
      return res;
    }
    if (it > 0 && relative_change_small(prev_obj, out.objective, cfg.tol, scale)) {
      res.points = std::move(cur);
      res.objective = out.objective;
      res.iters_used = it;
      res.converged = true;
      return res;
    }
    prev_obj = out.objective;
    prev_pts = std::move(cur);
    cur = std::move(out.next);
  }
  res.objective = empirical_energy_objective(cur, data);
  if (res.objective > prev_obj + 1e-10) {
    res.points = std::move(prev_pts);
    res.objective = prev_obj;
    res.iters_used = cfg.max_iters - 1;
  } else {
    res.points = std::move(cur);
    res.iters_used = cfg.max_iters;
  }
  res.converged = false;
  return res;
}

}  // namespace

void SpConfig::validate() const {
  if (max_iters < 1) throw DomainError("SpConfig: max_iters must be >= 1");
  if (!(tol > 0.0)) throw DomainError("SpConfig: tol must be > 0");
  if (!(epsilon > 0.0)) throw DomainError("SpConfig: epsilon must be > 0");
}

std::vector<double> SpResult::points_1d() const {
  return {points.data(), points.data() + points.size()};
}

double empirical_energy_objective(const PointMatrix& candidate, const PointMatrix& data) {
  if (candidate.rows() == 0 || data.rows() == 0)
    throw DomainError("empirical_energy_objective: empty point set");
  if (candidate.cols() != data.cols())
    throw DomainError("empirical_energy_objective: dimension mismatch");
  return 2.0 * mean_cross_distance(candidate, data) - mean_self_distance(candidate);
}

PointMatrix sp_fixed_point_step(const PointMatrix& current, const PointMatrix& data,
                                double epsilon, unsigned threads) {
  if (current.cols() != data.cols()) throw DomainError("sp_fixed_point_step: dimension mismatch");
  return step_with_objective(current, data, epsilon, threads).next;
}

double lower_empirical_quantile(std::span<const double> sorted, double level) {
  const double N = static_cast<double>(sorted.size());
  // Guard against level * N landing a hair above an integer.
  double k = std::ceil(level * N - 1e-9);
  auto idx = static_cast<std::size_t>(std::clamp(k, 1.0, N)) - 1;
  return sorted[idx];
}

SpResult support_points_1d(const EmpiricalSet1D& data, std::size_t n, const SpConfig& cfg) {
  cfg.validate();
  if (n == 0) throw DomainError("support_points_1d: n must be >= 1");
  auto sorted = data.points();
  const std::size_t N = sorted.size();

  PointMatrix init(static_cast<Eigen::Index>(n), 1);
  for (std::size_t i = 0; i < n; ++i) {
    double level = (2.0 * static_cast<double>(i) + 1.0) / (2.0 * static_cast<double>(n));
    init(static_cast<Eigen::Index>(i), 0) = lower_empirical_quantile(sorted, level);
  }
  PointMatrix mat = Eigen::Map<const Vector>(sorted.data(), static_cast<Eigen::Index>(N));

  SpResult res;
  if (data.min() == data.max()) {
    res.points = init;
    res.objective = empirical_energy_objective(init, mat);
    res.converged = true;
  } else {
    double init_obj = empirical_energy_objective(init, mat);
    res = iterate(init, mat, cfg);
    if (res.objective > init_obj) {
      res.points = init;
      res.objective = init_obj;
    }
  }
  std::sort(res.points.data(), res.points.data() + res.points.size());
  if (n > 10 * N) {
    std::ostringstream msg;
    msg << "over-compaction: " << n << " points requested from " << N << " observations";
    res.warnings.push_back(msg.str());
  }
  return res;
}

SpResult support_points_nd(const PointMatrix& data, std::size_t n, const SpConfig& cfg) {
  cfg.validate();
  if (n == 0) throw DomainError("support_points_nd: n must be >= 1");
  if (data.rows() < 2) throw DomainError("support_points_nd: need at least two data rows");
  if (data.cols() < 1) throw DomainError("support_points_nd: zero-dimensional data");
  if (!data.allFinite()) throw DomainError("support_points_nd: NaN or Inf in data");

  const Eigen::Index N = data.rows(), p = data.cols();
  std::mt19937_64 rng(cfg.seed);
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(N));
  std::iota(rows.begin(), rows.end(), Eigen::Index{0});
  std::vector<Eigen::Index> chosen;
  chosen.reserve(n);
  while (chosen.size() < n) {
    std::shuffle(rows.begin(), rows.end(), rng);
    std::size_t take = std::min(n - chosen.size(), rows.size());
    chosen.insert(chosen.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(take));
  }

  // A start exactly on a data row is pinned there by the 1/epsilon weight,
  // so every start is nudged by 1% of the coordinate's spread.
  Vector spread(p);
  for (Eigen::Index q = 0; q < p; ++q) {
    double mean = data.col(q).mean();
    spread(q) = 0.01 * std::sqrt((data.col(q).array() - mean).square().mean());
  }
  std::normal_distribution<double> gauss(0.0, 1.0);
  PointMatrix init(static_cast<Eigen::Index>(n), p);
  for (std::size_t i = 0; i < n; ++i)
    for (Eigen::Index q = 0; q < p; ++q)
      init(static_cast<Eigen::Index>(i), q) = data(chosen[i], q) + spread(q) * gauss(rng);

  return iterate(std::move(init), data, cfg);
}

}  // namespace csp

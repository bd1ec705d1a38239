#include "csp/partitioning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace csp {

std::vector<std::size_t> Partition::sizes() const {
  std::vector<std::size_t> s(cells.size());
  for (std::size_t k = 0; k < cells.size(); ++k) s[k] = cells[k].size();
  return s;
}

std::vector<Interval> Partition::bin_bounds(std::size_t cell) const {
  if (kind != PartitionKind::bins) throw DomainError("bin_bounds: not a bin partition");
  std::vector<Interval> out(bin_edges.size());
  std::size_t rem = cell;
  for (std::size_t q = 0; q < bin_edges.size(); ++q) {
    std::size_t kappa = bin_edges[q].size() - 1;
    std::size_t j = rem % kappa;
    rem /= kappa;
    out[q] = {bin_edges[q][j], bin_edges[q][j + 1]};
  }
  return out;
}

std::size_t choose_K(std::size_t n) {
  if (n == 0) throw DomainError("choose_K: n must be >= 1");
  auto k = static_cast<std::size_t>(std::llround(std::pow(static_cast<double>(n), 0.6)));
  return std::max<std::size_t>(1, k);
}

Partition bin_partition(const PointMatrix& x, std::size_t K_target) {
  if (x.rows() < 1) throw DomainError("bin_partition: no rows");
  if (x.cols() < 1) throw DomainError("bin_partition: zero-dimensional covariates");
  if (K_target < 1) throw DomainError("bin_partition: K_target must be >= 1");
  const auto N = static_cast<std::size_t>(x.rows());
  const auto d = static_cast<std::size_t>(x.cols());
  const auto kappa = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(std::pow(static_cast<double>(K_target),
                                                        1.0 / static_cast<double>(d)))));

  Partition part;
  part.kind = PartitionKind::bins;
  part.bin_edges.resize(d);
  std::size_t K = 1;
  for (std::size_t q = 0; q < d; ++q) {
    const auto col = x.col(static_cast<Eigen::Index>(q));
    double lo = col.minCoeff(), hi = col.maxCoeff();
    std::size_t kq = kappa;
    if (!(hi > lo)) {
      kq = 1;
      part.warnings.push_back("dimension " + std::to_string(q) +
                              " has zero range; using a single interval");
    }
    auto& edges = part.bin_edges[q];
    edges.resize(kq + 1);
    double width = (hi - lo) / static_cast<double>(kq);
    for (std::size_t j = 0; j <= kq; ++j) edges[j] = lo + width * static_cast<double>(j);
    edges[kq] = hi;
    K *= kq;
  }
  part.K = K;
  part.cell_of.resize(N);
  part.cells.assign(K, {});
  for (std::size_t r = 0; r < N; ++r) {
    std::size_t cell = 0, stride = 1;
    for (std::size_t q = 0; q < d; ++q) {
      const auto& edges = part.bin_edges[q];
      double v = x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(q));
      // Interior edges decide membership so bin bounds always contain v;
      // the last interval is right-closed.
      auto j = static_cast<std::size_t>(
          std::upper_bound(edges.begin() + 1, edges.end() - 1, v) - (edges.begin() + 1));
      cell += j * stride;
      stride *= edges.size() - 1;
    }
    part.cell_of[r] = cell;
    part.cells[cell].push_back(r);
  }
  return part;
}

namespace {

double sq_dist(const PointMatrix& a, Eigen::Index i, const PointMatrix& b, Eigen::Index j) {
  return (a.row(i) - b.row(j)).squaredNorm();
}

std::vector<std::size_t> nearest_centers(const PointMatrix& x, const PointMatrix& centers) {
  std::vector<std::size_t> out(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double best = std::numeric_limits<double>::infinity();
    Eigen::Index arg = 0;
    for (Eigen::Index c = 0; c < centers.rows(); ++c) {
      double d = sq_dist(x, r, centers, c);
      if (d < best) {
        best = d;
        arg = c;
      }
    }
    out[static_cast<std::size_t>(r)] = static_cast<std::size_t>(arg);
  }
  return out;
}

}  // namespace

PointMatrix kmeans_centers(const PointMatrix& x, std::size_t K, std::uint64_t seed) {
  const auto N = static_cast<std::size_t>(x.rows());
  if (K < 1) throw DomainError("kmeans_centers: K must be >= 1");
  if (K > N) throw DomainError("kmeans_centers: K exceeds the number of rows");
  const Eigen::Index d = x.cols();

  // k-means++ seeding.
  std::mt19937_64 rng(seed);
  PointMatrix centers(static_cast<Eigen::Index>(K), d);
  std::uniform_int_distribution<std::size_t> first(0, N - 1);
  std::vector<bool> taken(N, false);
  std::size_t r0 = first(rng);
  centers.row(0) = x.row(static_cast<Eigen::Index>(r0));
  taken[r0] = true;
  std::vector<double> dist2(N);
  for (std::size_t r = 0; r < N; ++r) dist2[r] = sq_dist(x, static_cast<Eigen::Index>(r), centers, 0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t k = 1; k < K; ++k) {
    double total = std::accumulate(dist2.begin(), dist2.end(), 0.0);
    std::size_t pick = N;
    if (total > 0.0) {
      double target = unif(rng) * total, acc = 0.0;
      for (std::size_t r = 0; r < N; ++r) {
        acc += dist2[r];
        if (dist2[r] > 0.0 && acc >= target) {
          pick = r;
          break;
        }
      }
      if (pick == N) {
        for (std::size_t r = N; r-- > 0;)
          if (dist2[r] > 0.0) {
            pick = r;
            break;
          }
      }
    } else {
      for (std::size_t r = 0; r < N; ++r)
        if (!taken[r]) {
          pick = r;
          break;
        }
    }
    taken[pick] = true;
    centers.row(static_cast<Eigen::Index>(k)) = x.row(static_cast<Eigen::Index>(pick));
    for (std::size_t r = 0; r < N; ++r)
      dist2[r] = std::min(dist2[r], sq_dist(x, static_cast<Eigen::Index>(r), centers,
                                            static_cast<Eigen::Index>(k)));
  }

  // Lloyd iterations until the assignment stops changing.
  std::vector<std::size_t> assign = nearest_centers(x, centers);
  for (int it = 0; it < 100; ++it) {
    PointMatrix sums = PointMatrix::Zero(static_cast<Eigen::Index>(K), d);
    std::vector<std::size_t> counts(K, 0);
    for (std::size_t r = 0; r < N; ++r) {
      sums.row(static_cast<Eigen::Index>(assign[r])) += x.row(static_cast<Eigen::Index>(r));
      ++counts[assign[r]];
    }
    for (std::size_t k = 0; k < K; ++k)
      if (counts[k] > 0)
        centers.row(static_cast<Eigen::Index>(k)) =
            sums.row(static_cast<Eigen::Index>(k)) / static_cast<double>(counts[k]);
    auto next = nearest_centers(x, centers);
    if (next == assign) break;
    assign = std::move(next);
  }

  // Reorder by first assigned row; centers that own no row go last.
  std::vector<std::size_t> first_row(K, N);
  for (std::size_t r = 0; r < N; ++r) first_row[assign[r]] = std::min(first_row[assign[r]], r);
  std::vector<std::size_t> order(K);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return first_row[a] < first_row[b]; });
  PointMatrix out(static_cast<Eigen::Index>(K), d);
  for (std::size_t k = 0; k < K; ++k)
    out.row(static_cast<Eigen::Index>(k)) = centers.row(static_cast<Eigen::Index>(order[k]));
  return out;
}

PointMatrix sp_centers(const PointMatrix& x, std::size_t K, const SpConfig& cfg) {
  return support_points_nd(x, K, cfg).points;
}

Partition voronoi_partition(const PointMatrix& x, const PointMatrix& centers) {
  if (centers.rows() < 1) throw DomainError("voronoi_partition: no centers");
  if (centers.cols() != x.cols()) throw DomainError("voronoi_partition: dimension mismatch");
  Partition part;
  part.kind = PartitionKind::voronoi;
  part.K = static_cast<std::size_t>(centers.rows());
  part.centers = centers;
  part.cell_of = nearest_centers(x, centers);
  part.cells.assign(part.K, {});
  for (std::size_t r = 0; r < part.cell_of.size(); ++r) part.cells[part.cell_of[r]].push_back(r);
  return part;
}

Partition make_partition(const PointMatrix& x, const PartitionConfig& cfg, const SpConfig& sp_cfg) {
  switch (cfg.strategy) {
    case PartitionStrategy::bins:
      return bin_partition(x, cfg.K_target);
    case PartitionStrategy::voronoi_kmeans: {
      std::size_t K = std::min<std::size_t>(cfg.K_target, static_cast<std::size_t>(x.rows()));
      return voronoi_partition(x, kmeans_centers(x, K, cfg.seed));
    }
    case PartitionStrategy::voronoi_sp: {
      SpConfig c = sp_cfg;
      c.seed = cfg.seed;
      return voronoi_partition(x, sp_centers(x, cfg.K_target, c));
    }
  }
  throw DomainError("make_partition: unknown strategy");
}

const char* to_string(PartitionStrategy s) {
  switch (s) {
    case PartitionStrategy::bins: return "bins";
    case PartitionStrategy::voronoi_kmeans: return "voronoi_kmeans";
    case PartitionStrategy::voronoi_sp: return "voronoi_sp";
  }
  return "unknown";
}

PartitionStrategy parse_partition_strategy(const std::string& s) {
  if (s == "bins") return PartitionStrategy::bins;
  if (s == "voronoi_kmeans" || s == "kmeans") return PartitionStrategy::voronoi_kmeans;
  if (s == "voronoi_sp" || s == "sp") return PartitionStrategy::voronoi_sp;
  throw DomainError("unknown partition strategy '" + s + "'");
}

}  // namespace csp

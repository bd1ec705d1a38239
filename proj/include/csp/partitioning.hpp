#pragma once

// Covariate-space partitions: equal-width bins per dimension, or a
// Voronoi tessellation around k-means or support-point centers.

#include "csp/common.hpp"
#include "csp/support_points.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace csp {

enum class PartitionKind { bins, voronoi };
enum class PartitionStrategy { bins, voronoi_kmeans, voronoi_sp };

struct PartitionConfig {
  PartitionStrategy strategy = PartitionStrategy::bins;
  std::size_t K_target = 1;
  std::uint64_t seed = 0;
};

struct Partition {
  PartitionKind kind = PartitionKind::bins;
  std::size_t K = 1;
  std::vector<std::size_t> cell_of;              // row -> cell
  std::vector<std::vector<std::size_t>> cells;   // cell -> ascending rows
  std::vector<std::vector<double>> bin_edges;    // bins: per dimension, kappa_q + 1 edges
  PointMatrix centers;                           // voronoi: one center per row
  std::vector<std::string> warnings;

  std::vector<std::size_t> sizes() const;
  /// Per-dimension bounds of a bin cell (bins only).
  std::vector<Interval> bin_bounds(std::size_t cell) const;
};

/// round(n^{3/5}), at least 1.
std::size_t choose_K(std::size_t n);

Partition bin_partition(const PointMatrix& x, std::size_t K_target);

/// Lloyd iterations from seeded k-means++ starts; centers are ordered by
/// the lowest row index assigned to them.
PointMatrix kmeans_centers(const PointMatrix& x, std::size_t K, std::uint64_t seed);

PointMatrix sp_centers(const PointMatrix& x, std::size_t K, const SpConfig& cfg);

/// Nearest center in Euclidean distance; ties go to the lower center index.
Partition voronoi_partition(const PointMatrix& x, const PointMatrix& centers);

/// Dispatches on cfg.strategy. `sp_cfg` is only used for voronoi_sp.
Partition make_partition(const PointMatrix& x, const PartitionConfig& cfg,
                         const SpConfig& sp_cfg = {});

const char* to_string(PartitionStrategy s);
PartitionStrategy parse_partition_strategy(const std::string& s);

}  // namespace csp

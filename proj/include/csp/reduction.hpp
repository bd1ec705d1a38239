#pragma once

// Data reduction for density regression: conditional support points
// (per-cell 1D support points coupled to covariates), the marginal
// per-dimension variant, and the uniform / vanilla support point baselines.

#include "csp/common.hpp"
#include "csp/dataset.hpp"
#include "csp/partitioning.hpp"
#include "csp/support_points.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace csp {

enum class ReductionMethod { csp, mcsp, uniform, vanilla_sp };
enum class AllocationMode { proportional, equal };

const char* to_string(ReductionMethod m);
ReductionMethod parse_reduction_method(const std::string& s);
const char* to_string(AllocationMode m);
AllocationMode parse_allocation_mode(const std::string& s);

/// Per-cell point counts.
struct Allocation {
  std::vector<std::size_t> n_k;
  std::size_t total() const;
};

struct ReducedSet {
  PointMatrix x;
  Vector y;
  /// Cell of the partition that produced each pair; -1 for methods that
  /// do not partition. MCSP offsets ids by the cell counts of earlier
  /// dimensions so ids are unique across the whole set.
  std::vector<std::int64_t> cell_id;
  std::vector<std::size_t> coupled_row;
  ReductionMethod method = ReductionMethod::csp;
  std::uint64_t seed = 0;

  // Provenance.
  std::size_t K = 0;
  std::vector<std::size_t> cell_sizes;  // N_k
  Allocation allocation;                // n_k
  std::vector<std::size_t> n_q;         // MCSP per-dimension sizes
  std::vector<std::size_t> K_q;         // MCSP per-dimension cell counts
  double objective_sum = 0.0;           // sum of per-cell energy objectives
  PointMatrix presnap;                  // vanilla SP points before snapping
  std::vector<std::string> warnings;

  std::size_t n() const { return static_cast<std::size_t>(y.size()); }
  std::size_t dims() const { return static_cast<std::size_t>(x.cols()); }
  Dataset as_dataset(const std::vector<std::string>& names = {}, const std::string& response = "y") const;
};

/// Proportional: largest-remainder rounding of n N_k / N over non-empty
/// cells with remainder ties to the lower index. Equal: floor(n / #cells)
/// with leftovers to the lowest-index non-empty cells. Both cap n_k at
/// 10 N_k and hand any excess to cells with spare capacity.
Allocation allocate_sizes(std::span<const std::size_t> N_k, std::size_t n, AllocationMode mode);

/// 1D support points of a cell's responses.
std::vector<double> conditional_support_points_cell(const EmpiricalSet1D& responses, std::size_t n_k,
                                                    const SpConfig& cfg);

/// For each y*, the row (from `cell_rows`) whose response is nearest,
/// ties to the lowest row index. Rows may be reused.
std::vector<std::size_t> couple_covariates(std::span<const double> y_star,
                                           std::span<const std::size_t> cell_rows,
                                           std::span<const double> responses);

struct CspOptions {
  AllocationMode allocation = AllocationMode::proportional;
  unsigned threads = 1;
};

ReducedSet csp_reduce(const Dataset& data, std::size_t n, const PartitionConfig& part_cfg,
                      const SpConfig& sp_cfg, const CspOptions& opts = {});

/// Default per-dimension sizes: n / d with leftovers to the lowest dimensions.
std::vector<std::size_t> default_dimension_allocation(std::size_t n, std::size_t d);

/// part_cfg.K_target is ignored: each dimension uses choose_K(n_q).
ReducedSet mcsp_reduce(const Dataset& data, std::size_t n, std::optional<std::vector<std::size_t>> n_q,
                       const PartitionConfig& part_cfg, const SpConfig& sp_cfg,
                       const CspOptions& opts = {});

ReducedSet uniform_subsample(const Dataset& data, std::size_t n, std::uint64_t seed);

/// Columns mapped to [0, 1] by the reference ranges (constant columns are only shifted).
PointMatrix unit_range_scaled(const PointMatrix& m, const PointMatrix& reference);

/// Support points on the unit-range-scaled joint (x, y) cloud, each
/// snapped to its nearest observed row.
ReducedSet vanilla_sp_reduce(const Dataset& data, std::size_t n, const SpConfig& sp_cfg);

/// Energy distance, per cell, between the responses of the points placed
/// in that cell and the cell's full-data responses. Cells holding no
/// point get NaN.
std::vector<double> per_cell_energy(const Partition& part, std::span<const double> data_y,
                                    std::span<const std::size_t> cell_of_point,
                                    std::span<const double> point_y);

}  // namespace csp

#pragma once

// Reduce, fit and evaluate stages shared by the command line and the
// experiment runner.

#include "csp/density.hpp"
#include "csp/partitioning.hpp"
#include "csp/reduction.hpp"
#include "csp/simgen.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace csp {

struct ReduceSpec {
  ReductionMethod method = ReductionMethod::csp;
  std::size_t n = 0;
  PartitionStrategy strategy = PartitionStrategy::bins;
  /// Defaults to choose_K(n).
  std::optional<std::size_t> K_target;
  AllocationMode allocation = AllocationMode::proportional;
  /// MCSP per-dimension sizes; defaults to an even split.
  std::optional<std::vector<std::size_t>> n_q;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  int sp_max_iters = 500;
};

ReducedSet run_reduction(const Dataset& data, const ReduceSpec& spec);

/// Per-column covariate ranges widened by 1%.
std::vector<Interval> covariate_ranges(const PointMatrix& x);

/// Mean CRPS of a fitted model over a test set, in response units.
double mean_crps(const DensityModel& model, const Dataset& test);

/// One simulated data set split into training and test parts, with the
/// response domain and covariate ranges taken from the full data.
struct Replicate {
  Dataset full;
  Dataset train;
  Dataset test;
  Interval domain;
  std::vector<Interval> x_ranges;
  TruthOracle truth;
};

Replicate prepare_replicate(CaseId c, std::size_t N, std::uint64_t data_seed, std::uint64_t split_seed,
                            double train_fraction = 0.95);

/// Seeds of one replicate; every stage can be re-run from these alone.
struct ReplicateSeeds {
  std::uint64_t data = 0;
  std::uint64_t split = 0;
  std::uint64_t reduce = 0;
  std::uint64_t fit = 0;
};

ReplicateSeeds replicate_seeds(std::uint64_t seed, std::size_t rep, std::size_t n);

struct ExperimentConfig {
  CaseId case_id = CaseId::case1;
  std::size_t N = 20000;
  std::vector<std::size_t> n_grid{32, 100, 316, 1000};
  std::size_t reps = 5;
  std::uint64_t seed = 0;
  std::vector<ReductionMethod> methods{ReductionMethod::csp};
  std::vector<AllocationMode> allocations{AllocationMode::proportional};
  PartitionStrategy strategy = PartitionStrategy::bins;
  /// Basis, mode, lambdas and optimizer; domain and ranges come from the data.
  FitConfig fit;
  double train_fraction = 0.95;
  unsigned threads = 1;
  /// Iteration cap for vanilla support points, whose cost grows with N n.
  int vanilla_max_iters = 50;
  bool with_truth = true;
};

struct ExperimentRow {
  std::string case_name;
  std::string method;
  std::string allocation;
  std::string strategy;
  std::size_t rep = 0;
  std::size_t N = 0;
  std::size_t n = 0;
  std::size_t K = 0;
  double crps = 0.0;
  double truth_crps = 0.0;
  double lambda = 0.0;
  bool converged = false;
  ReplicateSeeds seeds;
  double reduce_seconds = 0.0;
  double fit_seconds = 0.0;
};

/// Runs every (rep, n, method, allocation) combination. Allocation only
/// varies for CSP and MCSP; other methods run once per (rep, n).
std::vector<ExperimentRow> run_experiment(const ExperimentConfig& cfg,
                                          const std::function<void(const ExperimentRow&)>& on_row = {});

void write_experiment_csv(const std::string& path, const std::vector<ExperimentRow>& rows);

}  // namespace csp

#include "csp/reduction.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace csp {

const char* to_string(ReductionMethod m) {
  switch (m) {
    case ReductionMethod::csp: return "csp";
    case ReductionMethod::mcsp: return "mcsp";
    case ReductionMethod::uniform: return "uniform";
    case ReductionMethod::vanilla_sp: return "vanilla_sp";
  }
  return "unknown";
}

ReductionMethod parse_reduction_method(const std::string& s) {
  if (s == "csp") return ReductionMethod::csp;
  if (s == "mcsp") return ReductionMethod::mcsp;
  if (s == "uniform" || s == "unif") return ReductionMethod::uniform;
  if (s == "vanilla_sp" || s == "sp") return ReductionMethod::vanilla_sp;
  throw DomainError("unknown reduction method '" + s + "'");
}

const char* to_string(AllocationMode m) {
  return m == AllocationMode::proportional ? "proportional" : "equal";
}

AllocationMode parse_allocation_mode(const std::string& s) {
  if (s == "proportional") return AllocationMode::proportional;
  if (s == "equal") return AllocationMode::equal;
  throw DomainError("unknown allocation mode '" + s + "'");
}

std::size_t Allocation::total() const {
  return std::accumulate(n_k.begin(), n_k.end(), std::size_t{0});
}

Dataset ReducedSet::as_dataset(const std::vector<std::string>& names, const std::string& response) const {
  Dataset d;
  d.x = x;
  d.y = y;
  d.covariate_names = names.size() == dims() ? names : default_covariate_names(dims());
  d.response_name = response;
  return d;
}

Allocation allocate_sizes(std::span<const std::size_t> N_k, std::size_t n, AllocationMode mode) {
  if (n == 0) throw DomainError("allocate_sizes: n must be >= 1");
  const std::size_t N = std::accumulate(N_k.begin(), N_k.end(), std::size_t{0});
  if (N == 0) throw DomainError("allocate_sizes: every cell is empty");
  const std::size_t K = N_k.size();
  Allocation a;
  a.n_k.assign(K, 0);

  if (mode == AllocationMode::proportional) {
    std::vector<double> rem(K, -1.0);
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < K; ++k) {
      if (N_k[k] == 0) continue;
      double quota = static_cast<double>(n) * static_cast<double>(N_k[k]) / static_cast<double>(N);
      double fl = std::floor(quota);
      a.n_k[k] = static_cast<std::size_t>(fl);
      rem[k] = quota - fl;
      assigned += a.n_k[k];
    }
    std::vector<std::size_t> order;
    for (std::size_t k = 0; k < K; ++k)
      if (N_k[k] > 0) order.push_back(k);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
      // Remainders are compared with a small tolerance so 0.5 vs 0.5
      // computed through different products still counts as a tie.
      if (std::abs(rem[i] - rem[j]) > 1e-12) return rem[i] > rem[j];
      return false;
    });
    for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++a.n_k[order[i % order.size()]];
  } else {
    std::vector<std::size_t> nonempty;
    for (std::size_t k = 0; k < K; ++k)
      if (N_k[k] > 0) nonempty.push_back(k);
    std::size_t share = n / nonempty.size();
    std::size_t left = n - share * nonempty.size();
    for (std::size_t i = 0; i < nonempty.size(); ++i)
      a.n_k[nonempty[i]] = share + (i < left ? 1 : 0);
  }

  // Cap at 10 N_k, moving excess to cells with room in index order.
  std::size_t excess = 0;
  for (std::size_t k = 0; k < K; ++k) {
    std::size_t cap = 10 * N_k[k];
    if (a.n_k[k] > cap) {
      excess += a.n_k[k] - cap;
      a.n_k[k] = cap;
    }
  }
  while (excess > 0) {
    bool moved = false;
    for (std::size_t k = 0; k < K && excess > 0; ++k) {
      if (N_k[k] > 0 && a.n_k[k] < 10 * N_k[k]) {
        ++a.n_k[k];
        --excess;
        moved = true;
      }
    }
    if (!moved) throw DomainError("allocate_sizes: n exceeds 10 N");
  }
  return a;
}

std::vector<double> conditional_support_points_cell(const EmpiricalSet1D& responses, std::size_t n_k,
                                                    const SpConfig& cfg) {
  return support_points_1d(responses, n_k, cfg).points_1d();
}

std::vector<std::size_t> couple_covariates(std::span<const double> y_star,
                                           std::span<const std::size_t> cell_rows,
                                           std::span<const double> responses) {
  if (cell_rows.empty()) throw DomainError("couple_covariates: empty cell");
  std::vector<std::pair<double, std::size_t>> sorted;
  sorted.reserve(cell_rows.size());
  for (std::size_t r : cell_rows) sorted.emplace_back(responses[r], r);
  std::sort(sorted.begin(), sorted.end());

  std::vector<std::size_t> out(y_star.size());
  for (std::size_t j = 0; j < y_star.size(); ++j) {
    const double v = y_star[j];
    auto it = std::lower_bound(sorted.begin(), sorted.end(), v,
                               [](const auto& e, double t) { return e.first < t; });
    std::size_t best = std::numeric_limits<std::size_t>::max();
    double best_d = std::numeric_limits<double>::infinity();
    auto consider = [&](double value, std::size_t row) {
      double d = std::abs(value - v);
      if (d < best_d || (d == best_d && row < best)) {
        best_d = d;
        best = row;
      }
    };
    if (it != sorted.end()) {
      // Entries sharing the value are ordered by row, so the first one wins.
      consider(it->first, it->second);
    }
    if (it != sorted.begin()) {
      double prev_value = std::prev(it)->first;
      auto first_equal = std::lower_bound(sorted.begin(), it, prev_value,
                                          [](const auto& e, double t) { return e.first < t; });
      consider(first_equal->first, first_equal->second);
    }
    out[j] = best;
  }
  return out;
}

namespace {

struct CellOutput {
  std::vector<double> y_star;
  std::vector<std::size_t> rows;
  double objective = 0.0;
  std::vector<std::string> warnings;
};

}  // namespace

ReducedSet csp_reduce(const Dataset& data, std::size_t n, const PartitionConfig& part_cfg,
                      const SpConfig& sp_cfg, const CspOptions& opts) {
  data.validate();
  if (n < 1) throw DomainError("csp_reduce: n must be >= 1");
  if (n > data.rows()) throw DomainError("csp_reduce: n exceeds the number of rows");
  sp_cfg.validate();

  Partition part = make_partition(data.x, part_cfg, sp_cfg);
  ReducedSet out;
  out.method = ReductionMethod::csp;
  out.seed = sp_cfg.seed;
  out.K = part.K;
  out.cell_sizes = part.sizes();
  out.allocation = allocate_sizes(out.cell_sizes, n, opts.allocation);
  out.warnings = part.warnings;

  const auto responses = data.responses();
  std::vector<CellOutput> cells(part.K);
  parallel_for(part.K, opts.threads, [&](std::size_t k) {
    const std::size_t nk = out.allocation.n_k[k];
    if (nk == 0) return;
    const auto& rows = part.cells[k];
    std::vector<double> ys(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) ys[i] = responses[rows[i]];
    SpConfig cfg = sp_cfg;
    cfg.seed = derive_seed(sp_cfg.seed, k);
    cfg.threads = 1;
    SpResult sp = support_points_1d(EmpiricalSet1D(std::move(ys)), nk, cfg);
    CellOutput& c = cells[k];
    c.y_star = sp.points_1d();
    c.rows = couple_covariates(c.y_star, rows, responses);
    c.objective = sp.objective;
    for (auto& w : sp.warnings) c.warnings.push_back("cell " + std::to_string(k) + ": " + w);
    if (nk > rows.size())
      c.warnings.push_back("cell " + std::to_string(k) + ": " + std::to_string(nk) +
                           " points from " + std::to_string(rows.size()) +
                           " responses; quantile grid repeats observed values");
  });

  out.x.resize(static_cast<Eigen::Index>(n), data.x.cols());
  out.y.resize(static_cast<Eigen::Index>(n));
  out.cell_id.reserve(n);
  out.coupled_row.reserve(n);
  Eigen::Index at = 0;
  for (std::size_t k = 0; k < part.K; ++k) {
    const CellOutput& c = cells[k];
    for (std::size_t j = 0; j < c.y_star.size(); ++j, ++at) {
      out.x.row(at) = data.x.row(static_cast<Eigen::Index>(c.rows[j]));
      out.y(at) = c.y_star[j];
      out.cell_id.push_back(static_cast<std::int64_t>(k));
      out.coupled_row.push_back(c.rows[j]);
    }
    out.objective_sum += c.objective;
    out.warnings.insert(out.warnings.end(), c.warnings.begin(), c.warnings.end());
  }
  return out;
}

std::vector<std::size_t> default_dimension_allocation(std::size_t n, std::size_t d) {
  if (d == 0) throw DomainError("default_dimension_allocation: d must be >= 1");
  std::vector<std::size_t> n_q(d, n / d);
  for (std::size_t q = 0; q < n % d; ++q) ++n_q[q];
  return n_q;
}

ReducedSet mcsp_reduce(const Dataset& data, std::size_t n, std::optional<std::vector<std::size_t>> n_q,
                       const PartitionConfig& part_cfg, const SpConfig& sp_cfg, const CspOptions& opts) {
  data.validate();
  const std::size_t d = data.dims();
  std::vector<std::size_t> sizes = n_q ? *n_q : default_dimension_allocation(n, d);
  if (sizes.size() != d) throw DomainError("mcsp_reduce: need one size per covariate dimension");
  if (std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}) != n)
    throw DomainError("mcsp_reduce: per-dimension sizes must sum to n");
  if (n > data.rows()) throw DomainError("mcsp_reduce: n exceeds the number of rows");

  ReducedSet out;
  out.method = ReductionMethod::mcsp;
  out.seed = sp_cfg.seed;
  out.n_q = sizes;
  out.x.resize(static_cast<Eigen::Index>(n), data.x.cols());
  out.y.resize(static_cast<Eigen::Index>(n));
  Eigen::Index at = 0;
  std::int64_t cell_offset = 0;
  for (std::size_t q = 0; q < d; ++q) {
    if (sizes[q] == 0) {
      out.K_q.push_back(0);
      continue;
    }
    PartitionConfig pc = part_cfg;
    pc.K_target = choose_K(sizes[q]);
    ReducedSet part = csp_reduce(data.column(q), sizes[q], pc, sp_cfg, opts);
    out.K_q.push_back(part.K);
    for (std::size_t j = 0; j < part.n(); ++j, ++at) {
      out.x.row(at) = data.x.row(static_cast<Eigen::Index>(part.coupled_row[j]));
      out.y(at) = part.y(static_cast<Eigen::Index>(j));
      out.cell_id.push_back(cell_offset + part.cell_id[j]);
      out.coupled_row.push_back(part.coupled_row[j]);
    }
    cell_offset += static_cast<std::int64_t>(part.K);
    out.K += part.K;
    out.cell_sizes.insert(out.cell_sizes.end(), part.cell_sizes.begin(), part.cell_sizes.end());
    out.allocation.n_k.insert(out.allocation.n_k.end(), part.allocation.n_k.begin(),
                              part.allocation.n_k.end());
    out.objective_sum += part.objective_sum;
    for (auto& w : part.warnings) out.warnings.push_back("dimension " + std::to_string(q) + ": " + w);
  }
  return out;
}

ReducedSet uniform_subsample(const Dataset& data, std::size_t n, std::uint64_t seed) {
  data.validate();
  if (n < 1 || n > data.rows()) throw DomainError("uniform_subsample: need 1 <= n <= N");
  std::vector<std::size_t> idx(data.rows());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(n);

  ReducedSet out;
  out.method = ReductionMethod::uniform;
  out.seed = seed;
  Dataset sub = data.subset(idx);
  out.x = std::move(sub.x);
  out.y = std::move(sub.y);
  out.cell_id.assign(n, -1);
  out.coupled_row = std::move(idx);
  return out;
}

PointMatrix unit_range_scaled(const PointMatrix& m, const PointMatrix& reference) {
  PointMatrix out(m.rows(), m.cols());
  for (Eigen::Index q = 0; q < m.cols(); ++q) {
    double lo = reference.col(q).minCoeff(), hi = reference.col(q).maxCoeff();
    double scale = hi > lo ? hi - lo : 1.0;
    out.col(q) = (m.col(q).array() - lo) / scale;
  }
  return out;
}

ReducedSet vanilla_sp_reduce(const Dataset& data, std::size_t n, const SpConfig& sp_cfg) {
  data.validate();
  if (n < 1 || n > data.rows()) throw DomainError("vanilla_sp_reduce: need 1 <= n <= N");
  const PointMatrix joint = data.joint();
  const PointMatrix scaled = unit_range_scaled(joint, joint);
  SpResult sp = support_points_nd(scaled, n, sp_cfg);

  ReducedSet out;
  out.method = ReductionMethod::vanilla_sp;
  out.seed = sp_cfg.seed;
  out.objective_sum = sp.objective;
  out.warnings = sp.warnings;
  out.x.resize(static_cast<Eigen::Index>(n), data.x.cols());
  out.y.resize(static_cast<Eigen::Index>(n));
  out.presnap.resize(static_cast<Eigen::Index>(n), joint.cols());
  out.cell_id.assign(n, -1);
  out.coupled_row.resize(n);

  std::vector<std::size_t> snapped(n);
  parallel_for(n, sp_cfg.threads, [&](std::size_t j) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (Eigen::Index r = 0; r < scaled.rows(); ++r) {
      double d = (scaled.row(r) - sp.points.row(static_cast<Eigen::Index>(j))).squaredNorm();
      if (d < best) {
        best = d;
        arg = static_cast<std::size_t>(r);
      }
    }
    snapped[j] = arg;
  });
  for (Eigen::Index q = 0; q < joint.cols(); ++q) {
    double lo = joint.col(q).minCoeff(), hi = joint.col(q).maxCoeff();
    double scale = hi > lo ? hi - lo : 1.0;
    out.presnap.col(q) = sp.points.col(q).array() * scale + lo;
  }
  for (std::size_t j = 0; j < n; ++j) {
    auto r = static_cast<Eigen::Index>(snapped[j]);
    out.x.row(static_cast<Eigen::Index>(j)) = data.x.row(r);
    out.y(static_cast<Eigen::Index>(j)) = data.y(r);
    out.coupled_row[j] = snapped[j];
  }
  return out;
}

std::vector<double> per_cell_energy(const Partition& part, std::span<const double> data_y,
                                    std::span<const std::size_t> cell_of_point,
                                    std::span<const double> point_y) {
  std::vector<std::vector<double>> grouped(part.K);
  for (std::size_t j = 0; j < point_y.size(); ++j) grouped[cell_of_point[j]].push_back(point_y[j]);
  std::vector<double> out(part.K, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t k = 0; k < part.K; ++k) {
    if (grouped[k].empty() || part.cells[k].empty()) continue;
    std::vector<double> ys;
    ys.reserve(part.cells[k].size());
    for (std::size_t r : part.cells[k]) ys.push_back(data_y[r]);
    out[k] = energy_distance_empirical(grouped[k], ys);
  }
  return out;
}

}  // namespace csp

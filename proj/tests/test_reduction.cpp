#include "csp/reduction.hpp"
#include "csp/simgen.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>

#include <boost/math/distributions/chi_squared.hpp>

using namespace csp;

namespace {

Dataset independent_uniform(std::size_t N, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Dataset ds;
  ds.x.resize(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(d));
  ds.y.resize(static_cast<Eigen::Index>(N));
  for (Eigen::Index i = 0; i < ds.x.size(); ++i) ds.x.data()[i] = u(rng);
  for (Eigen::Index i = 0; i < ds.y.size(); ++i) ds.y[i] = u(rng);
  ds.covariate_names = default_covariate_names(d);
  return ds;
}

PartitionConfig bins(std::size_t K) { return {PartitionStrategy::bins, K, 0}; }

}  // namespace

TEST(Allocation, Examples) {
  const auto p = [](std::vector<std::size_t> Nk, std::size_t n) {
    return allocate_sizes(Nk, n, AllocationMode::proportional).n_k;
  };
  EXPECT_EQ(p({500, 500}, 10), (std::vector<std::size_t>{5, 5}));
  EXPECT_EQ(p({700, 300}, 10), (std::vector<std::size_t>{7, 3}));
  EXPECT_EQ(p({650, 350}, 10), (std::vector<std::size_t>{7, 3}));
}

TEST(Allocation, EqualModeAndEmptyCells) {
  const auto a = allocate_sizes(std::vector<std::size_t>{900, 0, 100, 50}, 10, AllocationMode::equal);
  EXPECT_EQ(a.n_k, (std::vector<std::size_t>{4, 0, 3, 3}));
  EXPECT_EQ(a.total(), 10u);
  const auto b = allocate_sizes(std::vector<std::size_t>{1, 0, 99}, 30, AllocationMode::equal);
  EXPECT_EQ(b.total(), 30u);
  EXPECT_LE(b.n_k[0], 10u);
  EXPECT_EQ(b.n_k[1], 0u);
}

TEST(CellSupportPoints, Examples) {
  const auto same = conditional_support_points_cell(EmpiricalSet1D(std::vector<double>(9, 0.4)), 3, {});
  EXPECT_EQ(same, (std::vector<double>{0.4, 0.4, 0.4}));

  const auto med = conditional_support_points_cell(EmpiricalSet1D({0.0, 0.2, 0.5, 0.8, 1.0}), 1, {});
  EXPECT_NEAR(med[0], 0.5, 1e-6);

  // Exhaustive grid over pairs.
  const std::vector<double> cell{0.05, 0.3, 0.35, 0.6, 0.95};
  PointMatrix data(5, 1);
  for (int i = 0; i < 5; ++i) data(i, 0) = cell[static_cast<std::size_t>(i)];
  double best = INFINITY, ba = 0, bb = 0;
  for (int i = 0; i <= 1000; ++i)
    for (int j = i; j <= 1000; ++j) {
      PointMatrix c(2, 1);
      c << i / 1000.0, j / 1000.0;
      const double v = empirical_energy_objective(c, data);
      if (v < best) best = v, ba = i / 1000.0, bb = j / 1000.0;
    }
  const auto pts = conditional_support_points_cell(EmpiricalSet1D(cell), 2, {});
  EXPECT_NEAR(pts[0], ba, 1e-3);
  EXPECT_NEAR(pts[1], bb, 1e-3);
}

TEST(Coupling, Examples) {
  const std::vector<double> responses{0.0, 0.9, 0.2, 1.0, 0.0, 0.5, 0.5, 0.0};
  const std::vector<std::size_t> rows{3, 7, 2};
  EXPECT_EQ(couple_covariates(std::vector<double>{0.2}, rows, responses), std::vector<std::size_t>{2});
  // Responses 1 and 0 at rows 3 and 7 tie for 0.5.
  const std::vector<std::size_t> tie{7, 3};
  EXPECT_EQ(couple_covariates(std::vector<double>{0.5}, tie, responses), std::vector<std::size_t>{3});

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> ys(200);
  for (auto& v : ys) v = u(rng);
  std::vector<std::size_t> all(200);
  for (std::size_t i = 0; i < 200; ++i) all[i] = i;
  std::vector<double> star(50);
  for (auto& v : star) v = u(rng);
  const auto c = couple_covariates(star, all, ys);
  for (std::size_t j = 0; j < star.size(); ++j)
    for (double y : ys) EXPECT_LE(std::abs(star[j] - ys[c[j]]), std::abs(star[j] - y));
}

TEST(Csp, SingleCellEqualsOneDimensionalSupportPoints) {
  const Dataset d = independent_uniform(3000, 2, 2);
  const ReducedSet r = csp_reduce(d, 20, bins(1), {});
  auto ys = std::vector<double>(r.y.data(), r.y.data() + r.y.size());
  std::sort(ys.begin(), ys.end());
  const auto sp = support_points_1d(EmpiricalSet1D({d.y.data(), d.y.data() + d.y.size()}), 20, {}).points_1d();
  ASSERT_EQ(ys.size(), sp.size());
  for (std::size_t i = 0; i < sp.size(); ++i) EXPECT_DOUBLE_EQ(ys[i], sp[i]);
}

TEST(Csp, IndependentResponsesTwoHalves) {
  Dataset d = independent_uniform(20000, 1, 3);
  const ReducedSet r = csp_reduce(d, 4, bins(2), {});
  ASSERT_EQ(r.n(), 4u);
  std::map<std::int64_t, std::vector<double>> by_cell;
  for (std::size_t i = 0; i < 4; ++i) by_cell[r.cell_id[i]].push_back(r.y[static_cast<Eigen::Index>(i)]);
  ASSERT_EQ(by_cell.size(), 2u);
  for (auto& [k, v] : by_cell) {
    std::sort(v.begin(), v.end());
    EXPECT_NEAR(v[0], 0.25, 0.02);
    EXPECT_NEAR(v[1], 0.75, 0.02);
  }
}

TEST(Csp, CouplingIsConsistentAndSizesExact) {
  const Dataset d = generate({CaseId::case3, 5000, 4}).data;
  for (auto s : {PartitionStrategy::bins, PartitionStrategy::voronoi_kmeans, PartitionStrategy::voronoi_sp}) {
    const ReducedSet r = csp_reduce(d, 137, {s, choose_K(137), 5}, {});
    ASSERT_EQ(r.n(), 137u);
    for (std::size_t i = 0; i < r.n(); ++i) {
      const auto row = static_cast<Eigen::Index>(r.coupled_row[i]);
      EXPECT_TRUE(r.x.row(static_cast<Eigen::Index>(i)) == d.x.row(row));
    }
  }
}

TEST(Csp, ParallelEqualsSerial) {
  const Dataset d = generate({CaseId::case2, 8000, 5}).data;
  CspOptions serial{AllocationMode::proportional, 1}, parallel{AllocationMode::proportional, 4};
  const ReducedSet a = csp_reduce(d, 300, bins(choose_K(300)), {}, serial);
  const ReducedSet b = csp_reduce(d, 300, bins(choose_K(300)), {}, parallel);
  EXPECT_TRUE(a.x == b.x);
  EXPECT_TRUE(a.y == b.y);
  EXPECT_EQ(a.cell_id, b.cell_id);
}

TEST(Csp, ObjectiveNotWorseThanUniformPerCell) {
  for (CaseId c : {CaseId::case1, CaseId::case2, CaseId::case3, CaseId::case4, CaseId::case5, CaseId::case6}) {
    const Dataset d = generate({c, 6000, 6}).data;
    for (std::size_t n : {100u, 500u}) {
      const Partition part = bin_partition(d.x, choose_K(n));
      const ReducedSet r = csp_reduce(d, n, bins(choose_K(n)), {});
      const ReducedSet u = uniform_subsample(d, n, 7);
      // Group the uniform subsample by the same partition.
      std::vector<std::size_t> cell_u(u.n());
      for (std::size_t i = 0; i < u.n(); ++i) cell_u[i] = part.cell_of[u.coupled_row[i]];
      std::vector<std::size_t> cell_r(r.n());
      for (std::size_t i = 0; i < r.n(); ++i) cell_r[i] = static_cast<std::size_t>(r.cell_id[i]);
      const std::span<const double> dy(d.y.data(), static_cast<std::size_t>(d.y.size()));
      const auto er = per_cell_energy(part, dy, cell_r, {r.y.data(), r.n()});
      const auto eu = per_cell_energy(part, dy, cell_u, {u.y.data(), u.n()});
      double sr = 0, su = 0;
      for (std::size_t k = 0; k < part.K; ++k) {
        // Compare on cells both methods populate.
        if (std::isnan(er[k]) || std::isnan(eu[k])) continue;
        sr += er[k], su += eu[k];
      }
      EXPECT_LE(sr, su) << to_string(c) << " n=" << n;
    }
  }
}

TEST(Mcsp, OneDimensionMatchesCsp) {
  const Dataset d = independent_uniform(4000, 1, 8);
  const ReducedSet a = csp_reduce(d, 60, bins(choose_K(60)), {});
  const ReducedSet b = mcsp_reduce(d, 60, std::nullopt, bins(1), {});
  EXPECT_TRUE(a.x == b.x);
  EXPECT_TRUE(a.y == b.y);
}

TEST(Mcsp, DefaultAllocation) {
  EXPECT_EQ(default_dimension_allocation(10, 3), (std::vector<std::size_t>{4, 3, 3}));
  EXPECT_EQ(default_dimension_allocation(500, 3), (std::vector<std::size_t>{167, 167, 166}));
  const Dataset d = generate({CaseId::case4, 3000, 9}).data;
  const ReducedSet r = mcsp_reduce(d, 500, std::nullopt, bins(1), {});
  EXPECT_EQ(r.n(), 500u);
  EXPECT_EQ(r.n_q, (std::vector<std::size_t>{167, 167, 166}));
  EXPECT_THROW(mcsp_reduce(d, 500, std::vector<std::size_t>{100, 100}, bins(1), {}), DomainError);
}

TEST(Uniform, FullSizeIsPermutation) {
  const Dataset d = independent_uniform(50, 2, 10);
  const ReducedSet r = uniform_subsample(d, 50, 1);
  auto rows = r.coupled_row;
  std::sort(rows.begin(), rows.end());
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(rows[i], i);
  const ReducedSet again = uniform_subsample(d, 50, 1);
  EXPECT_EQ(r.coupled_row, again.coupled_row);
}

TEST(Uniform, RowsAreUniform) {
  const Dataset d = independent_uniform(10, 1, 11);
  std::vector<double> counts(10, 0.0);
  for (std::uint64_t s = 0; s < 10000; ++s) counts[uniform_subsample(d, 1, s).coupled_row[0]] += 1.0;
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - 1000.0) * (c - 1000.0) / 1000.0;
  const double p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(9), chi2));
  EXPECT_GT(p, 0.001);
}

TEST(VanillaSp, Examples) {
  Dataset d = independent_uniform(201, 1, 12);
  for (Eigen::Index i = 0; i < 100; ++i) {
    d.x(100 + i, 0) = 1.0 - d.x(i, 0);
    d.y[100 + i] = 1.0 - d.y[i];
  }
  d.x(200, 0) = 0.5;
  d.y[200] = 0.5;
  const ReducedSet one = vanilla_sp_reduce(d, 1, {});
  EXPECT_EQ(one.coupled_row[0], 200u);

  const Dataset g = generate({CaseId::case1, 3000, 13}).data;
  SpConfig cfg;
  cfg.seed = 4;
  const ReducedSet v = vanilla_sp_reduce(g, 60, cfg);
  const ReducedSet u = uniform_subsample(g, 60, 4);
  const PointMatrix joint = g.joint();
  const PointMatrix scaled = unit_range_scaled(joint, joint);
  PointMatrix u_joint(60, 3);
  for (Eigen::Index i = 0; i < 60; ++i) u_joint.row(i) = scaled.row(static_cast<Eigen::Index>(u.coupled_row[static_cast<std::size_t>(i)]));
  EXPECT_LE(energy_distance_empirical(unit_range_scaled(v.presnap, joint), scaled), energy_distance_empirical(u_joint, scaled));

  const ReducedSet again = vanilla_sp_reduce(g, 60, cfg);
  EXPECT_EQ(v.coupled_row, again.coupled_row);
}

TEST(Reduction, RejectsOversizedRequests) {
  const Dataset d = independent_uniform(10, 1, 14);
  EXPECT_THROW(uniform_subsample(d, 11, 0), DomainError);
  EXPECT_THROW(csp_reduce(d, 0, bins(1), {}), DomainError);
}

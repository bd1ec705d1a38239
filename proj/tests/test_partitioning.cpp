#include "csp/io.hpp"
#include "csp/partitioning.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace csp;

namespace {

PointMatrix normal_cloud(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  PointMatrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

void expect_cover(const Partition& p, std::size_t N) {
  ASSERT_EQ(p.cell_of.size(), N);
  std::vector<int> seen(N, 0);
  std::size_t total = 0;
  for (std::size_t k = 0; k < p.cells.size(); ++k) {
    total += p.cells[k].size();
    for (std::size_t r : p.cells[k]) {
      ++seen[r];
      EXPECT_EQ(p.cell_of[r], k);
    }
  }
  EXPECT_EQ(total, N);
  for (int s : seen) EXPECT_EQ(s, 1);
}

}  // namespace

TEST(ChooseK, Examples) {
  EXPECT_EQ(choose_K(1), 1u);
  EXPECT_EQ(choose_K(100), 16u);
  EXPECT_EQ(choose_K(100000), 1000u);
}

TEST(BinPartition, Examples) {
  const PointMatrix x = normal_cloud(50, 2, 1);
  const Partition one = bin_partition(x, 1);
  EXPECT_EQ(one.K, 1u);
  EXPECT_EQ(one.cells[0].size(), 50u);

  PointMatrix x1(4, 1);
  x1 << 0, 0.4, 0.6, 1;
  const Partition two = bin_partition(x1, 2);
  ASSERT_EQ(two.K, 2u);
  EXPECT_EQ(two.cells[0], (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(two.cells[1], (std::vector<std::size_t>{2, 3}));

  EXPECT_EQ(bin_partition(x, 16).K, 16u);
}

TEST(BinPartition, CoverAndBounds) {
  const PointMatrix x = normal_cloud(2000, 3, 2);
  const Partition p = bin_partition(x, 27);
  expect_cover(p, 2000);
  for (std::size_t k = 0; k < p.K; ++k) {
    const auto b = p.bin_bounds(k);
    for (std::size_t r : p.cells[k])
      for (std::size_t q = 0; q < 3; ++q) {
        EXPECT_GE(x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(q)), b[q].lo);
        EXPECT_LE(x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(q)), b[q].hi);
      }
  }
}

TEST(KMeans, Examples) {
  const PointMatrix x = normal_cloud(300, 2, 3);
  const PointMatrix c1 = kmeans_centers(x, 1, 0);
  EXPECT_NEAR(c1(0, 0), x.col(0).mean(), 1e-12);
  EXPECT_NEAR(c1(0, 1), x.col(1).mean(), 1e-12);

  const PointMatrix small = normal_cloud(6, 2, 4);
  PointMatrix cN = kmeans_centers(small, 6, 0);
  for (Eigen::Index i = 0; i < 6; ++i) {
    bool found = false;
    for (Eigen::Index j = 0; j < 6; ++j) found |= (cN.row(j) - small.row(i)).norm() < 1e-12;
    EXPECT_TRUE(found);
  }

  PointMatrix blobs = normal_cloud(1000, 2, 5) * 0.3;
  blobs.topRows(500).rowwise() += Eigen::RowVector2d(-5, 0);
  blobs.bottomRows(500).rowwise() += Eigen::RowVector2d(5, 2);
  PointMatrix c2 = kmeans_centers(blobs, 2, 9);
  if (c2(0, 0) > c2(1, 0)) c2.row(0).swap(c2.row(1));
  EXPECT_NEAR(c2(0, 0), -5, 0.1);
  EXPECT_NEAR(c2(0, 1), 0, 0.1);
  EXPECT_NEAR(c2(1, 0), 5, 0.1);
  EXPECT_NEAR(c2(1, 1), 2, 0.1);
}

TEST(SpCenters, Examples) {
  PointMatrix x = normal_cloud(300, 2, 6);
  PointMatrix sym(600, 2);
  sym << x, -x;
  const PointMatrix c = sp_centers(sym, 1, {});
  EXPECT_NEAR(c(0, 0), 0.0, 1e-2);
  EXPECT_NEAR(c(0, 1), 0.0, 1e-2);

  const PointMatrix data = normal_cloud(3000, 2, 7);
  SpConfig cfg;
  cfg.seed = 1;
  EXPECT_LE(empirical_energy_objective(sp_centers(data, 20, cfg), data),
            empirical_energy_objective(kmeans_centers(data, 20, 1), data));

  PointMatrix rep = PointMatrix::Constant(40, 2, 0.7);
  const PointMatrix cr = sp_centers(rep, 3, {});
  EXPECT_NEAR((cr.array() - 0.7).abs().maxCoeff(), 0.0, 1e-9);
}

TEST(Voronoi, Examples) {
  const PointMatrix x = normal_cloud(40, 2, 8);
  PointMatrix one(1, 2);
  one << 0.1, 0.2;
  EXPECT_EQ(voronoi_partition(x, one).cells[0].size(), 40u);

  PointMatrix c(2, 1), x1(2, 1);
  c << 0, 1;
  x1 << 0.1, 0.9;
  const Partition p = voronoi_partition(x1, c);
  EXPECT_EQ(p.cells[0], std::vector<std::size_t>{0});
  EXPECT_EQ(p.cells[1], std::vector<std::size_t>{1});

  PointMatrix centers(6, 1), xt(1, 1);
  centers << 10, 11, -1, 12, 13, 1;
  xt << 0.0;
  EXPECT_EQ(voronoi_partition(xt, centers).cell_of[0], 2u);
}

TEST(Voronoi, NearestCenterConsistency) {
  const PointMatrix x = normal_cloud(1500, 2, 9);
  const PointMatrix c = kmeans_centers(x, 12, 2);
  const Partition p = voronoi_partition(x, c);
  expect_cover(p, 1500);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double own = (x.row(r) - c.row(static_cast<Eigen::Index>(p.cell_of[static_cast<std::size_t>(r)]))).norm();
    for (Eigen::Index l = 0; l < c.rows(); ++l) EXPECT_LE(own, (x.row(r) - c.row(l)).norm() + 1e-12);
  }
}

TEST(MakePartition, DeterministicUnderSeed) {
  const PointMatrix x = normal_cloud(1200, 2, 10);
  for (auto s : {PartitionStrategy::bins, PartitionStrategy::voronoi_kmeans, PartitionStrategy::voronoi_sp}) {
    PartitionConfig cfg{s, 9, 42};
    const Partition a = make_partition(x, cfg), b = make_partition(x, cfg);
    EXPECT_EQ(a.cell_of, b.cell_of);
    expect_cover(a, 1200);
  }
}

TEST(MakePartition, JsonDocument) {
  const PointMatrix x = normal_cloud(100, 2, 11);
  const Json j = partition_to_json(make_partition(x, {PartitionStrategy::bins, 4, 0}));
  EXPECT_EQ(j["kind"], "bins");
  EXPECT_EQ(j["bin_edges"].size(), 2u);
  std::size_t total = 0;
  for (const auto& s : j["cell_sizes"]) total += s.get<std::size_t>();
  EXPECT_EQ(total, 100u);
  const Json v = partition_to_json(make_partition(x, {PartitionStrategy::voronoi_kmeans, 5, 0}));
  EXPECT_EQ(v["kind"], "voronoi");
  EXPECT_EQ(v["centers"].size(), 5u);
}

TEST(Strategy, ParseRoundTrip) {
  for (auto s : {PartitionStrategy::bins, PartitionStrategy::voronoi_kmeans, PartitionStrategy::voronoi_sp})
    EXPECT_EQ(parse_partition_strategy(to_string(s)), s);
  EXPECT_THROW(parse_partition_strategy("grid"), DomainError);
}

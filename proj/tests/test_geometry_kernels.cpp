#include "pdssl/geometry_kernels.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

using namespace pdssl;

namespace {

PointCloud cloud(std::initializer_list<Vec3> pts) { return PointCloud(std::vector<Vec3>(pts)); }

// Exhaustive optimum over all bijections (n <= 8).
double brute_emd(const PointCloud& p, const PointCloud& q) {
  std::vector<std::size_t> perm(p.size());
  std::iota(perm.begin(), perm.end(), 0);
  double best = 1e300;
  do best = std::min(best, assignment_cost(p, q, perm));
  while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

double spanning_total(const std::vector<Edge>& edges) {
  double t = 0;
  for (const auto& e : edges) t += e.length;
  return t;
}

}  // namespace

TEST(EmdExact, IdentityAndPermutation) {
  const PointCloud p = test::random_cloud(40, 1);
  const Assignment a = emd_exact(p, p);
  EXPECT_NEAR(a.cost, 0.0, 1e-12);
  PointCloud q = p;
  std::mt19937_64 rng(1);
  std::shuffle(q.points.begin(), q.points.end(), rng);
  EXPECT_NEAR(emd_exact(p, q).cost, 0.0, 1e-12);
}

TEST(EmdExact, TwoPointExample) {
  const auto p = cloud({{0, 0, 0}, {0, 1, 0}});
  const auto q = cloud({{1, 0, 0}, {1, 1, 0}});
  const Assignment a = emd_exact(p, q);
  EXPECT_NEAR(a.cost, 1.0, 1e-12);
  EXPECT_EQ(a.mapping, (std::vector<std::size_t>{0, 1}));
}

TEST(EmdExact, MatchesEnumeration) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const PointCloud p = test::random_cloud(7, 100 + s), q = test::random_cloud(7, 200 + s);
    const Assignment a = emd_exact(p, q);
    EXPECT_NEAR(a.cost, brute_emd(p, q), 1e-12);
    EXPECT_NEAR(a.cost, assignment_cost(p, q, a.mapping), 1e-12);
  }
}

TEST(EmdExact, SizeMismatch) {
  EXPECT_THROW(emd_exact(test::random_cloud(3, 1), test::random_cloud(4, 1)), Error);
  EXPECT_THROW(emd_auction(test::random_cloud(3, 1), test::random_cloud(4, 1)), Error);
}

TEST(EmdAuction, AgreesWithHungarian) {
  for (std::uint64_t s = 0; s < 100; ++s) {
    const PointCloud p = test::random_cloud(32, 1000 + s), q = test::random_cloud(32, 2000 + s);
    const double exact = emd_exact(p, q).cost;
    const Assignment a = emd_auction(p, q);
    std::vector<std::size_t> sorted = a.mapping;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) ASSERT_EQ(sorted[i], i);
    EXPECT_LE(std::abs(a.cost - exact) / exact, 0.01) << "pair " << s;
    EXPECT_GE(a.cost, exact - 1e-12);
  }
}

TEST(EmdAuction, IdenticalCloudsAndTwoPoint) {
  const PointCloud p = test::random_cloud(64, 4);
  AuctionParams params;
  params.eps_final = 1e-6;
  EXPECT_LE(emd_auction(p, p, params).cost, 1e-6);
  const auto a = cloud({{0, 0, 0}, {0, 1, 0}});
  const auto b = cloud({{1, 0, 0}, {1, 1, 0}});
  EXPECT_NEAR(emd_auction(a, b, params).cost, 1.0, 2 * params.eps_final);
}

TEST(EmdAuction, StallsWithTinyBudget) {
  AuctionParams params;
  params.max_rounds = 1;
  try {
    emd_auction(test::random_cloud(64, 1), test::random_cloud(64, 2), params);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("auction stalled"), std::string::npos);
  }
}

TEST(EmdGradient, Examples) {
  const PointCloud p = test::random_cloud(10, 3);
  for (const auto& g : emd_gradient(p, p, emd_exact(p, p))) EXPECT_EQ(g, Vec3::Zero());
  const auto a = cloud({{1, 0, 0}});
  const auto b = cloud({{0, 0, 0}});
  const auto g = emd_gradient(a, b, emd_exact(a, b));
  EXPECT_TRUE(g[0].isApprox(Vec3(1, 0, 0)));
}

TEST(EmdGradient, FiniteDifferences) {
  const PointCloud p = test::random_cloud(12, 5), q = test::random_cloud(12, 6);
  const Assignment a = emd_exact(p, q);
  const auto g = emd_gradient(p, q, a);
  const double h = 1e-6;
  for (std::size_t i = 0; i < p.size(); ++i)
    for (int d = 0; d < 3; ++d) {
      PointCloud plus = p, minus = p;
      plus[i][d] += h;
      minus[i][d] -= h;
      const double fd = (assignment_cost(plus, q, a.mapping) - assignment_cost(minus, q, a.mapping)) / (2 * h);
      EXPECT_NEAR(g[i][d], fd, 1e-7);
    }
}

TEST(Chamfer, Examples) {
  const PointCloud p = test::random_cloud(20, 1);
  EXPECT_EQ(chamfer_distance(p, p), 0.0);
  EXPECT_NEAR(chamfer_distance(cloud({{0, 0, 0}}), cloud({{1, 0, 0}, {3, 0, 0}})), 3.0, 1e-12);
}

TEST(Mst, Examples) {
  const auto line = minimum_spanning_tree(cloud({{0, 0, 0}, {1, 0, 0}, {3, 0, 0}}));
  ASSERT_EQ(line.size(), 2u);
  EXPECT_EQ(line[0].a, 0u);
  EXPECT_EQ(line[0].b, 1u);
  EXPECT_EQ(line[1].a, 1u);
  EXPECT_EQ(line[1].b, 2u);
  EXPECT_NEAR(spanning_total(line), 3.0, 1e-12);

  const auto two = minimum_spanning_tree(cloud({{0, 0, 0}, {0, 2, 0}}));
  ASSERT_EQ(two.size(), 1u);
  EXPECT_NEAR(two[0].length, 2.0, 1e-12);

  const auto square = minimum_spanning_tree(cloud({{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}}));
  EXPECT_EQ(square.size(), 3u);
  EXPECT_NEAR(spanning_total(square), 3.0, 1e-12);
  EXPECT_THROW(minimum_spanning_tree(PointCloud()), Error);
}

TEST(Mst, OptimalAgainstKruskalOracle) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const PointCloud p = test::random_cloud(60, 40 + s);
    const auto tree = minimum_spanning_tree(p);
    ASSERT_EQ(tree.size(), p.size() - 1);
    std::vector<Edge> all;
    for (std::size_t i = 0; i < p.size(); ++i)
      for (std::size_t j = i + 1; j < p.size(); ++j) all.push_back({i, j, (p[i] - p[j]).norm()});
    std::sort(all.begin(), all.end(), [](const Edge& x, const Edge& y) { return x.length < y.length; });
    std::vector<std::size_t> parent(p.size());
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](std::size_t x) {
      while (parent[x] != x) x = parent[x] = parent[parent[x]];
      return x;
    };
    double total = 0;
    for (const auto& e : all) {
      const auto ra = find(e.a), rb = find(e.b);
      if (ra != rb) {
        parent[ra] = rb;
        total += e.length;
      }
    }
    EXPECT_NEAR(spanning_total(tree), total, 1e-9);
  }
}

TEST(Expansion, Examples) {
  const auto uniform = cloud({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}});
  EXPECT_EQ(expansion_penalty({uniform}, 1.5), 0.0);
  const auto skewed = cloud({{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {6, 0, 0}});
  EXPECT_NEAR(expansion_penalty({skewed}, 1.5), 4.0 / 3.0, 1e-12);
  EXPECT_EQ(expansion_penalty({cloud({{0, 0, 0}, {5, 0, 0}})}, 1.5), 0.0);
}

TEST(Expansion, TermsMatchPenaltyAndGradient) {
  const PointCloud c = test::random_cloud(64, 8);
  std::vector<PointCloud> patches(4);
  for (std::size_t i = 0; i < c.size(); ++i) patches[i / 16].points.push_back(c[i]);
  const ExpansionTerms t = expansion_terms(c, 4, 1.5);
  EXPECT_EQ(t.edge_count, 60u);
  EXPECT_NEAR(t.value, expansion_penalty(patches, 1.5), 1e-12);
  EXPECT_NEAR(expansion_value(c, t), t.value, 1e-12);
  EXPECT_THROW(expansion_terms(c, 5, 1.5), Error);

  std::vector<Vec3> grad(c.size(), Vec3::Zero());
  add_expansion_gradient(c, t, 2.0, grad);
  const double h = 1e-6;
  for (std::size_t i = 0; i < c.size(); i += 7)
    for (int d = 0; d < 3; ++d) {
      PointCloud plus = c, minus = c;
      plus[i][d] += h;
      minus[i][d] -= h;
      const double fd = 2.0 * (expansion_value(plus, t) - expansion_value(minus, t)) / (2 * h);
      EXPECT_NEAR(grad[i][d], fd, 1e-6);
    }
}

TEST(Knn, ExampleAndSelfExclusion) {
  const auto g = knn_graph(cloud({{0, 0, 0}, {1, 0, 0}, {5, 0, 0}}), 1);
  EXPECT_EQ(g.neighbors, (std::vector<std::size_t>{1, 0, 1}));
  const auto edges = g.edges();
  ASSERT_EQ(edges.size(), 3u);
  EXPECT_EQ(edges[2], (std::pair<std::size_t, std::size_t>{2, 1}));
  EXPECT_THROW(knn_graph(cloud({{0, 0, 0}, {1, 0, 0}}), 2), Error);
}

TEST(Knn, MatchesBruteForce) {
  const PointCloud p = test::random_cloud(150, 12);
  const std::size_t k = 8;
  const auto g = knn_graph(p, k);
  ASSERT_EQ(g.size(), p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    std::vector<std::size_t> order;
    for (std::size_t j = 0; j < p.size(); ++j)
      if (j != i) order.push_back(j);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return (p[a] - p[i]).squaredNorm() < (p[b] - p[i]).squaredNorm();
    });
    for (std::size_t r = 0; r < k; ++r) {
      EXPECT_NE(g.neighbors[i * k + r], i);
      EXPECT_EQ(g.neighbors[i * k + r], order[r]);
    }
  }
}

#include <random>

#include <gtest/gtest.h>

#include "qrl/oracle.hpp"
#include "qrl/pipeline.hpp"

using namespace qrl;

namespace {

DiscreteMdpGraph diamond() {
  // 0 -> 1 (1), 0 -> 2 (4), 1 -> 2 (1), 2 -> 3 (1), 3 -> 0 (10)
  DiscreteMdpGraph g;
  g.num_nodes = 4;
  g.add_edge(0, 1, 1);
  g.add_edge(0, 2, 4);
  g.add_edge(1, 2, 1);
  g.add_edge(2, 3, 1);
  g.add_edge(3, 0, 10);
  return g;
}

}  // namespace

TEST(ShortestPaths, HandGraph) {
  const auto d = all_pairs_shortest_paths(diamond());
  EXPECT_EQ(d(0, 3), 3.0);
  EXPECT_EQ(d(0, 2), 2.0);
  EXPECT_EQ(d(3, 2), 12.0);
  EXPECT_EQ(d(1, 0), 12.0);
  EXPECT_EQ(d(2, 2), 0.0);
  EXPECT_TRUE(d == floyd_warshall(diamond()));
}

TEST(ShortestPaths, UnreachableIsInfinite) {
  DiscreteMdpGraph g;
  g.num_nodes = 3;
  g.add_edge(0, 1, 2);
  const auto d = all_pairs_shortest_paths(g);
  EXPECT_EQ(d(1, 0), kInf);
  EXPECT_EQ(d(0, 2), kInf);
  EXPECT_TRUE(check_quasimetric(d).empty());
}

TEST(ShortestPaths, SetTargetsTakeTheNearest) {
  const int targets[2] = {2, 3};
  const auto d = distances_to_set(diamond(), targets);
  EXPECT_EQ(d[0], 2.0);
  EXPECT_EQ(d[1], 1.0);
  EXPECT_EQ(d[3], 0.0);
}

TEST(Graph, RejectsBadEdges) {
  DiscreteMdpGraph g;
  g.num_nodes = 2;
  EXPECT_THROW(g.add_edge(0, 2, 1.0), std::out_of_range);
  EXPECT_THROW(g.add_edge(0, 1, -1.0), std::invalid_argument);
  EXPECT_THROW(g.add_edge(0, 1, kInf), std::invalid_argument);
}

TEST(ShortestPaths, AgreesWithFloydWarshallOnRandomGraphs) {
  std::mt19937_64 rng(17);
  for (int t = 0; t < 30; ++t) {
    DiscreteMdpGraph g;
    g.num_nodes = std::uniform_int_distribution<int>(1, 30)(rng);
    std::uniform_int_distribution<int> node(0, g.num_nodes - 1), cost(0, 20);
    for (int e = 0; e < 3 * g.num_nodes; ++e) g.add_edge(node(rng), node(rng), 0.5 * cost(rng));
    const auto d = all_pairs_shortest_paths(g);
    EXPECT_TRUE(d == floyd_warshall(g));
    EXPECT_TRUE(check_quasimetric(d, 0.0).empty());
  }
}

TEST(CheckQuasimetric, FlagsEachAxiom) {
  auto d = DistanceMatrix::square(3, 1.0);
  for (int i = 0; i < 3; ++i) d(i, i) = 0.0;
  EXPECT_TRUE(check_quasimetric(d).empty());
  d(0, 2) = 2.5;  // > d(0,1) + d(1,2)
  auto v = check_quasimetric(d);
  ASSERT_FALSE(v.empty());
  EXPECT_EQ(v[0].kind, QuasimetricViolation::Kind::triangle);
  EXPECT_NEAR(v[0].excess, 0.5, 1e-12);
  EXPECT_TRUE(check_quasimetric(d, 0.5).empty());
  d(0, 2) = 1.0;
  d(1, 1) = 0.1;
  EXPECT_EQ(check_quasimetric(d)[0].kind, QuasimetricViolation::Kind::nonzero_diagonal);
  d(1, 1) = 0.0;
  d(2, 0) = -1.0;
  EXPECT_EQ(check_quasimetric(d)[0].kind, QuasimetricViolation::Kind::negative);
}

TEST(OnPolicyFixture, ThreeCycleBreaksTriangleInequality) {
  const auto d = three_cycle_on_policy_fixture();
  EXPECT_EQ(d(0, 1), 1.0);
  EXPECT_EQ(d(1, 2), 1.0);
  EXPECT_EQ(d(0, 2), kInf);
  EXPECT_EQ(d(2, 0), 1.0);
  EXPECT_FALSE(check_quasimetric(d, 0.0).empty());
  EXPECT_THROW(mdp_from_quasimetric(d), std::invalid_argument);
}

TEST(RoundTrip, QuasimetricToMdpAndBack) {
  auto c = DistanceMatrix::square(4, kInf);
  for (int i = 0; i < 4; ++i) c(i, i) = 0;
  c(0, 1) = 1;
  c(1, 2) = 2;
  c(2, 0) = 0.5;
  c(3, 0) = 4;
  const auto d = minplus_closure(c);
  EXPECT_EQ(d(0, 2), 3.0);
  EXPECT_EQ(d(3, 2), 7.0);
  EXPECT_EQ(d(0, 3), kInf);
  const std::vector<int> all{0, 1, 2, 3};
  EXPECT_TRUE(shortest_paths(mdp_from_quasimetric(d), all) == d);
}

TEST(MinplusClosure, RejectsInvalidCosts) {
  auto c = DistanceMatrix::square(2, 1.0);
  EXPECT_THROW(minplus_closure(c), std::invalid_argument);  // nonzero diagonal
  c(0, 0) = c(1, 1) = 0;
  c(0, 1) = -1;
  EXPECT_THROW(minplus_closure(c), std::invalid_argument);
}

TEST(FeasibleSamples, DominatedByOptimalValues) {
  const auto g = diamond();
  const auto dstar = all_pairs_shortest_paths(g);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto d = feasible_quasimetric_sample(dstar, g, seed);
    EXPECT_TRUE(check_quasimetric(d, 1e-12).empty());
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) EXPECT_LE(d(i, j), dstar(i, j));
  }
  FeasibleSampleOptions ones, zeros;
  ones.scaling = EdgeScaling::ones;
  zeros.scaling = EdgeScaling::zeros;
  EXPECT_TRUE(feasible_quasimetric_sample(dstar, g, 0, ones) == dstar);
  const auto z = feasible_quasimetric_sample(dstar, g, 0, zeros);
  EXPECT_EQ(z(3, 1), 0.0);  // every node reachable, all edges free
}

TEST(Spearman, KnownValues) {
  const std::vector<double> a{1, 2, 3, 4, 5};
  EXPECT_NEAR(*spearman(a, std::vector<double>{2, 4, 6, 8, 10}), 1.0, 1e-12);
  EXPECT_NEAR(*spearman(a, std::vector<double>{5, 4, 3, 2, 1}), -1.0, 1e-12);
  // ranks (1,2,3) vs (1,3,2): 1 - 6*2 / (3*8) = 0.5
  EXPECT_NEAR(*spearman(std::vector<double>{1, 2, 3}, std::vector<double>{1, 3, 2}), 0.5, 1e-12);
  EXPECT_FALSE(spearman(a, std::vector<double>(5, 1.0)).has_value());
}

TEST(AverageRanks, TiesShareTheirMean) {
  const auto r = average_ranks(std::vector<double>{10, 20, 10, 30});
  EXPECT_EQ(r, (std::vector<double>{1.5, 3, 1.5, 4}));
}

TEST(ValueErrorReport, SkipsZeroTruthForRelativeError) {
  const std::vector<double> model{0.5, 2.2, 2.7}, truth{0, 2, 3};
  const std::vector<char> mask{1, 1, 1};
  const auto rep = value_error_report(model, truth, mask);
  EXPECT_NEAR(rep.mae, (0.5 + 0.2 + 0.3) / 3, 1e-12);
  EXPECT_NEAR(rep.mean_relative_error, (0.1 + 0.1) / 2, 1e-12);
  EXPECT_NEAR(rep.spearman, 1.0, 1e-12);
}

TEST(MountainCarOracle, GoalSetIsAtZeroAndRestrictedDistancesDominate) {
  const auto env = make_mountain_car(24);
  const auto top = top_of_hill_goal(env);
  const auto full = oracle_distances(env, top);
  for (int s = 0; s < env.num_states; ++s)
    if (env.in_goal(s)) EXPECT_EQ(full[s], 0.0);
  GenerateOptions opt;
  opt.episodes = 100;
  const auto ds = generate_dataset(env, opt);
  const auto restricted = dataset_oracle_distances(env, ds, top);
  int finite = 0;
  for (int s = 0; s < env.num_states; ++s) {
    EXPECT_GE(restricted[s] + 1e-9, full[s]);  // subgraph distances can only grow
    finite += std::isfinite(restricted[s]);
  }
  EXPECT_GT(finite, 0);
}

TEST(DatasetGraph, EdgesCarryRecordCosts) {
  const auto env = make_mountain_car(16);
  const auto ds = full_coverage_dataset(env, 0.25);
  const auto dg = dataset_graph(ds);
  EXPECT_EQ(dg.graph.num_nodes, env.num_states + 1);
  int goal_edges = 0;
  for (const auto& e : dg.graph.edges) goal_edges += e.cost == 0.25;
  EXPECT_EQ(static_cast<std::size_t>(goal_edges), ds.num_goal_records());
}

#include "efsc/cluster.hpp"
#include "efsc/syndata.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace efsc;

TEST(Spearman, MatchesCountingRanksWithTies) {
  Rng rng(5);
  std::normal_distribution<double> g;
  Matrix x(40, 5);
  for (Eigen::Index i = 0; i < 40; ++i)
    for (Eigen::Index j = 0; j < 5; ++j) x(i, j) = std::round(g(rng) * (j + 1));  // coarse values tie
  const auto s = spearman_matrix(x);
  for (Eigen::Index a = 0; a < 5; ++a)
    for (Eigen::Index b = 0; b < 5; ++b) {
      std::vector<double> u(x.col(a).data(), x.col(a).data() + 40), v(x.col(b).data(), x.col(b).data() + 40);
      EXPECT_NEAR(s.corr(a, b), oracle::brute_spearman(u, v), 1e-12);
    }
}

TEST(Spearman, ConstantColumnIsFlagged) {
  Matrix x(6, 2);
  x << 1, 3, 2, 3, 3, 3, 4, 3, 5, 3, 6, 3;
  const auto s = spearman_matrix(x);
  EXPECT_TRUE(s.constant[1]);
  EXPECT_FALSE(s.constant[0]);
  EXPECT_DOUBLE_EQ(s.corr(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(s.corr(1, 1), 1.0);
}

TEST(CompleteLinkage, ThreePointHandTrace) {
  Matrix d(3, 3);
  d << 0, 1, 4,  //
      1, 0, 3,   //
      4, 3, 0;
  const auto tree = agglomerate_complete(d);
  ASSERT_EQ(tree.merges.size(), 2u);
  EXPECT_EQ(tree.merges[0].left, 1);
  EXPECT_EQ(tree.merges[0].right, 2);
  EXPECT_DOUBLE_EQ(tree.merges[0].height, 1.0);
  EXPECT_EQ(tree.merges[1].left, 3);
  EXPECT_EQ(tree.merges[1].right, 4);
  EXPECT_DOUBLE_EQ(tree.merges[1].height, 4.0);  // max(d13, d23)
}

TEST(CompleteLinkage, TiesBreakTowardSmallestIds) {
  Matrix d = Matrix::Constant(4, 4, 2.0);
  d.diagonal().setZero();
  const auto tree = agglomerate_complete(d);
  EXPECT_EQ(tree.merges[0].left, 1);
  EXPECT_EQ(tree.merges[0].right, 2);
  EXPECT_EQ(tree.merges[1].left, 3);
  EXPECT_EQ(tree.merges[1].right, 4);
}

TEST(CompleteLinkage, HeightsAreMonotone) {
  Rng rng(8);
  std::uniform_real_distribution<double> u(0, 1);
  Matrix pts(12, 2);
  for (Eigen::Index i = 0; i < 12; ++i) pts(i, 0) = u(rng), pts(i, 1) = u(rng);
  Matrix d(12, 12);
  for (Eigen::Index i = 0; i < 12; ++i)
    for (Eigen::Index j = 0; j < 12; ++j) d(i, j) = (pts.row(i) - pts.row(j)).norm();
  const auto tree = agglomerate_complete(d);
  for (std::size_t k = 1; k < tree.merges.size(); ++k) EXPECT_GE(tree.merges[k].height, tree.merges[k - 1].height);
}

TEST(DynamicCut, RecoversPlantedGroups) {
  SynthSpec spec;
  spec.n = 300;
  spec.p = 24;
  spec.groups = {{6, 0.9}, {6, 0.85}, {6, 0.9}};
  spec.relevant = {0};
  spec.beta = {0.5};
  spec.seed = 17;
  const auto synth = generate(spec);
  const auto result = cluster_features(synth.data);
  const auto& labels = result.assignment.labels;
  for (std::size_t g = 0; g < 3; ++g) {
    const int label = labels[g * 6];
    for (std::size_t k = 0; k < 24; ++k) EXPECT_EQ(labels[k] == label, k / 6 == g) << "feature " << k;
  }
  for (std::size_t k = 18; k < 24; ++k) EXPECT_TRUE(result.assignment.promoted[k]);
}

TEST(DynamicCut, SmallBranchesArePromotedSingletons) {
  // two tight pairs far apart: pairs are below min_size 3
  Matrix d(4, 4);
  d << 0, 1, 9, 9,  //
      1, 0, 9, 9,   //
      9, 9, 0, 1,   //
      9, 9, 1, 0;
  const auto a = dynamic_tree_cut(agglomerate_complete(d));
  EXPECT_EQ(a.n_clusters(), 4u);
  for (bool p : a.promoted) EXPECT_TRUE(p);
}

TEST(Representatives, HighestScoreThenSmallestName) {
  ClusterAssignment a;
  a.labels = {1, 1, 1, 2};
  a.promoted = {false, false, false, true};
  const std::vector<double> scores{0.6, 0.7, 0.7, 0.5};
  const std::vector<std::string> names{"c", "z", "b", "q"};
  const auto r = pick_representatives(a, scores, names);
  EXPECT_EQ(r.representatives, (std::vector<std::size_t>{2, 3}));
}

TEST(ClusterParamsTest, RejectsUnknownDistance) {
  EXPECT_THROW(ClusterParams::from_json({{"distance", "cosine"}}), ConfigError);
  const auto p = ClusterParams::from_json({{"distance", "abs_correlation"}, {"gap", 0.4}});
  EXPECT_EQ(p.distance, DistanceVariant::abs_correlation);
  EXPECT_DOUBLE_EQ(p.cut.gap, 0.4);
}

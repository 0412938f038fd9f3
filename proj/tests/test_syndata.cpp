#include "efsc/cluster.hpp"
#include "efsc/syndata.hpp"

#include <gtest/gtest.h>

using namespace efsc;

namespace {
SynthSpec grouped(std::uint64_t seed) {
  SynthSpec s;
  s.n = 400;
  s.p = 30;
  s.groups = {{8, 0.9}, {8, 0.8}};
  s.relevant = {0, 8, 20};
  s.beta = {1.0, -0.8, 0.6};
  s.target_censoring = 0.6;
  s.seed = seed;
  return s;
}
}  // namespace

TEST(Synth, CensoringWithinThreePoints) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto out = generate(grouped(seed));
    EXPECT_NEAR(out.truth.censoring_rate, 0.6, 0.03);
    EXPECT_EQ(out.data.n(), 400u);
    EXPECT_EQ(out.data.p(), 30u);
  }
}

TEST(Synth, GroupCorrelationNearTarget) {
  const auto out = generate(grouped(3));
  const auto s = spearman_matrix(out.data.features);
  double within = 0.0, across = 0.0;
  for (Eigen::Index a = 0; a < 8; ++a)
    for (Eigen::Index b = a + 1; b < 8; ++b) within += s.corr(a, b) / 28.0;
  for (Eigen::Index a = 0; a < 8; ++a)
    for (Eigen::Index b = 16; b < 24; ++b) across += std::abs(s.corr(a, b)) / 64.0;
  EXPECT_NEAR(within, 0.89, 0.04);  // Spearman of a Pearson 0.9 Gaussian pair is ~0.89
  EXPECT_LT(across, 0.1);
}

TEST(Synth, GroundTruthAndDeterminism) {
  const auto a = generate(grouped(5));
  const auto b = generate(grouped(5));
  EXPECT_EQ(a.data.features, b.data.features);
  EXPECT_EQ(a.data.time, b.data.time);
  EXPECT_EQ(a.truth.relevant, (std::vector<std::string>{"x1", "x9", "x21"}));
  EXPECT_EQ(a.truth.groups.size(), 2u);
  EXPECT_EQ(a.truth.groups[1].front(), "x9");
  EXPECT_NE(generate(grouped(6)).data.time, a.data.time);
}

TEST(Synth, BinarizedColumnsAreZeroOne) {
  auto spec = grouped(2);
  spec.binarize_fraction = 0.2;
  const auto out = generate(spec);
  std::size_t binary = 0;
  for (std::size_t j = 0; j < out.data.p(); ++j) {
    if (out.data.feature_kind[j] != FeatureKind::binary) continue;
    ++binary;
    const auto col = out.data.features.col(static_cast<Eigen::Index>(j));
    EXPECT_TRUE(((col.array() == 0.0) || (col.array() == 1.0)).all());
  }
  EXPECT_EQ(binary, 6u);
}

TEST(Synth, InvalidSpecsAreConfigErrors) {
  auto s = grouped(1);
  s.beta.pop_back();
  EXPECT_THROW(generate(s), ConfigError);
  s = grouped(1);
  s.groups.push_back({20, 0.5});
  EXPECT_THROW(generate(s), ConfigError);
  EXPECT_THROW(SynthSpec::from_json({{"target_censoring", 1.0}}), ConfigError);
}

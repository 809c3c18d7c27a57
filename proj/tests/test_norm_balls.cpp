#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

using namespace fwadv;
using fwadv::testing::frobenius_distance;
using fwadv::testing::from_matrix;
using fwadv::testing::max_abs_diff;
using fwadv::testing::random_tensor;

namespace {

const Shape kFrame{1, 8, 8};

std::vector<std::pair<std::string, DistortionBall>> families(const Shape& s, double eps) {
  auto weighted = GroupPartition::grid(s, 4, 4);
  weighted = weighted.with_weights({1.0, 2.0, 0.5, 3.0});
  return {
      {"l1", DistortionBall::l1(eps)},
      {"l2", DistortionBall::l2(eps)},
      {"linf", DistortionBall::linf(eps)},
      {"nuclear", DistortionBall::nuclear(eps)},
      {"schatten-1.5", DistortionBall::schatten(1.5, eps)},
      {"schatten-2", DistortionBall::schatten(2.0, eps)},
      {"schatten-3", DistortionBall::schatten(3.0, eps)},
      {"spectral", DistortionBall::spectral(eps)},
      {"group-nuclear", DistortionBall::group_nuclear(GroupPartition::grid(s, 4, 4), eps)},
      {"weighted-group-nuclear", DistortionBall::group_nuclear(weighted, eps)},
  };
}

// Half rank-one samples, half dense random points pushed to a random fraction of the radius.
std::vector<ImageTensor> in_ball_points(const DistortionBall& ball, const Shape& s, std::size_t n, std::uint64_t seed) {
  std::vector<ImageTensor> pts;
  Rng rng(seed);
  for (std::size_t k = 0; k < n; ++k) {
    if (k % 2 == 0) {
      pts.push_back(sample_in_ball(ball, s, mix_seed(seed, k)));
    } else {
      ImageTensor x = random_tensor(s, mix_seed(seed, k));
      const double scale = (k % 4 == 1 ? 1.0 : rng.uniform()) * ball.radius() / norm_value(ball, x);
      pts.push_back(scale * x);
    }
  }
  return pts;
}

} // namespace

TEST(NormValue, ZeroForZeroTensor) {
  for (const auto& [name, ball] : families(kFrame, 1.0)) EXPECT_EQ(norm_value(ball, ImageTensor(kFrame)), 0.0) << name;
}

TEST(NormValue, NuclearOfDiagonal) {
  const ImageTensor d(Shape{1, 2, 2}, {3, 0, 0, -4});
  EXPECT_NEAR(norm_value(DistortionBall::nuclear(1), d), 7.0, 1e-12);
  EXPECT_NEAR(norm_value(DistortionBall::spectral(1), d), 4.0, 1e-12);
  EXPECT_NEAR(norm_value(DistortionBall::schatten(2, 1), d), 5.0, 1e-12);
}

TEST(NormValue, WeightedGroupSum) {
  const Shape s{1, 2, 4};
  const GroupPartition part(s, {PixelGroup{{0}, 0, 2, 0, 2}, PixelGroup{{0}, 0, 2, 2, 4}}, {1.0, 2.0});
  ImageTensor d(s);
  d(0, 0, 0) = 1.0;
  d(0, 1, 3) = -1.0;
  EXPECT_NEAR(norm_value(DistortionBall::group_nuclear(part, 1.0), d), 3.0, 1e-12);
}

TEST(NormValue, MassOutsideGroupsIsInfinite) {
  const Shape s{1, 4, 4};
  const GroupPartition part(s, {PixelGroup{{0}, 0, 2, 0, 2}});
  ImageTensor d(s);
  d(0, 3, 3) = 1e-3;
  EXPECT_TRUE(std::isinf(norm_value(DistortionBall::group_nuclear(part, 1.0), d)));
}

TEST(NormValue, ShapeMismatchThrows) {
  const auto ball = DistortionBall::group_nuclear(GroupPartition::per_channel(Shape{3, 4, 4}), 1.0);
  EXPECT_THROW(norm_value(ball, ImageTensor(Shape{1, 4, 4})), ValidationError);
}

TEST(NormValue, GeneralGroupNormReducesToGroupNuclear) {
  const Shape s{2, 6, 6};
  const auto part = GroupPartition::grid(s, 3, 3);
  const ImageTensor x = random_tensor(s, 3);
  EXPECT_NEAR(group_norm_general(part, x, 1.0, 1.0), norm_value(DistortionBall::group_nuclear(part, 1.0), x), 1e-10);
  double sq = 0.0;
  for (const auto& g : part.groups()) {
    const Matrix m = extract_group(x, g);
    sq += m.frobenius() * m.frobenius();
  }
  EXPECT_NEAR(group_norm_general(part, x, 2.0, 2.0), std::sqrt(sq), 1e-10);
}

TEST(DualNorm, KnownValues) {
  ImageTensor e(Shape{1, 3, 3});
  e(0, 0, 0) = 1.0;
  EXPECT_NEAR(dual_norm_value(DistortionBall::nuclear(1), e), 1.0, 1e-12);
  const ImageTensor d = random_tensor(Shape{1, 4, 5}, 1);
  EXPECT_DOUBLE_EQ(dual_norm_value(DistortionBall::linf(1), d), l1_norm(d));
  EXPECT_DOUBLE_EQ(dual_norm_value(DistortionBall::l1(1), d), linf_norm(d));
  EXPECT_DOUBLE_EQ(dual_norm_value(DistortionBall::l2(1), d), l2_norm(d));
}

TEST(DualNorm, NuclearDualIsPowerIterationSigma) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const ImageTensor d = random_tensor(Shape{1, 7, 5}, seed);
    const auto t = top_singular_triplet(matricize(d, Matricization::Stacked)[0], 1e-12, 5000);
    EXPECT_NEAR(dual_norm_value(DistortionBall::nuclear(1), d), t.sigma, 1e-8 * t.sigma);
  }
}

TEST(Lmo, NuclearDiagonalExample) {
  const ImageTensor d(Shape{1, 2, 2}, {3, 0, 0, 1});
  const auto v = lmo(DistortionBall::nuclear(2), d);
  EXPECT_LT(max_abs_diff(v.tensor, ImageTensor(Shape{1, 2, 2}, {-2, 0, 0, 0})), 1e-10);
  EXPECT_NEAR(dot(d, v.tensor), -6.0, 1e-10);
  EXPECT_FALSE(v.degenerate);
}

TEST(Lmo, LinfIsNegativeSign) {
  const ImageTensor d(Shape{1, 1, 4}, {0.3, -2.0, 1e-9, -1e-9});
  const auto v = lmo(DistortionBall::linf(0.5), d);
  EXPECT_EQ(v.tensor.data(), (std::vector<double>{-0.5, 0.5, -0.5, 0.5}));
}

TEST(Lmo, L1PicksLowestIndexOnTies) {
  const ImageTensor d(Shape{1, 1, 4}, {1.0, -3.0, 3.0, 0.5});
  const auto v = lmo(DistortionBall::l1(2.0), d);
  EXPECT_EQ(v.tensor.data(), (std::vector<double>{0, 2.0, 0, 0}));
}

TEST(Lmo, ZeroDirectionIsDegenerate) {
  for (const auto& [name, ball] : families(kFrame, 1.0)) {
    const auto v = lmo(ball, ImageTensor(kFrame));
    EXPECT_EQ(l2_norm(v.tensor), 0.0) << name;
    if (!ball.as_group()) {
      EXPECT_TRUE(v.degenerate) << name;
    }
  }
}

TEST(Lmo, GroupSupportedOnOnlyNonzeroGroup) {
  const Shape s{1, 4, 4};
  const GroupPartition part(s, {PixelGroup{{0}, 0, 4, 0, 2}, PixelGroup{{0}, 0, 4, 2, 4}});
  ImageTensor d(s);
  d(0, 1, 0) = 0.2;
  d(0, 2, 1) = -0.7;
  const auto v = lmo(DistortionBall::group_nuclear(part, 1.5), d);
  ASSERT_TRUE(v.group.has_value());
  EXPECT_EQ(*v.group, 0u);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 2; c < 4; ++c) EXPECT_EQ(v.tensor(0, r, c), 0.0);
}

TEST(Lmo, WeightedGroupSelectionByEnumeration) {
  const Shape s{1, 2, 4};
  const GroupPartition part(s, {PixelGroup{{0}, 0, 2, 0, 2}, PixelGroup{{0}, 0, 2, 2, 4}}, {1.0, 4.0});
  ImageTensor d(s);
  d(0, 0, 0) = 2.0; // ||d[g1]||_inf = 2
  d(0, 1, 3) = 3.0; // ||d[g2]||_inf = 3, scaled 3/4
  const double eps = 1.25;
  const auto ball = DistortionBall::group_nuclear(part, eps);
  const auto v = lmo(ball, d);
  std::size_t best = 0;
  double best_score = -1;
  for (std::size_t k = 0; k < part.size(); ++k) {
    const double score = singular_values(extract_group(d, part.groups()[k]))[0] / part.weights()[k];
    if (score > best_score) best = k, best_score = score;
  }
  ASSERT_TRUE(v.group.has_value());
  EXPECT_EQ(*v.group, best);
  EXPECT_EQ(best, 0u);
  EXPECT_NEAR(v.tensor(0, 0, 0), -eps, 1e-12);
  EXPECT_NEAR(dot(d, v.tensor), -eps * dual_norm_value(ball, d), 1e-12);
}

TEST(Lmo, NuclearSelectionCompatibilityFlag) {
  // g0 has the larger spectral norm, g1 the larger nuclear norm.
  const Shape s{1, 2, 4};
  const GroupPartition part(s, {PixelGroup{{0}, 0, 2, 0, 2}, PixelGroup{{0}, 0, 2, 2, 4}});
  ImageTensor d(s);
  d(0, 0, 0) = 3.0;
  d(0, 0, 2) = 2.0;
  d(0, 1, 3) = 2.0;
  const auto spectral = lmo(DistortionBall::group_nuclear(part, 1.0), d);
  const auto nuclear = lmo(DistortionBall::group_nuclear(part, 1.0, GroupSelection::Nuclear), d);
  EXPECT_EQ(*spectral.group, 0u);
  EXPECT_EQ(*nuclear.group, 1u);
  EXPECT_LT(dot(d, spectral.tensor), dot(d, nuclear.tensor));
}

TEST(Lmo, SamplingOracleAndDualIdentity) {
  const double eps = 0.7;
  for (const auto& [name, ball] : families(kFrame, eps)) {
    const auto points = in_ball_points(ball, kFrame, 300, 17);
    for (std::uint64_t k = 0; k < 30; ++k) {
      const ImageTensor d = random_tensor(kFrame, mix_seed(1000, k));
      const auto v = lmo(ball, d);
      const double value = dot(d, v.tensor);
      const double dual = dual_norm_value(ball, d);
      EXPECT_NEAR(value, -eps * dual, 1e-8 * eps * dual) << name;
      for (const auto& p : points) ASSERT_LE(value, dot(d, p) + 1e-12) << name;
    }
  }
}

TEST(Lmo, VertexIsOnTheBoundary) {
  const double eps = 1.3;
  for (const auto& [name, ball] : families(Shape{3, 8, 8}, eps))
    for (std::uint64_t k = 0; k < 10; ++k) {
      const ImageTensor d = random_tensor(Shape{3, 8, 8}, k);
      const auto v = lmo(ball, d);
      EXPECT_NEAR(norm_value(ball, v.tensor), eps, 1e-8 * eps) << name;
    }
}

TEST(Lmo, NuclearVerticesAreRankOne) {
  const Shape s{3, 6, 6};
  for (std::uint64_t k = 0; k < 10; ++k) {
    const ImageTensor d = random_tensor(s, k);
    const auto v = lmo(DistortionBall::nuclear(1.0), d);
    EXPECT_EQ(numerical_rank(matricize(v.tensor, Matricization::Stacked)[0]), 1u);
    const auto g = lmo(DistortionBall::group_nuclear(GroupPartition::grid(s, 3, 3), 1.0), d);
    EXPECT_EQ(numerical_rank(extract_group(g.tensor, GroupPartition::grid(s, 3, 3).groups()[*g.group])), 1u);
  }
}

TEST(Lmo, WeightScalingKeepsGroupAndScalesMagnitude) {
  const Shape s{2, 8, 8};
  auto part = GroupPartition::grid(s, 4, 4);
  part = part.with_weights({1.0, 0.5, 2.0, 1.5});
  for (std::uint64_t k = 0; k < 20; ++k) {
    const ImageTensor d = random_tensor(s, 40 + k);
    for (double c : {0.25, 3.0, 10.0}) {
      std::vector<double> w = part.weights();
      for (auto& x : w) x *= c;
      const auto base = lmo(DistortionBall::group_nuclear(part, 1.0), d);
      const auto scaled = lmo(DistortionBall::group_nuclear(part.with_weights(w), 1.0), d);
      EXPECT_EQ(*base.group, *scaled.group);
      EXPECT_LT(max_abs_diff(scaled.tensor, (1.0 / c) * base.tensor), 1e-14);
    }
  }
}

TEST(Lmo, PerChannelSchattenMatchesPerChannelGroups) {
  const Shape s{3, 5, 6};
  const auto per_channel = DistortionBall::nuclear(0.9, Matricization::PerChannel);
  const auto group = DistortionBall::group_nuclear(GroupPartition::per_channel(s), 0.9);
  for (std::uint64_t k = 0; k < 20; ++k) {
    const ImageTensor d = random_tensor(s, 70 + k);
    EXPECT_NEAR(norm_value(per_channel, d), norm_value(group, d), 1e-10);
    EXPECT_NEAR(dual_norm_value(per_channel, d), dual_norm_value(group, d), 1e-10);
    EXPECT_LT(max_abs_diff(lmo(per_channel, d).tensor, lmo(group, d).tensor), 1e-10);
  }
}

TEST(Lmo, SingleFullFrameGroupMatchesNuclear) {
  const Shape s{1, 8, 8};
  const auto nuclear = DistortionBall::nuclear(1.1);
  const auto group = DistortionBall::group_nuclear(GroupPartition(s, {PixelGroup::full_frame(s, 0)}), 1.1);
  for (std::uint64_t k = 0; k < 20; ++k) {
    const ImageTensor d = random_tensor(s, 300 + k);
    EXPECT_NEAR(norm_value(nuclear, d), norm_value(group, d), 1e-8);
    EXPECT_NEAR(dual_norm_value(nuclear, d), dual_norm_value(group, d), 1e-8);
    EXPECT_NEAR(dot(d, lmo(nuclear, d).tensor), dot(d, lmo(group, d).tensor), 1e-8);
  }
}

TEST(Lmo, RestrictedGroupLmoOnlyUsesActiveGroups) {
  const Shape s{3, 4, 4};
  const GroupNuclearBall b{GroupPartition::per_channel(s), 1.0, GroupSelection::Spectral};
  const ImageTensor d = random_tensor(s, 9);
  for (std::size_t only = 0; only < 3; ++only) {
    const std::vector<std::size_t> active{only};
    EXPECT_EQ(*lmo_group(b, d, active).group, only);
  }
}

TEST(Project, NuclearShrinksSingularValues) {
  const ImageTensor d(Shape{1, 2, 2}, {3, 0, 0, 1});
  const auto p = project(DistortionBall::nuclear(2), d);
  EXPECT_LT(max_abs_diff(p, ImageTensor(Shape{1, 2, 2}, {2, 0, 0, 0})), 1e-12);
}

TEST(Project, InsideAndZeroAreFixed) {
  const ImageTensor d = 0.01 * random_tensor(Shape{1, 4, 4}, 2);
  for (const auto& ball : {DistortionBall::nuclear(5), DistortionBall::linf(1), DistortionBall::l2(5)}) {
    EXPECT_EQ(project(ball, d), d);
    EXPECT_EQ(project(ball, ImageTensor(d.shape())), ImageTensor(d.shape()));
  }
}

TEST(Project, UnsupportedBallThrows) {
  try {
    project(DistortionBall::l1(1), ImageTensor(Shape{1, 2, 2}));
    FAIL() << "expected an error";
  } catch (const ValidationError& e) {
    EXPECT_STREQ(e.what(), "projection not available for this ball");
  }
  EXPECT_THROW(project(DistortionBall::spectral(1), ImageTensor(Shape{1, 2, 2})), ValidationError);
}

TEST(Project, IdempotentInBallNonexpansive) {
  const Shape s{2, 5, 4};
  for (const auto& ball : {DistortionBall::nuclear(1.5), DistortionBall::nuclear(1.5, Matricization::PerChannel),
                           DistortionBall::linf(0.2), DistortionBall::l2(1.0)})
    for (std::uint64_t k = 0; k < 20; ++k) {
      const ImageTensor a = random_tensor(s, 2 * k), b = random_tensor(s, 2 * k + 1);
      const auto pa = project(ball, a), pb = project(ball, b);
      EXPECT_LE(norm_value(ball, pa), ball.radius() * (1 + 1e-10));
      EXPECT_LT(max_abs_diff(project(ball, pa), pa), 1e-10);
      EXPECT_LE(frobenius_distance(pa, pb), frobenius_distance(a, b) + 1e-12);
    }
}

TEST(Project, NuclearIsClosestAmongBallPoints) {
  const auto ball = DistortionBall::nuclear(1.0);
  const Shape s{1, 4, 4};
  for (std::uint64_t k = 0; k < 5; ++k) {
    const ImageTensor z = 2.0 * random_tensor(s, 90 + k);
    const double best = frobenius_distance(project(ball, z), z);
    for (const auto& p : in_ball_points(ball, s, 400, k)) EXPECT_LE(best, frobenius_distance(p, z) + 1e-12);
  }
}

TEST(SampleInBall, ContainedDeterministicRankOne) {
  for (const auto& [name, ball] : families(kFrame, 0.8)) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const auto x = sample_in_ball(ball, kFrame, seed);
      EXPECT_LE(norm_value(ball, x), 0.8 + 1e-10) << name;
    }
    EXPECT_EQ(sample_in_ball(ball, kFrame, 5), sample_in_ball(ball, kFrame, 5)) << name;
  }
  const auto nuclear = DistortionBall::nuclear(1.0);
  for (std::uint64_t seed = 0; seed < 1000; ++seed)
    ASSERT_EQ(numerical_rank(matricize(sample_in_ball(nuclear, kFrame, seed), Matricization::Stacked)[0]), 1u);
}

TEST(DistortionBall, Validation) {
  EXPECT_THROW(DistortionBall::linf(-1), ValidationError);
  EXPECT_THROW(DistortionBall::nuclear(std::nan("")), ValidationError);
  EXPECT_THROW(DistortionBall::schatten(0.5, 1), ValidationError);
  EXPECT_NO_THROW(DistortionBall::nuclear(0));
  EXPECT_EQ(DistortionBall::nuclear(1).name(), "nuclear");
  EXPECT_EQ(DistortionBall::linf(1).with_radius(2).radius(), 2.0);
}

TEST(DistortionBall, ZeroRadiusGivesZeroVertex) {
  const ImageTensor d = random_tensor(kFrame, 1);
  for (const auto& [name, ball] : families(kFrame, 0.0)) EXPECT_EQ(l2_norm(lmo(ball, d).tensor), 0.0) << name;
}

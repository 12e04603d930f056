#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <utility>
#include <vector>

#include "oracles.hpp"
#include "stmixer/dataprep.hpp"
#include "stmixer/rng.hpp"
#include "testutil.hpp"

namespace {

using stmixer::DiameterMeasurement;
using stmixer::EvolutionLabel;
using stmixer::NoduleDetection;
using stmixer::PairingResult;
using stmixer::Volume3D;

NoduleDetection det(int id, int timepoint, std::array<double, 3> center) {
  NoduleDetection d;
  d.id = id;
  d.timepoint = timepoint;
  d.center_mm = center;
  return d;
}

std::vector<NoduleDetection> scan(int timepoint, const std::vector<std::array<double, 3>>& centers) {
  std::vector<NoduleDetection> out;
  for (size_t i = 0; i < centers.size(); ++i) {
    out.push_back(det(static_cast<int>(i), timepoint, centers[i]));
  }
  return out;
}

TEST(Pairing, WithinThresholdPairs) {
  const auto res = stmixer::pair_nodules(scan(0, {{0, 0, 0}}), scan(1, {{1, 0, 0}}));
  ASSERT_EQ(res.pairs.size(), 1u);
  EXPECT_EQ(res.pairs[0].earlier_index, 0);
  EXPECT_EQ(res.pairs[0].later_index, 0);
  EXPECT_DOUBLE_EQ(res.pairs[0].distance_mm, 1.0);
  EXPECT_TRUE(res.unmatched_earlier.empty());
  EXPECT_TRUE(res.unmatched_later.empty());
}

TEST(Pairing, BeyondThresholdLeavesBothUnmatched) {
  const auto res = stmixer::pair_nodules(scan(0, {{0, 0, 0}}), scan(1, {{2, 0, 0}}));
  EXPECT_TRUE(res.pairs.empty());
  EXPECT_EQ(res.unmatched_earlier, std::vector<int>{0});
  EXPECT_EQ(res.unmatched_later, std::vector<int>{0});
}

TEST(Pairing, ExactThresholdDistanceDoesNotPair) {
  const auto res = stmixer::pair_nodules(scan(0, {{0, 0, 0}}), scan(1, {{1.5, 0, 0}}));
  EXPECT_TRUE(res.pairs.empty());
}

TEST(Pairing, NearestCandidateWinsAndLoserStaysUnmatched) {
  const auto res =
      stmixer::pair_nodules(scan(0, {{0, 0, 0}}), scan(1, {{0.5, 0, 0}, {1.2, 0, 0}}));
  ASSERT_EQ(res.pairs.size(), 1u);
  EXPECT_EQ(res.pairs[0].later_index, 0);
  EXPECT_DOUBLE_EQ(res.pairs[0].distance_mm, 0.5);
  EXPECT_EQ(res.unmatched_later, std::vector<int>{1});
}

TEST(Pairing, MutualRequirementBlocksChainedMatches) {
  // Both earlier nodules sit within threshold of the single later one, but only
  // the closer earlier nodule is its nearest neighbor, so the other stays out.
  const auto res =
      stmixer::pair_nodules(scan(0, {{0, 0, 0}, {1.0, 0, 0}}), scan(1, {{0.4, 0, 0}}));
  ASSERT_EQ(res.pairs.size(), 1u);
  EXPECT_EQ(res.pairs[0].earlier_index, 0);
  EXPECT_EQ(res.unmatched_earlier, std::vector<int>{1});
}

TEST(Pairing, DistanceTieGoesToLowestIndex) {
  const auto res =
      stmixer::pair_nodules(scan(0, {{0, 0, 0}}), scan(1, {{1, 0, 0}, {-1, 0, 0}}));
  ASSERT_EQ(res.pairs.size(), 1u);
  EXPECT_EQ(res.pairs[0].later_index, 0);
}

TEST(Pairing, MixedTimepointsRejected) {
  auto earlier = scan(0, {{0, 0, 0}, {5, 0, 0}});
  earlier[1].timepoint = 1;
  EXPECT_THROW(stmixer::pair_nodules(earlier, scan(2, {{0, 0, 0}})), std::invalid_argument);
  auto later = scan(1, {{0, 0, 0}, {5, 0, 0}});
  later[1].timepoint = 2;
  EXPECT_THROW(stmixer::pair_nodules(scan(0, {{0, 0, 0}}), later), std::invalid_argument);
}

TEST(Pairing, NonPrecedingTimepointRejected) {
  EXPECT_THROW(stmixer::pair_nodules(scan(1, {{0, 0, 0}}), scan(0, {{0, 0, 0}})),
               std::invalid_argument);
  EXPECT_THROW(stmixer::pair_nodules(scan(1, {{0, 0, 0}}), scan(1, {{0, 0, 0}})),
               std::invalid_argument);
}

TEST(Pairing, EmptyListsProduceNoPairs) {
  const auto both = stmixer::pair_nodules({}, {});
  EXPECT_TRUE(both.pairs.empty());
  const auto res = stmixer::pair_nodules({}, scan(1, {{0, 0, 0}, {4, 0, 0}}));
  EXPECT_TRUE(res.pairs.empty());
  EXPECT_EQ(res.unmatched_later.size(), 2u);
}

TEST(Pairing, SwappingListRolesMirrorsThePairSet) {
  stmixer::RngStream rng(404, 0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::array<double, 3>> a, b;
    const int na = rng.uniform_int(8), nb = rng.uniform_int(8);
    for (int i = 0; i < na; ++i) a.push_back({rng.uniform(0, 4), rng.uniform(0, 4), rng.uniform(0, 4)});
    for (int j = 0; j < nb; ++j) b.push_back({rng.uniform(0, 4), rng.uniform(0, 4), rng.uniform(0, 4)});

    const auto fwd = stmixer::pair_nodules(scan(0, a), scan(1, b));
    const auto rev = stmixer::pair_nodules(scan(0, b), scan(1, a));
    std::set<std::pair<int, int>> fwd_set, rev_set;
    for (const auto& p : fwd.pairs) fwd_set.insert({p.earlier_index, p.later_index});
    for (const auto& p : rev.pairs) rev_set.insert({p.later_index, p.earlier_index});
    EXPECT_EQ(fwd_set, rev_set);
  }
}

TEST(Pairing, MatchesIndependentMatcherOnRandomSets) {
  stmixer::RngStream rng(405, 0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::array<double, 3>> a, b;
    const int na = rng.uniform_int(12), nb = rng.uniform_int(12);
    for (int i = 0; i < na; ++i) a.push_back({rng.uniform(0, 4), rng.uniform(0, 4), rng.uniform(0, 4)});
    for (int j = 0; j < nb; ++j) b.push_back({rng.uniform(0, 4), rng.uniform(0, 4), rng.uniform(0, 4)});

    const auto res = stmixer::pair_nodules(scan(0, a), scan(1, b));
    const auto expected = oracle::mutual_nn_pairs(a, b, 1.5);
    ASSERT_EQ(res.pairs.size(), expected.size());
    std::set<int> used_e, used_l;
    for (size_t k = 0; k < expected.size(); ++k) {
      EXPECT_EQ(res.pairs[k].earlier_index, expected[k].first);
      EXPECT_EQ(res.pairs[k].later_index, expected[k].second);
      EXPECT_LT(res.pairs[k].distance_mm, 1.5);
      EXPECT_TRUE(used_e.insert(res.pairs[k].earlier_index).second);
      EXPECT_TRUE(used_l.insert(res.pairs[k].later_index).second);
    }
    EXPECT_EQ(res.pairs.size() + res.unmatched_earlier.size(), a.size());
    EXPECT_EQ(res.pairs.size() + res.unmatched_later.size(), b.size());
  }
}

TEST(MaxAreaSlice, SingleVoxelPicksItsSlice) {
  Volume3D mask(8, 8, 8);
  mask.at(3, 4, 4) = 1.0f;
  EXPECT_EQ(stmixer::max_area_slice(mask), 3);
}

TEST(MaxAreaSlice, TieGoesToLowestSlice) {
  Volume3D mask(4, 8, 8);
  const int areas[4] = {1, 5, 5, 2};
  for (int iz = 0; iz < 4; ++iz) {
    for (int k = 0; k < areas[iz]; ++k) mask.at(iz, k / 8, k % 8) = 1.0f;
  }
  EXPECT_EQ(stmixer::max_area_slice(mask), 1);
}

TEST(MaxAreaSlice, MatchesCountingOnRandomMasks) {
  stmixer::RngStream rng(406, 0);
  for (int trial = 0; trial < 100; ++trial) {
    Volume3D mask(5, 6, 6);
    for (size_t i = 0; i < mask.numel(); ++i) {
      if (rng.uniform(0, 1) < 0.2) mask.voxels[i] = 1.0f;
    }
    mask.at(rng.uniform_int(5), 0, 0) = 1.0f;  // never empty

    int best = -1;
    long best_count = 0;
    for (int iz = 0; iz < mask.nz; ++iz) {
      long count = 0;
      for (int iy = 0; iy < mask.ny; ++iy) {
        for (int ix = 0; ix < mask.nx; ++ix) count += mask.at(iz, iy, ix) > 0.5f ? 1 : 0;
      }
      if (count > best_count) {
        best_count = count;
        best = iz;
      }
    }
    EXPECT_EQ(stmixer::max_area_slice(mask), best);
  }
}

TEST(MaxAreaSlice, EmptyMaskRejected) {
  EXPECT_THROW(stmixer::max_area_slice(Volume3D(4, 4, 4)), std::invalid_argument);
}

TEST(MinRect, SingleVoxelIsUnitSquare) {
  const auto m = stmixer::min_rect_longest_side({{0, 0}}, {1.0, 1.0});
  EXPECT_NEAR(m.value_mm, 1.0, 1e-12);
  EXPECT_GE(m.rect_angle, 0.0);
  EXPECT_LT(m.rect_angle, std::acos(-1.0) / 2);
}

TEST(MinRect, ThreeByFiveBlockMeasuresFive) {
  std::vector<std::array<int, 2>> voxels;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 5; ++c) voxels.push_back({r, c});
  }
  const auto m = stmixer::min_rect_longest_side(voxels, {1.0, 1.0});
  EXPECT_NEAR(m.value_mm, 5.0, 1e-12);
}

TEST(MinRect, DiagonalLineTiltsTheRectangle) {
  // Five voxels along the diagonal: the tilted rectangle (area 10) beats the
  // axis-aligned bounding square (area 25), so the long side is 5*sqrt(2).
  std::vector<std::array<int, 2>> voxels;
  for (int i = 0; i < 5; ++i) voxels.push_back({i, i});
  const auto m = stmixer::min_rect_longest_side(voxels, {1.0, 1.0});
  EXPECT_NEAR(m.value_mm, 5.0 * std::sqrt(2.0), 1e-9);

  const auto pts = oracle::voxel_corners(voxels, 1.0, 1.0);
  const double swept = oracle::angle_sweep_longest_side(pts);
  EXPECT_NEAR(m.value_mm, swept, 0.005 * swept);
}

TEST(MinRect, AnisotropicSpacingScalesTheSides) {
  const auto single = stmixer::min_rect_longest_side({{0, 0}}, {0.5, 2.0});
  EXPECT_NEAR(single.value_mm, 2.0, 1e-12);

  std::vector<std::array<int, 2>> voxels;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 5; ++c) voxels.push_back({r, c});
  }
  const auto block = stmixer::min_rect_longest_side(voxels, {2.0, 0.4});
  EXPECT_NEAR(block.value_mm, 6.0, 1e-12);
}

TEST(MinRect, MatchesAngleSweepOnRandomBlobs) {
  stmixer::RngStream rng(407, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const auto voxels = testutil::random_connected_voxels(rng, 12, 30);
    const std::array<double, 2> sp{rng.uniform(0.4, 2.5), rng.uniform(0.4, 2.5)};
    const auto m = stmixer::min_rect_longest_side(voxels, sp);
    const double swept = oracle::angle_sweep_longest_side(oracle::voxel_corners(voxels, sp[0], sp[1]));
    EXPECT_NEAR(m.value_mm, swept, 0.005 * swept) << "trial " << trial;
  }
}

TEST(MinRect, RejectsEmptyAndBadSpacing) {
  EXPECT_THROW(stmixer::min_rect_longest_side({}, {1.0, 1.0}), std::invalid_argument);
  EXPECT_THROW(stmixer::min_rect_longest_side({{0, 0}}, {0.0, 1.0}), std::invalid_argument);
  EXPECT_THROW(stmixer::min_rect_longest_side({{0, 0}}, {1.0, -1.0}), std::invalid_argument);
}

TEST(MeasureDiameter, UnitVoxelMeasuresInPlaneSpacing) {
  Volume3D mask(4, 4, 4);
  mask.at(2, 1, 3) = 1.0f;
  const auto m = stmixer::measure_diameter(mask);
  EXPECT_NEAR(m.value_mm, 1.0, 1e-12);
  EXPECT_EQ(m.slice_index, 2);

  Volume3D aniso(4, 4, 4, {5.0, 0.7, 0.7});  // z spacing must not leak into the value
  aniso.at(2, 1, 3) = 1.0f;
  EXPECT_NEAR(stmixer::measure_diameter(aniso).value_mm, 0.7, 1e-12);
}

TEST(MeasureDiameter, BlockMeasuresItsLongSide) {
  Volume3D mask(3, 4, 6);
  for (int iz = 0; iz < 2; ++iz) {
    for (int iy = 0; iy < 4; ++iy) {
      for (int ix = 0; ix < 6; ++ix) mask.at(iz, iy, ix) = 1.0f;
    }
  }
  const auto m = stmixer::measure_diameter(mask);
  EXPECT_NEAR(m.value_mm, 6.0, 1e-12);
  EXPECT_EQ(m.slice_index, 0);  // equal-area slices resolve to the lowest z
}

TEST(MeasureDiameter, UsesTheLargestAreaSlice) {
  Volume3D mask(6, 10, 10);
  mask.at(1, 2, 2) = 1.0f;
  mask.at(1, 2, 3) = 1.0f;
  for (int iy = 4; iy < 7; ++iy) {
    for (int ix = 4; ix < 7; ++ix) mask.at(4, iy, ix) = 1.0f;
  }
  const auto m = stmixer::measure_diameter(mask);
  EXPECT_EQ(m.slice_index, 4);
  EXPECT_NEAR(m.value_mm, 3.0, 1e-12);
}

TEST(MeasureDiameter, TranslationInvariant) {
  stmixer::RngStream rng(408, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const auto voxels = testutil::random_connected_voxels(rng, 8, 20);
    const std::array<double, 3> sp{1.0, rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0)};
    Volume3D base(4, 24, 24, sp);
    Volume3D moved(4, 24, 24, sp);
    const int dz = rng.uniform_int(3), dr = rng.uniform_int(10), dc = rng.uniform_int(10);
    for (const auto& p : voxels) {
      base.at(0, p[0], p[1]) = 1.0f;
      moved.at(dz, p[0] + dr, p[1] + dc) = 1.0f;
    }
    const auto a = stmixer::measure_diameter(base);
    const auto b = stmixer::measure_diameter(moved);
    EXPECT_NEAR(a.value_mm, b.value_mm, 1e-9);
    EXPECT_EQ(b.slice_index, dz);
  }
}

TEST(MeasureDiameter, ComposesSliceSelectionAndRectangleFit) {
  stmixer::RngStream rng(409, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const auto voxels = testutil::random_connected_voxels(rng, 10, 25);
    const std::array<double, 3> sp{2.0, rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0)};
    const auto mask = testutil::slice_mask(3, 12, 12, 1, voxels, sp);

    const int iz = stmixer::max_area_slice(mask);
    std::vector<std::array<int, 2>> collected;
    for (int iy = 0; iy < mask.ny; ++iy) {
      for (int ix = 0; ix < mask.nx; ++ix) {
        if (mask.at(iz, iy, ix) > 0.5f) collected.push_back({iy, ix});
      }
    }
    const auto direct = stmixer::min_rect_longest_side(collected, {sp[1], sp[2]});
    const auto full = stmixer::measure_diameter(mask);
    EXPECT_DOUBLE_EQ(full.value_mm, direct.value_mm);
    EXPECT_EQ(full.slice_index, iz);
  }
}

TEST(MeasureDiameter, BoundedByFarthestCornerDistance) {
  stmixer::RngStream rng(410, 0);
  for (int trial = 0; trial < 30; ++trial) {
    const auto voxels = testutil::random_connected_voxels(rng, 10, 25);
    const std::array<double, 3> sp{1.0, rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0)};
    const auto mask = testutil::slice_mask(1, 12, 12, 0, voxels, sp);
    const auto m = stmixer::measure_diameter(mask);

    const auto pts = oracle::voxel_corners(voxels, sp[1], sp[2]);
    double far = 0;
    for (size_t i = 0; i < pts.size(); ++i) {
      for (size_t j = i + 1; j < pts.size(); ++j) {
        far = std::max(far, std::hypot(pts[i].x - pts[j].x, pts[i].y - pts[j].y));
      }
    }
    EXPECT_LE(m.value_mm, far + 1e-9);
    EXPECT_GE(m.value_mm, far / std::sqrt(2.0) - 1e-9);
  }
}

TEST(MeasureDiameter, EmptyMaskRejected) {
  EXPECT_THROW(stmixer::measure_diameter(Volume3D(4, 4, 4)), std::invalid_argument);
}

TEST(LabelEvolution, GrowthBeyondThresholdIsDilatation) {
  EXPECT_EQ(stmixer::label_evolution(5.0, 7.0), EvolutionLabel::dilatation);
}

TEST(LabelEvolution, ShrinkageBeyondThreshold) {
  EXPECT_EQ(stmixer::label_evolution(7.0, 5.0), EvolutionLabel::shrinkage);
}

TEST(LabelEvolution, SmallChangeIsStability) {
  EXPECT_EQ(stmixer::label_evolution(5.0, 6.0), EvolutionLabel::stability);
  EXPECT_EQ(stmixer::label_evolution(6.0, 5.0), EvolutionLabel::stability);
}

TEST(LabelEvolution, ExactThresholdChangeIsStability) {
  EXPECT_EQ(stmixer::label_evolution(5.0, 6.5), EvolutionLabel::stability);
  EXPECT_EQ(stmixer::label_evolution(6.5, 5.0), EvolutionLabel::stability);
}

TEST(LabelEvolution, EqualDiametersAreStable) {
  stmixer::RngStream rng(411, 0);
  for (int trial = 0; trial < 100; ++trial) {
    const double d = rng.uniform(0.1, 30.0);
    EXPECT_EQ(stmixer::label_evolution(d, d), EvolutionLabel::stability);
  }
}

TEST(LabelEvolution, SwappingArgumentsFlipsGrowthAndShrinkage) {
  stmixer::RngStream rng(412, 0);
  for (int trial = 0; trial < 100; ++trial) {
    const double a = rng.uniform(1.0, 20.0);
    const double b = a + rng.uniform(1.6, 5.0);
    EXPECT_EQ(stmixer::label_evolution(a, b), EvolutionLabel::dilatation);
    EXPECT_EQ(stmixer::label_evolution(b, a), EvolutionLabel::shrinkage);
  }
}

TEST(LabelEvolution, CustomThreshold) {
  EXPECT_EQ(stmixer::label_evolution(5.0, 5.6, 0.5), EvolutionLabel::dilatation);
  EXPECT_EQ(stmixer::label_evolution(5.0, 5.4, 0.5), EvolutionLabel::stability);
}

TEST(LabelEvolution, NonPositiveDiameterRejected) {
  EXPECT_THROW(stmixer::label_evolution(0.0, 5.0), std::invalid_argument);
  EXPECT_THROW(stmixer::label_evolution(5.0, 0.0), std::invalid_argument);
  EXPECT_THROW(stmixer::label_evolution(-1.0, 5.0), std::invalid_argument);
}

}  // namespace

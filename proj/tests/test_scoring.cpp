#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lwfm/scoring.hpp"
#include "test_util.hpp"

namespace lwfm {
namespace {

using testing::random_map;
using testing::random_pixels;

TEST(CriticalScore, IdenticalRowsSumToK) {
  std::mt19937_64 rng(1);
  const PixelMatrix s = random_pixels(9, 4, rng);
  EXPECT_NEAR(critical_score(s, s, 5), 5.0, 1e-12);
  EXPECT_NEAR(critical_score(s, s, 9), 9.0, 1e-12);
}

TEST(CriticalScore, OrthogonalRowsScoreZero) {
  const PixelMatrix s(2, 2, {1, 0, 0, 1});
  const PixelMatrix q(2, 2, {0, 3, -2, 0});
  EXPECT_EQ(critical_score(s, q, 2), 0.0);
}

TEST(CriticalScore, PicksLargestCosines) {
  // Row cosines: 1, -1, 0, 1/sqrt(2).
  const PixelMatrix s(4, 2, {1, 0, 1, 0, 1, 0, 1, 0});
  const PixelMatrix q(4, 2, {2, 0, -1, 0, 0, 5, 1, 1});
  const CriticalSelection sel = select_critical(s, q, 2);
  EXPECT_EQ(sel.top_rows, (std::vector<std::size_t>{0, 3}));
  EXPECT_NEAR(sel.score, 1.0 + 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(critical_score(s, q, 4), 1.0 / std::sqrt(2.0), 1e-15);
}

TEST(CriticalScore, TiesGoToLowerRow) {
  const PixelMatrix s(3, 1, {1, 1, 1});
  const CriticalSelection sel = select_critical(s, s, 2);
  EXPECT_EQ(sel.top_rows, (std::vector<std::size_t>{0, 1}));
}

TEST(CriticalScore, RejectsBadK) {
  const PixelMatrix s(4, 2);
  EXPECT_THROW(critical_score(s, s, 0), std::invalid_argument);
  EXPECT_THROW(critical_score(s, s, 5), std::invalid_argument);
  EXPECT_THROW(critical_score(s, PixelMatrix(3, 2), 1), std::invalid_argument);
}

TEST(CriticalScore, MonotoneInK) {
  std::mt19937_64 rng(2);
  const PixelMatrix s = random_pixels(9, 4, rng), q = random_pixels(9, 4, rng);
  const CriticalSelection all = select_critical(s, q, 9);
  for (std::size_t k = 1; k < 9; ++k) {
    const double a = critical_score(s, q, k), b = critical_score(s, q, k + 1);
    // Adding the (k+1)-th cosine changes the sum by exactly that cosine.
    EXPECT_NEAR(b - a, all.cosines[all.top_rows[k]], 1e-14);
  }
}

TEST(GlobalScore, Cases) {
  std::mt19937_64 rng(3);
  const FeatureMap m = random_map(3, 3, 5, rng);
  EXPECT_NEAR(global_score(m, m), 1.0, 1e-12);
  std::vector<double> neg(m.values().begin(), m.values().end());
  for (double& v : neg) v = -v;
  EXPECT_NEAR(global_score(m, FeatureMap(3, 3, 5, neg)), -1.0, 1e-12);
  EXPECT_THROW(global_score(m, FeatureMap(3, 3, 4)), std::invalid_argument);
}

TEST(PairScore, CombinesMaxCriticalAndMeanGlobal) {
  const LayerScore two[] = {{4.0, 0.8}, {2.0, 0.6}};
  EXPECT_NEAR(pair_score(two, 0.25), 0.25 * 4.0 + 0.7, 1e-15);
  EXPECT_NEAR(pair_score(two, 0.0), 0.7, 1e-15);
  EXPECT_NEAR(pair_score(two, 1.0), 4.7, 1e-15);
  const LayerScore one[] = {{-1.0, 0.5}};
  EXPECT_NEAR(pair_score(one, 0.5), 0.0, 1e-15);
  EXPECT_THROW(pair_score(std::span<const LayerScore>{}, 1.0), std::invalid_argument);
}

TEST(ClassScore, MeanOverShots) {
  const double s[] = {1.0, 2.0, 4.5};
  EXPECT_NEAR(class_score(s, 3), 2.5, 1e-15);
  EXPECT_THROW(class_score(s, 2), std::invalid_argument);
}

TEST(PairConfig, EffectiveKTop) {
  PairConfig cfg;
  EXPECT_EQ(cfg.effective_k_top(9), 5u);
  EXPECT_EQ(cfg.effective_k_top(1), 1u);
  EXPECT_THROW(cfg.effective_k_top(4), std::invalid_argument);
}

struct PairFixture {
  std::vector<FeatureMap> support, query;
  std::vector<std::uint32_t> ids{7, 8};
};

PairFixture random_pair(std::mt19937_64& rng, std::size_t pooled = 3) {
  PairFixture f;
  f.support = {random_map(pooled, pooled, 4, rng), random_map(pooled, pooled, 6, rng)};
  f.query = {random_map(pooled, pooled, 4, rng), random_map(pooled, pooled, 6, rng)};
  return f;
}

// Straight-line re-derivation of one layer's scores without the matcher.
LayerScore layer_oracle(const FeatureMap& s, const FeatureMap& q,
                        const PairConfig& cfg) {
  const std::size_t n = s.pixel_count();
  Matrix corr(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double d = 0.0;
      for (std::size_t k = 0; k < s.c(); ++k) d += s.pixel(i)[k] * q.pixel(j)[k];
      corr(i, j) = d;
    }
  }
  std::vector<double> ws(n, 0.0), wq(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) z += std::exp(corr(i, j) / cfg.temperature);
    for (std::size_t i = 0; i < n; ++i) ws[i] += std::exp(corr(i, j) / cfg.temperature) / z;
  }
  for (std::size_t i = 0; i < n; ++i) {
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(corr(i, j) / cfg.temperature);
    for (std::size_t j = 0; j < n; ++j) wq[j] += std::exp(corr(i, j) / cfg.temperature) / z;
  }
  const FeatureMap rs = reweight(s, WeightVector{ws});
  const FeatureMap rq = reweight(q, WeightVector{wq});
  LayerScore out;
  out.global = global_score(rs, rq);
  Matrix cost(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) cost(i, j) = -cosine(rs.pixel(i), rq.pixel(j));
  }
  // Best total over all permutations, then top-k of that pairing.
  std::vector<std::size_t> perm(n), best;
  std::iota(perm.begin(), perm.end(), 0);
  double best_cost = 1e300;
  do {
    const double c = testing::assignment_cost(cost, perm);
    if (c < best_cost - 1e-12) {
      best_cost = c;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  std::vector<double> cos(n);
  for (std::size_t i = 0; i < n; ++i) cos[i] = -cost(i, best[i]);
  std::sort(cos.rbegin(), cos.rend());
  const std::size_t k = cfg.effective_k_top(n);
  for (std::size_t i = 0; i < k; ++i) out.critical += cos[i];
  return out;
}

TEST(TracePair, MatchesStraightLineOracle) {
  std::mt19937_64 rng(4);
  PairConfig cfg;
  cfg.pooled = 2;
  cfg.k_top = 2;
  cfg.alpha = 0.5;
  for (int trial = 0; trial < 30; ++trial) {
    const PairFixture f = random_pair(rng, 2);
    const ScoreBreakdown b = score_pair(f.support, f.query, f.ids, nullptr, cfg);
    LayerScore l0 = layer_oracle(f.support[0], f.query[0], cfg);
    LayerScore l1 = layer_oracle(f.support[1], f.query[1], cfg);
    EXPECT_NEAR(b.layers[0].critical, l0.critical, 1e-12);
    EXPECT_NEAR(b.layers[0].global, l0.global, 1e-12);
    EXPECT_NEAR(b.layers[1].critical, l1.critical, 1e-12);
    EXPECT_NEAR(b.combined,
                0.5 * std::max(l0.critical, l1.critical) + (l0.global + l1.global) / 2,
                1e-12);
  }
}

TEST(TracePair, IdenticalMapsScoreMaximal) {
  std::mt19937_64 rng(5);
  const PairFixture f = random_pair(rng);
  const PairConfig cfg;
  const ScoreBreakdown b = score_pair(f.support, f.support, f.ids, nullptr, cfg);
  for (const LayerScore& s : b.layers) {
    EXPECT_NEAR(s.critical, 5.0, 1e-12);
    EXPECT_NEAR(s.global, 1.0, 1e-12);
  }
  EXPECT_NEAR(b.combined, 0.25 * 5.0 + 1.0, 1e-12);
}

TEST(TracePair, InvariantUnderPixelPermutations) {
  std::mt19937_64 rng(6);
  const PairConfig cfg;
  const LayerChannels lc[] = {{7, 4}, {8, 6}};
  const MatcherParams matcher = init_matcher(lc, 9);
  for (int trial = 0; trial < 30; ++trial) {
    PairFixture f = random_pair(rng);
    PairFixture g = f;
    for (std::size_t l = 0; l < 2; ++l) {
      g.support[l] = testing::permute_pixels(f.support[l], testing::random_permutation(9, rng));
      g.query[l] = testing::permute_pixels(f.query[l], testing::random_permutation(9, rng));
    }
    for (const MatcherParams* m : {static_cast<const MatcherParams*>(nullptr), &matcher}) {
      const ScoreBreakdown a = score_pair(f.support, f.query, f.ids, m, cfg);
      const ScoreBreakdown b = score_pair(g.support, g.query, g.ids, m, cfg);
      EXPECT_NEAR(a.combined, b.combined, 1e-9);
    }
  }
}

TEST(TracePair, NearestNeighborNeverScoresBelowHungarian) {
  std::mt19937_64 rng(7);
  PairConfig hung;
  hung.k_top = 9;
  PairConfig nn = hung;
  nn.assign = AssignMethod::kNearestNeighbor;
  for (int trial = 0; trial < 30; ++trial) {
    const PairFixture f = random_pair(rng);
    const ScoreBreakdown a = score_pair(f.support, f.query, f.ids, nullptr, hung);
    const ScoreBreakdown b = score_pair(f.support, f.query, f.ids, nullptr, nn);
    for (std::size_t l = 0; l < 2; ++l) {
      EXPECT_GE(b.layers[l].critical + 1e-12, a.layers[l].critical);
      EXPECT_EQ(b.layers[l].global, a.layers[l].global);
    }
  }
}

TEST(TracePair, TraceRecordsMaxLayerAndMatcher) {
  std::mt19937_64 rng(8);
  const PairFixture f = random_pair(rng);
  const LayerChannels lc[] = {{7, 4}, {8, 6}};
  const MatcherParams matcher = init_matcher(lc, 1);
  const PairTrace t = trace_pair(f.support, f.query, f.ids, &matcher, PairConfig{});
  ASSERT_EQ(t.layers.size(), 2u);
  EXPECT_TRUE(t.layers[0].matcher_applied);
  EXPECT_EQ(t.layers[1].support_out.c(), 6u);
  const double c0 = t.layers[0].critical.score, c1 = t.layers[1].critical.score;
  EXPECT_EQ(t.max_layer, c1 > c0 ? 1u : 0u);
  EXPECT_TRUE(testing::is_permutation(t.layers[0].assignment.perm));
}

TEST(TracePair, SinglePixelForcesKOne) {
  std::mt19937_64 rng(9);
  const PairFixture f = random_pair(rng, 1);
  PairConfig cfg;
  cfg.pooled = 1;
  const ScoreBreakdown b = score_pair(f.support, f.query, f.ids, nullptr, cfg);
  EXPECT_NEAR(b.layers[0].critical, b.layers[0].global, 1e-12);
}

TEST(TracePair, RejectsBadInputs) {
  std::mt19937_64 rng(10);
  const PairFixture f = random_pair(rng);
  PairConfig cfg;
  cfg.pooled = 2;
  EXPECT_THROW(score_pair(f.support, f.query, f.ids, nullptr, cfg), std::invalid_argument);
  const std::uint32_t one[] = {7};
  EXPECT_THROW(score_pair(f.support, f.query, one, nullptr, PairConfig{}),
               std::invalid_argument);
  const LayerChannels lc[] = {{7, 4}};
  const MatcherParams partial = init_matcher(lc, 1);
  EXPECT_THROW(score_pair(f.support, f.query, f.ids, &partial, PairConfig{}),
               std::invalid_argument);
}

}  // namespace
}  // namespace lwfm

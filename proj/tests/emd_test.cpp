#include "mlnet/emd.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "mlnet/metrics.hpp"
#include "mlnet/rng.hpp"
#include "test_oracles.hpp"

namespace mlnet {
namespace {

SaliencyMap map_of(std::int64_t rows, std::int64_t cols,
                   std::vector<double> vals) {
  SaliencyMap m(rows, cols);
  m.v = std::move(vals);
  return m;
}

TEST(Emd, IdenticalMapsHaveZeroCost) {
  RngState rng(80);
  SaliencyMap a(5, 7);
  for (auto& x : a.v) x = rng.next_double(0.0, 1.0);
  EXPECT_EQ(emd(a, a), 0.0);
}

TEST(Emd, UnitMassOnePixelApart) {
  SaliencyMap a = map_of(1, 2, {1.0, 0.0});
  SaliencyMap b = map_of(1, 2, {0.0, 1.0});
  EXPECT_DOUBLE_EQ(emd(a, b), 1.0);
}

TEST(Emd, UnitMassDiagonalAndLongShift) {
  SaliencyMap a = map_of(1, 5, {1.0, 0.0, 0.0, 0.0, 0.0});
  SaliencyMap b = map_of(1, 5, {0.0, 0.0, 0.0, 0.0, 1.0});
  EXPECT_DOUBLE_EQ(emd(a, b), 4.0);
  SaliencyMap c = map_of(2, 2, {1.0, 0.0, 0.0, 0.0});
  SaliencyMap d = map_of(2, 2, {0.0, 0.0, 0.0, 1.0});
  EXPECT_DOUBLE_EQ(emd(c, d), std::sqrt(2.0));
}

TEST(Emd, MatchesAllBasisOracleOnTinyInstances) {
  RngState rng(81);
  for (int rep = 0; rep < 40; ++rep) {
    SaliencyMap a(2, 2), b(2, 2);
    for (auto& x : a.v) x = rng.next_double(0.0, 1.0);
    for (auto& x : b.v) x = rng.next_double(0.0, 1.0);
    if (rep % 3 == 0) {
      a.v[rng.next_below(4)] = 0.0;  // exercise empty bins
      b.v[rng.next_below(4)] = 0.0;
    }
    const double got = emd(a, b);
    const double want = test::oracle_emd_small(a, b);
    EXPECT_NEAR(got, want, 1e-9);
  }
}

TEST(Emd, MatchesFrozenLpValuesOn4x4Maps) {
  // Expected costs computed offline with an independent exact LP solve of
  // the 16x16 transportation program.
  SaliencyMap a = map_of(4, 4, {.1, .2, .0, .1, .0, .3, .1, .2,
                                .4, .0, .2, .1, .1, .1, .0, .1});
  SaliencyMap b = map_of(4, 4, {.3, .0, .1, .0, .1, .1, .0, .2,
                                .0, .2, .3, .1, .2, .1, .2, .1});
  EXPECT_NEAR(emd(a, b), 0.623606797749979, 1e-9);

  SaliencyMap c = map_of(4, 4, {0.05, 0.35, 0.10, 0.00, 0.20, 0.00, 0.05,
                                0.15, 0.00, 0.10, 0.25, 0.05, 0.30, 0.05,
                                0.00, 0.35});
  SaliencyMap d = map_of(4, 4, {0.25, 0.00, 0.30, 0.05, 0.00, 0.15, 0.05,
                                0.10, 0.20, 0.05, 0.00, 0.25, 0.05, 0.30,
                                0.10, 0.15});
  EXPECT_NEAR(emd(c, d), 0.706066017177982, 1e-9);
}

TEST(Emd, SymmetricInArguments) {
  RngState rng(82);
  for (int rep = 0; rep < 10; ++rep) {
    SaliencyMap a(3, 4), b(3, 4);
    for (auto& x : a.v) x = rng.next_double(0.0, 1.0);
    for (auto& x : b.v) x = rng.next_double(0.0, 1.0);
    EXPECT_NEAR(emd(a, b), emd(b, a), 1e-10);
  }
}

TEST(Emd, TriangleInequalityOnRandomTriples) {
  RngState rng(83);
  for (int rep = 0; rep < 20; ++rep) {
    SaliencyMap a(3, 3), b(3, 3), c(3, 3);
    for (auto& x : a.v) x = rng.next_double(0.01, 1.0);
    for (auto& x : b.v) x = rng.next_double(0.01, 1.0);
    for (auto& x : c.v) x = rng.next_double(0.01, 1.0);
    EXPECT_LE(emd(a, c), emd(a, b) + emd(b, c) + 1e-9);
  }
}

TEST(Emd, RejectsZeroSumMap) {
  SaliencyMap a = map_of(1, 2, {0.0, 0.0});
  SaliencyMap b = map_of(1, 2, {0.5, 0.5});
  EXPECT_THROW(emd(a, b), NumericError);
}

TEST(Emd, BinBudgetAndDownsampling) {
  SaliencyMap big(64, 64);
  RngState rng(84);
  for (auto& x : big.v) x = rng.next_double(0.0, 1.0);

  EmdOptions strict;
  strict.max_bins = 1024;
  strict.allow_downsample = false;
  EXPECT_THROW(emd(big, big, strict), ValueError);

  EmdOptions lenient;
  lenient.max_bins = 1024;
  EXPECT_EQ(emd(big, big, lenient), 0.0);

  // Random pair over the budget: block aggregation kicks in (factor 2 here)
  // and the result is deterministic.
  SaliencyMap a(40, 40), b(40, 40);
  for (auto& x : a.v) x = rng.next_double(0.0, 1.0);
  for (auto& x : b.v) x = rng.next_double(0.0, 1.0);
  const double r1 = emd(a, b, lenient);
  const double r2 = emd(a, b, lenient);
  EXPECT_EQ(r1, r2);
  EXPECT_GT(r1, 0.0);
}

TEST(Emd, DownsampleFactorScalesDistances) {
  // Two unit masses 32 pixels apart on a 64x64 grid; with a factor-2
  // aggregation the mass lands in blocks 16 apart, and block centers are 32
  // original pixels apart, so the cost stays 32.
  SaliencyMap a(64, 64), b(64, 64);
  a.at(10, 10) = 1.0;
  b.at(10, 42) = 1.0;
  EmdOptions opt;
  opt.max_bins = 1024;
  EXPECT_NEAR(emd(a, b, opt), 32.0, 1e-12);
}

}  // namespace
}  // namespace mlnet

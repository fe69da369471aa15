#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <numeric>

#include "fl/secagg.hpp"

using namespace fl;
using namespace fl::secagg;

namespace {

RoundKeys keys_for(std::span<const std::uint32_t> partners, std::uint64_t seed = 4,
                   std::uint8_t epoch = 0) {
  return RoundKeys::provision(seed_from_u64(seed), partners, epoch);
}

std::vector<std::uint64_t> dense_coords(std::size_t dim) {
  std::vector<std::uint64_t> coords(dim);
  std::iota(coords.begin(), coords.end(), 0);
  return coords;
}

model::GradientUpdate update_with(std::vector<double> trunk, std::uint64_t nnz,
                                  std::uint64_t rows = 1, std::uint64_t x_nnz = 1) {
  model::GradientUpdate g;
  g.trunk_grad = std::move(trunk);
  g.nnz = nnz;
  g.n_samples = rows;
  g.x_nnz = x_nnz;
  return g;
}

}  // namespace

TEST(SelectSubset, FullFractionIsTheIdentityRange) {
  const auto keys = keys_for(std::vector<std::uint32_t>{0, 1});
  const auto coords = select_subset(keys.subset_seed, 0, 16, 16);
  EXPECT_EQ(coords, dense_coords(16));
}

TEST(SelectSubset, AllHoldersAgree) {
  const auto keys = keys_for(std::vector<std::uint32_t>{0, 1, 2});
  const auto a = select_subset(keys.view_for(0).subset_seed, 5, 1000, 100);
  const auto b = select_subset(keys.view_for(2).subset_seed, 5, 1000, 100);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.size(), 100u);
  for (std::size_t i = 1; i < a.size(); ++i) EXPECT_LT(a[i - 1], a[i]);
}

TEST(SelectSubset, KOutOfRangeRejected) {
  const auto keys = keys_for(std::vector<std::uint32_t>{0, 1});
  EXPECT_THROW(select_subset(keys.subset_seed, 0, 10, 0), ConfigError);
  EXPECT_THROW(select_subset(keys.subset_seed, 0, 10, 11), ConfigError);
}

TEST(SelectSubset, CoordinateFrequenciesAreUniform) {
  const auto keys = keys_for(std::vector<std::uint32_t>{0, 1});
  std::vector<std::uint32_t> hits(100, 0);
  const int rounds = 10000;
  for (int r = 0; r < rounds; ++r)
    for (const auto c : select_subset(keys.subset_seed, r, 100, 10)) hits[c]++;
  for (const auto h : hits)
    EXPECT_NEAR(static_cast<double>(h) / rounds, 0.1, 0.01);
}

TEST(ApplyWeight, DataProportionalReproducesPooledMean) {
  // Two partners with 1 and 3 observed entries: the weighted sum of the
  // per-entry means equals the pooled per-entry mean gradient.
  const std::vector<double> sum1 = {2.0, -4.0};   // entry-level gradient sums
  const std::vector<double> sum2 = {3.0, 9.0};
  const auto g1 = update_with({sum1[0] / 1.0, sum1[1] / 1.0}, 1);
  const auto g2 = update_with({sum2[0] / 3.0, sum2[1] / 3.0}, 3);
  RoundTotals totals;
  totals.sum_entries = 4;
  totals.n_partners = 2;
  const auto w1 = apply_weight(g1, WeightScheme::DATA_PROPORTIONAL, totals);
  const auto w2 = apply_weight(g2, WeightScheme::DATA_PROPORTIONAL, totals);
  for (std::size_t i = 0; i < 2; ++i) {
    const double pooled = (sum1[i] + sum2[i]) / 4.0;
    EXPECT_NEAR(w1[i] + w2[i], pooled, 1e-12);
  }
}

TEST(ApplyWeight, UniformWithIdenticalGradsIsTheCommonGrad) {
  const auto g = update_with({1.5, -0.5, 2.0}, 7);
  RoundTotals totals;
  totals.n_partners = 4;
  const auto w = apply_weight(g, WeightScheme::UNIFORM, totals);
  std::vector<double> agg(3, 0.0);
  for (int p = 0; p < 4; ++p)
    for (std::size_t i = 0; i < 3; ++i) agg[i] += w[i];
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(agg[i], g.trunk_grad[i], 1e-12);
}

TEST(ApplyWeight, SinglePartnerIsIdentityUnderEveryScheme) {
  const auto g = update_with({0.25, -1.0}, 5, 3, 17);
  RoundTotals totals;
  totals.sum_entries = 5;
  totals.sum_rows = 3;
  totals.sum_x_nnz = 17;
  totals.n_partners = 1;
  for (const auto scheme : {WeightScheme::DATA_PROPORTIONAL, WeightScheme::UNIFORM,
                            WeightScheme::NNZ_PROPORTIONAL}) {
    const auto w = apply_weight(g, scheme, totals);
    for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(w[i], g.trunk_grad[i], 1e-12);
  }
}

TEST(ApplyWeight, ZeroDenominatorRejected) {
  const auto g = update_with({1.0}, 0);
  RoundTotals totals;  // all zero
  EXPECT_THROW(apply_weight(g, WeightScheme::DATA_PROPORTIONAL, totals), ConfigError);
  EXPECT_THROW(apply_weight(g, WeightScheme::NNZ_PROPORTIONAL, totals), ConfigError);
}

TEST(Mask, PairwiseMasksCancelForTwoPartners) {
  const std::vector<std::uint32_t> partners = {0, 1};
  const auto keys = keys_for(partners);
  const FixedPointCodec codec;
  const auto coords = dense_coords(8);
  const std::vector<double> g1 = {1.0, -2.0, 0.5, 0.0, 3.0, -0.25, 7.0, 0.125};
  const std::vector<double> g2 = {0.5, 0.5, -0.5, 1.0, -3.0, 0.25, -7.0, 2.0};
  const auto m1 = mask(g1, keys.view_for(0), partners, 3, coords, codec, 0);
  const auto m2 = mask(g2, keys.view_for(1), partners, 3, coords, codec, 0);
  // Subtract the two common-mask streams: what remains is the sum of the
  // plain encodings, pairwise masks cancelled exactly.
  std::vector<MaskedVector> subs = {m1, m2};
  const auto ring = aggregate(subs, 2);
  const auto cleared = unmask(ring, keys.common_seed, partners, 3, coords, codec);
  for (std::size_t i = 0; i < coords.size(); ++i)
    EXPECT_NEAR(cleared[i], g1[i] + g2[i], 2.0 * std::ldexp(1.0, -24));
}

TEST(Mask, ChangingOneCoordinateChangesExactlyOneMaskedValue) {
  const std::vector<std::uint32_t> partners = {0, 1, 2};
  const auto keys = keys_for(partners);
  const FixedPointCodec codec;
  const auto coords = dense_coords(16);
  std::vector<double> g(16, 0.5);
  const auto base = mask(g, keys.view_for(1), partners, 9, coords, codec, 0);
  g[7] = -0.5;
  const auto changed = mask(g, keys.view_for(1), partners, 9, coords, codec, 0);
  std::size_t diffs = 0;
  for (std::size_t i = 0; i < 16; ++i)
    diffs += base.masked_values[i] != changed.masked_values[i];
  EXPECT_EQ(diffs, 1u);
}

TEST(Mask, MissingPairwiseSeedRejected) {
  const std::vector<std::uint32_t> partners = {0, 1, 2};
  const auto keys = keys_for(std::vector<std::uint32_t>{0, 1});  // no seed for 2
  const FixedPointCodec codec;
  const auto coords = dense_coords(4);
  const std::vector<double> g(4, 1.0);
  EXPECT_THROW(mask(g, keys.view_for(0), partners, 0, coords, codec, 0),
               ProtocolError);
}

TEST(Mask, MaskedZeroUpdateLooksUniform) {
  // Byte-frequency flatness of masked values for an all-zero update.
  const std::vector<std::uint32_t> partners = {0, 1, 2};
  const auto keys = keys_for(partners);
  const FixedPointCodec codec;
  const std::size_t dim = 12500;  // 1e5 bytes from the low byte lane alone
  const auto coords = dense_coords(dim);
  const std::vector<double> zeros(dim, 0.0);
  std::array<std::uint64_t, 256> hist{};
  std::uint64_t total = 0;
  for (std::uint64_t round = 0; round < 2; ++round) {
    const auto m = mask(zeros, keys.view_for(0), partners, round, coords, codec, 0);
    for (const auto v : m.masked_values) {
      for (int b = 0; b < 8; ++b) {
        hist[(v >> (8 * b)) & 0xFF]++;
        ++total;
      }
    }
  }
  const double expected = static_cast<double>(total) / 256.0;
  double stat = 0.0;
  for (const auto h : hist) {
    const double d = static_cast<double>(h) - expected;
    stat += d * d / expected;
  }
  boost::math::chi_squared dist(255);
  const double p = 1.0 - boost::math::cdf(dist, stat);
  EXPECT_GT(p, 0.01);
}

TEST(Aggregate, EndToEndMatchesPlaintextSum) {
  const std::vector<std::uint32_t> partners = {0, 1, 2};
  const auto keys = keys_for(partners, 8);
  const FixedPointCodec codec;
  SeededStream s(seed_from_u64(9), 0);
  const std::size_t dim = 128;
  const auto coords = dense_coords(dim);
  std::vector<std::vector<double>> updates(3, std::vector<double>(dim));
  std::vector<double> expected(dim, 0.0);
  std::vector<MaskedVector> subs;
  for (std::uint32_t p = 0; p < 3; ++p) {
    for (std::size_t i = 0; i < dim; ++i) {
      updates[p][i] = (s.next_unit() - 0.5) * 50.0;
      expected[i] += updates[p][i];
    }
    subs.push_back(mask(updates[p], keys.view_for(p), partners, 4, coords, codec, 0));
  }
  const auto ring = aggregate(subs, 3);
  const auto cleared = unmask(ring, keys.common_seed, partners, 4, coords, codec);
  for (std::size_t i = 0; i < dim; ++i)
    EXPECT_NEAR(cleared[i], expected[i], 3.0 * std::ldexp(1.0, -24));
}

TEST(Aggregate, WithheldSubmissionRaisesMissingPartner) {
  const std::vector<std::uint32_t> partners = {0, 1, 2};
  const auto keys = keys_for(partners);
  const FixedPointCodec codec;
  const auto coords = dense_coords(4);
  const std::vector<double> g(4, 1.0);
  std::vector<MaskedVector> subs = {
      mask(g, keys.view_for(0), partners, 0, coords, codec, 0),
      mask(g, keys.view_for(1), partners, 0, coords, codec, 0)};
  EXPECT_THROW(aggregate(subs, 3), MissingPartnerError);
}

TEST(Aggregate, MixedRoundsOrCoordsRejected) {
  const std::vector<std::uint32_t> partners = {0, 1};
  const auto keys = keys_for(partners);
  const FixedPointCodec codec;
  const auto coords = dense_coords(4);
  const std::vector<double> g(4, 1.0);
  auto a = mask(g, keys.view_for(0), partners, 0, coords, codec, 0);
  auto b = mask(g, keys.view_for(1), partners, 1, coords, codec, 0);
  std::vector<MaskedVector> subs = {a, b};
  EXPECT_THROW(aggregate(subs, 2), ProtocolError);
  b = mask(g, keys.view_for(0), partners, 0, coords, codec, 0);  // duplicate sender
  subs = {a, b};
  EXPECT_THROW(aggregate(subs, 2), ProtocolError);
}

TEST(Unmask, ServerViewIsUncorrelatedWithTheTrueSum) {
  // Without the common seed the aggregate decodes to noise: Pearson
  // correlation against the true sum stays near zero.
  const std::vector<std::uint32_t> partners = {0, 1, 2};
  const auto keys = keys_for(partners, 10);
  const FixedPointCodec codec;
  SeededStream s(seed_from_u64(11), 0);
  const std::size_t dim = 10000;
  const auto coords = dense_coords(dim);
  std::vector<double> expected(dim, 0.0);
  std::vector<MaskedVector> subs;
  for (std::uint32_t p = 0; p < 3; ++p) {
    std::vector<double> g(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      g[i] = (s.next_unit() - 0.5) * 20.0;
      expected[i] += g[i];
    }
    subs.push_back(mask(g, keys.view_for(p), partners, 0, coords, codec, 0));
  }
  const auto ring = aggregate(subs, 3);
  std::vector<double> server_view(dim);
  for (std::size_t i = 0; i < dim; ++i) server_view[i] = codec.decode(ring[i]);

  double mx = 0, my = 0;
  for (std::size_t i = 0; i < dim; ++i) {
    mx += server_view[i];
    my += expected[i];
  }
  mx /= dim;
  my /= dim;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < dim; ++i) {
    sxy += (server_view[i] - mx) * (expected[i] - my);
    sxx += (server_view[i] - mx) * (server_view[i] - mx);
    syy += (expected[i] - my) * (expected[i] - my);
  }
  const double r = sxy / std::sqrt(sxx * syy);
  EXPECT_LT(std::fabs(r), 0.05);

  // Partners holding the common seed recover the sum exactly.
  const auto cleared = unmask(ring, keys.common_seed, partners, 0, coords, codec);
  for (std::size_t i = 0; i < dim; i += 997)
    EXPECT_NEAR(cleared[i], expected[i], 3.0 * std::ldexp(1.0, -24));
}

TEST(Unmask, SinglePartnerZeroUpdateIsZero) {
  const std::vector<std::uint32_t> partners = {5};
  const auto keys = keys_for(partners);
  const FixedPointCodec codec;
  const auto coords = dense_coords(6);
  const std::vector<double> zeros(6, 0.0);
  std::vector<MaskedVector> subs = {
      mask(zeros, keys.view_for(5), partners, 2, coords, codec, 0)};
  const auto cleared =
      unmask(aggregate(subs, 1), keys.common_seed, partners, 2, coords, codec);
  for (const double v : cleared) EXPECT_NEAR(v, 0.0, std::ldexp(1.0, -24));
}

TEST(Scatter, DeltaIsZeroOutsideTheSubset) {
  const std::vector<std::uint64_t> coords = {1, 4, 7};
  const std::vector<double> values = {0.5, -0.5, 2.0};
  const auto delta = scatter_update(10, coords, values);
  EXPECT_EQ(delta.size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) {
    if (i == 1)
      EXPECT_DOUBLE_EQ(delta[i], 0.5);
    else if (i == 4)
      EXPECT_DOUBLE_EQ(delta[i], -0.5);
    else if (i == 7)
      EXPECT_DOUBLE_EQ(delta[i], 2.0);
    else
      EXPECT_DOUBLE_EQ(delta[i], 0.0);
  }
  EXPECT_THROW(scatter_update(5, coords, values), DimensionError);
}

TEST(Scatter, FullSubsetIsDenseEqualToTheValues) {
  const auto coords = dense_coords(6);
  const std::vector<double> values = {1, 2, 3, 4, 5, 6};
  EXPECT_EQ(scatter_update(6, coords, values), values);
}

TEST(Wire, MaskedVectorRoundTripsThroughWireFormat) {
  MaskedVector m;
  m.round_index = 12;
  m.sender = 3;
  m.coords = {0, 5, 9};
  m.masked_values = {1u, ~std::uint64_t{0}, 42u};
  m.weight_tag = 2;
  const auto bytes = m.wire();
  // round u64 | sender u32 | k u64 | coords | values | tag u8
  EXPECT_EQ(bytes.size(), 8 + 4 + 8 + 3 * 8 + 3 * 8 + 1);
  const auto back = MaskedVector::from_wire(bytes);
  EXPECT_EQ(back.round_index, m.round_index);
  EXPECT_EQ(back.sender, m.sender);
  EXPECT_EQ(back.coords, m.coords);
  EXPECT_EQ(back.masked_values, m.masked_values);
  EXPECT_EQ(back.weight_tag, m.weight_tag);
}

TEST(Keys, ServerViewHoldsNoSecrets) {
  // provision() gives partners pairwise seeds plus the common and subset
  // seeds; the aggregator is simply never handed a view.
  const std::vector<std::uint32_t> partners = {0, 1, 2, 3};
  const auto keys = keys_for(partners);
  for (const auto p : partners) {
    const auto view = keys.view_for(p);
    EXPECT_EQ(view.pairwise.size(), 3u);
    EXPECT_EQ(view.common_seed, keys.common_seed);
  }
  // Pair seeds are symmetric.
  EXPECT_EQ(keys.view_for(1).pairwise.at(3).bytes, keys.view_for(3).pairwise.at(1).bytes);
}

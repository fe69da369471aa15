#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fl/fixed_point.hpp"
#include "fl/model.hpp"
#include "fl/rng.hpp"

namespace fl::secagg {

enum class WeightScheme : std::uint8_t {
  DATA_PROPORTIONAL = 0,  // each observed label entry weighs the same
  UNIFORM = 1,            // each partner weighs the same
  NNZ_PROPORTIONAL = 2,   // by feature non-zeros in the mini-batch
};

const char* to_string(WeightScheme s);
WeightScheme weight_scheme_from_string(const std::string& s);

// What a single partner holds: one seed per peer, plus the common and
// subset seeds every partner shares. The aggregator holds none of these.
struct PartnerKeyView {
  std::uint32_t me = 0;
  std::map<std::uint32_t, SeedKey> pairwise;  // peer id -> pair seed
  SeedKey common_seed;
  SeedKey subset_seed;
  std::uint8_t epoch = 0;
};

// Full key table as provisioned by the trusted setup; only views ever
// reach the organizations.
struct RoundKeys {
  std::map<std::pair<std::uint32_t, std::uint32_t>, SeedKey> pairwise_seeds;
  SeedKey common_seed;
  SeedKey subset_seed;
  std::uint8_t epoch = 0;

  static RoundKeys provision(const SeedKey& setup_seed,
                             std::span<const std::uint32_t> partners,
                             std::uint8_t epoch);
  PartnerKeyView view_for(std::uint32_t partner) const;
};

// A partner's masked contribution at the round's coordinate subset.
struct MaskedVector {
  std::uint64_t round_index = 0;
  std::uint32_t sender = 0;
  std::vector<std::uint64_t> coords;         // sorted, identical across senders
  std::vector<std::uint64_t> masked_values;  // ring elements
  std::uint8_t weight_tag = 0;

  std::vector<std::uint8_t> wire() const;
  static MaskedVector from_wire(std::span<const std::uint8_t> bytes);
};

// k distinct coordinates, uniform without replacement, identical for all
// holders of the subset seed. k == dim degenerates to the full range.
std::vector<std::uint64_t> select_subset(const SeedKey& subset_seed,
                                         std::uint64_t round_index, std::uint64_t dim,
                                         std::uint64_t k);

// Public per-round denominators, exchanged in cleartext.
struct RoundTotals {
  std::uint64_t sum_entries = 0;
  std::uint64_t sum_rows = 0;
  std::uint64_t sum_x_nnz = 0;
  std::uint32_t n_partners = 0;
};

// Scaling factor applied to the partner's per-entry-mean gradient.
double partner_weight(const model::GradientUpdate& g, WeightScheme scheme,
                      const RoundTotals& totals);
// The weighted flattened trunk vector of one partner.
std::vector<double> apply_weight(const model::GradientUpdate& g, WeightScheme scheme,
                                 const RoundTotals& totals);

MaskedVector mask(std::span<const double> update, const PartnerKeyView& keys,
                  std::span<const std::uint32_t> partners, std::uint64_t round_index,
                  std::span<const std::uint64_t> coords, const FixedPointCodec& codec,
                  std::uint8_t weight_tag);

// Coordinate-wise modular sum of exactly P submissions. Pairwise masks
// cancel here; the result still carries the P common-mask streams.
std::vector<std::uint64_t> aggregate(std::span<const MaskedVector> submissions,
                                     std::size_t n_partners);

std::vector<double> unmask(std::span<const std::uint64_t> ring_sum,
                           const SeedKey& common_seed,
                           std::span<const std::uint32_t> partners,
                           std::uint64_t round_index,
                           std::span<const std::uint64_t> coords,
                           const FixedPointCodec& codec);

// Dense delta: agg values inside the subset, zero elsewhere.
std::vector<double> scatter_update(std::size_t dense_dim,
                                   std::span<const std::uint64_t> coords,
                                   std::span<const double> agg_values);

}  // namespace fl::secagg

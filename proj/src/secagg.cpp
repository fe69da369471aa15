#include "fl/secagg.hpp"

#include <algorithm>
#include <numeric>

namespace fl::secagg {

const char* to_string(WeightScheme s) {
  switch (s) {
    case WeightScheme::DATA_PROPORTIONAL: return "DATA_PROPORTIONAL";
    case WeightScheme::UNIFORM: return "UNIFORM";
    case WeightScheme::NNZ_PROPORTIONAL: return "NNZ_PROPORTIONAL";
  }
  return "?";
}

WeightScheme weight_scheme_from_string(const std::string& s) {
  if (s == "DATA_PROPORTIONAL") return WeightScheme::DATA_PROPORTIONAL;
  if (s == "UNIFORM") return WeightScheme::UNIFORM;
  if (s == "NNZ_PROPORTIONAL") return WeightScheme::NNZ_PROPORTIONAL;
  throw ConfigError(
      "weighting: expected DATA_PROPORTIONAL, UNIFORM or NNZ_PROPORTIONAL, got '" + s +
      "'");
}

RoundKeys RoundKeys::provision(const SeedKey& setup_seed,
                               std::span<const std::uint32_t> partners,
                               std::uint8_t epoch) {
  RoundKeys keys;
  keys.epoch = epoch;
  for (std::size_t i = 0; i < partners.size(); ++i) {
    for (std::size_t j = i + 1; j < partners.size(); ++j) {
      const auto a = std::min(partners[i], partners[j]);
      const auto b = std::max(partners[i], partners[j]);
      keys.pairwise_seeds[{a, b}] =
          derive_key(setup_seed, pair_label(StreamPurpose::KEY_PAIR, a, b, epoch));
    }
  }
  keys.common_seed =
      derive_key(setup_seed, stream_label(StreamPurpose::KEY_COMMON, 0, 0, epoch));
  keys.subset_seed =
      derive_key(setup_seed, stream_label(StreamPurpose::KEY_SUBSET, 0, 0, epoch));
  return keys;
}

PartnerKeyView RoundKeys::view_for(std::uint32_t partner) const {
  PartnerKeyView view;
  view.me = partner;
  view.epoch = epoch;
  view.common_seed = common_seed;
  view.subset_seed = subset_seed;
  for (const auto& [pair, seed] : pairwise_seeds) {
    if (pair.first == partner) view.pairwise[pair.second] = seed;
    if (pair.second == partner) view.pairwise[pair.first] = seed;
  }
  return view;
}

std::vector<std::uint8_t> MaskedVector::wire() const {
  ByteWriter w;
  w.put_u64(round_index);
  w.put_u32(sender);
  w.put_u64(coords.size());
  for (const auto c : coords) w.put_u64(c);
  for (const auto v : masked_values) w.put_u64(v);
  w.put_u8(weight_tag);
  return w.take();
}

MaskedVector MaskedVector::from_wire(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  MaskedVector m;
  m.round_index = r.get_u64();
  m.sender = r.get_u32();
  const auto k = r.get_u64();
  m.coords.resize(k);
  for (auto& c : m.coords) c = r.get_u64();
  m.masked_values.resize(k);
  for (auto& v : m.masked_values) v = r.get_u64();
  m.weight_tag = r.get_u8();
  if (!r.done()) throw IoError("trailing bytes in masked vector");
  return m;
}

std::vector<std::uint64_t> select_subset(const SeedKey& subset_seed,
                                         std::uint64_t round_index, std::uint64_t dim,
                                         std::uint64_t k) {
  if (k == 0 || k > dim) throw ConfigError("select_subset: k out of range");
  std::vector<std::uint64_t> all(dim);
  std::iota(all.begin(), all.end(), 0);
  if (k == dim) return all;
  SeededStream s(subset_seed,
                 stream_label(StreamPurpose::SUBSET, 0, 0, 0,
                              static_cast<std::uint32_t>(round_index)));
  // Partial Fisher-Yates: first k entries become the sample.
  for (std::uint64_t i = 0; i < k; ++i) {
    const std::uint64_t j = i + s.next_below(dim - i);
    std::swap(all[i], all[j]);
  }
  all.resize(k);
  std::sort(all.begin(), all.end());
  return all;
}

double partner_weight(const model::GradientUpdate& g, WeightScheme scheme,
                      const RoundTotals& totals) {
  switch (scheme) {
    case WeightScheme::DATA_PROPORTIONAL:
      if (totals.sum_entries == 0) throw ConfigError("apply_weight: zero entry total");
      return static_cast<double>(g.nnz) / static_cast<double>(totals.sum_entries);
    case WeightScheme::UNIFORM:
      if (totals.n_partners == 0) throw ConfigError("apply_weight: zero partners");
      return 1.0 / static_cast<double>(totals.n_partners);
    case WeightScheme::NNZ_PROPORTIONAL:
      if (totals.sum_x_nnz == 0) throw ConfigError("apply_weight: zero nnz total");
      return static_cast<double>(g.x_nnz) / static_cast<double>(totals.sum_x_nnz);
  }
  throw ConfigError("unknown weight scheme");
}

std::vector<double> apply_weight(const model::GradientUpdate& g, WeightScheme scheme,
                                 const RoundTotals& totals) {
  const double w = partner_weight(g, scheme, totals);
  std::vector<double> scaled(g.trunk_grad.size());
  for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] = w * g.trunk_grad[i];
  return scaled;
}

MaskedVector mask(std::span<const double> update, const PartnerKeyView& keys,
                  std::span<const std::uint32_t> partners, std::uint64_t round_index,
                  std::span<const std::uint64_t> coords, const FixedPointCodec& codec,
                  std::uint8_t weight_tag) {
  const auto round32 = static_cast<std::uint32_t>(round_index);
  MaskedVector out;
  out.round_index = round_index;
  out.sender = keys.me;
  out.weight_tag = weight_tag;
  out.coords.assign(coords.begin(), coords.end());
  out.masked_values.resize(coords.size());

  for (std::size_t t = 0; t < coords.size(); ++t) {
    if (coords[t] >= update.size())
      throw DimensionError("mask: coordinate outside the update vector");
    out.masked_values[t] = codec.encode(clip_gradient(update[coords[t]]));
  }

  // Pairwise cancelling masks: the lower-id side adds, the higher-id side
  // subtracts, so they vanish in the aggregate.
  for (const auto peer : partners) {
    if (peer == keys.me) continue;
    const auto it = keys.pairwise.find(peer);
    if (it == keys.pairwise.end())
      throw ProtocolError("mask: missing pairwise seed for peer " + std::to_string(peer));
    // Seeds are already epoch-specific, so labels carry only the round.
    SeededStream s(it->second, stream_label(StreamPurpose::PAIR_MASK, 0, 0, 0, round32));
    const bool add = keys.me < peer;
    for (std::size_t t = 0; t < coords.size(); ++t) {
      const std::uint64_t m = s.next_u64();
      out.masked_values[t] = add ? codec.add(out.masked_values[t], m)
                                 : codec.sub(out.masked_values[t], m);
    }
  }

  // Per-partner common mask, unknown to the aggregator; removable only by
  // holders of the common seed.
  {
    SeededStream s(keys.common_seed,
                   stream_label(StreamPurpose::COMMON_MASK,
                                static_cast<std::uint8_t>(keys.me), 0, 0, round32));
    for (std::size_t t = 0; t < coords.size(); ++t)
      out.masked_values[t] = codec.add(out.masked_values[t], s.next_u64());
  }
  return out;
}

std::vector<std::uint64_t> aggregate(std::span<const MaskedVector> submissions,
                                     std::size_t n_partners) {
  if (submissions.size() < n_partners)
    throw MissingPartnerError("aggregate: " + std::to_string(submissions.size()) +
                              " of " + std::to_string(n_partners) +
                              " submissions present");
  if (submissions.size() > n_partners)
    throw ProtocolError("aggregate: more submissions than partners");
  const auto& first = submissions.front();
  std::vector<std::uint64_t> sum(first.coords.size(), 0);
  std::vector<std::uint32_t> senders;
  for (const auto& m : submissions) {
    if (m.round_index != first.round_index)
      throw ProtocolError("aggregate: mixed round indices");
    if (m.coords != first.coords)
      throw ProtocolError("aggregate: submissions disagree on the coordinate subset");
    if (std::find(senders.begin(), senders.end(), m.sender) != senders.end())
      throw ProtocolError("aggregate: duplicate sender");
    senders.push_back(m.sender);
    for (std::size_t t = 0; t < sum.size(); ++t) sum[t] += m.masked_values[t];
  }
  return sum;
}

std::vector<double> unmask(std::span<const std::uint64_t> ring_sum,
                           const SeedKey& common_seed,
                           std::span<const std::uint32_t> partners,
                           std::uint64_t round_index,
                           std::span<const std::uint64_t> coords,
                           const FixedPointCodec& codec) {
  if (ring_sum.size() != coords.size())
    throw DimensionError("unmask: sum length != subset size");
  std::vector<std::uint64_t> cleared(ring_sum.begin(), ring_sum.end());
  const auto round32 = static_cast<std::uint32_t>(round_index);
  for (const auto p : partners) {
    SeededStream s(common_seed,
                   stream_label(StreamPurpose::COMMON_MASK, static_cast<std::uint8_t>(p),
                                0, 0, round32));
    for (auto& v : cleared) v = codec.sub(v, s.next_u64());
  }
  std::vector<double> out(cleared.size());
  for (std::size_t t = 0; t < out.size(); ++t) out[t] = codec.decode(cleared[t]);
  return out;
}

std::vector<double> scatter_update(std::size_t dense_dim,
                                   std::span<const std::uint64_t> coords,
                                   std::span<const double> agg_values) {
  if (coords.size() != agg_values.size())
    throw DimensionError("scatter_update: coords and values length mismatch");
  std::vector<double> delta(dense_dim, 0.0);
  for (std::size_t t = 0; t < coords.size(); ++t) {
    if (coords[t] >= dense_dim)
      throw DimensionError("scatter_update: coordinate out of range");
    delta[coords[t]] = agg_values[t];
  }
  return delta;
}

}  // namespace fl::secagg

#pragma once

#include <array>
#include <cstdint>
#include <span>

namespace fl {

// 256-bit key for seeded streams. Every source of randomness in the
// artifact is keyed by one of these, derived from the run's master seed.
struct SeedKey {
  std::array<std::uint8_t, 32> bytes{};

  bool operator==(const SeedKey&) const = default;
};

// Purpose tags baked into stream labels so independent uses of the same
// key never collide.
enum class StreamPurpose : std::uint8_t {
  PAIR_MASK = 1,    // pairwise cancelling mask, keyed per partner pair
  COMMON_MASK = 2,  // per-partner common mask, unknown to the aggregator
  SUBSET = 3,       // coordinate-subset selection
  KEY_PAIR = 4,     // key derivation for a partner pair
  KEY_COMMON = 5,
  KEY_SUBSET = 6,
  TRUNK_INIT = 7,
  HEAD_INIT = 8,
  CATALOGUE_INIT = 9,
  BATCH_SHUFFLE = 10,
  FOLD = 11,
  FEATURIZE = 12,
  LATENT_PROJECTION = 13,
  TASK_PARAMS = 14,
  RECORD_DRAW = 15,
  POOL_IDS = 16,
  PARTNER_IDS = 17,
  ANON_IDS = 18,
  ATTACK_TRIAL = 19,
  PARTNER_KEY = 20,
  SETUP_KEY = 21,
  WORLD_KEY = 22,
};

// 64-bit stream label: purpose | party a | party b | epoch | round.
// Pairs are canonicalized so (i, j) and (j, i) label the same stream.
std::uint64_t stream_label(StreamPurpose purpose, std::uint8_t a = 0, std::uint8_t b = 0,
                           std::uint8_t epoch = 0, std::uint32_t round = 0);
std::uint64_t pair_label(StreamPurpose purpose, std::uint32_t i, std::uint32_t j,
                         std::uint8_t epoch = 0, std::uint32_t round = 0);

// Deterministic keyed stream of 64-bit words (ChaCha20 keystream in
// counter mode; the label selects the nonce). Identical (key, stream_id)
// always yields the identical sequence.
class SeededStream {
 public:
  SeededStream(const SeedKey& key, std::uint64_t stream_id);

  std::uint64_t next_u64();
  // Unbiased uniform draw in [0, n). n must be > 0.
  std::uint64_t next_below(std::uint64_t n);
  // Uniform in [0, 1) with 53 random bits.
  double next_unit();
  double next_gaussian();

  void fill_u64(std::span<std::uint64_t> out);

  std::uint64_t stream_id() const { return stream_id_; }

 private:
  void refill();

  std::array<std::uint32_t, 8> key_words_;
  std::uint64_t stream_id_;
  std::uint32_t counter_ = 0;
  std::array<std::uint64_t, 8> buf_;
  int buf_pos_ = 8;
  bool have_gaussian_ = false;
  double spare_gaussian_ = 0.0;
};

// Derives an independent child key from (parent, label).
SeedKey derive_key(const SeedKey& parent, std::uint64_t label);
// Expands a 64-bit user-facing seed into a key.
SeedKey seed_from_u64(std::uint64_t seed);

// Spec-facing constructor name: a stream fully determined by (seed, id).
inline SeededStream derive_stream(const SeedKey& seed, std::uint64_t stream_id) {
  return SeededStream(seed, stream_id);
}

namespace detail {
// Raw ChaCha20 block function (RFC 8439 state layout), exposed for tests.
void chacha20_block(const std::array<std::uint32_t, 8>& key, std::uint32_t counter,
                    const std::array<std::uint32_t, 3>& nonce,
                    std::array<std::uint32_t, 16>& out);
}  // namespace detail

}  // namespace fl

#include "fl/rng.hpp"

#include <cmath>
#include <cstring>

#include "fl/common.hpp"

namespace fl {

namespace detail {

namespace {

inline std::uint32_t rotl(std::uint32_t x, int n) {
  return (x << n) | (x >> (32 - n));
}

inline void quarter_round(std::uint32_t& a, std::uint32_t& b, std::uint32_t& c,
                          std::uint32_t& d) {
  a += b; d ^= a; d = rotl(d, 16);
  c += d; b ^= c; b = rotl(b, 12);
  a += b; d ^= a; d = rotl(d, 8);
  c += d; b ^= c; b = rotl(b, 7);
}

}  // namespace

void chacha20_block(const std::array<std::uint32_t, 8>& key, std::uint32_t counter,
                    const std::array<std::uint32_t, 3>& nonce,
                    std::array<std::uint32_t, 16>& out) {
  const std::array<std::uint32_t, 16> input = {
      0x61707865u, 0x3320646eu, 0x79622d32u, 0x6b206574u,
      key[0], key[1], key[2], key[3],
      key[4], key[5], key[6], key[7],
      counter, nonce[0], nonce[1], nonce[2],
  };
  std::array<std::uint32_t, 16> x = input;
  for (int round = 0; round < 10; ++round) {
    quarter_round(x[0], x[4], x[8], x[12]);
    quarter_round(x[1], x[5], x[9], x[13]);
    quarter_round(x[2], x[6], x[10], x[14]);
    quarter_round(x[3], x[7], x[11], x[15]);
    quarter_round(x[0], x[5], x[10], x[15]);
    quarter_round(x[1], x[6], x[11], x[12]);
    quarter_round(x[2], x[7], x[8], x[13]);
    quarter_round(x[3], x[4], x[9], x[14]);
  }
  for (int i = 0; i < 16; ++i) out[i] = x[i] + input[i];
}

}  // namespace detail

std::uint64_t stream_label(StreamPurpose purpose, std::uint8_t a, std::uint8_t b,
                           std::uint8_t epoch, std::uint32_t round) {
  return (static_cast<std::uint64_t>(purpose) << 56) |
         (static_cast<std::uint64_t>(a) << 48) |
         (static_cast<std::uint64_t>(b) << 40) |
         (static_cast<std::uint64_t>(epoch) << 32) |
         static_cast<std::uint64_t>(round);
}

std::uint64_t pair_label(StreamPurpose purpose, std::uint32_t i, std::uint32_t j,
                         std::uint8_t epoch, std::uint32_t round) {
  const std::uint32_t lo = i < j ? i : j;
  const std::uint32_t hi = i < j ? j : i;
  return stream_label(purpose, static_cast<std::uint8_t>(lo),
                      static_cast<std::uint8_t>(hi), epoch, round);
}

SeededStream::SeededStream(const SeedKey& key, std::uint64_t stream_id)
    : stream_id_(stream_id) {
  for (int i = 0; i < 8; ++i) {
    std::uint32_t w;
    std::memcpy(&w, key.bytes.data() + 4 * i, 4);
    key_words_[i] = w;
  }
}

void SeededStream::refill() {
  const std::array<std::uint32_t, 3> nonce = {
      static_cast<std::uint32_t>(stream_id_),
      static_cast<std::uint32_t>(stream_id_ >> 32), 0u};
  std::array<std::uint32_t, 16> block;
  detail::chacha20_block(key_words_, counter_++, nonce, block);
  for (int i = 0; i < 8; ++i) {
    buf_[i] = static_cast<std::uint64_t>(block[2 * i]) |
              (static_cast<std::uint64_t>(block[2 * i + 1]) << 32);
  }
  buf_pos_ = 0;
}

std::uint64_t SeededStream::next_u64() {
  if (buf_pos_ == 8) refill();
  return buf_[buf_pos_++];
}

std::uint64_t SeededStream::next_below(std::uint64_t n) {
  if (n == 0) throw Error("next_below(0)");
  // Rejection sampling over the largest multiple of n.
  const std::uint64_t limit = n * ((~std::uint64_t{0}) / n);
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return v % n;
}

double SeededStream::next_unit() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double SeededStream::next_gaussian() {
  if (have_gaussian_) {
    have_gaussian_ = false;
    return spare_gaussian_;
  }
  // Box-Muller; u1 nudged away from zero so log() stays finite.
  double u1 = next_unit();
  double u2 = next_unit();
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * 3.14159265358979323846 * u2;
  spare_gaussian_ = r * std::sin(theta);
  have_gaussian_ = true;
  return r * std::cos(theta);
}

void SeededStream::fill_u64(std::span<std::uint64_t> out) {
  for (auto& v : out) v = next_u64();
}

SeedKey derive_key(const SeedKey& parent, std::uint64_t label) {
  SeededStream s(parent, label);
  SeedKey child;
  for (int i = 0; i < 4; ++i) {
    const std::uint64_t w = s.next_u64();
    std::memcpy(child.bytes.data() + 8 * i, &w, 8);
  }
  return child;
}

SeedKey seed_from_u64(std::uint64_t seed) {
  SeedKey base;
  std::memcpy(base.bytes.data(), &seed, 8);
  // Run the expansion once so similar integer seeds map to unrelated keys.
  return derive_key(base, stream_label(StreamPurpose::SETUP_KEY));
}

}  // namespace fl

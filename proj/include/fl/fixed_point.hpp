#pragma once

#include <cmath>
#include <cstdint>

#include "fl/common.hpp"

namespace fl {

// Maps reals onto the ring Z_{2^ring_bits} with scale_bits fractional
// bits, two's-complement convention for negatives. Addition in the ring
// corresponds to addition of the encoded reals, which is what lets
// additive masks cancel exactly.
struct FixedPointCodec {
  unsigned scale_bits = 24;
  unsigned ring_bits = 64;

  FixedPointCodec() = default;
  FixedPointCodec(unsigned scale, unsigned ring) : scale_bits(scale), ring_bits(ring) {
    if (!(scale_bits > 0 && scale_bits < ring_bits && ring_bits <= 64))
      throw ConfigError("FixedPointCodec requires 0 < scale_bits < ring_bits <= 64");
  }

  std::uint64_t ring_mask() const {
    return ring_bits == 64 ? ~std::uint64_t{0}
                           : (std::uint64_t{1} << ring_bits) - 1;
  }

  // Largest magnitude representable without sign ambiguity.
  double max_encodable() const {
    return std::ldexp(1.0, static_cast<int>(ring_bits - scale_bits - 1));
  }

  std::uint64_t encode(double x) const {
    if (!std::isfinite(x) || std::fabs(x) >= max_encodable())
      throw OverflowError("value out of fixed-point range");
    const double scaled = std::ldexp(x, static_cast<int>(scale_bits));
    const auto as_int = static_cast<std::int64_t>(std::llround(scaled));
    return static_cast<std::uint64_t>(as_int) & ring_mask();
  }

  double decode(std::uint64_t r) const {
    r &= ring_mask();
    std::int64_t signed_val;
    if (ring_bits == 64) {
      signed_val = static_cast<std::int64_t>(r);
    } else {
      const std::uint64_t half = std::uint64_t{1} << (ring_bits - 1);
      signed_val = (r >= half)
                       ? static_cast<std::int64_t>(r) - static_cast<std::int64_t>(std::uint64_t{1} << ring_bits)
                       : static_cast<std::int64_t>(r);
    }
    return std::ldexp(static_cast<double>(signed_val), -static_cast<int>(scale_bits));
  }

  std::uint64_t add(std::uint64_t a, std::uint64_t b) const { return (a + b) & ring_mask(); }
  std::uint64_t sub(std::uint64_t a, std::uint64_t b) const { return (a - b) & ring_mask(); }
};

// Clip bound applied to every coordinate before encoding; keeps sums over
// at most 16 partners inside the codec's headroom.
inline constexpr double kGradientClip = 100.0;

inline double clip_gradient(double x) {
  if (x > kGradientClip) return kGradientClip;
  if (x < -kGradientClip) return -kGradientClip;
  return x;
}

}  // namespace fl

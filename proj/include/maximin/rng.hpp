#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace maximin {

namespace detail {

inline constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Combine two identifiers into one stream id (order-sensitive).
constexpr std::uint64_t stream_hash(std::uint64_t a, std::uint64_t b) {
  return detail::mix64(detail::mix64(a + detail::kGoldenGamma) ^
                       (b + 0x632BE59BD9B4E019ULL));
}

constexpr std::uint64_t stream_hash(std::uint64_t a, std::uint64_t b,
                                    std::uint64_t c) {
  return stream_hash(stream_hash(a, b), c);
}

/**
 * Counter-based random stream.
 *
 * The i-th 64-bit output is a pure function of (seed, stream_id, i): the
 * stream key is a mix of seed and stream id, and output i is the SplitMix64
 * finalizer applied to key + (i+1) * golden gamma. Only integer arithmetic is
 * involved, so the integer sequence is identical on every platform.
 * Normals use Box-Muller on two consecutive uniforms (no cached state).
 */
class RngStream {
 public:
  constexpr RngStream(std::uint64_t seed, std::uint64_t stream_id)
      : seed_(seed),
        stream_id_(stream_id),
        key_(detail::mix64(seed ^ detail::mix64(stream_id + 0xD1B54A32D192ED03ULL))) {}

  constexpr std::uint64_t seed() const { return seed_; }
  constexpr std::uint64_t stream_id() const { return stream_id_; }
  constexpr std::uint64_t position() const { return counter_; }

  /// Independent child stream, e.g. one per replicate or per draw.
  constexpr RngStream substream(std::uint64_t id) const {
    return RngStream(seed_, stream_hash(stream_id_, id));
  }

  constexpr std::uint64_t next_u64() {
    ++counter_;
    return detail::mix64(key_ + counter_ * detail::kGoldenGamma);
  }

  /// Uniform on the open interval (0, 1).
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Uniform integer in [0, n). Lemire-style rejection keeps it unbiased.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % n);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace maximin

#pragma once

// Counter-based random numbers, pinned for cross-platform reproducibility.
//
// Algorithm: Philox4x32-10 (Salmon et al., "Parallel random numbers: as easy
// as 1, 2, 3", SC'11). Key = 64-bit seed split into two 32-bit words.
// Counter = (block index: 64 bits, stream id: 64 bits), little word first.
// Each block yields two u64 values: (x1 << 32 | x0) then (x3 << 32 | x2).
//
// Derived variates:
//   uniform01   = (u64 >> 11) * 2^-53                 in [0, 1)
//   uniform_int = rejection sampling on u64 against the largest multiple of
//                 the range width
//   normal      = Box-Muller on two uniforms, u1 mapped to (0, 1]:
//                 r = sqrt(-2 ln(1 - u1)), z0 = r cos(2 pi u2), z1 = r sin(2 pi u2)
//
// Streams with different (seed, stream) pairs never share a counter/key
// state, so split() yields non-overlapping sequences.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>

namespace gnp {

class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) : seed_(seed), stream_(stream) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }

  /// Independent generator for sub-stream `id` of this one.
  Rng split(std::uint64_t id) const { return Rng(seed_, mix(stream_ * 0x9E3779B97F4A7C15ULL + id + 1)); }

  std::uint64_t next_u64() {
    if (lane_ == 2) {
      block_ = philox(counter_++);
      lane_ = 0;
    }
    const std::uint64_t lo = block_[2 * lane_];
    const std::uint64_t hi = block_[2 * lane_ + 1];
    ++lane_;
    return (hi << 32) | lo;
  }

  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Integer in [lo, hi], inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
    const std::uint64_t width = static_cast<std::uint64_t>(hi - lo) + 1;
    if (width == 0) return static_cast<std::int64_t>(next_u64());
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % width);
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return lo + static_cast<std::int64_t>(v % width);
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(1.0 - u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  /// SplitMix64 finalizer, used to decorrelate derived stream ids.
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// One Philox4x32-10 block for the given key and 128-bit counter.
  static std::array<std::uint32_t, 4> philox_block(std::array<std::uint32_t, 2> key,
                                                   std::array<std::uint32_t, 4> ctr) {
    constexpr std::uint32_t kM0 = 0xD2511F53u, kM1 = 0xCD9E8D57u;
    constexpr std::uint32_t kW0 = 0x9E3779B9u, kW1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * ctr[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * ctr[2];
      ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
             static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
      key[0] += kW0;
      key[1] += kW1;
    }
    return ctr;
  }

 private:
  std::array<std::uint32_t, 4> philox(std::uint64_t counter) const {
    return philox_block({static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32)},
                        {static_cast<std::uint32_t>(counter), static_cast<std::uint32_t>(counter >> 32),
                         static_cast<std::uint32_t>(stream_),
                         static_cast<std::uint32_t>(stream_ >> 32)});
  }

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> block_{};
  int lane_ = 2;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace gnp

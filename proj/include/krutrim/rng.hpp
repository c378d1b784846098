#pragma once
// PCG32 (XSH-RR output, 64-bit LCG state) after O'Neill's reference
// implementation pcg32_random_r / pcg32_srandom_r. All seeded subsystems use
// this generator and the derived helpers below, so streams are reproducible
// bit-for-bit across platforms and ports:
//
//   step:      state = state * 6364136223846793005 + inc
//   output:    xorshifted = ((old >> 18) ^ old) >> 27; rot = old >> 59
//              return rotr32(xorshifted, rot)
//   seeding:   state = 0; inc = (seq << 1) | 1; step; state += seed; step
//   uniform:   ((u64(next()) << 32 | next()) >> 11) * 2^-53
//   bounded:   reject r < (2^32 - n) % n, return r % n
//   normal:    Box-Muller, sqrt(-2 ln(1 - u1)) * cos(2 pi u2), one value per call

#include <cmath>
#include <cstdint>
#include <numbers>

namespace krutrim {

class Pcg32 {
 public:
  explicit Pcg32(std::uint64_t seed = 0x853c49e6748fea9bULL,
                 std::uint64_t stream = 0xda3e39cb94b95bdbULL) {
    state_ = 0;
    inc_ = (stream << 1u) | 1u;
    next();
    state_ += seed;
    next();
  }

  std::uint32_t next() {
    const std::uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    const auto xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    const auto rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
  }

  double uniform() {
    const std::uint64_t hi = next();
    const std::uint64_t lo = next();
    return static_cast<double>(((hi << 32u) | lo) >> 11u) * 0x1.0p-53;
  }

  std::uint32_t bounded(std::uint32_t bound) {
    const std::uint32_t threshold = (0u - bound) % bound;
    for (;;) {
      const std::uint32_t r = next();
      if (r >= threshold) return r % bound;
    }
  }

  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(1.0 - u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t state_;
  std::uint64_t inc_;
};

}  // namespace krutrim

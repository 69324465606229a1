#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>

namespace gsm {

/// Philox4x32-10 counter-based generator (Salmon et al., Random123). A pure function
/// of (counter, key): any draw can be reproduced without replaying a stream.
class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter generate(Counter ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kWeyl0;
        key[1] += kWeyl1;
      }
      const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
      ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0], static_cast<std::uint32_t>(p1),
             static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1], static_cast<std::uint32_t>(p0)};
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kMul0 = 0xD2511F53;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85;
};

/// Circular complex Gaussian with E|z|² = 1, keyed by (seed, realization, m, n).
inline std::complex<double> circular_gaussian(std::uint64_t seed, std::uint64_t realization, std::uint32_t m,
                                              std::uint32_t n) {
  const auto out = Philox4x32::generate(
      {static_cast<std::uint32_t>(realization), static_cast<std::uint32_t>(realization >> 32), m, n},
      {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)});
  const std::uint64_t w0 = (std::uint64_t{out[0]} << 32) | out[1];
  const std::uint64_t w1 = (std::uint64_t{out[2]} << 32) | out[3];
  constexpr double kTwoPow53 = 9007199254740992.0;
  const double u0 = (static_cast<double>(w0 >> 11) + 0.5) / kTwoPow53;  // (0, 1)
  const double u1 = (static_cast<double>(w1 >> 11) + 0.5) / kTwoPow53;
  // |z|² = -ln u0 is Exp(1).
  const double r = std::sqrt(-std::log(u0));
  const double theta = 2.0 * std::numbers::pi * u1;
  return {r * std::cos(theta), r * std::sin(theta)};
}

}  // namespace gsm

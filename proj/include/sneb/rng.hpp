#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace sneb {

// Philox 4x32-10 block function (the Salmon et al. counter-based generator).
inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                               std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t kMul0 = 0xD2511F53u;
  constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = std::uint64_t(kMul0) * ctr[0];
    const std::uint64_t p1 = std::uint64_t(kMul1) * ctr[2];
    const auto hi0 = std::uint32_t(p0 >> 32);
    const auto lo0 = std::uint32_t(p0);
    const auto hi1 = std::uint32_t(p1 >> 32);
    const auto lo1 = std::uint32_t(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

// Stateless stream of uniforms: draw `idx` of substream `stream` under `seed`.
// Draws commute with evaluation order, so parallel schedules reproduce the
// same sequences.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream)
      : key_{std::uint32_t(seed), std::uint32_t(seed >> 32)},
        stream_lo_(std::uint32_t(stream)),
        stream_hi_(std::uint32_t(stream >> 32)) {}

  // open interval (0, 1); 53 significant bits
  double uniform01(std::uint64_t idx) const {
    const auto w = philox4x32({std::uint32_t(idx), std::uint32_t(idx >> 32),
                               stream_lo_, stream_hi_},
                              key_);
    const std::uint64_t bits = (std::uint64_t(w[1]) << 32) | w[0];
    return (double(bits >> 11) + 0.5) * 0x1.0p-53;
  }

 private:
  std::array<std::uint32_t, 2> key_;
  std::uint32_t stream_lo_;
  std::uint32_t stream_hi_;
};

// Box-Muller from two uniforms in (0, 1).
inline double standard_normal(double u1, double u2) {
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace sneb

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace cluscov {

// Philox4x32-10 counter-based generator (Salmon et al., SC 2011).
//
// The 64-bit key carries the master seed and the upper counter words carry a
// 64-bit stream id, so streams keyed by (seed, stream) are independent and a
// draw sequence is a pure function of (seed, stream, position). Monte Carlo
// code derives one stream per (context, replication) pair, which makes runs
// bit-identical regardless of how replications are scheduled across threads.
class PhiloxRng {
 public:
  explicit PhiloxRng(std::uint64_t seed, std::uint64_t stream = 0) {
    key_[0] = static_cast<std::uint32_t>(seed);
    key_[1] = static_cast<std::uint32_t>(seed >> 32);
    counter_[0] = 0;
    counter_[1] = 0;
    counter_[2] = static_cast<std::uint32_t>(stream);
    counter_[3] = static_cast<std::uint32_t>(stream >> 32);
  }

  static std::uint64_t substream(std::uint32_t context, std::uint32_t replication) {
    return (static_cast<std::uint64_t>(context) << 32) | replication;
  }

  std::uint32_t next_u32() {
    if (buffer_pos_ == 4) {
      buffer_ = block(counter_, key_);
      advance_counter();
      buffer_pos_ = 0;
    }
    return buffer_[buffer_pos_++];
  }

  std::uint64_t next_u64() {
    const std::uint64_t lo = next_u32();
    const std::uint64_t hi = next_u32();
    return (hi << 32) | lo;
  }

  // Uniform on (0, 1]: 53-bit mantissa, never exactly zero.
  double uniform01() {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; the paired draw is cached.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  static constexpr std::uint32_t kW32A = 0x9E3779B9u;
  static constexpr std::uint32_t kW32B = 0xBB67AE85u;
  static constexpr std::uint32_t kM4x32A = 0xD2511F53u;
  static constexpr std::uint32_t kM4x32B = 0xCD9E8D57u;

  static void mul_hi_lo(std::uint32_t a, std::uint32_t b, std::uint32_t& lo,
                        std::uint32_t& hi) {
    const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
    lo = static_cast<std::uint32_t>(p);
    hi = static_cast<std::uint32_t>(p >> 32);
  }

  static std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 4> ctr,
                                            std::array<std::uint32_t, 2> key) {
    for (int round = 0; round < 10; ++round) {
      std::uint32_t lo0, hi0, lo1, hi1;
      mul_hi_lo(kM4x32A, ctr[0], lo0, hi0);
      mul_hi_lo(kM4x32B, ctr[2], lo1, hi1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
      key[0] += kW32A;
      key[1] += kW32B;
    }
    return ctr;
  }

  void advance_counter() {
    if (++counter_[0] == 0) ++counter_[1];
  }

  std::array<std::uint32_t, 2> key_{};
  std::array<std::uint32_t, 4> counter_{};
  std::array<std::uint32_t, 4> buffer_{};
  int buffer_pos_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace cluscov

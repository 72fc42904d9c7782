#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace egc {

/// splitmix64 mixing step; used to derive independent seeds from a base seed
/// plus indices (sample number, epoch, ...). Fixed algorithm so datasets and
/// training runs reproduce bit-exactly on any platform.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  return mix64(mix64(base ^ mix64(a)) ^ mix64(~b));
}

/// PCG32 (pcg_setseq_64_xsh_rr_32): 64-bit LCG state with XSH-RR output.
/// Chosen over std::mt19937 because the standard library distributions are
/// implementation-defined; every draw here is specified to the bit.
class Pcg32 {
 public:
  explicit Pcg32(std::uint64_t seed, std::uint64_t stream = 0) {
    state_ = 0;
    inc_ = (stream << 1u) | 1u;
    next_u32();
    state_ += seed;
    next_u32();
  }

  std::uint32_t next_u32() {
    std::uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    std::uint32_t xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    std::uint32_t rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((-rot) & 31));
  }

  std::uint64_t next_u64() {
    std::uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  /// Uniform double in [0, 1) with full 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Unbiased via rejection (Lemire's method).
  std::uint32_t uniform_int(std::uint32_t n) {
    std::uint64_t m = std::uint64_t(next_u32()) * n;
    std::uint32_t lo = static_cast<std::uint32_t>(m);
    if (lo < n) {
      std::uint32_t threshold = (-n) % n;
      while (lo < threshold) {
        m = std::uint64_t(next_u32()) * n;
        lo = static_cast<std::uint32_t>(m);
      }
    }
    return static_cast<std::uint32_t>(m >> 32);
  }

  /// Standard normal via Box-Muller; the second value of each pair is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    // Avoid log(0); 2^-53 shift keeps u1 strictly positive.
    double r = std::sqrt(-2.0 * std::log(u1 + 0x1.0p-53));
    double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::uint64_t state_ = 0;
  std::uint64_t inc_ = 1;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace egc

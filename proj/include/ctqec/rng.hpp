#pragma once

#include <cmath>
#include <cstdint>

namespace ctqec {

// Counter-style mixing generator (Steele, Lea & Flood). Used to derive
// independent per-trajectory streams from (master seed, trajectory index).
struct SplitMix64 {
  std::uint64_t state;

  std::uint64_t next() {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
};

// xoshiro256++ (Blackman & Vigna), seeded through SplitMix64.
class Xoshiro256pp {
 public:
  explicit Xoshiro256pp(std::uint64_t seed) {
    SplitMix64 sm{seed};
    for (auto& word : s_) word = sm.next();
    if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[0] = 1;
  }

  std::uint64_t next() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform double in (0, 1]; never returns 0 so log() is safe.
  double uniform01() {
    return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::uint64_t s_[4];
};

// Standard normal deviates via the Marsaglia polar method. Avoids
// libm trig so the stream is cheap and reproducible for a fixed build.
class GaussianRng {
 public:
  explicit GaussianRng(std::uint64_t seed) : eng_(seed) {}

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u, v, q;
    do {
      u = 2.0 * eng_.uniform01() - 1.0;
      v = 2.0 * eng_.uniform01() - 1.0;
      q = u * u + v * v;
    } while (q >= 1.0 || q == 0.0);
    const double f = std::sqrt(-2.0 * std::log(q) / q);
    spare_ = v * f;
    have_spare_ = true;
    return u * f;
  }

  double uniform01() { return eng_.uniform01(); }

 private:
  Xoshiro256pp eng_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Stream key for trajectory `index` under `master_seed`. Distinct indices give
// decorrelated streams regardless of the order trajectories are executed in.
inline std::uint64_t trajectory_seed(std::uint64_t master_seed,
                                     std::uint64_t index) {
  SplitMix64 sm{master_seed ^ (0xD1B54A32D192ED03ULL * (index + 1))};
  sm.next();
  return sm.next();
}

}  // namespace ctqec

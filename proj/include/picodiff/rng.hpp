#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace picodiff {

// Deterministic xoshiro256++ with splitmix64 seeding. Self-contained so that
// results do not depend on the standard library's distribution internals.
// Sub-streams are derived from (seed, tag) pairs, which keeps batch
// construction order-independent and makes mid-run resume exact.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) {
    uint64_t x = seed;
    for (auto& word : s_) word = splitmix64(x);
  }

  static Rng stream(uint64_t seed, uint64_t tag) {
    uint64_t x = seed;
    uint64_t a = splitmix64(x);
    x = a ^ (tag * 0x9e3779b97f4a7c15ull + 0x7f4a7c15u);
    Rng r(0);
    r.s_[0] = splitmix64(x);
    r.s_[1] = splitmix64(x);
    r.s_[2] = splitmix64(x);
    r.s_[3] = splitmix64(x);
    return r;
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(next_u64() % span);
  }

  // Standard normal via Box-Muller; caches the second variate.
  float normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    double mag = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586 * u2;
    spare_ = static_cast<float>(mag * std::sin(a));
    has_spare_ = true;
    return static_cast<float>(mag * std::cos(a));
  }

  void fill_normal(float* dst, size_t n) {
    for (size_t i = 0; i < n; ++i) dst[i] = normal();
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static uint64_t splitmix64(uint64_t& x) {
    x += 0x9e3779b97f4a7c15ull;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  uint64_t s_[4];
  float spare_ = 0.f;
  bool has_spare_ = false;
};

}  // namespace picodiff

#pragma once

#include <cmath>
#include <cstdint>

namespace soat::util {

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// xoshiro256** with hand-rolled distributions. std::*_distribution is
// implementation-defined, so all sampling goes through this to keep runs
// reproducible.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& word : s_) word = splitmix64(sm);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  int uniform_int(int n) { return static_cast<int>(uniform() * n); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    constexpr double two_pi = 6.283185307179586476925286766559;
    spare_ = r * std::sin(two_pi * u2);
    has_spare_ = true;
    return r * std::cos(two_pi * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Independent substream; (seed, tag) pairs give unrelated streams.
  Rng fork(uint64_t tag) {
    uint64_t mix = next_u64() ^ (0x9e3779b97f4a7c15ULL * (tag + 1));
    return Rng(mix);
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  uint64_t s_[4] = {};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Stateless derivation of a stream seed from a root seed and a path of tags.
inline uint64_t derive_seed(uint64_t root, uint64_t tag_a, uint64_t tag_b = 0, uint64_t tag_c = 0) {
  uint64_t s = root;
  splitmix64(s);
  s ^= 0xa0761d6478bd642fULL * (tag_a + 1);
  splitmix64(s);
  s ^= 0xe7037ed1a0b428dbULL * (tag_b + 1);
  splitmix64(s);
  s ^= 0x8ebc6af09c88c6e3ULL * (tag_c + 1);
  return splitmix64(s);
}

}  // namespace soat::util

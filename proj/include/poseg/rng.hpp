#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace poseg {

// splitmix64: used to derive independent child seeds from a master seed.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Deterministic RNG facade over mt19937_64. The standard pins the engine's
// output exactly but leaves <random> distributions implementation-defined, so
// every draw we expose is hand-rolled to keep corpora and training runs
// bit-reproducible across compilers.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), g_(seed) {}

  uint64_t seed() const { return seed_; }
  uint64_t next_u64() { return g_(); }

  // Independent stream derived from this generator's seed; drawing from the
  // child never perturbs the parent.
  Rng fork(uint64_t stream) const {
    return Rng(splitmix64(seed_ ^ splitmix64(stream + 0x51ed2701a9b5d3e7ull)));
  }

  // Uniform in [0,1) with 53 random bits.
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0,n) via rejection sampling.
  uint64_t uniform_u64(uint64_t n) {
    uint64_t threshold = (0 - n) % n;  // 2^64 mod n
    for (;;) {
      uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  int uniform_int(int n) { return int(uniform_u64(uint64_t(n))); }

  // Inclusive integer range draw.
  int uniform_int(int lo, int hi) { return lo + uniform_int(hi - lo + 1); }

  bool bernoulli(double p) { return uniform() < p; }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = uniform_u64(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t seed_;
  std::mt19937_64 g_;
};

}  // namespace poseg

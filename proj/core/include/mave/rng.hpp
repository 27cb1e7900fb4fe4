#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace mave {

// splitmix64: cheap stateless mixer, used to derive independent sub-seeds and
// to hash coordinates into pseudo-random values.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// fnv1a64: stable string hash, used for config digests in logs.
inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// Mix several coordinates into one derived seed. Chaining splitmix keeps the
// result sensitive to every argument and to argument order.
inline uint64_t derive_seed(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
  uint64_t h = splitmix64(seed ^ 0x5851f42d4c957f2dull);
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ b);
  h = splitmix64(h ^ c);
  return h;
}

// Deterministic RNG wrapper. All distribution helpers are hand-rolled on top
// of the raw mt19937_64 stream so results are identical across platforms and
// standard libraries (std::uniform_int_distribution etc. are not portable).
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n), n > 0. Lemire multiply-shift; the modulo bias
  // is < n / 2^64 and irrelevant here, and the draw count is fixed (one).
  uint64_t below(uint64_t n) {
    unsigned __int128 m = static_cast<unsigned __int128>(gen_()) * n;
    return static_cast<uint64_t>(m >> 64);
  }

  // Uniform integer in [lo, hi] inclusive.
  int64_t range(int64_t lo, int64_t hi) {
    return lo + static_cast<int64_t>(below(static_cast<uint64_t>(hi - lo + 1)));
  }

  // Standard normal via Box-Muller (two uniform draws per call).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Poisson with mean 1 by CDF inversion: p_k = e^-1 / k!.
  int poisson1() {
    double u = uniform();
    double p = std::exp(-1.0);
    double cdf = p;
    int k = 0;
    while (u > cdf && k < 64) {
      ++k;
      p /= static_cast<double>(k);
      cdf += p;
    }
    return k;
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace mave

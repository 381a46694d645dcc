#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <vector>

namespace rclstr {

// splitmix64 finalizer; all randomness in the library flows through this so
// runs are reproducible from a single seed.
inline uint64_t splitmix64_next(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Derives an independent stream seed from (seed, salts...). Used to give
/// every item/iteration its own deterministic generator so parallel and
/// sequential generation agree.
inline uint64_t mix_seed(uint64_t seed, std::initializer_list<uint64_t> salts) {
  uint64_t h = seed;
  for (uint64_t s : salts) {
    h ^= s + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    uint64_t st = h;
    h = splitmix64_next(st);
  }
  return h;
}

inline uint64_t mix_seed(uint64_t seed, uint64_t a) { return mix_seed(seed, {a}); }
inline uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b) { return mix_seed(seed, {a, b}); }
inline uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b, uint64_t c) {
  return mix_seed(seed, {a, b, c});
}

/// Small deterministic RNG (splitmix64 core). Not thread-safe; create one
/// per stream via mix_seed.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() { return splitmix64_next(state_); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased uniform integer in [0, n), n >= 1.
  uint64_t uniform_int(uint64_t n) {
    uint64_t x, r;
    do {
      x = next_u64();
      r = x % n;
    } while (x - r > static_cast<uint64_t>(-n));
    return r;
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller (second value cached).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Fills out[0..d) with a uniformly random unit vector.
  template <typename S>
  void fill_unit_vector(S* out, size_t d) {
    double norm2 = 0.0;
    do {
      norm2 = 0.0;
      for (size_t i = 0; i < d; ++i) {
        double g = normal();
        out[i] = static_cast<S>(g);
        norm2 += g * g;
      }
    } while (norm2 < 1e-24);
    double inv = 1.0 / std::sqrt(norm2);
    for (size_t i = 0; i < d; ++i) out[i] = static_cast<S>(static_cast<double>(out[i]) * inv);
  }

 private:
  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace rclstr

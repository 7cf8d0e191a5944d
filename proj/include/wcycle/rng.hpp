#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace wcycle {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

// Deterministic RNG. Uniform draws use the exactly-specified mt19937_64
// stream; normal draws go through our own Box-Muller so the sequence does
// not depend on the standard library's unspecified normal_distribution.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : seed_(seed), eng_(seed) {}

  uint64_t seed() const { return seed_; }
  uint64_t raw() { return eng_(); }

  // uniform in [0, 1)
  double uniform() { return (eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via Box-Muller, one value per call (cached pair)
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // integer in [0, n)
  uint64_t index(uint64_t n) {
    uint64_t lim = UINT64_MAX - UINT64_MAX % n;
    uint64_t v;
    do {
      v = eng_();
    } while (v >= lim);
    return v % n;
  }

  template <typename It>
  void shuffle(It first, It last) {
    auto n = static_cast<uint64_t>(last - first);
    for (uint64_t i = n; i > 1; --i) {
      uint64_t j = index(i);
      std::swap(first[i - 1], first[j]);
    }
  }

  // independent child stream, stable under a tag
  Rng fork(uint64_t tag) const { return Rng(splitmix64(seed_ ^ splitmix64(tag))); }

  std::string save_state() const {
    std::ostringstream os;
    os << seed_ << " " << eng_ << " " << (have_spare_ ? 1 : 0) << " " << spare_;
    return os.str();
  }

  void load_state(const std::string& s) {
    std::istringstream is(s);
    int hs = 0;
    is >> seed_ >> eng_ >> hs >> spare_;
    have_spare_ = hs != 0;
  }

 private:
  uint64_t seed_ = 0;
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace wcycle

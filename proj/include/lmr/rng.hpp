#pragma once
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace lmr {

// All randomness in the project flows from one root seed through named
// sub-streams.  The engine is std::mt19937_64 but the uniform/normal
// transforms are explicit: std::*_distribution output is implementation
// defined and every stream here must be bit-reproducible.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // uniform in [0, 1)
  double uniform() { return double(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  uint64_t below(uint64_t n) {
    if (n == 0) throw std::runtime_error("rng: below(0)");
    // rejection sampling keeps the draw unbiased and reproducible
    uint64_t lim = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = eng_();
    } while (x >= lim);
    return x % n;
  }

  int range(int lo, int hi) {  // inclusive ends
    return lo + int(below(uint64_t(hi - lo + 1)));
  }

  // Box-Muller; one value per call, second of the pair is cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0, u2 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = size_t(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derives a named sub-stream: same root seed + same name + same index
  // always yields the same stream, independent of draw order elsewhere.
  static uint64_t stream_seed(uint64_t root_seed, const std::string& name, uint64_t index = 0) {
    uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a over the name
    for (unsigned char c : name) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
    return splitmix(splitmix(root_seed ^ h) + index);
  }

  static Rng sub(uint64_t root_seed, const std::string& name, uint64_t index = 0) {
    return Rng(stream_seed(root_seed, name, index));
  }

 private:
  static uint64_t splitmix(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace lmr

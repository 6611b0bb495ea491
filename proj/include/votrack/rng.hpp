#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace votrack {

// Seeded, splittable random stream. The mt19937_64 engine is fully specified
// by the standard; value transforms are done by hand so that every platform
// draws identical sequences (std::*_distribution is implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  // Independent child stream; advances this stream by one draw.
  Rng split() { return Rng(next_u64() ^ 0x9e3779b97f4a7c15ull); }

  std::uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  // Uniform integer in [0, n). n must be positive.
  int uniform_int(int n) {
    return static_cast<int>((static_cast<unsigned __int128>(next_u64()) *
                             static_cast<unsigned __int128>(n)) >> 64);
  }

  // Standard normal via Box-Muller; generates pairs, caches the second value.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform(), u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double th = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(th);
    have_spare_ = true;
    return r * std::cos(th);
  }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace votrack

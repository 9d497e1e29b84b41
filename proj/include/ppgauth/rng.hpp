#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace ppgauth {

// Seedable RNG with platform-independent output.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the
// standard. The distribution transforms live here because the std::
// distributions are implementation-defined and differ across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be > 0.
  std::size_t index(std::size_t n);

  // Standard normal via the polar Box-Muller method.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Exponential with the given rate (events per unit).
  double exponential(double rate);

  // Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ppgauth

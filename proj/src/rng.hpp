#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace temple {

// Deterministic helpers on top of mt19937_64. The standard distributions are
// implementation-defined, so sampling is done by hand to keep runs
// reproducible independent of the standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform01() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [0, n).
  int uniform_int(int n) {
    return static_cast<int>(uniform01() * static_cast<double>(n));
  }

  // Sample an index from a probability column (components >= 0, sum ~ 1).
  int categorical(const Eigen::Ref<const Eigen::VectorXd>& probs) {
    const double u = uniform01();
    double cum = 0.0;
    const int n = static_cast<int>(probs.size());
    for (int i = 0; i < n; ++i) {
      cum += probs[i];
      if (u < cum) return i;
    }
    return n - 1;
  }

 private:
  std::mt19937_64 gen_;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Stable per-(run, env, episode) seed derivation.
inline std::uint64_t episode_seed(std::uint64_t run_seed, int env_index,
                                  std::uint64_t episode_counter) {
  std::uint64_t s = splitmix64(run_seed ^ (0xA24BAED4963EE407ULL *
                                           static_cast<std::uint64_t>(env_index + 1)));
  return splitmix64(s + episode_counter);
}

}  // namespace temple

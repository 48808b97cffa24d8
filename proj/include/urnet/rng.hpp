#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace urnet {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Deterministic random source: the same seed yields the same stream on every
// platform. The engine is std::mt19937_64 (bit-exact per the standard); the
// distributions are implemented here because the <random> distribution
// objects are not specified bit-exactly across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; the paired value is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]: keeps log finite
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  // Uniform integer in [0, n). Lemire's bounded-rejection method.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    while (true) {
      const std::uint64_t x = next_u64();
      const unsigned __int128 m =
          static_cast<unsigned __int128>(x) * static_cast<unsigned __int128>(n);
      const std::uint64_t low = static_cast<std::uint64_t>(m);
      if (low >= n || low >= (0ull - n) % n) {
        return static_cast<std::uint64_t>(m >> 64);
      }
    }
  }

  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(below(static_cast<std::uint64_t>(n)));
  }

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      std::swap(values[i - 1], values[index(i)]);
    }
  }

  // Independent child stream. Streams with distinct ids never collide for a
  // fixed parent seed; used to fan one --seed out across subsystems.
  Rng fork(std::uint64_t stream_id) const {
    std::uint64_t state = seed_ + 0x9E3779B97F4A7C15ull * (stream_id + 1);
    return Rng(splitmix64(state));
  }

  Rng fork(std::uint64_t stream_id, std::uint64_t salt) const {
    std::uint64_t state = seed_ + 0x9E3779B97F4A7C15ull * (stream_id + 1) +
                          0xBF58476D1CE4E5B9ull * (salt + 1);
    return Rng(splitmix64(state));
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Fixed stream ids, one per subsystem that consumes randomness.
namespace rng_stream {
inline constexpr std::uint64_t kDatagen = 1;
inline constexpr std::uint64_t kSplit = 2;
inline constexpr std::uint64_t kModelInit = 3;
inline constexpr std::uint64_t kBaseline = 4;
inline constexpr std::uint64_t kStage = 5;
inline constexpr std::uint64_t kBags = 6;
inline constexpr std::uint64_t kConfidence = 7;
inline constexpr std::uint64_t kKMeans = 8;
}  // namespace rng_stream

}  // namespace urnet

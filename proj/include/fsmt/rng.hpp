#pragma once

#include <cstdint>

namespace fsmt {

// Counter-based splittable RNG (splitmix64 core). All randomness in the
// project flows through this so that results are bit-identical across
// platforms and independent of std:: distribution implementations.
//
// `fork(label)` derives an independent child stream from the stream's
// identity (not its current position), so consuming draws from one stream
// never perturbs a sibling stream.
class SplitRng {
 public:
  explicit SplitRng(std::uint64_t seed) : seed_(seed), state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Lemire multiply-shift; bias is O(n / 2^64).
  std::uint64_t uniform_int(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Child stream derived from (identity, label); parent is unaffected.
  SplitRng fork(std::uint64_t label) const { return SplitRng(mix(seed_, label)); }
  SplitRng fork(std::uint64_t a, std::uint64_t b) const { return fork(a).fork(b); }
  SplitRng fork(std::uint64_t a, std::uint64_t b, std::uint64_t c) const {
    return fork(a).fork(b).fork(c);
  }

  std::uint64_t seed() const { return seed_; }

  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a ^ (b + 0x9E3779B97F4A7C15ULL + (a << 6) + (a >> 2));
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
};

// Stream labels used to derive independent substreams from a run seed.
// Toggling one consumer (say, the rotation task) must not shift the
// randomness seen by any other consumer.
namespace rng_stream {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kShuffle = 2;
inline constexpr std::uint64_t kSupAugment = 3;
inline constexpr std::uint64_t kByolAugmentA = 4;
inline constexpr std::uint64_t kByolAugmentB = 5;
inline constexpr std::uint64_t kRotAugment = 6;
inline constexpr std::uint64_t kRotLabel = 7;
inline constexpr std::uint64_t kEpisode = 8;
inline constexpr std::uint64_t kToyGen = 9;
}  // namespace rng_stream

}  // namespace fsmt

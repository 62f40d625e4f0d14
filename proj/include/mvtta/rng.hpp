#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace mvtta {

// Names one logical consumer of randomness. Streams derived from
// (seed, kind, indices) are independent of each other and of call order
// elsewhere in the program, which is what makes whole runs replayable
// from a single seed.
enum class StreamKind : std::uint64_t {
  WeightInit = 1,
  ValSplit,
  SourceShuffle,
  AdaptShuffle,
  Undersample,
  AugWeak,
  AugStrong,
  AugStrongQueue,
  WarmupAug,
  SynthDomainMap,
  SynthViewMap,
  SynthClass,
  SynthLatent,
  SynthNoise,
  Test = 900,
};

// Small counter-based generator: a splitmix64 core seeded by hashing the
// stream key words together. Not cryptographic; statistical quality is
// plenty for augmentation noise, shuffles, and synthetic data.
class Rng {
 public:
  explicit Rng(std::uint64_t state) : state_(state) {}

  // Derives the stream for (seed, kind, a, b, c). Equal keys give equal
  // streams; any word changed gives an unrelated stream.
  static Rng stream(std::uint64_t seed, StreamKind kind, std::uint64_t a = 0,
                    std::uint64_t b = 0, std::uint64_t c = 0);

  std::uint64_t next_u64();

  // Uniform double in [0, 1), 53 random bits.
  double next_unit();

  // Standard normal via Box-Muller; generates pairs and caches the spare.
  double next_gaussian();

  // Uniform integer in {0, ..., n-1} without modulo bias. n must be > 0.
  std::uint64_t next_below(std::uint64_t n);

  // Fisher-Yates shuffle driven by next_below.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[static_cast<std::size_t>(next_below(i))]);
    }
  }

 private:
  std::uint64_t state_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mvtta

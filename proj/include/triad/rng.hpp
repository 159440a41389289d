#pragma once

// Portable seeded random numbers.
//
// The standard <random> engines are bit-exact across platforms but the
// distributions are not, so every draw here goes through our own mapping
// from raw 64-bit engine output. Independent purposes (point sampling,
// triplet sampling, noise, initialization, ...) each get their own substream
// derived from a master seed with SplitMix64, so adding draws to one purpose
// never shifts another.

#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace triad {

enum class Stream : std::uint64_t {
  points = 1,
  triplets = 2,
  noise = 3,
  init = 4,
  split = 5,
  shuffle = 6,
  landmarks = 7,
  presentation = 8,
  run = 9,
  evaluation = 10,
  gold = 11,
};

std::uint64_t splitmix64(std::uint64_t x);

/// Seed for substream `stream` (and optional index) of `master`.
std::uint64_t derive_seed(std::uint64_t master, Stream stream, std::uint64_t index = 0);
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t master, Stream stream, std::uint64_t index = 0)
      : engine_(derive_seed(master, stream, index)) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, bound), bound > 0. Unbiased (rejection).
  std::uint64_t below(std::uint64_t bound);

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via the Marsaglia polar method.
  double normal();

  template <class T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(values[i - 1], values[j]);
    }
  }
  template <class T>
  void shuffle(std::vector<T>& values) {
    shuffle(std::span<T>(values));
  }

  /// k distinct values from [0, n), in random order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace triad

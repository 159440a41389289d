#pragma once

// Triplet subsampling strategies (random, l-repeated-random, landmark) and
// majority-vote aggregation of repeated answers.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "triad/core.hpp"
#include "triad/rng.hpp"

namespace triad {

enum class Strategy { random, repeated, landmark };

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

struct SamplingPlan {
  Strategy strategy = Strategy::random;
  std::size_t m = 0;                 // total answer budget (random, repeated)
  std::size_t l = 3;                 // repetitions (repeated only)
  std::vector<ItemId> landmarks;     // explicit landmarks (landmark only)
  std::size_t random_landmarks = 0;  // k random landmarks when the list is empty
  std::optional<std::size_t> cap;    // uniform subsample of the output
  std::uint64_t seed = 0;

  /// Throws plan errors for inconsistent fields.
  void validate(std::size_t n) const;
};

/// m i.i.d. uniform questions with random presentation order.
std::vector<Triplet> sample_random(std::size_t n, std::size_t m, Rng& rng);

/// m/l uniform draws, each emitted l times, globally shuffled. l odd.
std::vector<Triplet> sample_repeated(std::size_t n, std::size_t m, std::size_t l, Rng& rng);

/// Every (x; li, lj) with li, lj landmarks and x outside {li, lj}, shuffled.
std::vector<Triplet> sample_landmark(std::size_t n, const std::vector<ItemId>& landmarks, Rng& rng);

/// k distinct landmarks chosen uniformly at random.
std::vector<ItemId> choose_landmarks(std::size_t n, std::size_t k, Rng& rng);

/// Uniform subsample of size cap without replacement (identity if smaller).
std::vector<Triplet> cap_subsample(std::vector<Triplet> triplets, std::size_t cap, Rng& rng);

/// Runs the plan's strategy with substreams derived from plan.seed.
std::vector<Triplet> execute_plan(const SamplingPlan& plan, std::size_t n);

/// One canonical record per distinct question holding the majority answer.
/// Throws tie for an even split.
AnswerSet majority_vote(const AnswerSet& records);

}  // namespace triad

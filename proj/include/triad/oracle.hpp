#pragma once

// Ground truth for simulations: point clouds, vector ingestion, Euclidean
// triplet answers and independent flip noise.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "triad/core.hpp"
#include "triad/rng.hpp"

namespace triad {

class VectorDataset {
 public:
  /// coords is row-major, n rows of `dim` values, all finite.
  VectorDataset(std::shared_ptr<const ItemSet> items, std::size_t dim, std::vector<double> coords);

  const ItemSet& items() const noexcept { return *items_; }
  std::shared_ptr<const ItemSet> item_set() const noexcept { return items_; }
  std::size_t size() const noexcept { return items_->size(); }
  std::size_t dim() const noexcept { return dim_; }
  const std::vector<double>& coords() const noexcept { return coords_; }
  std::span<const double> point(ItemId i) const {
    return {coords_.data() + std::size_t{i} * dim_, dim_};
  }

  double squared_distance(ItemId a, ItemId b) const;

  friend bool operator==(const VectorDataset& a, const VectorDataset& b) {
    return a.dim_ == b.dim_ && a.coords_ == b.coords_ && a.items_->labels() == b.items_->labels();
  }

 private:
  std::shared_ptr<const ItemSet> items_;
  std::size_t dim_;
  std::vector<double> coords_;
  // Full squared-distance table, only kept for n <= kDistanceCacheLimit.
  std::vector<double> cache_;

 public:
  static constexpr std::size_t kDistanceCacheLimit = 2048;
};

/// n i.i.d. points uniform in [0,1]^d.
VectorDataset sample_unit_cube(std::size_t n, std::size_t d, std::uint64_t seed);

/// Delimited numeric table; a non-numeric first column is taken as labels.
VectorDataset ingest_vectors(const std::string& path, char delimiter = ',');
VectorDataset parse_vectors(std::istream& in, char delimiter, const std::string& name);
void export_vectors(const std::string& path, const VectorDataset& ds, char delimiter = ',');

/// Euclidean ground truth; exact ties go to tie_answer().
Answer true_answer(const VectorDataset& ds, const Triplet& t);

/// Answers with independent flips of probability noise_p < 0.5.
class NoisyOracle {
 public:
  NoisyOracle(std::shared_ptr<const VectorDataset> dataset, double noise_p, std::uint64_t seed);

  Answer answer(const Triplet& t);
  AnswerSet answer_all(std::span<const Triplet> triplets, const std::string& provenance = {});

  const VectorDataset& dataset() const noexcept { return *dataset_; }
  double noise_p() const noexcept { return noise_p_; }
  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::shared_ptr<const VectorDataset> dataset_;
  double noise_p_;
  std::uint64_t seed_;
  Rng rng_;
};

}  // namespace triad

#include "triad/oracle.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "csv.hpp"

namespace triad {

VectorDataset::VectorDataset(std::shared_ptr<const ItemSet> items, std::size_t dim,
                             std::vector<double> coords)
    : items_(std::move(items)), dim_(dim), coords_(std::move(coords)) {
  if (!items_) throw Error(ErrorCode::input, "dataset needs an item set");
  if (dim_ == 0) throw Error(ErrorCode::input, "dataset dimension must be >= 1");
  if (coords_.size() != items_->size() * dim_) {
    throw Error(ErrorCode::input, "coordinate count does not match n * dim");
  }
  for (double v : coords_) {
    if (!std::isfinite(v)) throw Error(ErrorCode::input, "dataset contains a non-finite coordinate");
  }
  const std::size_t n = items_->size();
  if (n <= kDistanceCacheLimit) {
    cache_.assign(n * n, 0.0);
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = a + 1; b < n; ++b) {
        double s = 0.0;
        for (std::size_t k = 0; k < dim_; ++k) {
          const double diff = coords_[a * dim_ + k] - coords_[b * dim_ + k];
          s += diff * diff;
        }
        cache_[a * n + b] = s;
        cache_[b * n + a] = s;
      }
    }
  }
}

double VectorDataset::squared_distance(ItemId a, ItemId b) const {
  if (!cache_.empty()) return cache_[std::size_t{a} * size() + b];
  double s = 0.0;
  const double* pa = coords_.data() + std::size_t{a} * dim_;
  const double* pb = coords_.data() + std::size_t{b} * dim_;
  for (std::size_t k = 0; k < dim_; ++k) {
    const double diff = pa[k] - pb[k];
    s += diff * diff;
  }
  return s;
}

VectorDataset sample_unit_cube(std::size_t n, std::size_t d, std::uint64_t seed) {
  auto items = std::make_shared<const ItemSet>(n);
  if (d == 0) throw Error(ErrorCode::input, "dimension must be >= 1");
  Rng rng(seed, Stream::points);
  std::vector<double> coords(n * d);
  for (auto& c : coords) c = rng.uniform();
  return VectorDataset(std::move(items), d, std::move(coords));
}

VectorDataset parse_vectors(std::istream& in, char delimiter, const std::string& name) {
  std::vector<std::string> labels;
  std::vector<double> coords;
  std::size_t dim = 0;
  bool has_labels = false;
  bool first = true;
  std::string line;
  std::size_t lineno = 0;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (csv::trim(line).empty()) continue;
    auto fields = csv::split(line, delimiter);
    const std::string where = name + ":" + std::to_string(lineno) + ": ";
    if (first) {
      has_labels = !csv::parse_double(fields[0]).has_value();
      dim = fields.size() - (has_labels ? 1 : 0);
      if (dim == 0) throw Error(ErrorCode::parse, where + "row has no numeric columns");
      first = false;
    }
    const std::size_t expect = dim + (has_labels ? 1 : 0);
    if (fields.size() != expect) {
      throw Error(ErrorCode::parse, where + "row " + std::to_string(rows + 1) + " has " +
                                        std::to_string(fields.size()) + " fields, expected " +
                                        std::to_string(expect));
    }
    std::size_t k = 0;
    if (has_labels) labels.push_back(fields[k++]);
    for (; k < fields.size(); ++k) {
      const auto v = csv::parse_double(fields[k]);
      if (!v || !std::isfinite(*v)) {
        throw Error(ErrorCode::parse, where + "row " + std::to_string(rows + 1) +
                                          ": non-numeric cell '" + fields[k] + "'");
      }
      coords.push_back(*v);
    }
    ++rows;
  }
  if (rows < 3) throw Error(ErrorCode::too_few_items, name + ": need at least 3 rows");
  auto items = std::make_shared<const ItemSet>(rows, std::move(labels));
  return VectorDataset(std::move(items), dim, std::move(coords));
}

VectorDataset ingest_vectors(const std::string& path, char delimiter) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path);
  return parse_vectors(in, delimiter, path);
}

void export_vectors(const std::string& path, const VectorDataset& ds, char delimiter) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path);
  const bool labels = !ds.items().labels().empty();
  for (ItemId i = 0; i < ds.size(); ++i) {
    if (labels) out << csv::quote(ds.items().labels()[i], delimiter) << delimiter;
    const auto p = ds.point(i);
    for (std::size_t k = 0; k < p.size(); ++k) {
      if (k) out << delimiter;
      out << csv::format_double(p[k]);
    }
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::io, "write failed: " + path);
}

Answer true_answer(const VectorDataset& ds, const Triplet& t) {
  const double near = ds.squared_distance(t.anchor, t.left);
  const double far = ds.squared_distance(t.anchor, t.right);
  Answer a;
  if (near < far) {
    a.value = 1;
  } else if (far < near) {
    a.value = 0;
  } else {
    a.value = tie_answer(t, ds.size());
  }
  a.source = "truth";
  return a;
}

NoisyOracle::NoisyOracle(std::shared_ptr<const VectorDataset> dataset, double noise_p,
                         std::uint64_t seed)
    : dataset_(std::move(dataset)), noise_p_(noise_p), seed_(seed), rng_(seed, Stream::noise) {
  if (!dataset_) throw Error(ErrorCode::input, "oracle needs a dataset");
  if (!(noise_p >= 0.0 && noise_p < 0.5)) {
    throw Error(ErrorCode::input, "noise probability must lie in [0, 0.5), got " +
                                      csv::format_double(noise_p));
  }
}

Answer NoisyOracle::answer(const Triplet& t) {
  t.validate(dataset_->size());
  Answer a = true_answer(*dataset_, t);
  // Always consume one draw so the stream position only depends on call count.
  const bool flip = rng_.bernoulli(noise_p_);
  if (flip) a.value = static_cast<std::uint8_t>(1 - a.value);
  a.source = "oracle:" + std::to_string(seed_);
  return a;
}

AnswerSet NoisyOracle::answer_all(std::span<const Triplet> triplets, const std::string& provenance) {
  AnswerSet set(dataset_->item_set(), provenance);
  set.reserve(triplets.size());
  for (const auto& t : triplets) set.add(t, answer(t));
  return set;
}

}  // namespace triad

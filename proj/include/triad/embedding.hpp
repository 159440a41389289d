#pragma once

// Ordinal embedding: GNMDS, STE, t-STE and SOE losses on a shared
// full-batch gradient descent with backtracking step halving.
//
// For a record whose anchor a was judged closer to `near` than to `far`,
// with D_n = |x_a - x_near|^2 and D_f = |x_a - x_far|^2:
//
//   GNMDS  max(0, D_n - D_f + margin)
//   STE    -log( e^{-D_n} / (e^{-D_n} + e^{-D_f}) )  = softplus(D_n - D_f)
//   t-STE  -log( K_n / (K_n + K_f) ),  K = (1 + D/alpha)^{-(alpha+1)/2}
//   SOE    max(0, margin + sqrt(D_n) - sqrt(D_f))^2
//
// The loss of an answer set is the sum over its records.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "triad/core.hpp"

namespace triad {

enum class EmbedMethod { gnmds, ste, tste, soe };

/// "GNMDS", "STE", "tSTE", "SOE"
std::string to_string(EmbedMethod m);
/// Case-insensitive; accepts "t-STE" as well.
EmbedMethod embed_method_from_string(const std::string& s);
inline constexpr EmbedMethod kAllEmbedMethods[] = {EmbedMethod::soe, EmbedMethod::ste,
                                                   EmbedMethod::tste, EmbedMethod::gnmds};

struct EmbedConfig {
  std::size_t d = 3;
  std::size_t max_iters = 2000;
  double learning_rate = 1.0;  // initial step of every iteration
  double tolerance = 1e-7;     // relative loss change
  std::size_t max_halvings = 50;
  std::size_t restarts = 3;
  double margin = 0.1;
  std::optional<double> alpha;  // t-STE degrees of freedom; default max(1, d-1)
  double init_scale = 0.1;

  double dof() const;
  void validate() const;
};

/// Restart count used when the caller does not override it: 10 for n <= 20.
std::size_t default_restarts(std::size_t n);

struct Embedding {
  std::size_t n = 0;
  std::size_t d = 0;
  std::vector<double> coords;  // row-major n x d
  EmbedMethod method = EmbedMethod::soe;
  double final_loss = 0.0;
  std::uint64_t seed = 0;
  std::size_t iterations_used = 0;
  std::vector<ItemId> unconstrained;  // items in no training record
  std::vector<double> loss_trace;     // accepted losses of the winning restart
  std::string provenance;

  std::span<const double> point(ItemId i) const { return {coords.data() + std::size_t{i} * d, d}; }
};

/// Loss of `records` at `coords`; fills `gradient` (resized to n*d) when given.
double loss_and_gradient(EmbedMethod method, std::span<const double> coords, std::size_t d,
                         const AnswerSet& records, const EmbedConfig& cfg,
                         std::vector<double>* gradient = nullptr);

/// Best of cfg.restarts runs; deterministic in (records, method, cfg, seed).
Embedding embed(const AnswerSet& records, EmbedMethod method, const EmbedConfig& cfg,
                std::uint64_t seed);

/// 1 iff the embedded anchor is strictly closer to left; ties use tie_answer().
std::uint8_t predict(const Embedding& e, const Triplet& t);

/// Fraction of records whose answer the embedding reproduces.
double satisfied_fraction(const Embedding& e, const AnswerSet& records);

// Export: `item_id,c0,...,c{d-1}` table plus `<path>.json` metadata.
void export_embedding(const std::string& path, const Embedding& e);
Embedding import_embedding(const std::string& path);

}  // namespace triad

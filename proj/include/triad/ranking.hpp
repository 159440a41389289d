#pragma once

// Ranking the C(n,2) item pairs from triplet answers.
//
// Every record (a; y, z) compares pair {a,y} against pair {a,z}; the pair
// judged closer wins. Scores are oriented so that higher means closer, and a
// triplet is predicted from the scores of its two anchor pairs.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "triad/core.hpp"

namespace triad {

/// Observed comparisons between two pairs i < j (flat indices).
struct PairEdge {
  std::size_t i = 0;
  std::size_t j = 0;
  std::uint32_t wins_i = 0;  // times pair i was judged closer than pair j
  std::uint32_t wins_j = 0;
  std::uint32_t total() const noexcept { return wins_i + wins_j; }
};

class PairComparisonGraph {
 public:
  PairComparisonGraph(std::size_t n_items, std::vector<PairEdge> edges);

  std::size_t n_items() const noexcept { return n_items_; }
  std::size_t n_pairs() const noexcept { return pair_count(n_items_); }
  /// Sorted by (i, j).
  const std::vector<PairEdge>& edges() const noexcept { return edges_; }
  std::uint64_t total_comparisons() const noexcept { return total_; }

  /// Times pair `winner` beat pair `loser`.
  std::uint32_t wins(std::size_t winner, std::size_t loser) const;
  std::uint32_t wins_of(std::size_t pair) const { return node_wins_.at(pair); }
  std::uint32_t comparisons_of(std::size_t pair) const { return node_comparisons_.at(pair); }

 private:
  std::size_t n_items_;
  std::vector<PairEdge> edges_;
  std::vector<std::uint32_t> node_wins_;
  std::vector<std::uint32_t> node_comparisons_;
  std::uint64_t total_ = 0;
};

PairComparisonGraph build_graph(const AnswerSet& records);

enum class RankMethod { counting, rank_centrality, serial_rank };
std::string to_string(RankMethod m);
RankMethod rank_method_from_string(const std::string& s);
inline constexpr RankMethod kAllRankMethods[] = {RankMethod::counting, RankMethod::rank_centrality,
                                                 RankMethod::serial_rank};

struct PairScoreTable {
  std::size_t n_items = 0;
  std::vector<double> scores;  // one per flat pair index, higher = closer
  std::string method;
  bool no_signal = false;      // SerialRank on an empty comparison matrix
  std::size_t components = 1;  // Rank Centrality comparison-graph components

  double score(ItemId a, ItemId b) const { return scores.at(pair_flat_index(a, b, n_items)); }
};

/// wins / comparisons per pair; uncompared pairs get 0.5.
PairScoreTable rank_counting(const PairComparisonGraph& g);

struct RankCentralityOptions {
  double epsilon = 1.0;
  double tolerance = 1e-10;  // L1 change between iterates
  std::size_t max_iters = 1000000;
};

/// Stationary distribution of the comparison random walk, which moves from
/// the farther pair towards the closer one. On a disconnected graph each
/// component keeps mass |component| / N and `components` reports the count.
PairScoreTable rank_centrality(const PairComparisonGraph& g, const RankCentralityOptions& opt = {});

/// Row-stochastic transition matrix, dense. Only for small graphs and tests.
std::vector<double> rank_centrality_transitions(const PairComparisonGraph& g, double epsilon);

struct SerialRankOptions {
  std::size_t max_pairs = 100000;
  double tolerance = 1e-8;
  std::size_t krylov_dim = 160;
  std::size_t max_restarts = 200;
};

/// Sparse skew-symmetric majority matrix C (C_ij = sign of net wins).
class MajorityMatrix {
 public:
  explicit MajorityMatrix(const PairComparisonGraph& g);

  std::size_t size() const noexcept { return n_; }
  bool empty() const noexcept { return col_.empty(); }
  /// out = C v
  void apply(std::span<const double> v, std::span<double> out) const;
  /// out = C^T v = -C v
  void apply_transposed(std::span<const double> v, std::span<double> out) const;
  double at(std::size_t i, std::size_t j) const;

 private:
  std::size_t n_;
  std::vector<std::size_t> row_start_;
  std::vector<std::size_t> col_;
  std::vector<double> val_;
};

/// S v with S = (N J + C C^T) / 2, never forming S.
std::vector<double> serial_similarity_apply(const MajorityMatrix& c, std::span<const double> v);
/// Dense S, row-major; refuses N > 2000.
std::vector<double> serial_similarity_dense(const MajorityMatrix& c);

/// Fiedler vector of the Laplacian of S, signed to agree with the majority
/// of observed comparisons.
PairScoreTable rank_serial(const PairComparisonGraph& g, const SerialRankOptions& opt = {});

PairScoreTable rank(const PairComparisonGraph& g, RankMethod method);

/// 1 iff score(anchor,left) > score(anchor,right); equal scores use tie_answer().
std::uint8_t predict_from_scores(const PairScoreTable& s, const Triplet& t);

// Export: `item_a,item_b,score,method`.
void export_scores(const std::string& path, const PairScoreTable& s);
PairScoreTable import_scores(const std::string& path, std::size_t n_items);

}  // namespace triad

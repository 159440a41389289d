#pragma once

// Triplet prediction accuracy and the analyses built on it: truth accuracy
// on simulated data, noise ceiling from repeated answers, cross-subject
// transfer, session pooling and dimension sweeps.

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "triad/core.hpp"
#include "triad/embedding.hpp"
#include "triad/oracle.hpp"
#include "triad/ranking.hpp"

namespace triad {

using Predictor = std::variant<Embedding, PairScoreTable>;

std::uint8_t predict(const Predictor& p, const Triplet& t);
std::size_t predictor_items(const Predictor& p);
std::string describe(const Predictor& p);

/// What to fit: an embedding method (with its config) or a ranking method.
struct Learner {
  std::variant<EmbedMethod, RankMethod> method = EmbedMethod::soe;
  EmbedConfig embed;

  std::string name() const;
  bool is_embedding() const { return std::holds_alternative<EmbedMethod>(method); }
};

Learner learner_from_string(const std::string& name, const EmbedConfig& cfg = {});
Predictor fit(const Learner& learner, const AnswerSet& train, std::uint64_t seed);

struct PredictionReport {
  double accuracy = 0.0;
  std::size_t n_test = 0;
  std::size_t n_correct = 0;
  double std_error = 0.0;  // sqrt(acc (1 - acc) / n_test)
  std::size_t unconstrained_items = 0;
  std::string predictor;
  bool sampled = false;  // truth accuracy from a sample instead of all questions
};

PredictionReport make_report(std::size_t correct, std::size_t total, const Predictor& p);

/// Agreement of the predictor with the test answers.
PredictionReport evaluate(const Predictor& predictor, const AnswerSet& test);

inline constexpr std::uint64_t kDefaultTruthCap = 2'000'000;

/// Accuracy against Euclidean ground truth over all n*C(n-1,2) questions, or
/// over `cap` uniform draws when there are more than `cap` of them.
PredictionReport exhaustive_or_sampled_truth_accuracy(const Predictor& predictor, const VectorDataset& ds,
                                                      std::uint64_t cap = kDefaultTruthCap,
                                                      std::uint64_t seed = 0);

/// Mean agreement of individual answers with their question's majority, over
/// questions asked more than once.
double noise_ceiling(const AnswerSet& repeats);

struct Split {
  AnswerSet train;
  AnswerSet test;
};

/// Disjoint by question identity: no training record asks a test question.
Split split_train_test(const AnswerSet& source, std::size_t n_train, std::size_t n_test, std::uint64_t seed);

/// Records of `train` whose question does not occur in `test`.
AnswerSet exclude_questions(const AnswerSet& train, const AnswerSet& test);

struct TransferMatrix {
  std::string block;  // e.g. "Lab/MTurk"
  std::vector<std::string> row_labels;
  std::vector<std::string> col_labels;
  std::vector<std::vector<PredictionReport>> cells;  // [train][test]
  bool diagonal_held_out = false;

  double mean_accuracy(bool include_diagonal = true) const;
  double mean_diagonal() const;
};

/// t-STE in two dimensions, the default for cross-subject analyses.
inline Learner tste_2d() {
  Learner l;
  l.method = EmbedMethod::tste;
  l.embed.d = 2;
  return l;
}

struct CrossSubjectConfig {
  Learner learner = tste_2d();
  std::size_t n_train = 1500;
  std::size_t n_test = 250;
  std::uint64_t seed = 0;
  std::string block;
  std::size_t workers = 1;
};

/// Fits every training source on its train split and scores it on every
/// test source's held-out split. Passing the same span for both sides makes
/// the diagonal a within-source held-out evaluation.
TransferMatrix cross_subject(std::span<const AnswerSet> train_sets, std::span<const AnswerSet> test_sets,
                             const CrossSubjectConfig& cfg);

struct PoolPoint {
  std::size_t pool_size = 0;
  double mean = 0.0;
  double sd = 0.0;
  std::size_t trials = 0;
};

/// Per trial: permute sessions, test on the first, train on the first k of
/// the rest for k = 1..S-1.
std::vector<PoolPoint> pooling_curve(std::span<const AnswerSet> sessions, std::size_t trials,
                                     const Learner& learner, std::uint64_t seed, std::size_t workers = 1);

struct SweepCell {
  std::size_t d = 0;
  EmbedMethod method = EmbedMethod::soe;
  PredictionReport report;
};

/// Full (dimension x method) grid on fixed train/test sets, row-major by dim.
std::vector<SweepCell> dimension_sweep(const AnswerSet& train, const AnswerSet& test,
                                       const std::vector<std::size_t>& dims,
                                       const std::vector<EmbedMethod>& methods, const EmbedConfig& cfg,
                                       std::uint64_t seed, std::size_t workers = 1);

/// Sample mean and standard deviation (n - 1 denominator; 0 for one value).
std::pair<double, double> mean_sd(std::span<const double> values);

}  // namespace triad

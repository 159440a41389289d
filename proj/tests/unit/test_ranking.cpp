#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "triad/oracle.hpp"
#include "triad/ranking.hpp"
#include "triad/sampling.hpp"

using namespace triad;

namespace {

AnswerSet noiseless(const VectorDataset& ds, const std::vector<Triplet>& ts) {
  AnswerSet set(ds.item_set());
  for (const auto& t : ts) set.add(t, true_answer(ds, t));
  return set;
}

// Graph on N abstract pairs; n is chosen so that C(n,2) >= N.
PairComparisonGraph abstract_graph(std::size_t n, std::vector<PairEdge> edges) {
  return PairComparisonGraph(n, std::move(edges));
}

std::vector<double> dense_stationary(const std::vector<double>& p, std::size_t N) {
  Eigen::MatrixXd a(N + 1, N);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j) a(j, i) = p[i * N + j] - (i == j ? 1.0 : 0.0);
  a.row(N).setOnes();
  Eigen::VectorXd b = Eigen::VectorXd::Zero(N + 1);
  b(N) = 1.0;
  const Eigen::VectorXd pi = a.colPivHouseholderQr().solve(b);
  return {pi.data(), pi.data() + N};
}

}  // namespace

TEST_CASE("graph from a single record") {
  AnswerSet set(3);
  set.add(Triplet{0, 1, 2}, Answer{1});
  const auto g = build_graph(set);
  const auto a = pair_flat_index(0, 1, 3), b = pair_flat_index(0, 2, 3);
  CHECK(g.wins(a, b) == 1);
  CHECK(g.wins(b, a) == 0);
  CHECK(g.total_comparisons() == 1);
  CHECK(g.edges().size() == 1);
}

TEST_CASE("repeated identical answers accumulate on one edge") {
  AnswerSet set(4);
  for (int i = 0; i < 5; ++i) set.add(Triplet{3, 2, 0}, Answer{0});
  const auto g = build_graph(set);
  REQUIRE(g.edges().size() == 1);
  CHECK(g.wins(pair_flat_index(3, 0, 4), pair_flat_index(3, 2, 4)) == 5);
}

TEST_CASE("win conservation and canonicalization invariance") {
  const auto ds = std::make_shared<const VectorDataset>(sample_unit_cube(25, 3, 1));
  NoisyOracle o(ds, 0.2, 2);
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    const auto set = o.answer_all(sample_random(25, 300 + 50 * trial, rng));
    const auto g = build_graph(set);
    std::uint64_t sum = 0;
    for (const auto& e : g.edges()) {
      sum += e.total();
      CHECK(e.i < e.j);
      const auto [a1, b1] = pair_from_flat(e.i, 25);
      const auto [a2, b2] = pair_from_flat(e.j, 25);
      CHECK((a1 == a2 || a1 == b2 || b1 == a2 || b1 == b2));
    }
    CHECK(sum == set.size());
    const auto gc = build_graph(set.canonicalized());
    REQUIRE(gc.edges().size() == g.edges().size());
    for (std::size_t k = 0; k < g.edges().size(); ++k) {
      CHECK(gc.edges()[k].i == g.edges()[k].i);
      CHECK(gc.edges()[k].wins_i == g.edges()[k].wins_i);
      CHECK(gc.edges()[k].wins_j == g.edges()[k].wins_j);
    }
  }
}

TEST_CASE("counting scores") {
  const auto g = abstract_graph(4, {{0, 1, 2, 0}, {0, 2, 0, 1}});
  const auto s = rank_counting(g);
  CHECK(s.scores[0] == doctest::Approx(2.0 / 3.0));
  CHECK(s.scores[5] == 0.5);
  CHECK(s.scores.size() == 6);
}

TEST_CASE("counting scores on all noiseless questions of 8 points") {
  // A pair {a,b} meets pairs {a,c} under anchor a and pairs {b,c} under
  // anchor b, so its score averages how far down each endpoint's neighbour
  // list the other endpoint sits.
  const std::size_t n = 8;
  const auto ds = sample_unit_cube(n, 3, 5);
  const auto s = rank_counting(build_graph(noiseless(ds, all_questions(n))));
  for (ItemId a = 0; a < n; ++a) {
    for (ItemId b = a + 1; b < n; ++b) {
      double wins = 0;
      for (ItemId c = 0; c < n; ++c) {
        if (c == a || c == b) continue;
        wins += ds.squared_distance(a, b) < ds.squared_distance(a, c);
        wins += ds.squared_distance(b, a) < ds.squared_distance(b, c);
      }
      CHECK(s.score(a, b) == doctest::Approx(wins / (2.0 * (n - 2))).epsilon(1e-12));
    }
  }
}

// The second term above can outweigh the first, so counting scores are not
// guaranteed to reproduce every question even with complete noiseless data.
TEST_CASE("counting on all noiseless questions predicts every question" * doctest::may_fail()) {
  const auto ds = sample_unit_cube(8, 3, 5);
  const auto s = rank_counting(build_graph(noiseless(ds, all_questions(8))));
  std::size_t agree = 0, total = 0;
  for (const auto& t : all_questions(8)) {
    agree += predict_from_scores(s, t) == true_answer(ds, t).value;
    ++total;
  }
  MESSAGE("counting accuracy on all questions, n=8: ", static_cast<double>(agree) / total);
  CHECK(agree == total);
}

TEST_CASE("rank centrality on small chains") {
  SUBCASE("one dominant pair") {
    RankCentralityOptions opt;
    opt.epsilon = 1e-8;
    const auto s = rank_centrality(abstract_graph(3, {{0, 1, 10, 0}}), opt);
    CHECK(s.scores[0] > s.scores[1]);
    CHECK(s.scores[0] > 0.99 * (s.scores[0] + s.scores[1]));
  }
  SUBCASE("balanced cycle is uniform") {
    const auto s = rank_centrality(abstract_graph(3, {{0, 1, 1, 0}, {0, 2, 0, 1}, {1, 2, 1, 0}}));
    for (double v : s.scores) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-8));
  }
  SUBCASE("matches a direct linear solve") {
    Rng rng(7);
    for (int trial = 0; trial < 30; ++trial) {
      const std::size_t n = 4;  // six pairs
      const std::size_t N = pair_count(n) - rng.below(3);
      std::vector<PairEdge> edges;
      for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t j = i + 1; j < N; ++j) {
          if (j == i + 1 || rng.bernoulli(0.5)) {
            edges.push_back({i, j, static_cast<std::uint32_t>(rng.below(5)), static_cast<std::uint32_t>(rng.below(5))});
            if (edges.back().total() == 0) edges.back().wins_i = 1;
          }
        }
      }
      const auto g = abstract_graph(n, edges);
      const double eps = trial % 2 ? 1.0 : 1e-8;
      RankCentralityOptions opt;
      opt.epsilon = eps;
      const auto s = rank_centrality(g, opt);
      const auto p = rank_centrality_transitions(g, eps);
      const std::size_t M = g.n_pairs();
      for (std::size_t i = 0; i < M; ++i) {
        double row = 0;
        for (std::size_t j = 0; j < M; ++j) {
          CHECK(p[i * M + j] >= 0.0);
          row += p[i * M + j];
        }
        CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
      }
      if (s.components != 1) continue;
      const auto pi = dense_stationary(p, M);
      double l1 = 0, sum = 0;
      for (std::size_t i = 0; i < M; ++i) {
        l1 += std::abs(pi[i] - s.scores[i]);
        sum += s.scores[i];
        CHECK(s.scores[i] >= 0.0);
      }
      CHECK(l1 < 1e-8);
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  SUBCASE("disconnected graphs are flagged") {
    const auto s = rank_centrality(abstract_graph(4, {{0, 1, 3, 0}, {2, 3, 0, 2}}));
    CHECK(s.components == 4);  // pairs 4 and 5 are isolated
    CHECK(std::accumulate(s.scores.begin(), s.scores.end(), 0.0) == doctest::Approx(1.0));
  }
}

TEST_CASE("matrix-free serial similarity matches the dense product") {
  Rng rng(9);
  for (std::size_t n : {4u, 6u, 10u}) {
    const auto N = pair_count(n);
    std::vector<PairEdge> edges;
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = i + 1; j < N; ++j)
        if (rng.bernoulli(0.3)) edges.push_back({i, j, static_cast<std::uint32_t>(rng.below(3)), static_cast<std::uint32_t>(rng.below(3))});
    const MajorityMatrix c(abstract_graph(n, edges));
    // Independent dense construction of S = (N J + C C^T) / 2.
    Eigen::MatrixXd cm(N, N);
    for (std::size_t i = 0; i < N; ++i)
      for (std::size_t j = 0; j < N; ++j) cm(i, j) = c.at(i, j);
    CHECK((cm + cm.transpose()).cwiseAbs().maxCoeff() == 0.0);
    const Eigen::MatrixXd s = 0.5 * (static_cast<double>(N) * Eigen::MatrixXd::Ones(N, N) + cm * cm.transpose());
    const auto dense = serial_similarity_dense(c);
    for (int trial = 0; trial < 5; ++trial) {
      Eigen::VectorXd v(N);
      for (std::size_t i = 0; i < N; ++i) v[i] = rng.normal();
      const auto got = serial_similarity_apply(c, std::span<const double>(v.data(), N));
      const Eigen::VectorXd want = s * v;
      for (std::size_t i = 0; i < N; ++i) {
        CHECK(std::abs(got[i] - want[i]) < 1e-10);
        CHECK(std::abs(dense[i * N + trial % N] - s(i, trial % N)) < 1e-12);
      }
    }
  }
}

TEST_CASE("SerialRank orders a transitive tournament") {
  // Pairs 0..4 with pair i beating every pair j > i.
  std::vector<PairEdge> edges;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = i + 1; j < 5; ++j) edges.push_back({i, j, 1, 0});
  const auto s = rank_serial(abstract_graph(4, edges));
  CHECK_FALSE(s.no_signal);
  // The unique ordering agreeing with every comparison is 0 > 1 > 2 > 3 > 4.
  std::vector<std::size_t> order{0, 1, 2, 3, 4};
  std::size_t best_agree = 0;
  std::vector<std::size_t> best;
  do {
    std::size_t agree = 0;
    for (std::size_t a = 0; a < 5; ++a)
      for (std::size_t b = a + 1; b < 5; ++b) agree += order[a] < order[b];
    if (agree > best_agree) {
      best_agree = agree;
      best = order;
    }
  } while (std::next_permutation(order.begin(), order.end()));
  std::vector<std::size_t> by_score{0, 1, 2, 3, 4};
  std::sort(by_score.begin(), by_score.end(), [&](auto a, auto b) { return s.scores[a] > s.scores[b]; });
  CHECK(by_score == best);
}

TEST_CASE("SerialRank on an empty graph reports no signal") {
  const auto s = rank_serial(abstract_graph(4, {}));
  CHECK(s.no_signal);
  for (double v : s.scores) CHECK(v == s.scores[0]);
}

TEST_CASE("prediction from scores") {
  PairScoreTable s;
  s.n_items = 3;
  s.scores.assign(3, 0.0);
  s.scores[pair_flat_index(0, 1, 3)] = 0.9;
  s.scores[pair_flat_index(0, 2, 3)] = 0.2;
  CHECK(predict_from_scores(s, {0, 1, 2}) == 1);
  CHECK(predict_from_scores(s, {0, 2, 1}) == 0);
  s.scores.assign(3, 0.4);
  CHECK(predict_from_scores(s, {0, 1, 2}) + predict_from_scores(s, {0, 2, 1}) == 1);
}

TEST_CASE("monotone transforms keep predictions") {
  Rng rng(12);
  PairScoreTable s;
  s.n_items = 10;
  for (std::size_t i = 0; i < pair_count(10); ++i) s.scores.push_back(rng.normal());
  PairScoreTable t = s;
  for (auto& v : t.scores) v = std::exp(3 * v) + 7;
  for (const auto& q : all_questions(10)) CHECK(predict_from_scores(s, q) == predict_from_scores(t, q));
}

TEST_CASE("all ranking methods are accurate with n^2 log n answers") {
  const std::size_t n = 30;
  const auto ds = sample_unit_cube(n, 3, 14);
  Rng rng(15);
  const auto m = static_cast<std::size_t>(std::ceil(3.0 * n * n * std::log2(n)));
  const auto g = build_graph(noiseless(ds, sample_random(n, m, rng)));
  for (auto method : kAllRankMethods) {
    const auto s = rank(g, method);
    for (double v : s.scores) CHECK(std::isfinite(v));
    std::size_t agree = 0;
    const auto all = all_questions(n);
    for (const auto& t : all) agree += predict_from_scores(s, t) == true_answer(ds, t).value;
    const double acc = static_cast<double>(agree) / all.size();
    MESSAGE(to_string(method), " accuracy ", acc);
    CHECK(acc >= 0.85);
  }
}

TEST_CASE("score export round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "triad_rank_test";
  std::filesystem::create_directories(dir);
  PairScoreTable s;
  s.n_items = 5;
  s.method = "counting";
  for (std::size_t i = 0; i < pair_count(5); ++i) s.scores.push_back(0.1 * i + 1.0 / 3.0);
  export_scores((dir / "s.csv").string(), s);
  const auto back = import_scores((dir / "s.csv").string(), 5);
  CHECK(back.scores == s.scores);
  CHECK(back.method == "counting");
  std::filesystem::remove_all(dir);
  CHECK(rank_method_from_string(to_string(RankMethod::serial_rank)) == RankMethod::serial_rank);
}

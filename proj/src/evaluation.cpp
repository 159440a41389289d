#include "triad/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "triad/parallel.hpp"
#include "triad/rng.hpp"

namespace triad {

std::uint8_t predict(const Predictor& p, const Triplet& t) {
  return std::visit(
      [&](const auto& model) -> std::uint8_t {
        using T = std::decay_t<decltype(model)>;
        if constexpr (std::is_same_v<T, Embedding>) {
          return predict(model, t);
        } else {
          return predict_from_scores(model, t);
        }
      },
      p);
}

std::size_t predictor_items(const Predictor& p) {
  return std::visit(
      [](const auto& model) -> std::size_t {
        using T = std::decay_t<decltype(model)>;
        if constexpr (std::is_same_v<T, Embedding>) {
          return model.n;
        } else {
          return model.n_items;
        }
      },
      p);
}

std::string describe(const Predictor& p) {
  if (const auto* e = std::get_if<Embedding>(&p)) {
    return to_string(e->method) + " d=" + std::to_string(e->d);
  }
  return std::get<PairScoreTable>(p).method;
}

std::string Learner::name() const {
  return std::visit([](auto m) { return to_string(m); }, method);
}

Learner learner_from_string(const std::string& name, const EmbedConfig& cfg) {
  Learner l;
  l.embed = cfg;
  try {
    l.method = embed_method_from_string(name);
  } catch (const Error&) {
    try {
      l.method = rank_method_from_string(name);
    } catch (const Error&) {
      throw Error(ErrorCode::input, "unknown method '" + name + "'");
    }
  }
  return l;
}

Predictor fit(const Learner& learner, const AnswerSet& train, std::uint64_t seed) {
  if (const auto* m = std::get_if<EmbedMethod>(&learner.method)) {
    return embed(train, *m, learner.embed, seed);
  }
  if (train.empty()) throw Error(ErrorCode::input, "cannot rank from an empty answer set");
  return rank(build_graph(train), std::get<RankMethod>(learner.method));
}

PredictionReport make_report(std::size_t correct, std::size_t total, const Predictor& p) {
  PredictionReport r;
  r.n_test = total;
  r.n_correct = correct;
  r.accuracy = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  r.std_error = total ? std::sqrt(r.accuracy * (1.0 - r.accuracy) / static_cast<double>(total)) : 0.0;
  r.predictor = describe(p);
  if (const auto* e = std::get_if<Embedding>(&p)) r.unconstrained_items = e->unconstrained.size();
  return r;
}

PredictionReport evaluate(const Predictor& predictor, const AnswerSet& test) {
  if (test.empty()) throw Error(ErrorCode::input, "test set is empty");
  const std::size_t n = predictor_items(predictor);
  std::size_t correct = 0;
  for (const auto& r : test.records()) {
    const auto& t = r.triplet;
    if (t.anchor >= n || t.left >= n || t.right >= n) {
      throw Error(ErrorCode::coverage, "test triplet references item beyond predictor range " + std::to_string(n));
    }
    correct += predict(predictor, t) == r.answer.value;
  }
  return make_report(correct, test.size(), predictor);
}

PredictionReport exhaustive_or_sampled_truth_accuracy(const Predictor& predictor, const VectorDataset& ds,
                                                      std::uint64_t cap, std::uint64_t seed) {
  const std::size_t n = ds.size();
  if (predictor_items(predictor) < n) throw Error(ErrorCode::coverage, "predictor covers fewer items than dataset");
  std::size_t correct = 0, total = 0;
  if (question_count(n) <= cap) {
    for (ItemId a = 0; a < n; ++a) {
      for (ItemId y = 0; y < n; ++y) {
        if (y == a) continue;
        for (ItemId z = y + 1; z < n; ++z) {
          if (z == a) continue;
          const Triplet t{a, y, z};
          correct += predict(predictor, t) == true_answer(ds, t).value;
          ++total;
        }
      }
    }
    return make_report(correct, total, predictor);
  }
  Rng rng(seed, Stream::evaluation);
  for (std::uint64_t k = 0; k < cap; ++k) {
    const auto a = static_cast<ItemId>(rng.below(n));
    auto y = static_cast<ItemId>(rng.below(n - 1));
    auto z = static_cast<ItemId>(rng.below(n - 2));
    if (z >= y) ++z;
    if (y >= a) ++y;
    if (z >= a) ++z;
    const Triplet t{a, y, z};
    correct += predict(predictor, t) == true_answer(ds, t).value;
    ++total;
  }
  auto report = make_report(correct, total, predictor);
  report.sampled = true;
  return report;
}

double noise_ceiling(const AnswerSet& repeats) {
  struct Group {
    std::size_t ones = 0, total = 0;
  };
  std::unordered_map<QuestionKey, Group, QuestionKeyHash> groups;
  for (const auto& raw : repeats.records()) {
    const auto c = canonicalize(raw);
    auto& g = groups[QuestionKey::of(c.triplet)];
    g.ones += c.answer.value;
    ++g.total;
  }
  std::size_t agree = 0, answers = 0;
  for (const auto& [key, g] : groups) {
    if (g.total < 2) continue;
    if (2 * g.ones == g.total) {
      throw Error(ErrorCode::tie, "even split in a repeated question group of size " + std::to_string(g.total));
    }
    agree += std::max(g.ones, g.total - g.ones);
    answers += g.total;
  }
  if (answers == 0) throw Error(ErrorCode::input, "no repeated questions to estimate a noise ceiling from");
  return static_cast<double>(agree) / static_cast<double>(answers);
}

Split split_train_test(const AnswerSet& source, std::size_t n_train, std::size_t n_test, std::uint64_t seed) {
  Rng rng(seed, Stream::split);
  std::vector<std::size_t> order(source.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);

  std::unordered_set<QuestionKey, QuestionKeyHash> test_keys;
  std::vector<std::size_t> test_idx, rest;
  for (auto i : order) {
    const auto key = QuestionKey::of(source.records()[i].triplet);
    if (test_idx.size() < n_test && !test_keys.contains(key)) {
      test_keys.insert(key);
      test_idx.push_back(i);
    } else {
      rest.push_back(i);
    }
  }
  std::vector<std::size_t> train_idx;
  for (auto i : rest) {
    if (train_idx.size() == n_train) break;
    if (!test_keys.contains(QuestionKey::of(source.records()[i].triplet))) train_idx.push_back(i);
  }
  if (test_idx.size() < n_test || train_idx.size() < n_train) {
    throw Error(ErrorCode::input, "source '" + source.provenance() + "' has " + std::to_string(source.size()) +
                                      " records; cannot split " + std::to_string(n_train) + " train / " +
                                      std::to_string(n_test) + " disjoint test");
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  Split s{source.subset(train_idx), source.subset(test_idx)};
  s.train.set_provenance(source.provenance() + "#train");
  s.test.set_provenance(source.provenance() + "#test");
  return s;
}

AnswerSet exclude_questions(const AnswerSet& train, const AnswerSet& test) {
  std::unordered_set<QuestionKey, QuestionKeyHash> keys;
  for (const auto& r : test.records()) keys.insert(QuestionKey::of(r.triplet));
  AnswerSet out(train.item_set(), train.provenance());
  for (const auto& r : train.records()) {
    if (!keys.contains(QuestionKey::of(r.triplet))) out.add(r);
  }
  return out;
}

double TransferMatrix::mean_accuracy(bool include_diagonal) const {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    for (std::size_t j = 0; j < cells[i].size(); ++j) {
      if (!include_diagonal && diagonal_held_out && i == j) continue;
      sum += cells[i][j].accuracy;
      ++count;
    }
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

double TransferMatrix::mean_diagonal() const {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < cells.size() && i < cells[i].size(); ++i) {
    sum += cells[i][i].accuracy;
    ++count;
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

TransferMatrix cross_subject(std::span<const AnswerSet> train_sets, std::span<const AnswerSet> test_sets,
                             const CrossSubjectConfig& cfg) {
  if (train_sets.empty() || test_sets.empty()) throw Error(ErrorCode::input, "cross-subject needs sources");
  const std::size_t n = train_sets.front().n_items();
  for (const auto& s : train_sets) {
    if (s.n_items() != n) throw Error(ErrorCode::input, "all sources must share one item set");
  }
  for (const auto& s : test_sets) {
    if (s.n_items() != n) throw Error(ErrorCode::input, "all sources must share one item set");
  }
  const bool shared = train_sets.data() == test_sets.data() && train_sets.size() == test_sets.size();

  auto split_all = [&](std::span<const AnswerSet> sets, std::uint64_t offset) {
    std::vector<Split> out;
    for (std::size_t i = 0; i < sets.size(); ++i) {
      out.push_back(split_train_test(sets[i], cfg.n_train, cfg.n_test, derive_seed(cfg.seed, Stream::split, offset + i)));
    }
    return out;
  };
  const auto train_splits = split_all(train_sets, 0);
  const auto test_splits = shared ? train_splits : split_all(test_sets, 1u << 20);

  std::vector<Predictor> models(train_splits.size());
  parallel_for(models.size(), cfg.workers, [&](std::size_t i) {
    models[i] = fit(cfg.learner, train_splits[i].train, derive_seed(cfg.seed, Stream::init, i));
  });

  TransferMatrix m;
  m.block = cfg.block;
  m.diagonal_held_out = shared;
  for (const auto& s : train_sets) m.row_labels.push_back(s.provenance());
  for (const auto& s : test_sets) m.col_labels.push_back(s.provenance());
  m.cells.assign(train_splits.size(), std::vector<PredictionReport>(test_splits.size()));
  for (std::size_t i = 0; i < train_splits.size(); ++i) {
    for (std::size_t j = 0; j < test_splits.size(); ++j) {
      m.cells[i][j] = evaluate(models[i], test_splits[j].test);
    }
  }
  return m;
}

std::pair<double, double> mean_sd(std::span<const double> values) {
  if (values.empty()) return {0.0, 0.0};
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

std::vector<PoolPoint> pooling_curve(std::span<const AnswerSet> sessions, std::size_t trials,
                                     const Learner& learner, std::uint64_t seed, std::size_t workers) {
  if (sessions.size() < 2) throw Error(ErrorCode::input, "pooling needs at least 2 sessions");
  if (trials == 0) throw Error(ErrorCode::input, "pooling needs at least 1 trial");
  const std::size_t S = sessions.size();
  const std::size_t n = sessions.front().n_items();
  for (const auto& s : sessions) {
    if (s.n_items() != n) throw Error(ErrorCode::input, "all sessions must share one item set");
  }
  const std::size_t pools = S - 1;
  std::vector<std::vector<std::size_t>> perms(trials);
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng(seed, Stream::shuffle, t);
    perms[t].resize(S);
    std::iota(perms[t].begin(), perms[t].end(), std::size_t{0});
    rng.shuffle(perms[t]);
  }
  std::vector<double> acc(trials * pools);
  parallel_for(trials * pools, workers, [&](std::size_t job) {
    const std::size_t t = job / pools, k = job % pools + 1;
    const auto& perm = perms[t];
    AnswerSet train(sessions[perm[1]].item_set(), "pool");
    for (std::size_t s = 1; s <= k; ++s) train.append(sessions[perm[s]]);
    const auto model = fit(learner, train, derive_seed(seed, Stream::init, t));
    acc[job] = evaluate(model, sessions[perm[0]]).accuracy;
  });
  std::vector<PoolPoint> curve;
  for (std::size_t k = 1; k <= pools; ++k) {
    std::vector<double> vals;
    for (std::size_t t = 0; t < trials; ++t) vals.push_back(acc[t * pools + (k - 1)]);
    const auto [mean, sd] = mean_sd(vals);
    curve.push_back({k, mean, sd, trials});
  }
  return curve;
}

std::vector<SweepCell> dimension_sweep(const AnswerSet& train, const AnswerSet& test,
                                       const std::vector<std::size_t>& dims,
                                       const std::vector<EmbedMethod>& methods, const EmbedConfig& cfg,
                                       std::uint64_t seed, std::size_t workers) {
  if (dims.empty()) throw Error(ErrorCode::input, "dimension sweep needs at least one dimension");
  if (methods.empty()) throw Error(ErrorCode::input, "dimension sweep needs at least one method");
  std::vector<SweepCell> cells(dims.size() * methods.size());
  parallel_for(cells.size(), workers, [&](std::size_t job) {
    const std::size_t di = job / methods.size(), mi = job % methods.size();
    EmbedConfig c = cfg;
    c.d = dims[di];
    if (!cfg.alpha) c.alpha.reset();
    const auto e = embed(train, methods[mi], c, seed);
    cells[job] = {dims[di], methods[mi], evaluate(e, test)};
  });
  return cells;
}

}  // namespace triad

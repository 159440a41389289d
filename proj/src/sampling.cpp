#include "triad/sampling.hpp"

#include <algorithm>
#include <unordered_map>
#include <unordered_set>

namespace triad {

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::random: return "random";
    case Strategy::repeated: return "repeated";
    case Strategy::landmark: return "landmark";
  }
  return "random";
}

Strategy strategy_from_string(const std::string& s) {
  if (s == "random") return Strategy::random;
  if (s == "repeated") return Strategy::repeated;
  if (s == "landmark") return Strategy::landmark;
  throw Error(ErrorCode::plan, "unknown sampling strategy '" + s + "'");
}

void SamplingPlan::validate(std::size_t n) const {
  if (n < 3) throw Error(ErrorCode::too_few_items, "need at least 3 items");
  switch (strategy) {
    case Strategy::random:
      if (m == 0) throw Error(ErrorCode::plan, "random plan needs m >= 1");
      break;
    case Strategy::repeated:
      if (l < 3 || l % 2 == 0) throw Error(ErrorCode::plan, "repetition count l must be odd and >= 3");
      if (m == 0 || m % l != 0) throw Error(ErrorCode::plan, "budget m must be a positive multiple of l");
      break;
    case Strategy::landmark: {
      const std::size_t k = landmarks.empty() ? random_landmarks : landmarks.size();
      if (k < 2 || k > n) throw Error(ErrorCode::plan, "landmark count must lie in [2, n]");
      std::unordered_set<ItemId> seen;
      for (auto id : landmarks) {
        if (id >= n) throw Error(ErrorCode::plan, "landmark id " + std::to_string(id) + " out of range");
        if (!seen.insert(id).second) {
          throw Error(ErrorCode::plan, "duplicate landmark id " + std::to_string(id));
        }
      }
      break;
    }
  }
  if (cap && *cap == 0) throw Error(ErrorCode::plan, "cap must be >= 1");
}

namespace {

Triplet draw_question(std::size_t n, Rng& rng) {
  // Anchor uniform, then an ordered pair of distinct others: uniform over all
  // n*C(n-1,2) questions, each presented in either order with equal chance.
  const auto anchor = static_cast<ItemId>(rng.below(n));
  auto y = static_cast<ItemId>(rng.below(n - 1));
  auto z = static_cast<ItemId>(rng.below(n - 2));
  if (z >= y) ++z;
  if (y >= anchor) ++y;
  if (z >= anchor) ++z;
  return {anchor, y, z};
}

}  // namespace

std::vector<Triplet> sample_random(std::size_t n, std::size_t m, Rng& rng) {
  if (n < 3) throw Error(ErrorCode::too_few_items, "need at least 3 items");
  if (m == 0) throw Error(ErrorCode::plan, "m must be >= 1");
  std::vector<Triplet> out;
  out.reserve(m);
  for (std::size_t i = 0; i < m; ++i) out.push_back(draw_question(n, rng));
  return out;
}

std::vector<Triplet> sample_repeated(std::size_t n, std::size_t m, std::size_t l, Rng& rng) {
  if (l == 0 || l % 2 == 0) throw Error(ErrorCode::plan, "repetition count l must be odd");
  if (m == 0 || m % l != 0) {
    throw Error(ErrorCode::plan, "budget m=" + std::to_string(m) + " is not a positive multiple of l=" +
                                     std::to_string(l));
  }
  const auto base = sample_random(n, m / l, rng);
  std::vector<Triplet> out;
  out.reserve(m);
  for (const auto& t : base) out.insert(out.end(), l, t);
  rng.shuffle(out);
  return out;
}

std::vector<Triplet> sample_landmark(std::size_t n, const std::vector<ItemId>& landmarks, Rng& rng) {
  SamplingPlan check;
  check.strategy = Strategy::landmark;
  check.landmarks = landmarks;
  check.validate(n);
  const std::size_t k = landmarks.size();
  std::vector<Triplet> out;
  out.reserve(k * (k - 1) / 2 * (n - 2));
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      for (ItemId x = 0; x < n; ++x) {
        if (x == landmarks[i] || x == landmarks[j]) continue;
        Triplet t{x, landmarks[i], landmarks[j]};
        if (rng.bernoulli(0.5)) t = t.swapped();
        out.push_back(t);
      }
    }
  }
  rng.shuffle(out);
  return out;
}

std::vector<ItemId> choose_landmarks(std::size_t n, std::size_t k, Rng& rng) {
  if (k < 2 || k > n) throw Error(ErrorCode::plan, "landmark count must lie in [2, n]");
  std::vector<ItemId> out;
  for (auto i : rng.sample_without_replacement(n, k)) out.push_back(static_cast<ItemId>(i));
  return out;
}

std::vector<Triplet> cap_subsample(std::vector<Triplet> triplets, std::size_t cap, Rng& rng) {
  if (triplets.size() <= cap) return triplets;
  auto keep = rng.sample_without_replacement(triplets.size(), cap);
  std::sort(keep.begin(), keep.end());
  std::vector<Triplet> out;
  out.reserve(cap);
  for (auto i : keep) out.push_back(triplets[i]);
  rng.shuffle(out);
  return out;
}

std::vector<Triplet> execute_plan(const SamplingPlan& plan, std::size_t n) {
  plan.validate(n);
  Rng rng(plan.seed, Stream::triplets);
  std::vector<Triplet> out;
  switch (plan.strategy) {
    case Strategy::random: out = sample_random(n, plan.m, rng); break;
    case Strategy::repeated: out = sample_repeated(n, plan.m, plan.l, rng); break;
    case Strategy::landmark: {
      auto marks = plan.landmarks;
      if (marks.empty()) {
        Rng pick(plan.seed, Stream::landmarks);
        marks = choose_landmarks(n, plan.random_landmarks, pick);
      }
      out = sample_landmark(n, marks, rng);
      break;
    }
  }
  if (plan.cap) {
    Rng sub(plan.seed, Stream::shuffle);
    out = cap_subsample(std::move(out), *plan.cap, sub);
  }
  return out;
}

AnswerSet majority_vote(const AnswerSet& records) {
  struct Group {
    AnsweredTriplet first;
    std::size_t ones = 0;
    std::size_t total = 0;
  };
  std::vector<Group> groups;
  std::unordered_map<QuestionKey, std::size_t, QuestionKeyHash> index;
  for (const auto& raw : records.records()) {
    const auto c = canonicalize(raw);
    const auto key = QuestionKey::of(c.triplet);
    auto [it, inserted] = index.try_emplace(key, groups.size());
    if (inserted) groups.push_back({c, 0, 0});
    auto& g = groups[it->second];
    g.ones += c.answer.value;
    ++g.total;
  }
  AnswerSet out(records.item_set(), records.provenance() + "+majority");
  out.reserve(groups.size());
  for (const auto& g : groups) {
    if (2 * g.ones == g.total) {
      throw Error(ErrorCode::tie, "majority vote tie on question (" +
                                      std::to_string(g.first.triplet.anchor) + ";" +
                                      std::to_string(g.first.triplet.left) + "," +
                                      std::to_string(g.first.triplet.right) + ") with " +
                                      std::to_string(g.total) + " answers");
    }
    AnsweredTriplet rec = g.first;
    rec.answer.value = 2 * g.ones > g.total ? 1 : 0;
    if (g.total > 1) rec.answer.response_ms.reset();
    out.add(rec);
  }
  return out;
}

}  // namespace triad

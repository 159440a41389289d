#include "triad/core.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "csv.hpp"

namespace triad {

ItemSet::ItemSet(std::size_t n) : n_(n) {
  if (n < 3) {
    throw Error(ErrorCode::too_few_items,
                "an item set needs at least 3 items, got " + std::to_string(n));
  }
}

ItemSet::ItemSet(std::size_t n, std::vector<std::string> labels) : ItemSet(n) {
  if (!labels.empty() && labels.size() != n) {
    throw Error(ErrorCode::input, "label count " + std::to_string(labels.size()) +
                                      " does not match item count " + std::to_string(n));
  }
  labels_ = std::move(labels);
}

std::string ItemSet::label(ItemId id) const {
  if (id < labels_.size()) return labels_[id];
  return std::to_string(id);
}

void ItemSet::set_metadata(std::vector<Parameters> metadata) {
  if (!metadata.empty() && metadata.size() != n_) {
    throw Error(ErrorCode::input, "metadata row count does not match item count");
  }
  metadata_ = std::move(metadata);
}

void Triplet::validate(std::size_t n) const {
  if (anchor >= n || left >= n || right >= n) {
    throw Error(ErrorCode::invalid_triplet,
                "triplet (" + std::to_string(anchor) + ";" + std::to_string(left) + "," +
                    std::to_string(right) + ") references an item outside 0.." +
                    std::to_string(n - 1));
  }
  if (anchor == left || anchor == right || left == right) {
    throw Error(ErrorCode::invalid_triplet,
                "triplet (" + std::to_string(anchor) + ";" + std::to_string(left) + "," +
                    std::to_string(right) + ") repeats an item");
  }
}

AnsweredTriplet canonicalize(const AnsweredTriplet& t) {
  if (t.triplet.left < t.triplet.right) return t;
  AnsweredTriplet out = t;
  out.triplet = t.triplet.swapped();
  out.answer.value = static_cast<std::uint8_t>(1 - t.answer.value);
  return out;
}

QuestionKey QuestionKey::of(const Triplet& t) noexcept {
  return {t.anchor, std::min(t.left, t.right), std::max(t.left, t.right)};
}

std::uint64_t question_count(std::size_t n) {
  const std::uint64_t m = n;
  return m * ((m - 1) * (m - 2) / 2);
}

std::vector<Triplet> all_questions(std::size_t n) {
  std::vector<Triplet> out;
  out.reserve(static_cast<std::size_t>(question_count(n)));
  for (ItemId a = 0; a < n; ++a) {
    for (ItemId y = 0; y < n; ++y) {
      if (y == a) continue;
      for (ItemId z = y + 1; z < n; ++z) {
        if (z == a) continue;
        out.push_back({a, y, z});
      }
    }
  }
  return out;
}

AnswerSet::AnswerSet(std::shared_ptr<const ItemSet> items, std::string provenance)
    : items_(std::move(items)), provenance_(std::move(provenance)) {
  if (!items_) throw Error(ErrorCode::input, "answer set needs an item set");
}

void AnswerSet::add(const AnsweredTriplet& record) {
  record.triplet.validate(items_->size());
  if (record.answer.value > 1) {
    throw Error(ErrorCode::input, "answer value must be 0 or 1");
  }
  records_.push_back(record);
}

void AnswerSet::append(const AnswerSet& other) {
  if (other.n_items() != n_items()) {
    throw Error(ErrorCode::input, "cannot merge answer sets over different item sets");
  }
  records_.insert(records_.end(), other.records_.begin(), other.records_.end());
}

AnswerSet AnswerSet::canonicalized() const {
  AnswerSet out(items_, provenance_);
  out.records_.reserve(records_.size());
  for (const auto& r : records_) out.records_.push_back(canonicalize(r));
  return out;
}

AnswerSet AnswerSet::flipped() const {
  AnswerSet out = *this;
  for (auto& r : out.records_) r.answer.value = static_cast<std::uint8_t>(1 - r.answer.value);
  return out;
}

AnswerSet AnswerSet::subset(const std::vector<std::size_t>& indices) const {
  AnswerSet out(items_, provenance_);
  out.records_.reserve(indices.size());
  for (auto i : indices) out.records_.push_back(records_.at(i));
  return out;
}

std::size_t pair_flat_index(ItemId a, ItemId b, std::size_t n) {
  if (a == b || a >= n || b >= n) {
    throw Error(ErrorCode::invalid_pair, "invalid pair (" + std::to_string(a) + "," +
                                             std::to_string(b) + ") for n=" + std::to_string(n));
  }
  if (a > b) std::swap(a, b);
  const std::size_t i = a;
  return i * n - i * (i + 1) / 2 + (b - i - 1);
}

std::pair<ItemId, ItemId> pair_from_flat(std::size_t flat, std::size_t n) {
  if (flat >= pair_count(n)) {
    throw Error(ErrorCode::invalid_pair, "flat pair index " + std::to_string(flat) +
                                             " out of range for n=" + std::to_string(n));
  }
  // Row a holds n-1-a pairs.
  std::size_t a = 0;
  std::size_t start = 0;
  while (start + (n - 1 - a) <= flat) {
    start += n - 1 - a;
    ++a;
  }
  return {static_cast<ItemId>(a), static_cast<ItemId>(a + 1 + (flat - start))};
}

std::uint8_t tie_answer(const Triplet& t, std::size_t n) {
  return pair_flat_index(t.anchor, t.left, n) < pair_flat_index(t.anchor, t.right, n) ? 1 : 0;
}

void write_records(std::ostream& out, const AnswerSet& set) {
  out << kRecordHeader << '\n';
  for (const auto& r : set.records()) {
    out << r.triplet.anchor << ',' << r.triplet.left << ',' << r.triplet.right << ','
        << int{r.answer.value} << ',';
    if (r.answer.response_ms) out << csv::format_double(*r.answer.response_ms);
    out << ',' << csv::quote(r.answer.source) << '\n';
  }
}

void write_records(const std::string& path, const AnswerSet& set) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path);
  write_records(out, set);
  if (!out) throw Error(ErrorCode::io, "write failed: " + path);
}

AnswerSet read_records(std::istream& in, std::size_t n_items, const std::string& name) {
  std::string line;
  if (!std::getline(in, line) || csv::trim(line) != kRecordHeader) {
    throw Error(ErrorCode::parse, name + ":1: expected header '" + kRecordHeader + "'");
  }
  struct Row {
    AnsweredTriplet rec;
    std::size_t line;
  };
  std::vector<Row> rows;
  std::size_t lineno = 1;
  ItemId max_id = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (csv::trim(line).empty()) continue;
    const auto f = csv::split(line);
    const auto where = name + ":" + std::to_string(lineno) + ": ";
    if (f.size() != 6) {
      throw Error(ErrorCode::parse, where + "expected 6 fields, got " + std::to_string(f.size()));
    }
    AnsweredTriplet rec;
    ItemId* slots[3] = {&rec.triplet.anchor, &rec.triplet.left, &rec.triplet.right};
    for (int k = 0; k < 3; ++k) {
      const auto v = csv::parse_int(f[k]);
      if (!v || *v < 0 || *v > 0x1FFFFF) throw Error(ErrorCode::parse, where + "bad item id '" + f[k] + "'");
      *slots[k] = static_cast<ItemId>(*v);
      max_id = std::max(max_id, *slots[k]);
    }
    const auto ans = csv::parse_int(f[3]);
    if (!ans || (*ans != 0 && *ans != 1)) {
      throw Error(ErrorCode::parse, where + "answer must be 0 or 1, got '" + f[3] + "'");
    }
    rec.answer.value = static_cast<std::uint8_t>(*ans);
    if (!csv::trim(f[4]).empty()) {
      const auto ms = csv::parse_double(f[4]);
      if (!ms || *ms < 0.0) throw Error(ErrorCode::parse, where + "bad response_ms '" + f[4] + "'");
      rec.answer.response_ms = *ms;
    }
    rec.answer.source = f[5];
    rows.push_back({std::move(rec), lineno});
  }
  const std::size_t n = n_items ? n_items : std::max<std::size_t>(3, std::size_t{max_id} + 1);
  AnswerSet set(n, name);
  set.reserve(rows.size());
  for (const auto& row : rows) {
    try {
      set.add(row.rec);
    } catch (const Error& e) {
      throw Error(ErrorCode::parse, name + ":" + std::to_string(row.line) + ": " + e.what());
    }
  }
  return set;
}

AnswerSet read_records(const std::string& path, std::size_t n_items) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path);
  return read_records(in, n_items, path);
}

}  // namespace triad

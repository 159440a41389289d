#pragma once

// Domain types shared by every module: items, triplets, answers, pairs.
//
// A triplet (anchor; left, right) asks "is anchor closer to left or to
// right?". Answer value 1 means left, 0 means right. Swapping left/right and
// flipping the value denotes the same information, which is what
// canonicalize() exploits. Raw records keep presentation order so that
// position effects stay recoverable; analysis code canonicalizes.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "triad/error.hpp"

namespace triad {

using ItemId = std::uint32_t;

class ItemSet {
 public:
  explicit ItemSet(std::size_t n);
  ItemSet(std::size_t n, std::vector<std::string> labels);

  std::size_t size() const noexcept { return n_; }
  bool contains(ItemId id) const noexcept { return id < n_; }

  /// Empty when the set carries no labels.
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  std::string label(ItemId id) const;

  using Parameters = std::map<std::string, double>;
  const std::vector<Parameters>& metadata() const noexcept { return metadata_; }
  void set_metadata(std::vector<Parameters> metadata);

 private:
  std::size_t n_;
  std::vector<std::string> labels_;
  std::vector<Parameters> metadata_;
};

struct Triplet {
  ItemId anchor = 0;
  ItemId left = 0;
  ItemId right = 1;

  /// Throws invalid_triplet unless the three ids are distinct and < n.
  void validate(std::size_t n) const;
  Triplet swapped() const noexcept { return {anchor, right, left}; }

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

struct Answer {
  std::uint8_t value = 1;  // 1: anchor closer to left, 0: closer to right
  std::optional<double> response_ms;
  std::string source;

  friend bool operator==(const Answer&, const Answer&) = default;
};

struct AnsweredTriplet {
  Triplet triplet;
  Answer answer;

  /// Item the anchor was judged closer to.
  ItemId nearer() const noexcept { return answer.value ? triplet.left : triplet.right; }
  ItemId farther() const noexcept { return answer.value ? triplet.right : triplet.left; }

  friend bool operator==(const AnsweredTriplet&, const AnsweredTriplet&) = default;
};

/// Representative with left < right; the answer flips iff the slots swap.
AnsweredTriplet canonicalize(const AnsweredTriplet& t);

/// Identity of a distinct triplet question: (anchor, {left, right}).
struct QuestionKey {
  ItemId anchor;
  ItemId lo;
  ItemId hi;

  static QuestionKey of(const Triplet& t) noexcept;
  std::uint64_t packed() const noexcept {
    return (std::uint64_t{anchor} << 42) | (std::uint64_t{lo} << 21) | std::uint64_t{hi};
  }
  friend bool operator==(const QuestionKey&, const QuestionKey&) = default;
  friend auto operator<=>(const QuestionKey&, const QuestionKey&) = default;
};

struct QuestionKeyHash {
  std::size_t operator()(const QuestionKey& k) const noexcept {
    return std::hash<std::uint64_t>{}(k.packed());
  }
};

/// Number of distinct questions n * C(n-1, 2).
std::uint64_t question_count(std::size_t n);

/// Enumerates every distinct question once, left < right.
std::vector<Triplet> all_questions(std::size_t n);

class AnswerSet {
 public:
  AnswerSet() : items_(std::make_shared<const ItemSet>(3)) {}
  explicit AnswerSet(std::shared_ptr<const ItemSet> items, std::string provenance = {});
  AnswerSet(std::size_t n, std::string provenance = {})
      : AnswerSet(std::make_shared<const ItemSet>(n), std::move(provenance)) {}

  const ItemSet& items() const noexcept { return *items_; }
  std::shared_ptr<const ItemSet> item_set() const noexcept { return items_; }
  std::size_t n_items() const noexcept { return items_->size(); }

  const std::vector<AnsweredTriplet>& records() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }

  const std::string& provenance() const noexcept { return provenance_; }
  void set_provenance(std::string p) { provenance_ = std::move(p); }

  /// Validates ids against the item set.
  void add(const AnsweredTriplet& record);
  void add(const Triplet& t, const Answer& a) { add(AnsweredTriplet{t, a}); }
  void reserve(std::size_t n) { records_.reserve(n); }
  void append(const AnswerSet& other);

  AnswerSet canonicalized() const;
  AnswerSet flipped() const;
  AnswerSet subset(const std::vector<std::size_t>& indices) const;

 private:
  std::shared_ptr<const ItemSet> items_;
  std::vector<AnsweredTriplet> records_;
  std::string provenance_;
};

/// Position of the unordered pair {a, b} in the lexicographic enumeration
/// (0,1), (0,2), ..., (n-2,n-1). Throws invalid_pair for a == b or ids >= n.
std::size_t pair_flat_index(ItemId a, ItemId b, std::size_t n);
std::pair<ItemId, ItemId> pair_from_flat(std::size_t flat, std::size_t n);
constexpr std::size_t pair_count(std::size_t n) noexcept { return n * (n - 1) / 2; }

/// Deterministic antisymmetric tie rule: 1 iff pair (anchor,left) precedes
/// pair (anchor,right) in the flat enumeration.
std::uint8_t tie_answer(const Triplet& t, std::size_t n);

// Record interchange: header `anchor,left,right,answer,response_ms,source`.
inline constexpr const char* kRecordHeader = "anchor,left,right,answer,response_ms,source";

void write_records(std::ostream& out, const AnswerSet& set);
void write_records(const std::string& path, const AnswerSet& set);

/// n_items == 0 infers the item count as max id + 1 (at least 3).
AnswerSet read_records(std::istream& in, std::size_t n_items = 0, const std::string& name = "<stream>");
AnswerSet read_records(const std::string& path, std::size_t n_items = 0);

}  // namespace triad

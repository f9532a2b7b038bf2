#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "sparsekt/tensor.hpp"

namespace sparsekt {

struct InteractionRecord {
  std::string learner_id;
  std::string question_id;
  std::size_t attempt = 1;  // 1-based
  Outcome outcome = Outcome::Incorrect;

  bool operator==(const InteractionRecord&) const = default;
};

/// Reads a CSV log with a header containing learner_id, question_id, attempt and
/// correct (extra columns are ignored). Throws DataError naming the offending line.
std::vector<InteractionRecord> parse_log(std::istream& in);

/// Writes records in the format parse_log reads.
void serialize_log(const std::vector<InteractionRecord>& records, std::ostream& out);

struct TensorBuild {
  PerformanceTensor tensor;
  std::vector<std::string> learner_ids;   // dense index -> id
  std::vector<std::string> question_ids;  // dense index -> id
  std::size_t duplicates = 0;             // records ignored because the cell was already set
  std::size_t overflow = 0;               // records with attempt > max_attempt
};

/// Learners and questions get dense indices by first appearance; the first record for a
/// (learner, question, attempt) triple wins.
TensorBuild build_tensor(const std::vector<InteractionRecord>& records, std::size_t max_attempt);

/// {"learners": [...], "questions": [...]}
std::string index_mapping_json(const TensorBuild& build);

/// Random partition of a tensor's observed cells into k folds of balanced size.
class FoldAssignment {
 public:
  FoldAssignment(std::size_t k, std::uint64_t seed, Dims dims, std::vector<int> fold_of_cell);

  std::size_t k() const { return k_; }
  std::uint64_t seed() const { return seed_; }
  const Dims& dims() const { return dims_; }
  /// -1 for cells that were not observed.
  int fold_of(std::size_t cell_index) const { return fold_of_cell_[cell_index]; }
  std::vector<std::size_t> fold_sizes() const;

  bool operator==(const FoldAssignment&) const = default;

 private:
  std::size_t k_;
  std::uint64_t seed_;
  Dims dims_;
  std::vector<int> fold_of_cell_;
};

FoldAssignment make_folds(const PerformanceTensor& t, std::size_t k, std::uint64_t seed);

struct HeldOutCell {
  CellCoord coord;
  Outcome outcome = Outcome::Incorrect;
};

struct HoldOut {
  PerformanceTensor train;
  std::vector<HeldOutCell> test;
};

/// Hides the cells of one fold: they become Missing in train and are listed in test.
HoldOut hold_out(const PerformanceTensor& t, const FoldAssignment& folds, std::size_t fold);

}  // namespace sparsekt

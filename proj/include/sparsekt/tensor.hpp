#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sparsekt {

/// Raised for malformed or unusable input data (bad CSV rows, empty datasets, ...).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Outcome : std::uint8_t { Incorrect = 0, Correct = 1, Missing = 2 };

inline bool is_observed(Outcome o) { return o != Outcome::Missing; }
inline double outcome_value(Outcome o) { return o == Outcome::Correct ? 1.0 : 0.0; }

struct Dims {
  std::size_t learners = 0;
  std::size_t questions = 0;
  std::size_t attempts = 0;

  std::size_t cell_count() const { return learners * questions * attempts; }
  std::size_t image_size() const { return questions * attempts; }
  bool operator==(const Dims&) const = default;
};

struct CellCoord {
  std::size_t learner = 0;
  std::size_t question = 0;
  std::size_t attempt = 0;

  auto operator<=>(const CellCoord&) const = default;
};

/// Learners x questions x attempts grid of outcomes, stored learner-major.
class PerformanceTensor {
 public:
  /// All cells Missing.
  explicit PerformanceTensor(Dims dims);
  PerformanceTensor(Dims dims, std::vector<Outcome> cells);

  const Dims& dims() const { return dims_; }
  std::size_t index(std::size_t u, std::size_t j, std::size_t i) const {
    return (u * dims_.questions + j) * dims_.attempts + i;
  }
  std::size_t index(const CellCoord& c) const { return index(c.learner, c.question, c.attempt); }

  Outcome at(std::size_t u, std::size_t j, std::size_t i) const { return cells_[index(u, j, i)]; }
  Outcome at(const CellCoord& c) const { return cells_[index(c)]; }
  void set(std::size_t u, std::size_t j, std::size_t i, Outcome o) { cells_[index(u, j, i)] = o; }
  void set(const CellCoord& c, Outcome o) { cells_[index(c)] = o; }

  std::span<const Outcome> cells() const { return cells_; }
  std::size_t observed_count() const;
  std::vector<CellCoord> observed_cells() const;

  bool operator==(const PerformanceTensor&) const = default;

 private:
  Dims dims_;
  std::vector<Outcome> cells_;
};

/// Fully imputed tensor of probabilities in [0, 1].
class DenseTensor {
 public:
  DenseTensor(Dims dims, std::vector<double> values);

  const Dims& dims() const { return dims_; }
  double at(std::size_t u, std::size_t j, std::size_t i) const {
    return values_[(u * dims_.questions + j) * dims_.attempts + i];
  }
  double at(const CellCoord& c) const { return at(c.learner, c.question, c.attempt); }
  std::span<const double> values() const { return values_; }

  bool operator==(const DenseTensor&) const = default;

 private:
  Dims dims_;
  std::vector<double> values_;
};

/// Binary observed/unobserved indicator over a questions x attempts learner image.
class MaskMatrix {
 public:
  MaskMatrix(std::size_t rows, std::size_t cols, std::vector<std::uint8_t> bits);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return bits_.size(); }
  bool observed(std::size_t k) const { return bits_[k] != 0; }
  bool observed(std::size_t r, std::size_t c) const { return bits_[r * cols_ + c] != 0; }
  double value(std::size_t k) const { return bits_[k] ? 1.0 : 0.0; }
  std::span<const std::uint8_t> bits() const { return bits_; }
  std::size_t observed_count() const;

  bool operator==(const MaskMatrix&) const = default;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<std::uint8_t> bits_;
};

/// One learner's questions x attempts image. Cells without a value are missing.
class LearnerSlice {
 public:
  LearnerSlice(std::size_t rows, std::size_t cols, std::vector<std::optional<double>> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }
  const std::optional<double>& operator[](std::size_t k) const { return values_[k]; }
  const std::optional<double>& at(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
  std::span<const std::optional<double>> values() const { return values_; }

  MaskMatrix mask() const;

  bool operator==(const LearnerSlice&) const = default;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<std::optional<double>> values_;
};

struct SparsityPoint {
  std::size_t max_attempt = 0;
  double level = 0.0;
};

/// Sparsity level per Max Attempt setting, settings strictly increasing.
class SparsityProfile {
 public:
  SparsityProfile() = default;
  explicit SparsityProfile(std::vector<SparsityPoint> points);

  std::span<const SparsityPoint> points() const { return points_; }
  std::size_t size() const { return points_.size(); }
  const SparsityPoint& operator[](std::size_t k) const { return points_[k]; }

 private:
  std::vector<SparsityPoint> points_;
};

/// Fraction of Missing cells.
double sparsity_level(const PerformanceTensor& t);

/// Keeps attempts 1..m.
PerformanceTensor truncate_attempts(const PerformanceTensor& t, std::size_t m);

std::pair<LearnerSlice, MaskMatrix> learner_slice(const PerformanceTensor& t, std::size_t learner);

/// Sparsity level of truncate_attempts(t, m) for every m in [first, last].
SparsityProfile sparsity_profile(const PerformanceTensor& t, std::size_t first, std::size_t last);

/// Per-step slope of the sparsity curve: level(m) - level(m-1) for consecutive settings.
std::vector<double> sparsity_increase_rate(const SparsityProfile& profile);

/// Stacks fully imputed learner slices (in learner order) into a dense tensor,
/// clamping each value to [0, 1].
DenseTensor assemble(std::span<const LearnerSlice> slices);

}  // namespace sparsekt

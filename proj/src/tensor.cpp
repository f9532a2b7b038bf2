#include "sparsekt/tensor.hpp"

#include <algorithm>

namespace sparsekt {

namespace {

void require_dims(const Dims& d) {
  if (d.learners == 0 || d.questions == 0 || d.attempts == 0) {
    throw std::invalid_argument("tensor dimensions must all be >= 1");
  }
}

}  // namespace

PerformanceTensor::PerformanceTensor(Dims dims)
    : dims_(dims), cells_(dims.cell_count(), Outcome::Missing) {
  require_dims(dims_);
}

PerformanceTensor::PerformanceTensor(Dims dims, std::vector<Outcome> cells)
    : dims_(dims), cells_(std::move(cells)) {
  require_dims(dims_);
  if (cells_.size() != dims_.cell_count()) {
    throw std::invalid_argument("cell count does not match tensor dimensions");
  }
  for (Outcome o : cells_) {
    if (o != Outcome::Correct && o != Outcome::Incorrect && o != Outcome::Missing) {
      throw std::invalid_argument("invalid outcome value");
    }
  }
}

std::size_t PerformanceTensor::observed_count() const {
  return static_cast<std::size_t>(std::count_if(cells_.begin(), cells_.end(), is_observed));
}

std::vector<CellCoord> PerformanceTensor::observed_cells() const {
  std::vector<CellCoord> out;
  out.reserve(observed_count());
  for (std::size_t u = 0; u < dims_.learners; ++u)
    for (std::size_t j = 0; j < dims_.questions; ++j)
      for (std::size_t i = 0; i < dims_.attempts; ++i)
        if (is_observed(at(u, j, i))) out.push_back({u, j, i});
  return out;
}

DenseTensor::DenseTensor(Dims dims, std::vector<double> values)
    : dims_(dims), values_(std::move(values)) {
  require_dims(dims_);
  if (values_.size() != dims_.cell_count()) {
    throw std::invalid_argument("value count does not match tensor dimensions");
  }
  for (double v : values_) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("dense tensor value outside [0, 1]");
  }
}

MaskMatrix::MaskMatrix(std::size_t rows, std::size_t cols, std::vector<std::uint8_t> bits)
    : rows_(rows), cols_(cols), bits_(std::move(bits)) {
  if (bits_.size() != rows_ * cols_) throw std::invalid_argument("mask size mismatch");
  for (auto& b : bits_) b = b ? 1 : 0;
}

std::size_t MaskMatrix::observed_count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

LearnerSlice::LearnerSlice(std::size_t rows, std::size_t cols,
                           std::vector<std::optional<double>> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows_ * cols_) throw std::invalid_argument("slice size mismatch");
}

MaskMatrix LearnerSlice::mask() const {
  std::vector<std::uint8_t> bits(values_.size());
  for (std::size_t k = 0; k < values_.size(); ++k) bits[k] = values_[k].has_value();
  return MaskMatrix(rows_, cols_, std::move(bits));
}

SparsityProfile::SparsityProfile(std::vector<SparsityPoint> points) : points_(std::move(points)) {
  for (std::size_t k = 0; k < points_.size(); ++k) {
    if (!(points_[k].level >= 0.0 && points_[k].level <= 1.0)) {
      throw std::invalid_argument("sparsity level outside [0, 1]");
    }
    if (k > 0 && points_[k].max_attempt <= points_[k - 1].max_attempt) {
      throw std::invalid_argument("max_attempt settings must be strictly increasing");
    }
  }
}

double sparsity_level(const PerformanceTensor& t) {
  const auto missing = t.dims().cell_count() - t.observed_count();
  return static_cast<double>(missing) / static_cast<double>(t.dims().cell_count());
}

PerformanceTensor truncate_attempts(const PerformanceTensor& t, std::size_t m) {
  const Dims& d = t.dims();
  if (m < 1 || m > d.attempts) {
    throw std::out_of_range("max attempt " + std::to_string(m) + " outside [1, " +
                            std::to_string(d.attempts) + "]");
  }
  PerformanceTensor out(Dims{d.learners, d.questions, m});
  for (std::size_t u = 0; u < d.learners; ++u)
    for (std::size_t j = 0; j < d.questions; ++j)
      for (std::size_t i = 0; i < m; ++i) out.set(u, j, i, t.at(u, j, i));
  return out;
}

std::pair<LearnerSlice, MaskMatrix> learner_slice(const PerformanceTensor& t, std::size_t learner) {
  const Dims& d = t.dims();
  if (learner >= d.learners) throw std::out_of_range("learner index out of range");
  std::vector<std::optional<double>> values(d.image_size());
  std::vector<std::uint8_t> bits(d.image_size(), 0);
  for (std::size_t j = 0; j < d.questions; ++j) {
    for (std::size_t i = 0; i < d.attempts; ++i) {
      const Outcome o = t.at(learner, j, i);
      const std::size_t k = j * d.attempts + i;
      if (is_observed(o)) {
        values[k] = outcome_value(o);
        bits[k] = 1;
      }
    }
  }
  return {LearnerSlice(d.questions, d.attempts, std::move(values)),
          MaskMatrix(d.questions, d.attempts, std::move(bits))};
}

SparsityProfile sparsity_profile(const PerformanceTensor& t, std::size_t first, std::size_t last) {
  if (first < 1 || last > t.dims().attempts || first > last) {
    throw std::out_of_range("max attempt range outside the tensor's attempts");
  }
  std::vector<SparsityPoint> pts;
  for (std::size_t m = first; m <= last; ++m) {
    pts.push_back({m, sparsity_level(truncate_attempts(t, m))});
  }
  return SparsityProfile(std::move(pts));
}

std::vector<double> sparsity_increase_rate(const SparsityProfile& profile) {
  if (profile.size() < 2) throw std::invalid_argument("need at least 2 sparsity points");
  std::vector<double> rates;
  rates.reserve(profile.size() - 1);
  for (std::size_t k = 1; k < profile.size(); ++k) {
    if (profile[k].max_attempt != profile[k - 1].max_attempt + 1) {
      throw std::invalid_argument("max_attempt settings must be consecutive");
    }
    rates.push_back(profile[k].level - profile[k - 1].level);
  }
  return rates;
}

DenseTensor assemble(std::span<const LearnerSlice> slices) {
  if (slices.empty()) throw std::invalid_argument("no slices to assemble");
  const std::size_t rows = slices.front().rows();
  const std::size_t cols = slices.front().cols();
  std::vector<double> values;
  values.reserve(slices.size() * rows * cols);
  for (const auto& s : slices) {
    if (s.rows() != rows || s.cols() != cols) throw std::invalid_argument("slice dimension mismatch");
    for (const auto& v : s.values()) {
      if (!v) throw std::invalid_argument("residual missing value in imputed slice");
      values.push_back(std::clamp(*v, 0.0, 1.0));
    }
  }
  return DenseTensor(Dims{slices.size(), rows, cols}, std::move(values));
}

}  // namespace sparsekt

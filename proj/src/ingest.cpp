#include "sparsekt/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <istream>
#include <ostream>
#include <unordered_map>

#include "json.hpp"

#include "sparsekt/random.hpp"

namespace sparsekt {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

// Splits one CSV line, honouring double-quoted fields with "" escapes.
std::vector<std::string> split_csv(std::string_view line, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t k = 0; k < line.size(); ++k) {
    const char c = line[k];
    if (quoted) {
      if (c == '"') {
        if (k + 1 < line.size() && line[k + 1] == '"') {
          cur.push_back('"');
          ++k;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (quoted) throw DataError("line " + std::to_string(line_no) + ": unterminated quoted field");
  fields.push_back(std::move(cur));
  return fields;
}

std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

bool parse_integer(const std::string& s, long long& value) {
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, value);
  return ec == std::errc{} && ptr == end;
}

}  // namespace

std::vector<InteractionRecord> parse_log(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      header = split_csv(line, line_no);
      break;
    }
  }
  if (header.empty()) throw DataError("missing header row");
  if (header.front().starts_with("\xEF\xBB\xBF")) header.front().erase(0, 3);

  auto column = [&](const char* name) {
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (trim(header[c]) == name) return c;
    }
    throw DataError("line " + std::to_string(line_no) + ": missing column '" + name + "'");
  };
  const std::size_t c_learner = column("learner_id");
  const std::size_t c_question = column("question_id");
  const std::size_t c_attempt = column("attempt");
  const std::size_t c_correct = column("correct");
  const std::size_t needed = std::max({c_learner, c_question, c_attempt, c_correct}) + 1;

  std::vector<InteractionRecord> records;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv(line, line_no);
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (fields.size() < needed) throw DataError(where + "expected at least " + std::to_string(needed) + " fields");

    InteractionRecord r;
    r.learner_id = trim(fields[c_learner]);
    r.question_id = trim(fields[c_question]);
    if (r.learner_id.empty() || r.question_id.empty()) throw DataError(where + "empty learner or question id");

    long long attempt = 0;
    if (!parse_integer(trim(fields[c_attempt]), attempt)) throw DataError(where + "attempt is not an integer");
    if (attempt < 1) throw DataError(where + "attempt must be >= 1");
    r.attempt = static_cast<std::size_t>(attempt);

    long long correct = -1;
    if (!parse_integer(trim(fields[c_correct]), correct) || (correct != 0 && correct != 1)) {
      throw DataError(where + "correct must be 0 or 1");
    }
    r.outcome = correct == 1 ? Outcome::Correct : Outcome::Incorrect;
    records.push_back(std::move(r));
  }
  return records;
}

void serialize_log(const std::vector<InteractionRecord>& records, std::ostream& out) {
  out << "learner_id,question_id,attempt,correct\n";
  for (const auto& r : records) {
    out << quote_if_needed(r.learner_id) << ',' << quote_if_needed(r.question_id) << ',' << r.attempt << ','
        << (r.outcome == Outcome::Correct ? 1 : 0) << '\n';
  }
}

TensorBuild build_tensor(const std::vector<InteractionRecord>& records, std::size_t max_attempt) {
  if (max_attempt < 1) throw std::invalid_argument("max_attempt must be >= 1");
  if (records.empty()) throw DataError("empty dataset");

  std::unordered_map<std::string, std::size_t> learner_index, question_index;
  std::vector<std::string> learners, questions;
  for (const auto& r : records) {
    if (learner_index.try_emplace(r.learner_id, learners.size()).second) learners.push_back(r.learner_id);
    if (question_index.try_emplace(r.question_id, questions.size()).second) questions.push_back(r.question_id);
  }

  PerformanceTensor tensor(Dims{learners.size(), questions.size(), max_attempt});
  std::size_t duplicates = 0, overflow = 0;
  for (const auto& r : records) {
    if (r.attempt > max_attempt) {
      ++overflow;
      continue;
    }
    const CellCoord c{learner_index.at(r.learner_id), question_index.at(r.question_id), r.attempt - 1};
    if (is_observed(tensor.at(c))) {
      ++duplicates;
      continue;
    }
    tensor.set(c, r.outcome);
  }
  return TensorBuild{std::move(tensor), std::move(learners), std::move(questions), duplicates, overflow};
}

std::string index_mapping_json(const TensorBuild& build) {
  nlohmann::ordered_json j;
  j["learners"] = build.learner_ids;
  j["questions"] = build.question_ids;
  return j.dump(2) + "\n";
}

FoldAssignment::FoldAssignment(std::size_t k, std::uint64_t seed, Dims dims, std::vector<int> fold_of_cell)
    : k_(k), seed_(seed), dims_(dims), fold_of_cell_(std::move(fold_of_cell)) {
  if (fold_of_cell_.size() != dims_.cell_count()) throw std::invalid_argument("fold map size mismatch");
}

std::vector<std::size_t> FoldAssignment::fold_sizes() const {
  std::vector<std::size_t> sizes(k_, 0);
  for (int f : fold_of_cell_) {
    if (f >= 0) ++sizes[static_cast<std::size_t>(f)];
  }
  return sizes;
}

FoldAssignment make_folds(const PerformanceTensor& t, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("fold count must be >= 2");
  std::vector<std::size_t> observed;
  for (std::size_t idx = 0; idx < t.cells().size(); ++idx) {
    if (is_observed(t.cells()[idx])) observed.push_back(idx);
  }
  if (observed.size() < k) {
    throw DataError("too few observed cells (" + std::to_string(observed.size()) + ") for " +
                    std::to_string(k) + " folds");
  }
  Rng rng(seed);
  rng.shuffle(observed);
  std::vector<int> fold_of(t.dims().cell_count(), -1);
  for (std::size_t pos = 0; pos < observed.size(); ++pos) {
    fold_of[observed[pos]] = static_cast<int>(pos % k);
  }
  return FoldAssignment(k, seed, t.dims(), std::move(fold_of));
}

HoldOut hold_out(const PerformanceTensor& t, const FoldAssignment& folds, std::size_t fold) {
  if (fold >= folds.k()) throw std::out_of_range("invalid fold id");
  if (!(folds.dims() == t.dims())) throw std::invalid_argument("fold assignment built for another tensor");
  PerformanceTensor train = t;
  std::vector<HeldOutCell> test;
  const Dims& d = t.dims();
  for (std::size_t u = 0; u < d.learners; ++u)
    for (std::size_t j = 0; j < d.questions; ++j)
      for (std::size_t i = 0; i < d.attempts; ++i) {
        const std::size_t idx = t.index(u, j, i);
        if (folds.fold_of(idx) == static_cast<int>(fold)) {
          test.push_back({CellCoord{u, j, i}, t.at(u, j, i)});
          train.set(u, j, i, Outcome::Missing);
        }
      }
  return HoldOut{std::move(train), std::move(test)};
}

}  // namespace sparsekt

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace ccl {

using Json = nlohmann::json;

// A question with a step-decomposed reference solution and its golden answer.
// `hint_prefix` holds the leading solution steps revealed to the solver; the
// prompt shown to a model is the question followed by those steps.
struct Problem {
  std::string id;
  std::string question;
  std::vector<std::string> solution_steps;
  std::string golden_answer;
  std::vector<std::string> hint_prefix;
  Json source_tags = Json::object();

  // Steps the solver still has to produce once the hint is given.
  std::vector<std::string> remaining_steps() const {
    return {solution_steps.begin() + static_cast<std::ptrdiff_t>(hint_prefix.size()),
            solution_steps.end()};
  }

  bool operator==(const Problem&) const = default;
};

enum class FinishReason { stop, length, error };

struct Response {
  std::string text;
  std::optional<std::string> extracted_answer;
  // Grader's canonical rendering of extracted_answer, when one was graded.
  std::optional<std::string> normalized_answer;
  bool correct = false;
  FinishReason finish_reason = FinishReason::stop;

  bool operator==(const Response&) const = default;
};

// Exact fraction of correct responses; kept as counts so equality is exact.
struct Accuracy {
  std::uint64_t correct = 0;
  std::uint64_t total = 1;

  double value() const { return static_cast<double>(correct) / static_cast<double>(total); }
  // Compares as rationals (cross multiplication), not as doubles.
  friend bool operator==(const Accuracy& a, const Accuracy& b) {
    return a.correct * b.total == b.correct * a.total;
  }
  friend bool operator<(const Accuracy& a, const Accuracy& b) {
    return a.correct * b.total < b.correct * a.total;
  }
  friend bool operator>(const Accuracy& a, const Accuracy& b) { return b < a; }
  friend bool operator<=(const Accuracy& a, const Accuracy& b) { return !(b < a); }
  friend bool operator>=(const Accuracy& a, const Accuracy& b) { return !(a < b); }
};

struct SampleRecord {
  std::string problem_id;
  std::vector<Response> responses;
  Accuracy accuracy;

  // Recount `accuracy` from the `correct` flags.
  void recompute_accuracy();
  bool operator==(const SampleRecord&) const = default;
};

enum class Provenance { original, adapted, discarded };

struct CurriculumDataset {
  // buckets[0] is the easiest (highest accuracy) bucket.
  std::vector<std::vector<std::string>> buckets;
  std::map<std::string, Provenance> provenance;
  std::map<std::string, Accuracy> accuracy_index;
  std::uint64_t seed = 0;

  std::size_t size() const;
  bool operator==(const CurriculumDataset& o) const = default;
};

std::string to_string(FinishReason r);
FinishReason finish_reason_from_string(const std::string& s);
std::string to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

// Throws ValidationError when a Problem invariant does not hold.
void validate(const Problem& p);

Json to_json(const Problem& p);
Problem problem_from_json(const Json& j);
Json to_json(const Response& r);
Response response_from_json(const Json& j);
Json to_json(const SampleRecord& r);
// Throws IntegrityError when the stored accuracy disagrees with the flags.
SampleRecord sample_record_from_json(const Json& j);

std::vector<Problem> read_corpus(const std::filesystem::path& path);
void write_corpus(const std::vector<Problem>& problems, const std::filesystem::path& path);

std::vector<SampleRecord> read_samples(const std::filesystem::path& path);
void write_samples(const std::vector<SampleRecord>& records, const std::filesystem::path& path);

// Line-delimited JSON helpers shared by the other file formats.
std::vector<Json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::vector<Json>& rows, const std::filesystem::path& path);
void append_jsonl(const Json& row, const std::filesystem::path& path);

// Index problems by id; throws ValidationError on duplicates.
std::map<std::string, const Problem*> index_by_id(const std::vector<Problem>& problems);

}  // namespace ccl

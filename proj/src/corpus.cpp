#include "ccl/corpus.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "ccl/error.hpp"

namespace ccl {

namespace {

template <typename T>
T required(const Json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw ValidationError(std::string("missing field \"") + key + "\"");
  return it->get<T>();
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

}  // namespace

void SampleRecord::recompute_accuracy() {
  std::uint64_t correct = 0;
  for (const auto& r : responses) correct += r.correct ? 1 : 0;
  accuracy = {correct, static_cast<std::uint64_t>(responses.size())};
}

std::size_t CurriculumDataset::size() const {
  std::size_t n = 0;
  for (const auto& b : buckets) n += b.size();
  return n;
}

std::string to_string(FinishReason r) {
  switch (r) {
    case FinishReason::stop: return "stop";
    case FinishReason::length: return "length";
    case FinishReason::error: return "error";
  }
  return "error";
}

FinishReason finish_reason_from_string(const std::string& s) {
  if (s == "stop") return FinishReason::stop;
  if (s == "length") return FinishReason::length;
  if (s == "error") return FinishReason::error;
  throw ValidationError("unknown finish_reason \"" + s + "\"");
}

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::original: return "original";
    case Provenance::adapted: return "adapted";
    case Provenance::discarded: return "discarded";
  }
  return "original";
}

Provenance provenance_from_string(const std::string& s) {
  if (s == "original") return Provenance::original;
  if (s == "adapted") return Provenance::adapted;
  if (s == "discarded") return Provenance::discarded;
  throw ValidationError("unknown provenance \"" + s + "\"");
}

void validate(const Problem& p) {
  if (p.id.empty()) throw ValidationError("problem with empty id");
  if (p.solution_steps.empty())
    throw ValidationError("problem \"" + p.id + "\" has no solution steps");
  if (p.golden_answer.empty())
    throw ValidationError("problem \"" + p.id + "\" has an empty golden answer");
  if (p.hint_prefix.size() >= p.solution_steps.size())
    throw ValidationError("problem \"" + p.id + "\": hint prefix must be shorter than the solution");
  for (std::size_t i = 0; i < p.hint_prefix.size(); ++i) {
    if (p.hint_prefix[i] != p.solution_steps[i])
      throw ValidationError("problem \"" + p.id + "\": hint step " + std::to_string(i + 1) +
                            " is not a prefix of the solution");
  }
  if (!p.source_tags.is_object())
    throw ValidationError("problem \"" + p.id + "\": source_tags must be an object");
}

Json to_json(const Problem& p) {
  return Json{{"id", p.id},
              {"question", p.question},
              {"solution_steps", p.solution_steps},
              {"golden_answer", p.golden_answer},
              {"hint_prefix", p.hint_prefix},
              {"source_tags", p.source_tags}};
}

Problem problem_from_json(const Json& j) {
  if (!j.is_object()) throw ValidationError("problem record is not an object");
  Problem p;
  p.id = required<std::string>(j, "id");
  p.question = required<std::string>(j, "question");
  p.solution_steps = required<std::vector<std::string>>(j, "solution_steps");
  p.golden_answer = required<std::string>(j, "golden_answer");
  if (auto it = j.find("hint_prefix"); it != j.end()) p.hint_prefix = it->get<std::vector<std::string>>();
  if (auto it = j.find("source_tags"); it != j.end()) p.source_tags = *it;
  validate(p);
  return p;
}

Json to_json(const Response& r) {
  Json j{{"text", r.text},
         {"extracted_answer", r.extracted_answer ? Json(*r.extracted_answer) : Json(nullptr)},
         {"correct", r.correct},
         {"finish_reason", to_string(r.finish_reason)}};
  if (r.normalized_answer) j["normalized_answer"] = *r.normalized_answer;
  return j;
}

Response response_from_json(const Json& j) {
  Response r;
  r.text = required<std::string>(j, "text");
  if (auto it = j.find("extracted_answer"); it != j.end() && !it->is_null())
    r.extracted_answer = it->get<std::string>();
  if (auto it = j.find("normalized_answer"); it != j.end() && !it->is_null())
    r.normalized_answer = it->get<std::string>();
  r.correct = required<bool>(j, "correct");
  r.finish_reason = finish_reason_from_string(required<std::string>(j, "finish_reason"));
  if (r.correct && !r.extracted_answer)
    throw ValidationError("response flagged correct without an extracted answer");
  return r;
}

Json to_json(const SampleRecord& r) {
  Json responses = Json::array();
  for (const auto& resp : r.responses) responses.push_back(to_json(resp));
  return Json{{"problem_id", r.problem_id}, {"accuracy", r.accuracy.value()}, {"responses", responses}};
}

SampleRecord sample_record_from_json(const Json& j) {
  SampleRecord r;
  r.problem_id = required<std::string>(j, "problem_id");
  for (const auto& resp : required<Json>(j, "responses")) r.responses.push_back(response_from_json(resp));
  if (r.responses.empty())
    throw ValidationError("sample record \"" + r.problem_id + "\" has no responses");
  r.recompute_accuracy();
  const double stored = required<double>(j, "accuracy");
  if (stored != r.accuracy.value()) {
    std::ostringstream msg;
    msg << "sample record \"" << r.problem_id << "\" stores accuracy " << stored << " but "
        << r.accuracy.correct << "/" << r.accuracy.total << " responses are correct";
    throw IntegrityError(msg.str());
  }
  return r;
}

std::vector<Json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<Json> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(Json::parse(line));
    } catch (const Json::exception& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return rows;
}

void write_jsonl(const std::vector<Json>& rows, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  for (const auto& row : rows) out << row.dump() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

void append_jsonl(const Json& row, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw IoError("cannot open " + path.string() + " for appending");
  out << row.dump() << '\n';
  out.flush();
  if (!out) throw IoError("append failed for " + path.string());
}

std::vector<Problem> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<Problem> problems;
  std::map<std::string, std::size_t> first_line;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Problem p;
    try {
      p = problem_from_json(Json::parse(line));
    } catch (const ParseError&) {
      throw;
    } catch (const Json::exception& e) {
      throw ParseError(line_no, e.what());
    } catch (const ValidationError& e) {
      throw ParseError(line_no, e.what());
    }
    auto [it, inserted] = first_line.emplace(p.id, line_no);
    if (!inserted) {
      throw ValidationError("duplicate id \"" + p.id + "\" on lines " + std::to_string(it->second) +
                            " and " + std::to_string(line_no));
    }
    problems.push_back(std::move(p));
  }
  return problems;
}

void write_corpus(const std::vector<Problem>& problems, const std::filesystem::path& path) {
  std::set<std::string> ids;
  for (const auto& p : problems) {
    validate(p);
    if (!ids.insert(p.id).second) throw ValidationError("duplicate id \"" + p.id + "\"");
  }
  auto out = open_for_write(path);
  for (const auto& p : problems) out << to_json(p).dump() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<SampleRecord> read_samples(const std::filesystem::path& path) {
  std::vector<SampleRecord> records;
  std::size_t line_no = 0;
  for (const auto& row : read_jsonl(path)) {
    ++line_no;
    try {
      records.push_back(sample_record_from_json(row));
    } catch (const Json::exception& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return records;
}

void write_samples(const std::vector<SampleRecord>& records, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  for (const auto& r : records) {
    if (r.responses.empty())
      throw ValidationError("sample record \"" + r.problem_id + "\" has no responses");
    SampleRecord check = r;
    check.recompute_accuracy();
    if (!(check.accuracy == r.accuracy))
      throw IntegrityError("sample record \"" + r.problem_id + "\" accuracy disagrees with its responses");
    out << to_json(r).dump() << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

std::map<std::string, const Problem*> index_by_id(const std::vector<Problem>& problems) {
  std::map<std::string, const Problem*> index;
  for (const auto& p : problems) {
    if (!index.emplace(p.id, &p).second) throw ValidationError("duplicate id \"" + p.id + "\"");
  }
  return index;
}

}  // namespace ccl

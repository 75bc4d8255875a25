#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "ccl/corpus.hpp"

namespace ccl::grader {

using BigInt = boost::multiprecision::cpp_int;
using BigRational = boost::multiprecision::cpp_rational;

enum class AnswerKind { integer, rational, decimal, symbolic };

// Canonical form of a final answer.
//  integer:  value = numerator, denominator = 1
//  rational: numerator/denominator in lowest terms, denominator > 1
//  decimal:  numerator * 10^exponent with exponent < 0 and no trailing zero
//            digits in numerator
//  symbolic: `text` holds the cleaned-up string
struct CanonicalAnswer {
  AnswerKind kind = AnswerKind::symbolic;
  BigInt numerator = 0;
  BigInt denominator = 1;
  int exponent = 0;
  std::string text;

  bool is_numeric() const { return kind != AnswerKind::symbolic; }
  // Exact value of a numeric answer.
  BigRational to_rational() const;
  // Rendering that normalizes back to the same answer.
  std::string str() const;

  bool operator==(const CanonicalAnswer&) const = default;
};

std::string to_string(AnswerKind k);

// Last \boxed{...}, else the last <answer>...</answer>, else the tail of the
// last line after "answer is". Absent when none of these is found.
std::optional<std::string> extract_answer(std::string_view text);

CanonicalAnswer normalize(std::string_view raw);

bool is_equivalent(const CanonicalAnswer& pred, const CanonicalAnswer& gold);

// Grades one response in place: extracts an answer from the text when none is
// stored, fills the normalized mirror and sets `correct`.
void grade_response(Response& response, const CanonicalAnswer& gold);

// Fraction of responses equivalent to `gold`; also sets each `correct` flag.
// Throws ValidationError on an empty list.
Accuracy accuracy(std::span<Response> responses, const CanonicalAnswer& gold);

}  // namespace ccl::grader

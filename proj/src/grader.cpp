#include "ccl/grader.hpp"

#include <algorithm>
#include <cctype>

#include "ccl/error.hpp"

namespace ccl::grader {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

bool starts_with(std::string_view s, std::string_view p) { return s.substr(0, p.size()) == p; }
bool ends_with(std::string_view s, std::string_view p) {
  return s.size() >= p.size() && s.substr(s.size() - p.size()) == p;
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
}

// Index of the brace closing the one at `open`, or npos when unbalanced.
std::size_t matching_brace(std::string_view s, std::size_t open) {
  int depth = 0;
  for (std::size_t i = open; i < s.size(); ++i) {
    if (s[i] == '{') ++depth;
    else if (s[i] == '}' && --depth == 0) return i;
  }
  return std::string_view::npos;
}

// `s` is exactly `prefix{...}` with the final brace closing the first one.
std::optional<std::string> unwrap_command(std::string_view s, std::string_view prefix) {
  if (!starts_with(s, prefix) || s.size() <= prefix.size() || s[prefix.size()] != '{') return std::nullopt;
  if (matching_brace(s, prefix.size()) != s.size() - 1) return std::nullopt;
  return std::string(s.substr(prefix.size() + 1, s.size() - prefix.size() - 2));
}

std::string collapse_whitespace(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!is_space(s[i])) {
      out.push_back(s[i]);
      continue;
    }
    std::size_t j = i;
    while (j < s.size() && is_space(s[j])) ++j;
    // A single space survives only where it separates two words.
    if (!out.empty() && j < s.size() && is_alnum(out.back()) && is_alnum(s[j])) out.push_back(' ');
    i = j - 1;
  }
  return out;
}

// One pass of surface clean-up; applied until nothing changes.
std::string clean_once(std::string s) {
  replace_all(s, "\xCF\x80", "\\pi");  // U+03C0
  replace_all(s, "\xE2\x88\x92", "-");  // U+2212 minus sign
  replace_all(s, "\\dfrac", "\\frac");
  replace_all(s, "\\tfrac", "\\frac");
  replace_all(s, "\\left", "");
  replace_all(s, "\\right", "");
  replace_all(s, "\\%", "%");
  for (const char* sp : {"\\,", "\\;", "\\!", "\\ "}) replace_all(s, sp, " ");
  s = collapse_whitespace(trim(s));
  std::string_view v = s;
  if (v.size() >= 2 && v.front() == '$' && v.back() == '$') return std::string(v.substr(1, v.size() - 2));
  if (v.size() >= 4 && (starts_with(v, "\\(") && ends_with(v, "\\)")))
    return std::string(v.substr(2, v.size() - 4));
  if (v.size() >= 4 && (starts_with(v, "\\[") && ends_with(v, "\\]")))
    return std::string(v.substr(2, v.size() - 4));
  for (const char* cmd : {"\\boxed", "\\text", "\\mathrm"}) {
    if (auto inner = unwrap_command(v, cmd)) return *inner;
  }
  if (!v.empty() && v.front() == '{' && matching_brace(v, 0) == v.size() - 1)
    return std::string(v.substr(1, v.size() - 2));
  if (!v.empty() && v.back() == '.') return std::string(v.substr(0, v.size() - 1));
  if (!v.empty() && v.front() == '+') return std::string(v.substr(1));
  return s;
}

std::string clean(std::string_view raw) {
  std::string cur(raw);
  for (;;) {
    std::string next = clean_once(cur);
    if (next == cur) return cur;
    cur = std::move(next);
  }
}

BigInt parse_digits(std::string_view digits) {
  BigInt v = 0;
  for (char c : digits) v = v * 10 + (c - '0');
  return v;
}

BigInt pow10(int e) {
  BigInt v = 1;
  for (int i = 0; i < e; ++i) v *= 10;
  return v;
}

bool all_digits(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), is_digit);
}

struct Number {
  BigRational value;
  bool decimal = false;  // written with a decimal point
  BigInt mantissa;
  int exponent = 0;
};

// [-]digits or [-]digits.digits (either side of the point may be empty, not both).
std::optional<Number> parse_number(std::string_view s) {
  bool neg = false;
  if (!s.empty() && s.front() == '-') {
    neg = true;
    s.remove_prefix(1);
  }
  if (all_digits(s)) {
    BigInt v = parse_digits(s);
    if (neg) v = -v;
    return Number{BigRational(v), false, v, 0};
  }
  auto dot = s.find('.');
  if (dot == std::string_view::npos) return std::nullopt;
  auto whole = s.substr(0, dot);
  auto frac = s.substr(dot + 1);
  if (whole.empty() && frac.empty()) return std::nullopt;
  if ((!whole.empty() && !all_digits(whole)) || (!frac.empty() && !all_digits(frac))) return std::nullopt;
  std::string digits = std::string(whole) + std::string(frac);
  BigInt mantissa = parse_digits(digits);
  int exponent = -static_cast<int>(frac.size());
  while (exponent < 0 && mantissa != 0 && mantissa % 10 == 0) {
    mantissa /= 10;
    ++exponent;
  }
  if (mantissa == 0) exponent = 0;
  if (neg) mantissa = -mantissa;
  BigRational value = exponent < 0 ? BigRational(mantissa, pow10(-exponent)) : BigRational(mantissa);
  return Number{value, true, mantissa, exponent};
}

CanonicalAnswer from_rational(const BigRational& r) {
  CanonicalAnswer a;
  a.numerator = boost::multiprecision::numerator(r);
  a.denominator = boost::multiprecision::denominator(r);
  a.kind = a.denominator == 1 ? AnswerKind::integer : AnswerKind::rational;
  return a;
}

CanonicalAnswer from_number(const Number& n) {
  if (!n.decimal || n.exponent >= 0) return from_rational(n.value);
  CanonicalAnswer a;
  a.kind = AnswerKind::decimal;
  a.numerator = n.mantissa;
  a.exponent = n.exponent;
  return a;
}

std::optional<BigRational> ratio(const Number& a, const Number& b) {
  if (b.value == 0) return std::nullopt;
  return a.value / b.value;
}

std::optional<BigInt> exact_sqrt(const BigInt& v) {
  if (v < 0) return std::nullopt;
  BigInt r = boost::multiprecision::sqrt(v);
  if (r * r != v) return std::nullopt;
  return r;
}

// \frac{a}{b} or the shorthand \frac12.
std::optional<BigRational> parse_frac(std::string_view s) {
  if (!starts_with(s, "\\frac")) return std::nullopt;
  s.remove_prefix(5);
  if (s.size() == 2 && is_digit(s[0]) && is_digit(s[1])) {
    if (s[1] == '0') return std::nullopt;
    return BigRational(s[0] - '0', s[1] - '0');
  }
  if (s.empty() || s.front() != '{') return std::nullopt;
  auto close1 = matching_brace(s, 0);
  if (close1 == std::string_view::npos || close1 + 1 >= s.size() || s[close1 + 1] != '{') return std::nullopt;
  auto close2 = matching_brace(s, close1 + 1);
  if (close2 != s.size() - 1) return std::nullopt;
  auto num = parse_number(s.substr(1, close1 - 1));
  auto den = parse_number(s.substr(close1 + 2, close2 - close1 - 2));
  if (!num || !den) return std::nullopt;
  return ratio(*num, *den);
}

std::optional<BigInt> parse_sqrt(std::string_view s) {
  if (!starts_with(s, "\\sqrt")) return std::nullopt;
  s.remove_prefix(5);
  std::string_view body;
  if (s.size() == 1 && is_digit(s[0])) {
    body = s;
  } else if (!s.empty() && s.front() == '{' && matching_brace(s, 0) == s.size() - 1) {
    body = s.substr(1, s.size() - 2);
  } else {
    return std::nullopt;
  }
  if (!all_digits(body)) return std::nullopt;
  return exact_sqrt(parse_digits(body));
}

std::optional<CanonicalAnswer> parse_numeric(std::string_view s) {
  if (s.empty()) return std::nullopt;
  if (s.back() == '%') {
    auto inner = parse_numeric(s.substr(0, s.size() - 1));
    if (!inner || !inner->is_numeric()) return std::nullopt;
    return from_rational(inner->to_rational() / 100);
  }
  if (auto n = parse_number(s)) return from_number(*n);

  bool neg = false;
  std::string_view body = s;
  if (body.front() == '-') {
    neg = true;
    body.remove_prefix(1);
  }
  if (auto f = parse_frac(body)) return from_rational(neg ? BigRational(-*f) : *f);
  if (auto r = parse_sqrt(body)) return from_rational(BigRational(neg ? BigInt(-*r) : *r));

  auto slash = s.find('/');
  if (slash != std::string_view::npos && s.find('/', slash + 1) == std::string_view::npos) {
    auto a = parse_number(s.substr(0, slash));
    auto b = parse_number(s.substr(slash + 1));
    if (a && b) {
      if (auto r = ratio(*a, *b)) return from_rational(*r);
    }
  }
  return std::nullopt;
}

std::string rtrim_copy(std::string_view s) { return std::string(trim(s)); }

}  // namespace

std::string to_string(AnswerKind k) {
  switch (k) {
    case AnswerKind::integer: return "integer";
    case AnswerKind::rational: return "rational";
    case AnswerKind::decimal: return "decimal";
    case AnswerKind::symbolic: return "symbolic";
  }
  return "symbolic";
}

BigRational CanonicalAnswer::to_rational() const {
  switch (kind) {
    case AnswerKind::integer: return BigRational(numerator);
    case AnswerKind::rational: return BigRational(numerator, denominator);
    case AnswerKind::decimal: return BigRational(numerator, pow10(-exponent));
    case AnswerKind::symbolic: break;
  }
  throw ValidationError("symbolic answer has no numeric value");
}

std::string CanonicalAnswer::str() const {
  switch (kind) {
    case AnswerKind::integer: return numerator.str();
    case AnswerKind::rational: return numerator.str() + "/" + denominator.str();
    case AnswerKind::decimal: {
      const bool neg = numerator < 0;
      std::string digits = (neg ? BigInt(-numerator) : numerator).str();
      const std::size_t places = static_cast<std::size_t>(-exponent);
      if (digits.size() <= places) digits.insert(0, places + 1 - digits.size(), '0');
      digits.insert(digits.size() - places, ".");
      return neg ? "-" + digits : digits;
    }
    case AnswerKind::symbolic: return text;
  }
  return text;
}

std::optional<std::string> extract_answer(std::string_view text) {
  if (auto pos = text.rfind("\\boxed{"); pos != std::string_view::npos) {
    const std::size_t open = pos + 6;
    const std::size_t close = matching_brace(text, open);
    if (close != std::string_view::npos) {
      auto inner = trim(text.substr(open + 1, close - open - 1));
      if (!inner.empty()) return std::string(inner);
    }
  }
  constexpr std::string_view open_tag = "<answer>";
  constexpr std::string_view close_tag = "</answer>";
  if (auto pos = text.rfind(open_tag); pos != std::string_view::npos) {
    const std::size_t begin = pos + open_tag.size();
    std::size_t end = text.find(close_tag, begin);
    // Generation stopped at the closing tag: the content runs to the end.
    if (end == std::string_view::npos) end = text.size();
    auto inner = trim(text.substr(begin, end - begin));
    if (!inner.empty()) return std::string(inner);
  }
  auto body = trim(text);
  auto nl = body.rfind('\n');
  auto last_line = nl == std::string_view::npos ? body : body.substr(nl + 1);
  std::string lower(last_line);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (auto pos = lower.rfind("answer is"); pos != std::string::npos) {
    auto tail = rtrim_copy(last_line.substr(pos + 9));
    if (!tail.empty() && tail.front() == ':') tail = rtrim_copy(std::string_view(tail).substr(1));
    if (!tail.empty()) return tail;
  }
  return std::nullopt;
}

CanonicalAnswer normalize(std::string_view raw) {
  std::string s = clean(raw);
  if (auto numeric = parse_numeric(s)) return *numeric;
  CanonicalAnswer a;
  a.kind = AnswerKind::symbolic;
  a.text = std::move(s);
  return a;
}

bool is_equivalent(const CanonicalAnswer& pred, const CanonicalAnswer& gold) {
  if (pred.is_numeric() != gold.is_numeric()) return false;
  if (!pred.is_numeric()) return pred.text == gold.text;
  return pred.to_rational() == gold.to_rational();
}

void grade_response(Response& response, const CanonicalAnswer& gold) {
  response.correct = false;
  response.normalized_answer.reset();
  if (response.finish_reason == FinishReason::error) return;
  if (!response.extracted_answer) response.extracted_answer = extract_answer(response.text);
  if (!response.extracted_answer) return;
  const auto pred = normalize(*response.extracted_answer);
  response.normalized_answer = pred.str();
  response.correct = is_equivalent(pred, gold);
}

Accuracy accuracy(std::span<Response> responses, const CanonicalAnswer& gold) {
  if (responses.empty()) throw ValidationError("accuracy needs at least one response");
  std::uint64_t correct = 0;
  for (auto& r : responses) {
    grade_response(r, gold);
    correct += r.correct ? 1 : 0;
  }
  return {correct, static_cast<std::uint64_t>(responses.size())};
}

}  // namespace ccl::grader

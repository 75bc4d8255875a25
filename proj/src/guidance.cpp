#include "ccl/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <regex>

#include "ccl/error.hpp"

namespace ccl::guidance {

const std::string_view kSystemPrompt =
    "A conversation between User and Assistant. The User asks a math question and the Assistant "
    "solves it. The Assistant first reasons step by step and then gives the final answer. The "
    "reasoning is enclosed in <think> </think> tags and the final answer in <answer> </answer> "
    "tags, i.e. <think> reasoning here </think> <answer> answer here </answer>.";

namespace {

std::string trim_copy(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

// Cuts `text` at the given offsets, dropping blank pieces.
std::vector<std::string> cut(std::string_view text, std::vector<std::size_t> cuts) {
  cuts.push_back(text.size());
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t c : cuts) {
    if (c < start) continue;
    auto piece = trim_copy(text.substr(start, c - start));
    if (!piece.empty()) out.push_back(std::move(piece));
    start = c;
  }
  return out;
}

std::vector<std::size_t> match_starts(const std::string& text, const std::regex& re, int group) {
  std::vector<std::size_t> starts;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), re); it != std::sregex_iterator(); ++it)
    starts.push_back(static_cast<std::size_t>(it->position(group)));
  return starts;
}

std::string escape_tags(std::string s) {
  for (const char* tag : {"<think>", "</think>", "<answer>", "</answer>"}) {
    const std::string_view t(tag);
    const std::string escaped = "&lt;" + std::string(t.substr(1, t.size() - 2)) + "&gt;";
    std::size_t pos = 0;
    while ((pos = s.find(t, pos)) != std::string::npos) {
      s.replace(pos, t.size(), escaped);
      pos += escaped.size();
    }
  }
  return s;
}

std::size_t longest_run(std::string_view s, char c) {
  std::size_t best = 0;
  std::size_t run = 0;
  for (char x : s) {
    run = x == c ? run + 1 : 0;
    best = std::max(best, run);
  }
  return best;
}

}  // namespace

PromptMessages build_hinted_prompt(std::string_view question, std::span<const std::string> hint_steps) {
  std::string user(question);
  if (!hint_steps.empty()) {
    std::string body;
    std::size_t tildes = 0;
    for (std::size_t i = 0; i < hint_steps.size(); ++i) {
      if (i) body += '\n';
      body += escape_tags(hint_steps[i]);
      tildes = std::max(tildes, longest_run(hint_steps[i], '~'));
    }
    const std::string fence(std::max<std::size_t>(3, tildes + 1), '~');
    user += "\n\nPartial solution:\n" + fence + "\n" + body + "\n" + fence +
            "\n\nContinue from the partial solution.";
  }
  PromptMessages prompt;
  prompt.messages.push_back({"system", std::string(kSystemPrompt)});
  prompt.messages.push_back({"user", std::move(user)});
  return prompt;
}

std::vector<std::string> decompose_solution(std::string_view solution_text) {
  const std::string text(solution_text);

  static const std::regex step_marker(R"((^|\s)(step\s+\d+\s*[:.)]))", std::regex::icase);
  if (auto starts = match_starts(text, step_marker, 2); !starts.empty()) {
    auto steps = cut(text, starts);
    if (!steps.empty()) return steps;
  }

  static const std::regex list_item(R"((^|\n)[ \t]*(\d+[.)])[ \t])");
  if (auto starts = match_starts(text, list_item, 2); starts.size() >= 2) {
    auto steps = cut(text, starts);
    if (!steps.empty()) return steps;
  }

  static const std::regex paragraph_break(R"(\n[ \t\r]*\n)");
  if (auto starts = match_starts(text, paragraph_break, 0); !starts.empty()) {
    auto steps = cut(text, starts);
    if (steps.size() >= 2) return steps;
  }

  static const std::regex sentence_end(R"([.!?](\s+))");
  std::vector<std::size_t> ends;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), sentence_end); it != std::sregex_iterator(); ++it)
    ends.push_back(static_cast<std::size_t>(it->position(1)));
  auto steps = cut(text, ends);
  if (steps.empty()) steps.push_back(trim_copy(text).empty() ? text : trim_copy(text));
  return steps;
}

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::adapted: return "adapted";
    case Verdict::discarded: return "discarded";
    case Verdict::already_solvable: return "already_solvable";
  }
  return "discarded";
}

Verdict verdict_from_string(const std::string& s) {
  if (s == "adapted") return Verdict::adapted;
  if (s == "discarded") return Verdict::discarded;
  if (s == "already_solvable") return Verdict::already_solvable;
  throw ValidationError("unknown verdict \"" + s + "\"");
}

void AdaptParams::validate() const {
  if (!(tau > 0.0 && tau <= 1.0)) throw ValidationError("tau must be in (0, 1]");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ValidationError("alpha must be in (0, 1]");
  if (n_probe < 1) throw ValidationError("n_probe must be >= 1");
}

std::size_t max_hint_length(std::size_t k, double alpha) {
  if (k == 0) return 0;
  // l/k <= alpha, inclusive at the boundary; the hint stays a proper prefix.
  const auto by_ratio = static_cast<std::size_t>(std::floor(alpha * static_cast<double>(k) + 1e-9));
  return std::min(by_ratio, k - 1);
}

AdaptOutcome adapt_difficult(const Problem& problem, sampler::Solver& solver, const AdaptParams& params) {
  params.validate();
  const std::size_t k = problem.solution_steps.size();
  if (k < 1) throw ValidationError("problem \"" + problem.id + "\" has no solution steps");

  AdaptOutcome outcome;
  const std::size_t last = max_hint_length(k, params.alpha);
  for (std::size_t l = 0; l <= last; ++l) {
    std::span<const std::string> hint(problem.solution_steps.data(), l);
    Accuracy acc;
    try {
      acc = sampler::probe_accuracy(solver, problem, hint, params.n_probe);
    } catch (const TransportError& e) {
      throw AdaptAborted(e, outcome.probes);
    }
    outcome.probes.push_back({l, acc});
    if (acc.value() >= params.tau) {
      outcome.verdict = l == 0 ? Verdict::already_solvable : Verdict::adapted;
      Problem hinted = problem;
      hinted.hint_prefix.assign(hint.begin(), hint.end());
      outcome.hinted_problem = std::move(hinted);
      return outcome;
    }
  }
  outcome.verdict = Verdict::discarded;
  return outcome;
}

}  // namespace ccl::guidance

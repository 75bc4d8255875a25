#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ccl/corpus.hpp"
#include "ccl/error.hpp"
#include "ccl/sampler.hpp"

namespace ccl::guidance {

struct ChatMessage {
  std::string role;
  std::string content;
};

// Conversation sent to a solver. `assistant_prefix` is the text the assistant
// turn starts with; endpoints receive it as a trailing assistant message only
// when asked to.
struct PromptMessages {
  std::vector<ChatMessage> messages;
  std::string assistant_prefix = "<think>";
};

extern const std::string_view kSystemPrompt;

// The question followed by a fenced "Partial solution:" section holding the
// hint steps; with no hint this is the plain question prompt.
PromptMessages build_hinted_prompt(std::string_view question, std::span<const std::string> hint_steps);

// Splits a reference solution into steps: on "Step k:" markers or numbered
// list items when present, else on blank lines, else on sentence ends.
std::vector<std::string> decompose_solution(std::string_view solution_text);

enum class Verdict { adapted, discarded, already_solvable };

std::string to_string(Verdict v);
Verdict verdict_from_string(const std::string& s);

struct Probe {
  std::size_t hint_length = 0;
  Accuracy accuracy;
};

struct AdaptOutcome {
  Verdict verdict = Verdict::discarded;
  // Original question and steps with hint_prefix set to the chosen prefix;
  // the training target is hinted_problem->remaining_steps().
  std::optional<Problem> hinted_problem;
  std::vector<Probe> probes;
};

struct AdaptParams {
  double tau = 0.25;    // accuracy threshold
  double alpha = 0.5;   // maximum revealed fraction of the solution
  std::size_t n_probe = 16;

  void validate() const;
};

// Grows the hint one step at a time (l = 0, 1, ...) while l/k <= alpha and
// stops at the first probe whose accuracy reaches tau. On a transport failure
// the partial probe log is attached to the thrown AdaptAborted.
AdaptOutcome adapt_difficult(const Problem& problem, sampler::Solver& solver, const AdaptParams& params);

struct AdaptAborted : TransportError {
  AdaptAborted(const TransportError& cause, std::vector<Probe> probes)
      : TransportError(cause.what(), cause.completed), probes(std::move(probes)) {}
  std::vector<Probe> probes;
};

// Largest hint length probed under `alpha` for a k-step solution.
std::size_t max_hint_length(std::size_t k, double alpha);

}  // namespace ccl::guidance

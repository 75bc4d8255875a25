#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ccl/corpus.hpp"

namespace ccl::sampler {

struct EndpointConfig {
  std::string base_url;
  std::string model_name;
  std::string api_key;  // filled from the environment, never persisted
  std::string api_key_env = "CCL_API_KEY";
  double temperature = 0.7;
  double top_p = 0.95;
  int max_tokens = 1024;
  int n_samples = 16;
  std::chrono::milliseconds request_timeout{60000};
  int max_concurrent = 8;
  int max_attempts = 3;
  std::chrono::milliseconds backoff{200};

  // Throws ValidationError when a field is out of range.
  void validate() const;
};

// Desk-scale stand-in for a model: success probability is
// logistic(skill - difficulty + hint_gain * hinted_steps / total_steps).
struct SimulatedSolverConfig {
  double skill = 0.0;
  double hint_gain = 4.0;
  std::uint64_t noise_seed = 0;
};

class Solver {
 public:
  virtual ~Solver() = default;

  // Draws `n` responses to `problem` shown with `hint_prefix`; responses are
  // ordered by draw index. Requests that fail with an HTTP status are returned
  // with finish_reason == error.
  virtual std::vector<Response> sample(const Problem& problem, std::size_t n,
                                       std::span<const std::string> hint_prefix) = 0;

  // Total generation requests issued so far.
  std::uint64_t requests_issued() const { return requests_.load(); }

 protected:
  std::atomic<std::uint64_t> requests_{0};
};

class SimulatedSolver final : public Solver {
 public:
  explicit SimulatedSolver(SimulatedSolverConfig cfg);

  std::vector<Response> sample(const Problem& problem, std::size_t n,
                               std::span<const std::string> hint_prefix) override;

  // Success probability for `problem` with `hint_steps` revealed steps.
  double success_probability(const Problem& problem, std::size_t hint_steps) const;

  const SimulatedSolverConfig& config() const { return cfg_; }

 private:
  SimulatedSolverConfig cfg_;
};

// OpenAI-compatible chat-completions client; one request per draw, or a
// single request shared by all draws at temperature 0.
class EndpointSolver final : public Solver {
 public:
  explicit EndpointSolver(EndpointConfig cfg);

  std::vector<Response> sample(const Problem& problem, std::size_t n,
                               std::span<const std::string> hint_prefix) override;

  const EndpointConfig& config() const { return cfg_; }

 private:
  EndpointConfig cfg_;
};

// Difficulty used by the simulated solver: source_tags["difficulty"] when
// present, otherwise the number of solution steps.
double problem_difficulty(const Problem& problem);

double logistic(double x);

// Request body for one draw (the "n" field is always 1).
Json chat_request_body(const EndpointConfig& cfg, const Problem& problem,
                       std::span<const std::string> hint_prefix);

std::vector<Response> sample_responses(Solver& solver, const Problem& problem, std::size_t n,
                                       std::span<const std::string> hint_prefix);

// Samples and grades; the returned accuracy is exact.
Accuracy probe_accuracy(Solver& solver, const Problem& problem,
                        std::span<const std::string> hint_prefix, std::size_t n_probe);

}  // namespace ccl::sampler

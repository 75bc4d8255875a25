#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ccl/corpus.hpp"
#include "ccl/rl_core.hpp"
#include "ccl/sampler.hpp"

namespace ccl::toy {

// ---------------------------------------------------------------------------
// Task family: chains of modular operations.
//
// A task starts from a value in Z_m and applies k operations "+c" or "*c"
// (mod m) left to right. Its solution steps are the k intermediate values and
// its golden answer is the last one; the difficulty tag is k.

enum class OpKind : std::uint8_t { add = 0, mul = 1 };

struct Op {
  OpKind kind = OpKind::add;
  int operand = 0;
  bool operator==(const Op&) const = default;
};

struct ToyTask {
  int modulus = 10;
  int start = 0;
  std::vector<Op> ops;

  // Intermediate values after each operation.
  std::vector<int> trace() const;
  std::string chain_text() const;   // "3 +4 *2"
  std::string question() const;
  Problem to_problem(std::string id) const;
  bool operator==(const ToyTask&) const = default;
};

int apply(const Op& op, int value, int modulus);

// Parses the chain stored in a problem's source_tags (or its question).
ToyTask parse_task(const Problem& problem);

struct TaskGenConfig {
  std::uint64_t seed = 0;
  std::size_t count = 1;
  std::size_t k_min = 1;
  std::size_t k_max = 6;
  int modulus = 10;
  std::string id_prefix = "toy";
};

std::vector<Problem> gen_tasks(const TaskGenConfig& cfg);

// ---------------------------------------------------------------------------
// Policy

// Vocabulary: residues 0..m-1 followed by the structural tokens.
enum class Structural : int { plus = 0, times, think_open, think_close, answer_open, answer_close, count };

class SoftmaxPolicy {
 public:
  // Uniform policy (all weights zero).
  explicit SoftmaxPolicy(int modulus = 10, double max_row_norm = 30.0);

  int modulus() const { return modulus_; }
  std::size_t vocab_size() const { return vocab_; }
  std::size_t feature_dim() const { return features_; }
  double max_row_norm() const { return max_row_norm_; }
  std::span<const double> weights() const { return weights_; }
  std::span<double> weights() { return weights_; }
  double& weight(std::size_t feature, std::size_t token) { return weights_[feature * vocab_ + token]; }
  double weight(std::size_t feature, std::size_t token) const { return weights_[feature * vocab_ + token]; }

  // Provenance trail: init seed, stage checkpoints, ...
  std::vector<std::string> lineage;

  std::string token_text(std::int32_t token) const;

  // Rescales rows whose L2 norm exceeds the cap.
  void apply_norm_guard();

  bool operator==(const SoftmaxPolicy&) const = default;

 private:
  int modulus_;
  std::size_t vocab_;
  std::size_t features_;
  double max_row_norm_;
  std::vector<double> weights_;
};

// What the policy conditions on: the value it currently holds (the start value
// or the last hint value) and the operations still to apply.
struct ToyPrompt {
  int modulus = 10;
  int state = 0;  // == modulus when the state is not a residue
  std::vector<Op> ops;
};

ToyPrompt make_prompt(const Problem& problem, std::span<const std::string> hint_prefix);
inline ToyPrompt make_prompt(const Problem& problem) { return make_prompt(problem, problem.hint_prefix); }

struct PolicySample {
  rl::TokenSeq tokens;
  rl::TokenLogProbs logps;
  Response response;
};

struct SampleOptions {
  std::size_t max_len = 16;  // cap on value tokens
  bool greedy = false;
  std::uint64_t seed = 0;
};

PolicySample policy_sample(const SoftmaxPolicy& policy, const ToyPrompt& prompt, const SampleOptions& opts);

// Log-probabilities of `tokens` as a response to `prompt`; equal to the values
// recorded by policy_sample for the same tokens. Throws ValidationError for
// out-of-vocabulary tokens.
rl::TokenLogProbs policy_logprob(const SoftmaxPolicy& policy, const ToyPrompt& prompt, const rl::TokenSeq& tokens);

// Full next-token distribution at every position of `tokens`.
std::vector<std::vector<double>> policy_distributions(const SoftmaxPolicy& policy, const ToyPrompt& prompt,
                                                      const rl::TokenSeq& tokens);

// A response is one value token per remaining operation (at most max_len).
// Renders tokens as "<think>v1 v2 ... vn</think><answer>vn</answer>": the
// answer is the last value the policy reached.
std::string render_response(const SoftmaxPolicy& policy, const rl::TokenSeq& tokens);

// Supervised target: the remaining solution values.
rl::TokenSeq target_tokens(const SoftmaxPolicy& policy, const Problem& problem);

// Loss gradient with respect to the log-probabilities of one response.
struct LogProbGrad {
  ToyPrompt prompt;
  rl::TokenSeq tokens;
  std::vector<double> dlogp;
};

// Gradient of sum_i dlogp_i * logp_i with respect to the weights.
std::vector<double> weight_gradient(const SoftmaxPolicy& policy, std::span<const LogProbGrad> batch);

// One gradient-descent step; returns the updated policy and leaves `policy`
// untouched. Throws NumericError on a non-finite gradient.
SoftmaxPolicy policy_step(const SoftmaxPolicy& policy, std::span<const LogProbGrad> batch, double learning_rate);

// Greedy-decoding accuracy over `problems` (each shown with its own hint).
double greedy_accuracy(const SoftmaxPolicy& policy, std::span<const Problem> problems, std::size_t max_len = 16);

// Text checkpoint: magic line, modulus, shape and lineage header, then one
// row of weights per line printed with 17 significant digits.
std::string serialize_policy(const SoftmaxPolicy& policy);
SoftmaxPolicy deserialize_policy(const std::string& text);
void save_policy(const SoftmaxPolicy& policy, const std::filesystem::path& path);
SoftmaxPolicy load_policy(const std::filesystem::path& path);

// Adapts a policy to the Solver interface so it can drive construction and
// hint probing.
class PolicySolver final : public sampler::Solver {
 public:
  PolicySolver(SoftmaxPolicy policy, std::uint64_t seed, std::size_t max_len = 16);
  std::vector<Response> sample(const Problem& problem, std::size_t n,
                               std::span<const std::string> hint_prefix) override;

 private:
  SoftmaxPolicy policy_;
  std::uint64_t seed_;
  std::size_t max_len_;
};

}  // namespace ccl::toy

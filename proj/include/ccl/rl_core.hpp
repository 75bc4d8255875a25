#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ccl/grader.hpp"

namespace ccl::rl {

struct RewardBreakdown {
  int format = 0;
  int accuracy = 0;
  int total = 0;
};

// 1 iff the text holds exactly one each of <think>, </think>, <answer>,
// </answer>, in that order.
int format_reward(std::string_view text);

// 1 iff an answer can be extracted and it is equivalent to `golden`.
int accuracy_reward(std::string_view text, const grader::CanonicalAnswer& golden);

RewardBreakdown reward(std::string_view text, const grader::CanonicalAnswer& golden);

// Per-response advantages (r_i - mean) / std with the population standard
// deviation; all zeros when std < 1e-8. Throws ValidationError for G < 2.
std::vector<double> group_advantages(std::span<const double> rewards);

using TokenSeq = std::vector<std::int32_t>;

struct RewardedGroup {
  std::string question_id;
  std::vector<TokenSeq> responses;
  std::vector<double> rewards;
  std::vector<double> advantages;
};

RewardedGroup make_group(std::string question_id, std::vector<TokenSeq> responses, std::vector<double> rewards);

// Per-token log-probabilities of one response under one policy snapshot.
using TokenLogProbs = std::vector<double>;
// [question][response][token]
using BatchLogProbs = std::vector<std::vector<TokenLogProbs>>;

struct GrpoConfig {
  double clip_epsilon = 0.2;
  double kl_beta = 0.04;
  std::size_t group_size = 7;

  void validate() const;
};

// Log-ratio differences beyond this are clamped before exponentiation.
inline constexpr double kMaxLogRatio = 50.0;

struct GuardedExp {
  double value = 0.0;
  bool clamped = false;
};

// exp(logp_new - logp_old), with the difference clamped to +-50.
GuardedExp token_ratio(double logp_new, double logp_old);

// u - ln u - 1 with u = exp(logp_ref - logp_new); >= 0, zero only at equality.
GuardedExp kl_token_estimate(double logp_new, double logp_ref);

struct GrpoResult {
  double loss = 0.0;
  BatchLogProbs grad;  // d loss / d new log-prob, same shape as the input
  double clip_fraction = 0.0;
  double mean_kl = 0.0;
  std::size_t clamped = 0;
};

// Negated clipped surrogate with KL penalty, averaged per token within a
// response, over the group, then over questions. Advantages are constants.
GrpoResult grpo_loss(std::span<const RewardedGroup> groups, const BatchLogProbs& new_logps,
                     const BatchLogProbs& old_logps, const BatchLogProbs& ref_logps, const GrpoConfig& cfg);

struct SftResult {
  double loss = 0.0;
  std::vector<TokenLogProbs> grad;
};

// Mean over examples of the negative sequence log-likelihood.
SftResult sft_loss(std::span<const TokenLogProbs> target_logps);

// Pairwise summation in index order; the result does not depend on scheduling.
double pairwise_sum(std::span<const double> values);

}  // namespace ccl::rl

#include "ccl/rl_core.hpp"

#include <algorithm>
#include <cmath>

#include "ccl/error.hpp"

namespace ccl::rl {

namespace {

std::size_t count_of(std::string_view text, std::string_view tag) {
  std::size_t n = 0;
  for (std::size_t pos = text.find(tag); pos != std::string_view::npos; pos = text.find(tag, pos + tag.size())) ++n;
  return n;
}

void require_finite(double x, const char* what) {
  if (!std::isfinite(x)) throw ValidationError(std::string("non-finite ") + what);
}

}  // namespace

double pairwise_sum(std::span<const double> values) {
  if (values.size() <= 8) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

int format_reward(std::string_view text) {
  constexpr std::string_view tags[] = {"<think>", "</think>", "<answer>", "</answer>"};
  std::size_t prev = 0;
  bool first = true;
  for (auto tag : tags) {
    if (count_of(text, tag) != 1) return 0;
    const std::size_t pos = text.find(tag);
    if (!first && pos < prev) return 0;
    prev = pos + tag.size();
    first = false;
  }
  return 1;
}

int accuracy_reward(std::string_view text, const grader::CanonicalAnswer& golden) {
  auto raw = grader::extract_answer(text);
  if (!raw) return 0;
  return grader::is_equivalent(grader::normalize(*raw), golden) ? 1 : 0;
}

RewardBreakdown reward(std::string_view text, const grader::CanonicalAnswer& golden) {
  RewardBreakdown r;
  r.format = format_reward(text);
  r.accuracy = accuracy_reward(text, golden);
  r.total = r.format + r.accuracy;
  return r;
}

std::vector<double> group_advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw ValidationError("a group needs at least two rewards");
  for (double r : rewards) require_finite(r, "reward");
  const double n = static_cast<double>(rewards.size());
  const double mean = pairwise_sum(rewards) / n;
  std::vector<double> centered(rewards.size());
  std::vector<double> squares(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    centered[i] = rewards[i] - mean;
    squares[i] = centered[i] * centered[i];
  }
  const double std = std::sqrt(pairwise_sum(squares) / n);
  if (std < 1e-8) return std::vector<double>(rewards.size(), 0.0);
  for (double& c : centered) c /= std;
  return centered;
}

RewardedGroup make_group(std::string question_id, std::vector<TokenSeq> responses, std::vector<double> rewards) {
  if (responses.size() != rewards.size()) throw ValidationError("responses and rewards differ in length");
  RewardedGroup g;
  g.question_id = std::move(question_id);
  g.advantages = group_advantages(rewards);
  g.responses = std::move(responses);
  g.rewards = std::move(rewards);
  return g;
}

void GrpoConfig::validate() const {
  if (!(clip_epsilon > 0.0)) throw ValidationError("clip_epsilon must be > 0");
  if (!(kl_beta >= 0.0)) throw ValidationError("kl_beta must be >= 0");
  if (group_size < 2) throw ValidationError("group_size must be >= 2");
}

GuardedExp token_ratio(double logp_new, double logp_old) {
  require_finite(logp_new, "log-probability");
  require_finite(logp_old, "log-probability");
  const double diff = logp_new - logp_old;
  const double clamped = std::clamp(diff, -kMaxLogRatio, kMaxLogRatio);
  return {std::exp(clamped), clamped != diff};
}

GuardedExp kl_token_estimate(double logp_new, double logp_ref) {
  require_finite(logp_new, "log-probability");
  require_finite(logp_ref, "log-probability");
  const double diff = logp_ref - logp_new;
  const double d = std::clamp(diff, -kMaxLogRatio, kMaxLogRatio);
  // u - ln u - 1 = expm1(d) - d, which keeps precision near d = 0.
  return {std::max(0.0, std::expm1(d) - d), d != diff};
}

GrpoResult grpo_loss(std::span<const RewardedGroup> groups, const BatchLogProbs& new_logps,
                     const BatchLogProbs& old_logps, const BatchLogProbs& ref_logps, const GrpoConfig& cfg) {
  cfg.validate();
  if (groups.empty()) throw ValidationError("empty GRPO batch");
  if (new_logps.size() != groups.size() || old_logps.size() != groups.size() || ref_logps.size() != groups.size())
    throw ValidationError("log-prob batches are not aligned with the groups");

  GrpoResult out;
  out.grad.resize(groups.size());
  std::vector<double> question_terms(groups.size());
  std::vector<double> kl_sums;
  std::size_t tokens = 0;
  std::size_t clipped = 0;
  const double inv_q = 1.0 / static_cast<double>(groups.size());

  for (std::size_t q = 0; q < groups.size(); ++q) {
    const auto& g = groups[q];
    const std::size_t G = g.advantages.size();
    if (G < 2) throw ValidationError("group \"" + g.question_id + "\" has fewer than two responses");
    if (new_logps[q].size() != G || old_logps[q].size() != G || ref_logps[q].size() != G)
      throw ValidationError("group \"" + g.question_id + "\": log-probs do not match the group size");
    const double inv_g = 1.0 / static_cast<double>(G);
    std::vector<double> response_terms(G);
    out.grad[q].resize(G);

    for (std::size_t i = 0; i < G; ++i) {
      const auto& lp_new = new_logps[q][i];
      const auto& lp_old = old_logps[q][i];
      const auto& lp_ref = ref_logps[q][i];
      const std::size_t T = lp_new.size();
      if (T == 0) throw ValidationError("group \"" + g.question_id + "\": empty response");
      if (lp_old.size() != T || lp_ref.size() != T)
        throw ValidationError("group \"" + g.question_id + "\": token log-probs are misaligned");
      if (i < g.responses.size() && g.responses[i].size() != T)
        throw ValidationError("group \"" + g.question_id + "\": log-probs do not match response length");
      const double adv = g.advantages[i];
      const double inv_t = 1.0 / static_cast<double>(T);
      const double scale = -inv_q * inv_g * inv_t;

      std::vector<double> token_terms(T);
      auto& grad = out.grad[q][i];
      grad.assign(T, 0.0);
      for (std::size_t t = 0; t < T; ++t) {
        const auto ratio = token_ratio(lp_new[t], lp_old[t]);
        const double r = ratio.value;
        const double r_clip = std::clamp(r, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
        const double unclipped = r * adv;
        const double clipped_term = r_clip * adv;
        const bool clip_selected = clipped_term < unclipped;
        const double surrogate = clip_selected ? clipped_term : unclipped;

        const auto kl = kl_token_estimate(lp_new[t], lp_ref[t]);
        token_terms[t] = surrogate - cfg.kl_beta * kl.value;
        kl_sums.push_back(kl.value);

        // d surrogate / d logp_new = r * A on the unclipped branch, else 0.
        const double d_surrogate = (clip_selected || ratio.clamped) ? 0.0 : unclipped;
        // d kl / d logp_new = 1 - exp(logp_ref - logp_new).
        const double d_kl = kl.clamped ? 0.0 : -std::expm1(lp_ref[t] - lp_new[t]);
        grad[t] = scale * (d_surrogate - cfg.kl_beta * d_kl);

        clipped += clip_selected ? 1 : 0;
        out.clamped += (ratio.clamped ? 1 : 0) + (kl.clamped ? 1 : 0);
        ++tokens;
      }
      response_terms[i] = pairwise_sum(token_terms) * inv_t;
    }
    question_terms[q] = pairwise_sum(response_terms) * inv_g;
  }

  out.loss = -pairwise_sum(question_terms) * inv_q;
  out.clip_fraction = static_cast<double>(clipped) / static_cast<double>(tokens);
  out.mean_kl = pairwise_sum(kl_sums) / static_cast<double>(tokens);
  if (!std::isfinite(out.loss)) throw NumericError("GRPO loss is not finite");
  return out;
}

SftResult sft_loss(std::span<const TokenLogProbs> target_logps) {
  if (target_logps.empty()) throw ValidationError("empty SFT batch");
  const double inv_n = 1.0 / static_cast<double>(target_logps.size());
  SftResult out;
  std::vector<double> nll(target_logps.size());
  out.grad.resize(target_logps.size());
  for (std::size_t e = 0; e < target_logps.size(); ++e) {
    for (double lp : target_logps[e]) require_finite(lp, "log-probability");
    nll[e] = -pairwise_sum(target_logps[e]);
    out.grad[e].assign(target_logps[e].size(), -inv_n);
  }
  out.loss = pairwise_sum(nll) * inv_n;
  return out;
}

}  // namespace ccl::rl

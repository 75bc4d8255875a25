#include <doctest.h>

#include <cmath>
#include <random>

#include "ccl/error.hpp"
#include "ccl/rl_core.hpp"

using namespace ccl;
using namespace ccl::rl;

namespace {

// Extended-precision moments, independent of the library's reductions.
struct Moments {
  long double mean = 0, std = 0;
};

Moments moments(const std::vector<double>& xs) {
  long double s = 0;
  for (double x : xs) s += x;
  const long double m = s / xs.size();
  long double v = 0;
  for (double x : xs) v += (x - m) * (x - m);
  return {m, std::sqrt(v / xs.size())};
}

RewardedGroup group_with_advantages(std::vector<double> adv, std::vector<std::size_t> lengths) {
  RewardedGroup g;
  g.question_id = "q";
  g.advantages = adv;
  g.rewards.assign(adv.size(), 0.0);
  for (auto t : lengths) g.responses.push_back(TokenSeq(t, 0));
  return g;
}

// Direct evaluation of the clipped objective with KL penalty, term by term.
long double reference_loss(const std::vector<RewardedGroup>& groups, const BatchLogProbs& lp_new,
                           const BatchLogProbs& lp_old, const BatchLogProbs& lp_ref, double eps, double beta) {
  long double total = 0;
  for (std::size_t q = 0; q < groups.size(); ++q) {
    long double gsum = 0;
    const auto G = groups[q].advantages.size();
    for (std::size_t i = 0; i < G; ++i) {
      long double rsum = 0;
      const auto T = lp_new[q][i].size();
      for (std::size_t t = 0; t < T; ++t) {
        const long double r = std::exp(static_cast<long double>(lp_new[q][i][t]) - lp_old[q][i][t]);
        const long double a = groups[q].advantages[i];
        const long double rc = std::min<long double>(std::max<long double>(r, 1 - eps), 1 + eps);
        const long double u = std::exp(static_cast<long double>(lp_ref[q][i][t]) - lp_new[q][i][t]);
        rsum += std::min(r * a, rc * a) - beta * (u - std::log(u) - 1);
      }
      gsum += rsum / T;
    }
    total += gsum / G;
  }
  return -total / groups.size();
}

struct Batch {
  std::vector<RewardedGroup> groups;
  BatchLogProbs lp_new, lp_old, lp_ref;
};

// Random batch whose ratios stay at least `margin` away from the clip edges.
Batch random_batch(std::mt19937_64& rng, double eps, double margin) {
  std::uniform_real_distribution<double> lp(-3.0, -0.05);
  std::uniform_real_distribution<double> shift(-0.5, 0.5);
  std::uniform_real_distribution<double> rew(0.0, 2.0);
  Batch b;
  const std::size_t Q = 1 + rng() % 3;
  for (std::size_t q = 0; q < Q; ++q) {
    const std::size_t G = 2 + rng() % 3;
    std::vector<double> rewards;
    std::vector<TokenSeq> responses;
    auto& n = b.lp_new.emplace_back();
    auto& o = b.lp_old.emplace_back();
    auto& r = b.lp_ref.emplace_back();
    for (std::size_t i = 0; i < G; ++i) {
      const std::size_t T = 1 + rng() % 4;
      responses.push_back(TokenSeq(T, 0));
      rewards.push_back(rew(rng));
      n.emplace_back();
      o.emplace_back();
      r.emplace_back();
      for (std::size_t t = 0; t < T; ++t) {
        double old_v = lp(rng), new_v;
        do {
          new_v = old_v + shift(rng);
          const double ratio = std::exp(new_v - old_v);
          if (std::abs(ratio - (1 + eps)) > margin && std::abs(ratio - (1 - eps)) > margin) break;
        } while (true);
        n.back().push_back(new_v);
        o.back().push_back(old_v);
        r.back().push_back(old_v + shift(rng));
      }
    }
    b.groups.push_back(make_group("q" + std::to_string(q), responses, rewards));
  }
  return b;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

}  // namespace

TEST_SUITE("rl_core") {
  TEST_CASE("format reward") {
    CHECK(format_reward("<think>a</think><answer>b</answer>") == 1);
    CHECK(format_reward("<answer>b</answer><think>a</think>") == 0);
    CHECK(format_reward("") == 0);
    CHECK(format_reward("<think>a</think><think>a</think><answer>b</answer>") == 0);
    CHECK(format_reward("<think>a<answer>b</think></answer>") == 0);
    CHECK(format_reward("pre <think>a</think> mid <answer>b</answer> post") == 1);
  }

  TEST_CASE("accuracy reward") {
    const auto gold = grader::normalize("1/2");
    CHECK(accuracy_reward("<think>x</think><answer>0.5</answer>", gold) == 1);
    CHECK(accuracy_reward("<think>x</think><answer>0.6</answer>", gold) == 0);
    CHECK(accuracy_reward("<think>x</think>", gold) == 0);
    const auto r = reward("<think>x</think><answer>\\frac{1}{2}</answer>", gold);
    CHECK(r.format == 1);
    CHECK(r.accuracy == 1);
    CHECK(r.total == 2);
    const auto r2 = reward("0.5 and the answer is 1/2", gold);
    CHECK(r2.total == 1);
  }

  TEST_CASE("group advantages examples") {
    const std::vector<double> a = {2, 1, 0, 1};
    auto adv = group_advantages(a);
    // mean 1, population std sqrt(1/2)
    const long double s = std::sqrt(0.5L);
    CHECK(adv[0] == doctest::Approx(static_cast<double>(1 / s)).epsilon(1e-12));
    CHECK(std::abs(adv[1]) < 1e-15);
    CHECK(adv[2] == doctest::Approx(static_cast<double>(-1 / s)).epsilon(1e-12));
    CHECK(std::abs(adv[0] - 1.41421356) < 1e-8);

    CHECK(group_advantages(std::vector<double>{1, 1, 1}) == std::vector<double>{0, 0, 0});
    auto two = group_advantages(std::vector<double>{1, 0});
    CHECK(two[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(two[1] == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK_THROWS_AS(group_advantages(std::vector<double>{1}), ValidationError);
  }

  TEST_CASE("advantage moments on 10000 random groups") {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> cont(-5, 5);
    int checked = 0;
    for (int g = 0; g < 10000; ++g) {
      const std::size_t G = 2 + rng() % 15;
      std::vector<double> r(G);
      const bool discrete = rng() % 2;
      for (auto& x : r) x = discrete ? static_cast<double>(rng() % 3) : cont(rng);
      auto adv = group_advantages(r);
      const auto m_in = moments(r);
      if (m_in.std < 1e-8) {
        for (double a : adv) CHECK(a == 0.0);
        continue;
      }
      const auto m = moments(adv);
      CHECK(std::abs(static_cast<double>(m.mean)) <= 1e-9);
      CHECK(std::abs(static_cast<double>(m.std) - 1.0) <= 1e-9);
      ++checked;
    }
    CHECK(checked > 9000);
  }

  TEST_CASE("advantages are invariant to shift and positive scale") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-2, 2);
    for (int g = 0; g < 1000; ++g) {
      std::vector<double> r(2 + rng() % 8);
      for (auto& x : r) x = u(rng);
      const double c = u(rng), k = 0.1 + std::abs(u(rng)) * 5;
      std::vector<double> shifted = r, scaled = r;
      for (auto& x : shifted) x += c;
      for (auto& x : scaled) x *= k;
      const auto a = group_advantages(r), b = group_advantages(shifted), d = group_advantages(scaled);
      for (std::size_t i = 0; i < r.size(); ++i) {
        CHECK(std::abs(a[i] - b[i]) < 1e-9);
        CHECK(std::abs(a[i] - d[i]) < 1e-9);
      }
    }
  }

  TEST_CASE("token ratio") {
    CHECK(token_ratio(-1.3, -1.3).value == 1.0);
    CHECK_FALSE(token_ratio(-1.3, -1.3).clamped);
    CHECK(std::abs(token_ratio(std::log(1.5) - 2.0, -2.0).value - 1.5) <= 1e-12);
    auto big = token_ratio(100.0, 0.0);
    CHECK(big.clamped);
    CHECK(big.value == std::exp(50.0));
    CHECK(token_ratio(-100.0, 0.0).value == std::exp(-50.0));
    CHECK_THROWS_AS(token_ratio(NAN, 0.0), ValidationError);
  }

  TEST_CASE("kl estimate") {
    CHECK(kl_token_estimate(-0.7, -0.7).value == 0.0);
    const double ln2 = std::log(2.0);
    // u = 2 and u = 1/2
    CHECK(kl_token_estimate(-1.0, -1.0 + ln2).value == doctest::Approx(2 - ln2 - 1).epsilon(1e-12));
    CHECK(kl_token_estimate(-1.0, -1.0 - ln2).value == doctest::Approx(0.5 + ln2 - 1).epsilon(1e-12));
    CHECK(std::abs(kl_token_estimate(-1.0, -1.0 + ln2).value - 0.30685) < 1e-5);
    CHECK(std::abs(kl_token_estimate(-1.0, -1.0 - ln2).value - 0.19315) < 1e-5);
    CHECK(kl_token_estimate(0.0, 80.0).clamped);
  }

  TEST_CASE("kl estimate is non-negative and zero only at equality") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-60, 0);
    for (int i = 0; i < 100000; ++i) {
      const double a = u(rng), b = u(rng);
      const double k = kl_token_estimate(a, b).value;
      CHECK(k >= 0.0);
      if (a != b && std::abs(a - b) > 1e-6) CHECK(k > 0.0);
    }
  }

  TEST_CASE("single-token loss with ratio one") {
    // Two identical responses stand in for one: each carries A = 1 and the
    // per-token gradients add up to the single-response value.
    std::vector<RewardedGroup> groups = {group_with_advantages({1, 1}, {1, 1})};
    BatchLogProbs lp = {{{-0.4}, {-0.4}}};
    auto res = grpo_loss(groups, lp, lp, lp, GrpoConfig{});
    CHECK(res.loss == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(res.grad[0][0][0] + res.grad[0][1][0] == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(res.mean_kl == 0.0);
  }

  TEST_CASE("clipped branches have zero gradient") {
    GrpoConfig cfg;
    cfg.kl_beta = 0.0;
    {
      std::vector<RewardedGroup> groups = {group_with_advantages({1, 1}, {1, 1})};
      BatchLogProbs old_lp = {{{-1.0}, {-1.0}}};
      BatchLogProbs new_lp = {{{-1.0 + std::log(1.5)}, {-1.0 + std::log(1.5)}}};
      auto res = grpo_loss(groups, new_lp, old_lp, old_lp, cfg);
      CHECK(res.loss == doctest::Approx(-1.2).epsilon(1e-12));
      CHECK(res.grad[0][0][0] == 0.0);
      CHECK(res.clip_fraction == 1.0);
    }
    {
      std::vector<RewardedGroup> groups = {group_with_advantages({-1, -1}, {1, 1})};
      BatchLogProbs old_lp = {{{-1.0}, {-1.0}}};
      BatchLogProbs new_lp = {{{-1.0 + std::log(0.5)}, {-1.0 + std::log(0.5)}}};
      auto res = grpo_loss(groups, new_lp, old_lp, old_lp, cfg);
      // min(-0.5, -0.8) = -0.8
      CHECK(res.loss == doctest::Approx(0.8).epsilon(1e-12));
      CHECK(res.grad[0][1][0] == 0.0);
    }
  }

  TEST_CASE("clip gradient law on random batches") {
    std::mt19937_64 rng(21);
    GrpoConfig cfg;
    cfg.kl_beta = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
      auto b = random_batch(rng, cfg.clip_epsilon, 1e-6);
      auto res = grpo_loss(b.groups, b.lp_new, b.lp_old, b.lp_ref, cfg);
      for (std::size_t q = 0; q < b.groups.size(); ++q)
        for (std::size_t i = 0; i < b.groups[q].advantages.size(); ++i)
          for (std::size_t t = 0; t < b.lp_new[q][i].size(); ++t) {
            const double r = std::exp(b.lp_new[q][i][t] - b.lp_old[q][i][t]);
            const double a = b.groups[q].advantages[i];
            const double rc = std::clamp(r, 1 - cfg.clip_epsilon, 1 + cfg.clip_epsilon);
            if (rc * a < r * a) CHECK(res.grad[q][i][t] == 0.0);
          }
    }
  }

  TEST_CASE("loss matches a term-by-term evaluation") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 200; ++trial) {
      GrpoConfig cfg;
      cfg.kl_beta = 0.04 * (trial % 3);
      auto b = random_batch(rng, cfg.clip_epsilon, 0.0);
      auto res = grpo_loss(b.groups, b.lp_new, b.lp_old, b.lp_ref, cfg);
      const auto ref = reference_loss(b.groups, b.lp_new, b.lp_old, b.lp_ref, cfg.clip_epsilon, cfg.kl_beta);
      CHECK(res.loss == doctest::Approx(static_cast<double>(ref)).epsilon(1e-12));
    }
  }

  TEST_CASE("grpo gradient matches central differences on 50 batches") {
    std::mt19937_64 rng(50);
    const double h = 1e-5;
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
      GrpoConfig cfg;
      cfg.kl_beta = 0.04 + 0.2 * (trial % 2);
      auto b = random_batch(rng, cfg.clip_epsilon, 1e-3);
      auto res = grpo_loss(b.groups, b.lp_new, b.lp_old, b.lp_ref, cfg);
      for (std::size_t q = 0; q < b.groups.size(); ++q)
        for (std::size_t i = 0; i < b.lp_new[q].size(); ++i)
          for (std::size_t t = 0; t < b.lp_new[q][i].size(); ++t) {
            auto plus = b.lp_new, minus = b.lp_new;
            plus[q][i][t] += h;
            minus[q][i][t] -= h;
            const double fd = (grpo_loss(b.groups, plus, b.lp_old, b.lp_ref, cfg).loss -
                               grpo_loss(b.groups, minus, b.lp_old, b.lp_ref, cfg).loss) /
                              (2 * h);
            const double e = rel_err(res.grad[q][i][t], fd);
            worst = std::max(worst, e);
            CHECK(e <= 1e-4);
          }
    }
    MESSAGE("worst relative error " << worst);
  }

  TEST_CASE("without clipping or penalty the loss is the plain surrogate") {
    std::mt19937_64 rng(12);
    GrpoConfig cfg;
    cfg.kl_beta = 0.0;
    cfg.clip_epsilon = 1e12;
    for (int trial = 0; trial < 100; ++trial) {
      auto b = random_batch(rng, 0.2, 0.0);
      auto res = grpo_loss(b.groups, b.lp_new, b.lp_old, b.lp_ref, cfg);
      long double total = 0;
      for (std::size_t q = 0; q < b.groups.size(); ++q) {
        long double g = 0;
        for (std::size_t i = 0; i < b.lp_new[q].size(); ++i) {
          long double s = 0;
          for (std::size_t t = 0; t < b.lp_new[q][i].size(); ++t)
            s += std::exp(static_cast<long double>(b.lp_new[q][i][t]) - b.lp_old[q][i][t]) * b.groups[q].advantages[i];
          g += s / b.lp_new[q][i].size();
        }
        total += g / b.lp_new[q].size();
      }
      CHECK(res.loss == doctest::Approx(static_cast<double>(-total / b.groups.size())).epsilon(1e-12));
      CHECK(res.clip_fraction == 0.0);
    }
  }

  TEST_CASE("misaligned inputs are rejected") {
    std::vector<RewardedGroup> groups = {group_with_advantages({1, -1}, {2, 1})};
    BatchLogProbs ok = {{{-1, -1}, {-1}}};
    BatchLogProbs short_lp = {{{-1}, {-1}}};
    CHECK_THROWS_AS(grpo_loss(groups, short_lp, ok, ok, GrpoConfig{}), ValidationError);
    CHECK_THROWS_AS(grpo_loss(groups, ok, short_lp, ok, GrpoConfig{}), ValidationError);
    BatchLogProbs one_group_missing = {};
    CHECK_THROWS_AS(grpo_loss(groups, one_group_missing, ok, ok, GrpoConfig{}), ValidationError);
    GrpoConfig bad;
    bad.group_size = 1;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
  }

  TEST_CASE("sft loss examples") {
    std::vector<TokenLogProbs> one = {{-1, -2}};
    auto r = sft_loss(one);
    CHECK(r.loss == 3.0);
    CHECK(r.grad[0] == std::vector<double>{-1, -1});
    std::vector<TokenLogProbs> perfect = {{0, 0, 0}};
    CHECK(sft_loss(perfect).loss == 0.0);
    std::vector<TokenLogProbs> two = {{-1, -2}, {-0.5, -0.5}};
    auto r2 = sft_loss(two);
    CHECK(r2.loss == 2.0);
    CHECK(r2.grad[1] == std::vector<double>{-0.5, -0.5});
    std::vector<TokenLogProbs> none;
    CHECK_THROWS_AS(sft_loss(none), ValidationError);
  }

  TEST_CASE("sft gradient matches central differences on 50 batches") {
    std::mt19937_64 rng(51);
    std::uniform_real_distribution<double> lp(-4, 0);
    const double h = 1e-5;
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<TokenLogProbs> batch(1 + rng() % 5);
      for (auto& e : batch) {
        e.resize(1 + rng() % 6);
        for (auto& x : e) x = lp(rng);
      }
      auto res = sft_loss(batch);
      for (std::size_t e = 0; e < batch.size(); ++e)
        for (std::size_t t = 0; t < batch[e].size(); ++t) {
          auto plus = batch, minus = batch;
          plus[e][t] += h;
          minus[e][t] -= h;
          const double fd = (sft_loss(plus).loss - sft_loss(minus).loss) / (2 * h);
          CHECK(rel_err(res.grad[e][t], fd) <= 1e-4);
        }
    }
  }

  TEST_CASE("pairwise sum is exact on integers and order-fixed") {
    std::vector<double> xs(1000);
    for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = static_cast<double>(i);
    CHECK(pairwise_sum(xs) == 499500.0);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1, 1);
    for (auto& x : xs) x = u(rng);
    CHECK(pairwise_sum(xs) == pairwise_sum(xs));
  }
}

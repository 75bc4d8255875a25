#include "ccl/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "ccl/curriculum.hpp"
#include "ccl/error.hpp"
#include "ccl/grader.hpp"
#include "ccl/hash.hpp"
#include "ccl/random.hpp"

namespace ccl::pipeline {

// --- construction -----------------------------------------------------------

SampleRecord sample_and_grade(sampler::Solver& solver, const Problem& problem, std::size_t n) {
  SampleRecord rec;
  rec.problem_id = problem.id;
  rec.responses = sampler::sample_responses(solver, problem, n, problem.hint_prefix);
  rec.accuracy = grader::accuracy(rec.responses, grader::normalize(problem.golden_answer));
  return rec;
}

ConstructResult construct(std::span<const Problem> corpus, sampler::Solver& solver, const ConstructParams& params,
                          std::span<const SampleRecord> done,
                          const std::function<void(const SampleRecord&)>& on_record) {
  if (corpus.empty()) throw ValidationError("empty corpus");
  if (params.n_samples < 1) throw ValidationError("n_samples must be >= 1");
  if (params.buckets < 1) throw ValidationError("buckets must be >= 1");
  // Everything is validated before the first request goes out.
  for (const auto& p : corpus) validate(p);

  std::map<std::string, const SampleRecord*> finished;
  for (const auto& r : done) finished[r.problem_id] = &r;

  ConstructResult out;
  out.records.reserve(corpus.size());
  for (const auto& p : corpus) {
    if (auto it = finished.find(p.id); it != finished.end()) {
      out.records.push_back(*it->second);
      continue;
    }
    out.records.push_back(sample_and_grade(solver, p, params.n_samples));
    ++out.new_records;
    if (on_record) on_record(out.records.back());
  }
  out.dataset = curriculum::rank_and_partition(out.records, params.buckets);
  out.dataset.seed = params.seed;
  return out;
}

// --- difficult-sample processing ---------------------------------------------

std::string to_string(AdaptMode m) {
  switch (m) {
    case AdaptMode::retain: return "retain";
    case AdaptMode::discard: return "discard";
    case AdaptMode::adapt: return "adapt";
  }
  return "?";
}

AdaptMode adapt_mode_from_string(const std::string& s) {
  if (s == "retain") return AdaptMode::retain;
  if (s == "discard") return AdaptMode::discard;
  if (s == "adapt") return AdaptMode::adapt;
  throw ValidationError("unknown adapt mode \"" + s + "\" (expected retain, discard or adapt)");
}

std::vector<std::string> difficult_ids(const CurriculumDataset& dataset) {
  std::vector<std::string> out;
  if (dataset.buckets.empty()) return out;
  for (std::size_t b = 0; b < dataset.buckets.size(); ++b) {
    for (const auto& id : dataset.buckets[b]) {
      const bool last = b + 1 == dataset.buckets.size();
      auto it = dataset.accuracy_index.find(id);
      const bool zero = it != dataset.accuracy_index.end() && it->second.correct == 0;
      if (last || zero) out.push_back(id);
    }
  }
  return out;
}

AdaptResult adapt(std::span<const Problem> corpus, const CurriculumDataset& dataset, sampler::Solver& solver,
                  AdaptMode mode, const guidance::AdaptParams& params) {
  params.validate();
  std::map<std::string, std::size_t> bucket_of;
  for (std::size_t b = 0; b < dataset.buckets.size(); ++b)
    for (const auto& id : dataset.buckets[b]) bucket_of[id] = b + 1;

  AdaptResult out;
  out.mode = mode;
  out.dataset = dataset;

  std::map<std::string, const Problem*> by_id;
  for (const auto& p : corpus) by_id[p.id] = &p;
  for (const auto& [id, b] : bucket_of)
    if (!by_id.count(id)) throw ValidationError("bucketed id \"" + id + "\" is missing from the corpus");

  std::map<std::string, Problem> replaced;
  std::set<std::string> dropped;
  if (mode != AdaptMode::retain) {
    for (const auto& id : difficult_ids(dataset)) {
      const Problem& problem = *by_id.at(id);
      AdaptEntry entry;
      entry.problem_id = id;
      entry.bucket = bucket_of.at(id);
      entry.steps = problem.solution_steps.size();
      if (mode == AdaptMode::discard) {
        const Accuracy acc = sampler::probe_accuracy(solver, problem, {}, params.n_probe);
        entry.probes.push_back({0, acc});
        entry.verdict = acc.value() >= params.tau ? guidance::Verdict::already_solvable : guidance::Verdict::discarded;
      } else {
        auto outcome = guidance::adapt_difficult(problem, solver, params);
        entry.verdict = outcome.verdict;
        entry.probes = std::move(outcome.probes);
        if (outcome.verdict == guidance::Verdict::adapted) {
          entry.hint_length = outcome.hinted_problem->hint_prefix.size();
          replaced[id] = std::move(*outcome.hinted_problem);
        }
      }
      if (entry.verdict == guidance::Verdict::discarded) dropped.insert(id);
      out.entries.push_back(std::move(entry));
    }
  }

  for (const auto& p : corpus) {
    if (dropped.count(p.id)) {
      out.discarded.push_back(p);
      out.dataset.provenance[p.id] = Provenance::discarded;
    } else if (auto it = replaced.find(p.id); it != replaced.end()) {
      out.problems.push_back(it->second);
      out.dataset.provenance[p.id] = Provenance::adapted;
    } else {
      out.problems.push_back(p);
    }
  }
  if (!dropped.empty()) {
    // Re-cut the surviving ranking so no stage is left empty.
    std::vector<std::string> ranked;
    for (const auto& bucket : dataset.buckets)
      for (const auto& id : bucket)
        if (!dropped.count(id)) ranked.push_back(id);
    if (ranked.size() < dataset.buckets.size())
      throw ValidationError("only " + std::to_string(ranked.size()) + " problems survive; need at least " +
                            std::to_string(dataset.buckets.size()));
    std::size_t pos = 0;
    for (std::size_t b = 0; b < out.dataset.buckets.size(); ++b) {
      const auto size = curriculum::bucket_sizes(ranked.size(), dataset.buckets.size())[b];
      out.dataset.buckets[b].assign(ranked.begin() + static_cast<std::ptrdiff_t>(pos),
                                    ranked.begin() + static_cast<std::ptrdiff_t>(pos + size));
      pos += size;
    }
  }
  return out;
}

Json to_json(const AdaptEntry& e) {
  Json probes = Json::array();
  for (const auto& p : e.probes)
    probes.push_back({{"hint_length", p.hint_length},
                      {"correct", p.accuracy.correct},
                      {"total", p.accuracy.total},
                      {"accuracy", p.accuracy.value()}});
  return Json{{"problem_id", e.problem_id}, {"bucket", e.bucket},
              {"verdict", guidance::to_string(e.verdict)}, {"hint_length", e.hint_length},
              {"steps", e.steps}, {"probes", probes}};
}

// --- staged training ----------------------------------------------------------

std::string to_string(Method m) { return m == Method::sft ? "sft" : "grpo"; }
std::string to_string(Strategy s) { return s == Strategy::ccl ? "ccl" : "uniform"; }

Method method_from_string(const std::string& s) {
  if (s == "sft") return Method::sft;
  if (s == "grpo") return Method::grpo;
  throw ValidationError("unknown method \"" + s + "\" (expected sft or grpo)");
}

Strategy strategy_from_string(const std::string& s) {
  if (s == "ccl") return Strategy::ccl;
  if (s == "uniform") return Strategy::uniform;
  throw ValidationError("unknown strategy \"" + s + "\" (expected ccl or uniform)");
}

void TrainParams::validate() const {
  if (!(review_ratio >= 0.0 && review_ratio < 1.0)) throw ValidationError("review_ratio must be in [0, 1)");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ValidationError("learning_rate must be > 0");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (max_len < 1) throw ValidationError("max_len must be >= 1");
  if (inner_updates < 1) throw ValidationError("inner_updates must be >= 1");
  if (method == Method::grpo && grpo_steps < 1) throw ValidationError("grpo_steps must be >= 1");
  if (method == Method::sft && sft_epochs_per_stage < 1) throw ValidationError("sft_epochs_per_stage must be >= 1");
  grpo.validate();
}

std::vector<std::vector<std::string>> stage_sets(const CurriculumDataset& dataset, const TrainParams& params) {
  if (dataset.buckets.empty()) throw ValidationError("curriculum has no buckets");
  std::vector<std::vector<std::string>> sets;
  if (params.strategy == Strategy::uniform) {
    auto& all = sets.emplace_back();
    for (const auto& b : dataset.buckets) all.insert(all.end(), b.begin(), b.end());
  } else {
    for (std::size_t s = 1; s <= dataset.buckets.size(); ++s)
      sets.push_back(curriculum::mix_with_review(dataset, s, params.review_ratio, dataset.seed));
  }
  for (std::size_t s = 0; s < sets.size(); ++s)
    if (sets[s].empty()) throw ValidationError("stage " + std::to_string(s + 1) + " has an empty training set");
  return sets;
}

namespace {

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

// Steps per stage of the curriculum schedule; uniform runs spend their sum.
std::vector<std::size_t> ccl_steps(const CurriculumDataset& dataset, const TrainParams& params) {
  TrainParams ccl = params;
  ccl.strategy = Strategy::ccl;
  const auto sets = stage_sets(dataset, ccl);
  if (params.method == Method::grpo) return curriculum::bucket_sizes(params.grpo_steps, sets.size());
  std::vector<std::size_t> out;
  for (const auto& s : sets) out.push_back(params.sft_epochs_per_stage * ceil_div(s.size(), params.batch_size));
  return out;
}

// Cycles through seeded permutations of a stage set.
class BatchStream {
 public:
  BatchStream(const std::vector<std::string>& ids, std::uint64_t seed) : ids_(ids), seed_(seed) { reshuffle(); }

  std::vector<std::string> next(std::size_t n) {
    std::vector<std::string> out;
    out.reserve(n);
    while (out.size() < n) {
      if (pos_ == order_.size()) {
        ++epoch_;
        reshuffle();
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    order_ = ids_;
    Rng rng(hash_combine(seed_, epoch_));
    rng.shuffle(std::span<std::string>(order_));
    pos_ = 0;
  }

  std::vector<std::string> ids_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::vector<std::string> order_;
  std::size_t pos_ = 0;
};

double mean(std::span<const double> xs) {
  return xs.empty() ? 0.0 : rl::pairwise_sum(xs) / static_cast<double>(xs.size());
}

struct StepStats {
  double loss = 0.0;
  double mean_reward = 0.0;
  double mean_abs_advantage = 0.0;
  double kl = 0.0;
  double clip_fraction = 0.0;
  std::size_t degenerate_groups = 0;
  std::size_t sampled = 0;
};

struct Prepared {
  const Problem* problem;
  toy::ToyPrompt prompt;
  grader::CanonicalAnswer gold;
};

StepStats grpo_step(toy::SoftmaxPolicy& policy, const toy::SoftmaxPolicy& ref, std::span<const Prepared* const> batch,
                    const TrainParams& params, std::uint64_t step_seed) {
  const std::size_t G = params.grpo.group_size;
  std::vector<rl::RewardedGroup> groups;
  rl::BatchLogProbs old_logps;
  std::vector<double> rewards_all;
  std::vector<double> abs_adv;
  StepStats stats;
  for (std::size_t q = 0; q < batch.size(); ++q) {
    const auto& item = *batch[q];
    std::vector<rl::TokenSeq> responses;
    std::vector<double> rewards;
    auto& lps = old_logps.emplace_back();
    for (std::size_t i = 0; i < G; ++i) {
      toy::SampleOptions opts;
      opts.max_len = params.max_len;
      opts.seed = hash_combine(hash_combine(step_seed, q), i);
      auto s = toy::policy_sample(policy, item.prompt, opts);
      rewards.push_back(rl::reward(s.response.text, item.gold).total);
      responses.push_back(std::move(s.tokens));
      lps.push_back(std::move(s.logps));
    }
    rewards_all.insert(rewards_all.end(), rewards.begin(), rewards.end());
    groups.push_back(rl::make_group(item.problem->id, std::move(responses), std::move(rewards)));
    const auto& adv = groups.back().advantages;
    if (std::all_of(adv.begin(), adv.end(), [](double a) { return a == 0.0; })) ++stats.degenerate_groups;
    for (double a : adv) abs_adv.push_back(std::abs(a));
  }
  stats.sampled = batch.size() * G;
  stats.mean_reward = mean(rewards_all);
  stats.mean_abs_advantage = mean(abs_adv);

  rl::BatchLogProbs ref_logps(groups.size());
  for (std::size_t q = 0; q < groups.size(); ++q)
    for (const auto& r : groups[q].responses) ref_logps[q].push_back(toy::policy_logprob(ref, batch[q]->prompt, r));

  for (std::size_t u = 0; u < params.inner_updates; ++u) {
    rl::BatchLogProbs new_logps = old_logps;
    if (u > 0) {
      for (std::size_t q = 0; q < groups.size(); ++q)
        for (std::size_t i = 0; i < G; ++i)
          new_logps[q][i] = toy::policy_logprob(policy, batch[q]->prompt, groups[q].responses[i]);
    }
    const auto res = rl::grpo_loss(groups, new_logps, old_logps, ref_logps, params.grpo);
    std::vector<toy::LogProbGrad> grads;
    for (std::size_t q = 0; q < groups.size(); ++q)
      for (std::size_t i = 0; i < G; ++i)
        grads.push_back({batch[q]->prompt, groups[q].responses[i], res.grad[q][i]});
    policy = toy::policy_step(policy, grads, params.learning_rate);
    if (u == 0) {
      stats.loss = res.loss;
      stats.kl = res.mean_kl;
      stats.clip_fraction = res.clip_fraction;
    }
  }
  return stats;
}

StepStats sft_step(toy::SoftmaxPolicy& policy, std::span<const Prepared* const> batch, const TrainParams& params) {
  std::vector<rl::TokenLogProbs> logps;
  std::vector<rl::TokenSeq> targets;
  for (const auto* item : batch) {
    targets.push_back(toy::target_tokens(policy, *item->problem));
    logps.push_back(toy::policy_logprob(policy, item->prompt, targets.back()));
  }
  const auto res = rl::sft_loss(logps);
  if (!std::isfinite(res.loss)) throw NumericError("SFT loss is not finite");
  std::vector<toy::LogProbGrad> grads;
  for (std::size_t e = 0; e < batch.size(); ++e) grads.push_back({batch[e]->prompt, targets[e], res.grad[e]});
  policy = toy::policy_step(policy, grads, params.learning_rate);
  StepStats stats;
  stats.loss = res.loss;
  return stats;
}

StageEval evaluate(const toy::SoftmaxPolicy& policy, std::size_t stage, const HeldOut& heldout,
                   const TrainParams& params) {
  StageEval ev;
  ev.stage = stage;
  ev.heldout_accuracy = toy::greedy_accuracy(policy, heldout.problems, params.max_len);
  for (const auto& b : heldout.buckets) ev.heldout_bucket_accuracy.push_back(toy::greedy_accuracy(policy, b, params.max_len));
  ev.checkpoint_sha256 = sha256_hex(toy::serialize_policy(policy));
  return ev;
}

}  // namespace

std::vector<std::size_t> stage_steps(const std::vector<std::vector<std::string>>& sets, const TrainParams& params,
                                     const CurriculumDataset& dataset) {
  const auto ccl = ccl_steps(dataset, params);
  if (params.strategy == Strategy::ccl) {
    if (sets.size() != ccl.size()) throw ValidationError("stage sets do not match the bucket count");
    return ccl;
  }
  std::size_t total = 0;
  for (auto s : ccl) total += s;
  return std::vector<std::size_t>(sets.size(), total / sets.size());
}

TrainResult train(const toy::SoftmaxPolicy& initial, std::span<const Problem> problems,
                  const CurriculumDataset& dataset, const TrainParams& params, const HeldOut& heldout,
                  const MetricsSink& log, const std::function<void(std::size_t, const toy::SoftmaxPolicy&)>& on_stage_end) {
  params.validate();
  const auto sets = stage_sets(dataset, params);
  const auto steps = stage_steps(sets, params, dataset);

  std::map<std::string, Prepared> prepared;
  for (const auto& p : problems)
    prepared.emplace(p.id, Prepared{&p, toy::make_prompt(p), grader::normalize(p.golden_answer)});
  for (const auto& set : sets)
    for (const auto& id : set)
      if (!prepared.count(id)) throw ValidationError("training id \"" + id + "\" is not in the problem set");

  // Held-out checkpoints fall on the curriculum's stage boundaries for both
  // strategies so the two curves line up.
  std::vector<std::size_t> eval_at;
  {
    std::size_t acc = 0;
    for (auto s : ccl_steps(dataset, params)) eval_at.push_back(acc += s);
  }

  TrainResult out;
  out.policy = initial;
  std::size_t global_step = 0;
  std::size_t next_eval = 0;
  auto emit = [&](const Json& row) {
    if (log) log(row);
  };
  auto run_evals = [&]() {
    while (next_eval < eval_at.size() && eval_at[next_eval] == global_step) {
      auto ev = evaluate(out.policy, next_eval + 1, heldout, params);
      emit(Json{{"kind", "eval"}, {"point", ev.stage}, {"step", global_step},
                {"heldout_accuracy", ev.heldout_accuracy}, {"heldout_bucket_accuracy", ev.heldout_bucket_accuracy}});
      out.evals.push_back(std::move(ev));
      ++next_eval;
    }
  };
  run_evals();  // zero-step stages

  for (std::size_t s = 0; s < sets.size(); ++s) {
    const std::size_t stage = s + 1;
    const std::string parent = sha256_hex(toy::serialize_policy(out.policy));
    out.policy.lineage.push_back("stage " + std::to_string(stage) + " from sha256:" + parent);
    const toy::SoftmaxPolicy stage_start = out.policy;
    emit(Json{{"kind", "stage_start"}, {"stage", stage}, {"set_size", sets[s].size()}, {"steps", steps[s]},
              {"parent_sha256", parent}});

    BatchStream stream(sets[s], hash_combine(hash_combine(params.seed, 0x5354414745ULL), stage));
    const toy::SoftmaxPolicy* ref = params.reset_ref_per_stage ? &stage_start : &initial;
    for (std::size_t k = 0; k < steps[s]; ++k) {
      const auto ids = stream.next(std::min(params.batch_size, sets[s].size()));
      std::vector<const Prepared*> batch;
      for (const auto& id : ids) batch.push_back(&prepared.at(id));
      StepStats st;
      if (params.method == Method::grpo) {
        const std::uint64_t step_seed = hash_combine(hash_combine(params.seed, stage), global_step);
        st = grpo_step(out.policy, *ref, batch, params, step_seed);
      } else {
        st = sft_step(out.policy, batch, params);
      }
      ++global_step;
      ++out.optimizer_steps;
      out.sampled_responses += st.sampled;
      Json row{{"kind", "step"}, {"stage", stage}, {"step", global_step}, {"loss", st.loss}};
      if (params.method == Method::grpo) {
        row["mean_reward"] = st.mean_reward;
        row["mean_abs_advantage"] = st.mean_abs_advantage;
        row["kl"] = st.kl;
        row["clip_fraction"] = st.clip_fraction;
        row["degenerate_groups"] = st.degenerate_groups;
      }
      emit(row);
      run_evals();
    }

    const std::string sha = sha256_hex(toy::serialize_policy(out.policy));
    emit(Json{{"kind", "stage_end"}, {"stage", stage}, {"step", global_step}, {"checkpoint_sha256", sha}});
    out.stage_policies.push_back(out.policy);
    if (on_stage_end) on_stage_end(stage, out.policy);
  }
  // Uniform checkpoints are tagged by the evaluation point; stamp the final hash.
  if (!out.evals.empty()) out.evals.back().checkpoint_sha256 = sha256_hex(toy::serialize_policy(out.policy));
  return out;
}

}  // namespace ccl::pipeline

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "ccl/corpus.hpp"
#include "ccl/guidance.hpp"
#include "ccl/rl_core.hpp"
#include "ccl/sampler.hpp"
#include "ccl/toylearner.hpp"

namespace ccl::pipeline {

// --- construction -----------------------------------------------------------

struct ConstructParams {
  std::size_t n_samples = 16;
  std::size_t buckets = 3;
  std::uint64_t seed = 0;
};

// Samples and grades one problem.
SampleRecord sample_and_grade(sampler::Solver& solver, const Problem& problem, std::size_t n);

// Samples every problem not already in `done` (records for those are reused
// as given), then ranks and partitions. `on_record` sees each new record as
// soon as it is graded.
struct ConstructResult {
  std::vector<SampleRecord> records;  // corpus order
  CurriculumDataset dataset;
  std::size_t new_records = 0;
};

ConstructResult construct(std::span<const Problem> corpus, sampler::Solver& solver, const ConstructParams& params,
                          std::span<const SampleRecord> done = {},
                          const std::function<void(const SampleRecord&)>& on_record = {});

// --- difficult-sample processing ---------------------------------------------

enum class AdaptMode { retain, discard, adapt };
std::string to_string(AdaptMode m);
AdaptMode adapt_mode_from_string(const std::string& s);

struct AdaptEntry {
  std::string problem_id;
  std::size_t bucket = 0;  // 1-based bucket the problem came from
  guidance::Verdict verdict = guidance::Verdict::already_solvable;
  std::size_t hint_length = 0;
  std::size_t steps = 0;
  std::vector<guidance::Probe> probes;
};

struct AdaptResult {
  AdaptMode mode = AdaptMode::adapt;
  std::vector<Problem> problems;   // kept problems, corpus order, hints applied
  std::vector<Problem> discarded;  // sidecar, corpus order
  CurriculumDataset dataset;
  std::vector<AdaptEntry> entries;  // one per difficult problem examined
};

// Difficult problems: every problem of the last bucket plus any problem with
// zero accuracy.
std::vector<std::string> difficult_ids(const CurriculumDataset& dataset);

AdaptResult adapt(std::span<const Problem> corpus, const CurriculumDataset& dataset, sampler::Solver& solver,
                  AdaptMode mode, const guidance::AdaptParams& params);

Json to_json(const AdaptEntry& e);

// --- staged training ----------------------------------------------------------

enum class Method { sft, grpo };
enum class Strategy { ccl, uniform };
std::string to_string(Method m);
std::string to_string(Strategy s);
Method method_from_string(const std::string& s);
Strategy strategy_from_string(const std::string& s);

struct TrainParams {
  Method method = Method::grpo;
  Strategy strategy = Strategy::ccl;
  double review_ratio = 0.2;
  double learning_rate = 50.0;
  std::size_t batch_size = 32;
  std::size_t max_len = 16;
  std::uint64_t seed = 0;
  // GRPO: total optimizer steps, split evenly over the stages.
  std::size_t grpo_steps = 300;
  rl::GrpoConfig grpo;
  std::size_t inner_updates = 1;
  bool reset_ref_per_stage = true;
  // SFT: passes over each stage set.
  std::size_t sft_epochs_per_stage = 3;

  void validate() const;
};

struct StageEval {
  std::size_t stage = 0;
  double heldout_accuracy = 0.0;
  std::vector<double> heldout_bucket_accuracy;
  std::string checkpoint_sha256;
};

struct TrainResult {
  toy::SoftmaxPolicy policy;
  std::vector<toy::SoftmaxPolicy> stage_policies;
  std::vector<StageEval> evals;
  std::size_t optimizer_steps = 0;
  std::size_t sampled_responses = 0;
};

struct HeldOut {
  std::vector<Problem> problems;
  // Optional difficulty buckets of the held-out set (easiest first).
  std::vector<std::vector<Problem>> buckets;
};

// Per-step and per-stage metrics are passed to `log` as JSON rows.
using MetricsSink = std::function<void(const Json&)>;

// Trains `initial` through the stages of `dataset` (ccl) or on the shuffled
// union of its buckets in a single stage with the same step budget (uniform).
// `problems` must contain every bucketed id.
TrainResult train(const toy::SoftmaxPolicy& initial, std::span<const Problem> problems,
                  const CurriculumDataset& dataset, const TrainParams& params, const HeldOut& heldout,
                  const MetricsSink& log = {},
                  const std::function<void(std::size_t, const toy::SoftmaxPolicy&)>& on_stage_end = {});

// Stage sets actually used by train() for the given strategy.
std::vector<std::vector<std::string>> stage_sets(const CurriculumDataset& dataset, const TrainParams& params);

// Optimizer steps per stage for the given stage sets.
std::vector<std::size_t> stage_steps(const std::vector<std::vector<std::string>>& sets, const TrainParams& params,
                                     const CurriculumDataset& dataset);

}  // namespace ccl::pipeline

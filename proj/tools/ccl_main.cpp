// Command-line front end; talks to the library only through the C API.
#include <cstdio>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "ccl/ccl.h"

namespace {

// Exit codes: 0 ok, 1 validation (including io/integrity), 2 transport,
// 3 numeric.
int exit_code(ccl_status s) {
  switch (s) {
    case CCL_OK: return 0;
    case CCL_ERR_TRANSPORT: return 2;
    case CCL_ERR_NUMERIC: return 3;
    default: return 1;
  }
}

int fail(ccl_status s) {
  std::fprintf(stderr, "error: %s\n", ccl_last_error());
  return exit_code(s);
}

struct Flag {
  const char* name;
  const char* key;
  const char* help;
};

// Flags that mirror config keys, per subcommand.
const std::vector<Flag> kCommon = {
    {"--run-dir", "run_dir", "run directory"},
    {"--seed", "seed", "master seed"},
    {"--corpus", "corpus", "training corpus (JSONL)"},
    {"--solver-kind", "solver.kind", "simulated | endpoint"},
    {"--skill", "solver.skill", "simulated solver skill"},
    {"--hint-gain", "solver.hint_gain", "simulated solver hint gain"},
    {"--noise-seed", "solver.noise_seed", "simulated solver noise seed"},
    {"--base-url", "solver.base_url", "endpoint base URL"},
    {"--model-name", "solver.model_name", "endpoint model name"},
    {"--api-key-env", "solver.api_key_env", "environment variable holding the API key"},
    {"--temperature", "solver.temperature", "sampling temperature"},
    {"--top-p", "solver.top_p", "nucleus sampling mass"},
    {"--max-tokens", "solver.max_tokens", "completion token cap"},
    {"--max-concurrent", "solver.max_concurrent", "concurrent requests"},
};
const std::vector<Flag> kConstruct = {
    {"--n-samples", "construct.n_samples", "responses per problem"},
    {"--buckets", "construct.buckets", "number of curriculum buckets"},
};
const std::vector<Flag> kAdapt = {
    {"--mode", "adapt.mode", "retain | discard | adapt"},
    {"--tau", "adapt.tau", "accuracy threshold"},
    {"--alpha", "adapt.alpha", "maximum hint fraction"},
    {"--n-probe", "adapt.n_probe", "responses per probe"},
};
const std::vector<Flag> kTrain = {
    {"--heldout", "heldout", "held-out corpus (JSONL)"},
    {"--data", "train.data", "auto | original | adapted"},
    {"--review-ratio", "train.review_ratio", "share of earlier buckets mixed into later stages"},
    {"--learning-rate", "train.learning_rate", "SGD step size"},
    {"--batch-size", "train.batch_size", "questions per step"},
    {"--max-len", "train.max_len", "value-token cap per response"},
    {"--grpo-steps", "train.grpo_steps", "total GRPO optimizer steps"},
    {"--clip-epsilon", "train.clip_epsilon", "ratio clip range"},
    {"--kl-beta", "train.kl_beta", "KL penalty weight"},
    {"--group-size", "train.group_size", "responses per question"},
    {"--inner-updates", "train.inner_updates", "updates per sampled batch"},
    {"--reset-ref-per-stage", "train.reset_ref_per_stage", "reset the reference policy at each stage"},
    {"--sft-epochs", "train.sft_epochs_per_stage", "SFT passes per stage"},
};

struct Overrides {
  std::string config;
  std::vector<std::string> sets;
  std::map<std::string, std::string> values;  // flag storage
};

void add_flags(CLI::App* app, Overrides& o, const std::vector<Flag>& flags) {
  for (const auto& f : flags) app->add_option(f.name, o.values[f.key], f.help);
}

void add_common(CLI::App* app, Overrides& o) {
  app->add_option("-c,--config", o.config, "config file (JSON)")->required();
  app->add_option("--set", o.sets, "override a config key: key=value (repeatable)");
  add_flags(app, o, kCommon);
}

// Opens the config and applies --set pairs, then explicit flags.
ccl_status open_run(const Overrides& o, CLI::App* app, ccl_run** run) {
  ccl_status s = ccl_run_open(o.config.c_str(), run);
  if (s != CCL_OK) return s;
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "error: --set expects key=value, got \"%s\"\n", kv.c_str());
      return CCL_ERR_VALIDATION;
    }
    s = ccl_run_set(*run, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str());
    if (s != CCL_OK) return s;
  }
  for (const auto* opt : app->get_options()) {
    if (opt->count() == 0) continue;
    for (const auto* list : {&kCommon, &kConstruct, &kAdapt, &kTrain}) {
      for (const auto& f : *list) {
        if (opt->check_lname(std::string(f.name).substr(2))) {
          s = ccl_run_set(*run, f.key, o.values.at(f.key).c_str());
          if (s != CCL_OK) return s;
        }
      }
    }
  }
  return CCL_OK;
}

void print_and_free(char* s) {
  if (!s) return;
  std::printf("%s\n", s);
  ccl_string_free(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Customized curriculum post-training pipeline on a desk-scale toy learner"};
  app.require_subcommand(1);
  app.set_version_flag("--version", ccl_version());

  Overrides co, ao, to;
  auto* construct = app.add_subcommand("construct", "sample, grade, rank and partition the corpus");
  add_common(construct, co);
  add_flags(construct, co, kConstruct);

  auto* adapt = app.add_subcommand("adapt", "process difficult samples (retain | discard | adapt)");
  add_common(adapt, ao);
  add_flags(adapt, ao, kAdapt);

  auto* train = app.add_subcommand("train", "staged training");
  add_common(train, to);
  add_flags(train, to, kTrain);
  std::string method, strategy;
  train->add_option("--method", method, "sft | grpo")->required()->check(CLI::IsMember({"sft", "grpo"}));
  train->add_option("--strategy", strategy, "ccl | uniform")->required()->check(CLI::IsMember({"ccl", "uniform"}));

  auto* report = app.add_subcommand("report", "summarize a run directory");
  std::string report_dir;
  report->add_option("run_dir", report_dir, "run directory")->required();

  auto* gen = app.add_subcommand("gen-tasks", "write a modular-chain task corpus");
  std::string gen_out, gen_prefix = "toy";
  std::uint64_t gen_seed = 0;
  std::size_t gen_count = 300, gen_kmin = 1, gen_kmax = 6;
  int gen_modulus = 10;
  gen->add_option("-o,--out", gen_out, "output JSONL path")->required();
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--count", gen_count, "number of tasks");
  gen->add_option("--k-min", gen_kmin, "shortest chain");
  gen->add_option("--k-max", gen_kmax, "longest chain");
  gen->add_option("--modulus", gen_modulus, "modulus");
  gen->add_option("--id-prefix", gen_prefix, "id prefix");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  ccl_run* run = nullptr;
  ccl_status s = CCL_OK;
  char* out = nullptr;
  if (construct->parsed()) {
    if ((s = open_run(co, construct, &run)) == CCL_OK) s = ccl_run_construct(run, nullptr, &out);
  } else if (adapt->parsed()) {
    if ((s = open_run(ao, adapt, &run)) == CCL_OK) s = ccl_run_adapt(run, nullptr, &out);
  } else if (train->parsed()) {
    if ((s = open_run(to, train, &run)) == CCL_OK) s = ccl_run_train(run, method.c_str(), strategy.c_str(), &out);
  } else if (report->parsed()) {
    int partial = 0;
    s = ccl_report(report_dir.c_str(), &out, &partial);
  } else if (gen->parsed()) {
    s = ccl_gen_tasks(gen_out.c_str(), gen_seed, gen_count, gen_kmin, gen_kmax, gen_modulus, gen_prefix.c_str());
  }
  ccl_run_close(run);
  if (s != CCL_OK) return fail(s);
  print_and_free(out);
  return 0;
}
